//! Synthetic ICU-like series: a slow 2-d latent state with regime shifts,
//! observed through a fixed affine map with per-channel noise.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;

use super::SeriesBatch;
use crate::ndcore::rng::{seeded, stream};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthIcuParams {
    /// Seeds the observation map and regime centres (shared across datasets).
    pub structure_seed: u64,
    /// Per-step probability of moving to an adjacent regime.
    pub switch_prob: f64,
    /// Mean-reversion rate of the latent towards the regime centre.
    pub theta: f64,
    /// Latent innovation scale.
    pub sigma: f64,
    /// Range of per-channel noise sd relative to the channel's signal sd.
    pub noise_range: (f64, f64),
}

impl Default for SynthIcuParams {
    fn default() -> Self {
        Self { structure_seed: 0, switch_prob: 0.04, theta: 0.15, sigma: 0.25, noise_range: (0.15, 0.45) }
    }
}

pub const REGIMES: usize = 4;
const CENTRE_RADII: [f64; REGIMES] = [0.3, 1.2, 2.1, 3.0];

/// Generator output with the hidden quantities used for evaluation.
#[derive(Clone, Debug)]
pub struct SynthIcu {
    /// Observations with severity deciles as step labels.
    pub batch: SeriesBatch,
    pub latent: Array3<f64>,
    pub regimes: Array2<usize>,
    pub severity: Array2<f64>,
}

struct Structure {
    centres: [[f64; 2]; REGIMES],
    loadings: Array2<f64>,
    bias: Array1<f64>,
    noise_sd: Array1<f64>,
}

fn structure(params: &SynthIcuParams, d: usize) -> Structure {
    let mut rng = seeded(params.structure_seed, stream::DATA ^ 0xabc);
    let mut centres = [[0.0; 2]; REGIMES];
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    for (r, c) in centres.iter_mut().enumerate() {
        let angle = phase + r as f64 * 1.9;
        *c = [CENTRE_RADII[r] * angle.cos(), CENTRE_RADII[r] * angle.sin()];
    }
    let loadings = Array2::from_shape_simple_fn((d, 2), || rng.sample::<f64, _>(StandardNormal));
    let bias = Array1::from_shape_simple_fn(d, || rng.sample::<f64, _>(StandardNormal));
    let (lo, hi) = params.noise_range;
    // signal sd of a channel is roughly its loading norm times the latent spread
    let noise_sd = Array1::from_shape_fn(d, |c| {
        let scale = loadings.row(c).dot(&loadings.row(c)).sqrt() * 1.5;
        scale * rng.random_range(lo..=hi)
    });
    Structure { centres, loadings, bias, noise_sd }
}

/// Severity deciles by rank over all steps (ties broken by position).
fn deciles(severity: &Array2<f64>) -> Array2<usize> {
    let flat: Vec<f64> = severity.iter().copied().collect();
    let mut order: Vec<usize> = (0..flat.len()).collect();
    order.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]).then(a.cmp(&b)));
    let mut out = vec![0usize; flat.len()];
    let n = flat.len();
    for (rank, &i) in order.iter().enumerate() {
        out[i] = (rank * 10 / n).min(9);
    }
    Array2::from_shape_vec(severity.raw_dim(), out).expect("same size")
}

pub fn synth_icu_detailed(n_series: usize, t_len: usize, d: usize, seed: u64, params: &SynthIcuParams) -> Result<SynthIcu> {
    if d < 2 || t_len < 8 || n_series == 0 {
        return Err(Error::config(format!("synth_icu needs d >= 2, T >= 8, N >= 1 (got d={d}, T={t_len}, N={n_series})")));
    }
    if !(0.0..=1.0).contains(&params.switch_prob) || !(params.theta > 0.0 && params.theta < 1.0) || !(params.sigma > 0.0) {
        return Err(Error::config("synth_icu process parameters out of range"));
    }
    let st = structure(params, d);
    let mut rng = seeded(seed, stream::DATA);
    let stat_sd = params.sigma / (params.theta * (2.0 - params.theta)).sqrt();
    let mut latent = Array3::zeros((n_series, t_len, 2));
    let mut regimes = Array2::zeros((n_series, t_len));
    let mut severity = Array2::zeros((n_series, t_len));
    let mut x = Array3::zeros((n_series, t_len, d));
    for i in 0..n_series {
        let mut r = rng.random_range(0..REGIMES);
        let mut u = [
            st.centres[r][0] + stat_sd * rng.sample::<f64, _>(StandardNormal),
            st.centres[r][1] + stat_sd * rng.sample::<f64, _>(StandardNormal),
        ];
        for t in 0..t_len {
            if t > 0 {
                if rng.random::<f64>() < params.switch_prob {
                    r = match r {
                        0 => 1,
                        r if r == REGIMES - 1 => r - 1,
                        r if rng.random::<bool>() => r + 1,
                        r => r - 1,
                    };
                }
                for k in 0..2 {
                    u[k] += params.theta * (st.centres[r][k] - u[k]) + params.sigma * rng.sample::<f64, _>(StandardNormal);
                }
            }
            latent[[i, t, 0]] = u[0];
            latent[[i, t, 1]] = u[1];
            regimes[[i, t]] = r;
            severity[[i, t]] = (u[0] * u[0] + u[1] * u[1]).sqrt();
            for c in 0..d {
                let signal = st.loadings[[c, 0]] * u[0] + st.loadings[[c, 1]] * u[1] + st.bias[c];
                x[[i, t, c]] = signal + st.noise_sd[c] * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let batch = SeriesBatch::new(x, Some(deciles(&severity)))?;
    Ok(SynthIcu { batch, latent, regimes, severity })
}

/// Synthetic series with severity deciles as step labels; deterministic in `seed`.
pub fn synth_icu(n_series: usize, t_len: usize, d: usize, seed: u64) -> Result<SeriesBatch> {
    synth_icu_detailed(n_series, t_len, d, seed, &SynthIcuParams::default()).map(|s| s.batch)
}
