//! The combined training objective and its gradient.

use indexmap::IndexMap;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use super::rng::{seeded, standard_normal};
use crate::genmodel::{
    decoder_backward, decoder_forward, encoder_backward, encoder_forward, gaussian_kl, pred_loss_grad,
    reconstruction_nll, smooth_loss_grad, blocks, ModelSpec,
};
use crate::psom::{
    cah_grad, cah_loss, cluster_frequencies, soft_assignments, soft_assignments_backward, ssom_loss_grad,
    target_distribution_with,
};
use crate::{Error, Result};

/// Stream used for dropout masks and reparameterisation noise.
const OBJECTIVE_STREAM: u64 = 11;

pub const TERM_NAMES: [&str; 6] = ["cah", "ssom", "elbo_recon", "elbo_kl", "smooth", "pred"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub cah: f64,
    pub ssom: f64,
    pub elbo_recon: f64,
    pub elbo_kl: f64,
    pub smooth: f64,
    pub pred: f64,
}

impl LossTerms {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "cah" => self.cah,
            "ssom" => self.ssom,
            "elbo_recon" => self.elbo_recon,
            "elbo_kl" => self.elbo_kl,
            "smooth" => self.smooth,
            "pred" => self.pred,
            _ => return None,
        })
    }

    pub fn as_map(&self) -> IndexMap<&'static str, f64> {
        TERM_NAMES.iter().map(|&n| (n, self.get(n).unwrap())).collect()
    }

    /// Element-wise running sum, used for epoch averages.
    pub fn add_scaled(&mut self, other: &LossTerms, w: f64) {
        self.cah += w * other.cah;
        self.ssom += w * other.ssom;
        self.elbo_recon += w * other.elbo_recon;
        self.elbo_kl += w * other.elbo_kl;
        self.smooth += w * other.smooth;
        self.pred += w * other.pred;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub terms: LossTerms,
}

/// Which terms participate in an evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermMask {
    pub cah: bool,
    pub ssom: bool,
    /// ELBO reconstruction term.
    pub recon: bool,
    /// ELBO KL term.
    pub kl: bool,
    pub smooth: bool,
    pub pred: bool,
}

impl TermMask {
    pub const ALL: TermMask = TermMask { cah: true, ssom: true, recon: true, kl: true, smooth: true, pred: true };
    pub const NONE: TermMask = TermMask { cah: false, ssom: false, recon: false, kl: false, smooth: false, pred: false };
    pub const ELBO_ONLY: TermMask = TermMask { recon: true, kl: true, ..TermMask::NONE };
    pub const PRED_ONLY: TermMask = TermMask { pred: true, ..TermMask::NONE };
}

/// Weights, switches and architecture for one loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub spec: ModelSpec,
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub terms: TermMask,
    /// Deterministic bottleneck `z = μ`, no KL term.
    pub plain_ae: bool,
    /// Enables dropout.
    pub training: bool,
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        for (name, v) in [("gamma", self.gamma), ("beta", self.beta)] {
            if !(v >= 0.0) {
                return Err(Error::config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }

    fn ssom_active(&self) -> bool {
        self.terms.ssom && self.beta > 0.0
    }

    fn cah_active(&self) -> bool {
        self.terms.cah && self.gamma > 0.0
    }

    pub fn total(&self, t: &LossTerms) -> f64 {
        self.gamma * t.cah + self.beta * t.ssom + t.elbo_recon + t.elbo_kl + t.smooth + t.pred
    }
}

#[derive(Clone, Copy, Debug)]
pub enum BatchView<'a> {
    Static(ArrayView2<'a, f64>),
    /// N × T × d; every step becomes one row for the clustering terms.
    Series(ArrayView3<'a, f64>),
}

impl<'a> BatchView<'a> {
    pub fn rows(&self) -> usize {
        match self {
            BatchView::Static(x) => x.nrows(),
            BatchView::Series(x) => x.dim().0 * x.dim().1,
        }
    }

    fn flat(&self) -> Array2<f64> {
        match self {
            BatchView::Static(x) => x.to_owned(),
            BatchView::Series(x) => {
                let (n, t, d) = x.dim();
                x.as_standard_layout().into_owned().into_shape_with_order((n * t, d)).expect("contiguous")
            }
        }
    }

    pub(crate) fn steps(&self) -> Option<(usize, usize)> {
        match self {
            BatchView::Static(_) => None,
            BatchView::Series(x) => Some((x.dim().0, x.dim().1)),
        }
    }
}

/// Quantities held constant during differentiation.
#[derive(Clone, Debug, Default)]
pub struct Frozen {
    /// Hardened targets, one row per (flattened) batch row.
    pub targets: Option<Array2<f64>>,
    /// Reference cluster frequencies used when `targets` is absent.
    pub column_sums: Option<Array1<f64>>,
    /// Prediction targets (N × T × l); defaults to the current posterior means.
    pub pred_targets: Option<Array3<f64>>,
}

impl Frozen {
    /// Snapshots targets at `params` so repeated evaluations nearby see the
    /// same constants.
    pub fn capture(obj: &Objective, params: &ParamVector, batch: BatchView<'_>) -> Result<Frozen> {
        let x = batch.flat();
        let enc = encoder_forward::<rand_chacha::ChaCha8Rng>(&obj.spec, params, x.view(), None)?;
        let s = soft_assignments(enc.mean.view(), params.view2(blocks::CENTROIDS), obj.alpha)?;
        let f = cluster_frequencies(s.view());
        let targets = target_distribution_with(s.view(), f.view());
        let pred_targets = batch.steps().map(|(n, t)| reshape3(&enc.mean, n, t));
        Ok(Frozen { targets: Some(targets), column_sums: Some(f), pred_targets })
    }
}

fn reshape3(m: &Array2<f64>, n: usize, t: usize) -> Array3<f64> {
    let l = m.ncols();
    m.as_standard_layout().into_owned().into_shape_with_order((n, t, l)).expect("contiguous")
}

fn finite(term: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numerical(term))
    }
}

/// Loss report and full gradient for one batch.
///
/// Clustering terms use the posterior mean; the reconstruction uses one
/// reparameterised sample drawn from `seed`. Disabled terms report zero.
pub fn value_and_grad(
    obj: &Objective,
    params: &ParamVector,
    batch: BatchView<'_>,
    frozen: &Frozen,
    seed: u64,
) -> Result<(LossReport, ParamVector)> {
    obj.spec.check_params(params)?;
    if batch.rows() == 0 {
        return Err(Error::input("empty batch"));
    }
    let steps = batch.steps();
    let mut rng = seeded(seed, OBJECTIVE_STREAM);
    let x = batch.flat();
    let l = obj.spec.latent_dim();
    let mut g = params.zeros_like();
    let mut terms = LossTerms::default();

    let enc = if obj.training {
        encoder_forward(&obj.spec, params, x.view(), Some(&mut rng))?
    } else {
        encoder_forward::<rand_chacha::ChaCha8Rng>(&obj.spec, params, x.view(), None)?
    };
    let mut g_mu = Array2::<f64>::zeros(enc.mean.raw_dim());
    let mut g_lv: Option<Array2<f64>> = None;

    if obj.terms.recon {
        let (z, eps) = if obj.plain_ae {
            (enc.mean.clone(), None)
        } else {
            let eps = standard_normal(&mut rng, x.nrows(), l);
            let sd = enc.log_var.mapv(|v| (0.5 * v).exp());
            (&enc.mean + &(&sd * &eps), Some((eps, sd)))
        };
        let dec = if obj.training {
            decoder_forward(&obj.spec, params, z.view(), Some(&mut rng))?
        } else {
            decoder_forward::<rand_chacha::ChaCha8Rng>(&obj.spec, params, z.view(), None)?
        };
        let rec = reconstruction_nll(obj.spec.arch.likelihood, x.view(), &dec);
        terms.elbo_recon = finite("elbo_recon", rec.nll.sum())?;
        let g_z = decoder_backward(&obj.spec, params, &mut g, &dec, &rec.g_out, rec.g_log_var);
        g_mu += &g_z;
        if let Some((eps, sd)) = eps {
            g_lv = Some(&g_z * &eps * &sd * 0.5);
        }
    }
    if obj.terms.kl && !obj.plain_ae {
        let (kl, gkm, gklv) = gaussian_kl(&enc.mean, &enc.log_var);
        terms.elbo_kl = finite("elbo_kl", kl.sum())?;
        g_mu += &gkm;
        g_lv = Some(match g_lv {
            Some(v) => v + &gklv,
            None => gklv,
        });
    }

    if obj.cah_active() || obj.ssom_active() {
        let centroids = params.view2(blocks::CENTROIDS);
        let s = soft_assignments(enc.mean.view(), centroids, obj.alpha)?;
        let mut g_s = Array2::<f64>::zeros(s.raw_dim());
        if obj.cah_active() {
            let t = match (&frozen.targets, &frozen.column_sums) {
                (Some(t), _) => {
                    if t.dim() != s.dim() {
                        return Err(Error::dim(format!("frozen targets {:?} vs assignments {:?}", t.dim(), s.dim())));
                    }
                    t.clone()
                }
                (None, Some(f)) => target_distribution_with(s.view(), f.view()),
                (None, None) => target_distribution_with(s.view(), cluster_frequencies(s.view()).view()),
            };
            terms.cah = finite("cah", cah_loss(s.view(), t.view())?)?;
            g_s.scaled_add(obj.gamma, &cah_grad(s.view(), t.view()));
        }
        if obj.ssom_active() {
            let (v, gs) = ssom_loss_grad(s.view(), &obj.spec.grid)?;
            terms.ssom = finite("ssom", v)?;
            g_s.scaled_add(obj.beta, &gs);
        }
        let (gz, gc) = soft_assignments_backward(enc.mean.view(), centroids, obj.alpha, s.view(), g_s.view());
        g_mu += &gz;
        g.view2_mut(blocks::CENTROIDS).zip_mut_with(&gc, |a, b| *a += b);
    }

    if let Some((ns, ts)) = steps {
        let mu3 = reshape3(&enc.mean, ns, ts);
        let mut g_mu3 = Array3::<f64>::zeros(mu3.raw_dim());
        if obj.terms.smooth {
            let (v, gs) = smooth_loss_grad(mu3.view(), obj.alpha)?;
            terms.smooth = finite("smooth", v)?;
            g_mu3 += &gs;
        }
        if obj.terms.pred {
            if !obj.spec.forecaster {
                return Err(Error::config("prediction loss requested but the model has no forecaster"));
            }
            let targets = frozen.pred_targets.as_ref().unwrap_or(&mu3);
            let (v, gx) = pred_loss_grad(params, &mut g, mu3.view(), Some(targets.view()))?;
            terms.pred = finite("pred", v)?;
            g_mu3.slice_mut(s![.., 0..ts - 1, ..]).zip_mut_with(&gx, |a, b| *a += b);
        }
        g_mu += &g_mu3.into_shape_with_order((ns * ts, l)).expect("contiguous");
    }

    let needs_encoder = g_mu.iter().any(|&v| v != 0.0) || g_lv.is_some();
    if needs_encoder {
        encoder_backward(&obj.spec, params, &mut g, &enc, &g_mu, g_lv);
    }

    let total = finite("total", obj.total(&terms))?;
    if let Some(block) = g.non_finite_block() {
        return Err(Error::numerical(format!("gradient:{block}")));
    }
    Ok((LossReport { total, terms }, g))
}

/// Loss value only; same conventions as [`value_and_grad`].
pub fn loss_value(
    obj: &Objective,
    params: &ParamVector,
    batch: BatchView<'_>,
    frozen: &Frozen,
    seed: u64,
) -> Result<LossReport> {
    value_and_grad(obj, params, batch, frozen, seed).map(|(r, _)| r)
}

/// Sum of all gradient entries whose block name starts with `prefix`, in absolute value.
pub fn block_abs_sum(g: &ParamVector, prefix: &str) -> f64 {
    g.layout
        .iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(_, b)| g.values[b.range()].iter().map(|v| v.abs()).sum::<f64>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodel::test_support::tiny_spec;
    use crate::genmodel::Likelihood;
    use crate::ndcore::gradcheck::compare_with_finite_differences;
    use rand::Rng;

    fn objective(likelihood: Likelihood, forecaster: bool) -> Objective {
        Objective {
            spec: tiny_spec(likelihood, forecaster),
            gamma: 2.0,
            beta: 0.7,
            alpha: 10.0,
            terms: TermMask::ALL,
            plain_ae: false,
            training: false,
        }
    }

    fn static_batch(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeded(seed, 99);
        Array2::from_shape_simple_fn((n, 5), || rng.random_range(0.0..1.0))
    }

    fn check_all(obj: &Objective, p: &ParamVector, batch: BatchView<'_>) {
        let frozen = Frozen::capture(obj, p, batch).unwrap();
        let (_, g) = value_and_grad(obj, p, batch, &frozen, 5).unwrap();
        let report = compare_with_finite_differences(
            p,
            &g,
            |q| loss_value(obj, q, batch, &frozen, 5).map(|r| r.total),
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.blocks.iter().filter(|b| !b.passed).collect::<Vec<_>>());
    }

    #[test]
    fn static_gradient_matches_finite_differences() {
        let obj = objective(Likelihood::Bernoulli, false);
        let p = obj.spec.init(3);
        let x = static_batch(10, 1);
        check_all(&obj, &p, BatchView::Static(x.view()));
    }

    #[test]
    fn series_gradient_matches_finite_differences() {
        let obj = objective(Likelihood::DiagonalGaussian, true);
        let p = obj.spec.init(4);
        let mut rng = seeded(2, 99);
        let x = Array3::from_shape_simple_fn((2, 4, 5), || rng.random_range(-1.0..1.0));
        check_all(&obj, &p, BatchView::Series(x.view()));
    }

    #[test]
    fn total_is_weighted_sum_and_disabled_terms_are_zero() {
        let mut obj = objective(Likelihood::Bernoulli, false);
        let p = obj.spec.init(3);
        let x = static_batch(8, 2);
        let b = BatchView::Static(x.view());
        let (r, _) = value_and_grad(&obj, &p, b, &Frozen::default(), 1).unwrap();
        let want = 2.0 * r.terms.cah + 0.7 * r.terms.ssom + r.terms.elbo_recon + r.terms.elbo_kl;
        assert!((r.total - want).abs() <= 1e-9 * want.abs());
        obj.beta = 0.0;
        obj.gamma = 1.0;
        let (r, _) = value_and_grad(&obj, &p, b, &Frozen::default(), 1).unwrap();
        assert_eq!(r.terms.ssom, 0.0);
        assert!((r.total - (r.terms.cah + r.terms.elbo_recon + r.terms.elbo_kl)).abs() < 1e-12);
    }

    #[test]
    fn self_targets_give_zero_cah() {
        let mut obj = objective(Likelihood::Bernoulli, false);
        obj.terms = TermMask { cah: true, ..TermMask::NONE };
        let p = obj.spec.init(3);
        let x = static_batch(6, 3);
        let b = BatchView::Static(x.view());
        let enc = encoder_forward::<rand_chacha::ChaCha8Rng>(&obj.spec, &p, x.view(), None).unwrap();
        let s = soft_assignments(enc.mean.view(), p.view2(blocks::CENTROIDS), obj.alpha).unwrap();
        let frozen = Frozen { targets: Some(s), ..Frozen::default() };
        let (r, g) = value_and_grad(&obj, &p, b, &frozen, 0).unwrap();
        assert!(r.terms.cah.abs() < 1e-12);
        assert!(g.norm() < 1e-10, "{}", g.norm());
    }

    #[test]
    fn ssom_block_is_exactly_zero_when_beta_is_zero() {
        let mut obj = objective(Likelihood::Bernoulli, false);
        obj.beta = 0.0;
        obj.terms = TermMask { ssom: true, ..TermMask::NONE };
        let p = obj.spec.init(3);
        let x = static_batch(6, 4);
        let (r, g) = value_and_grad(&obj, &p, BatchView::Static(x.view()), &Frozen::default(), 0).unwrap();
        assert_eq!(r.total, 0.0);
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn plain_ae_has_no_kl_and_is_seed_free() {
        let mut obj = objective(Likelihood::Bernoulli, false);
        obj.plain_ae = true;
        let p = obj.spec.init(3);
        let x = static_batch(6, 5);
        let b = BatchView::Static(x.view());
        let (a, ga) = value_and_grad(&obj, &p, b, &Frozen::default(), 1).unwrap();
        let (c, gc) = value_and_grad(&obj, &p, b, &Frozen::default(), 2).unwrap();
        assert_eq!(a.terms.elbo_kl, 0.0);
        assert_eq!(a, c);
        assert_eq!(ga, gc);
    }

    #[test]
    fn deterministic_given_seed_with_dropout() {
        let mut obj = objective(Likelihood::Bernoulli, false);
        obj.spec.arch.dropout = 0.3;
        obj.training = true;
        let p = obj.spec.init(3);
        let x = static_batch(6, 6);
        let b = BatchView::Static(x.view());
        let a = value_and_grad(&obj, &p, b, &Frozen::default(), 9).unwrap();
        let c = value_and_grad(&obj, &p, b, &Frozen::default(), 9).unwrap();
        assert_eq!(a.0, c.0);
        assert_eq!(a.1, c.1);
    }

    #[test]
    fn non_finite_input_names_a_term() {
        let obj = objective(Likelihood::Bernoulli, false);
        let mut p = obj.spec.init(3);
        p.slice_mut("decoder.out.b")[0] = f64::INFINITY;
        let x = static_batch(4, 7);
        let err = value_and_grad(&obj, &p, BatchView::Static(x.view()), &Frozen::default(), 0).unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }), "{err}");
    }
}
