//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use super::objective::{value_and_grad, BatchView, Frozen, Objective, TermMask};
use super::params::ParamVector;
use crate::Result;

#[derive(Clone, Debug, Serialize)]
pub struct BlockCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub h: f64,
    pub tol: f64,
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }

    pub fn failed_blocks(&self) -> Vec<&str> {
        self.blocks.iter().filter(|b| !b.passed).map(|b| b.name.as_str()).collect()
    }
}

/// Multiple of the rounding resolution of a central difference below which
/// coordinates are compared on an absolute scale.
pub const RESOLUTION_MARGIN: f64 = 1e5;

/// `|a - d| / max(|a|, |d|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Smallest derivative a central difference with step `h` resolves when the
/// function values are about `f_scale`, times [`RESOLUTION_MARGIN`].
pub fn resolution_floor(f_scale: f64, h: f64) -> f64 {
    (RESOLUTION_MARGIN * f64::EPSILON * f_scale / h).max(1e-8)
}

/// Compares a supplied gradient against central differences of `value`.
pub fn compare_with_finite_differences<F>(
    params: &ParamVector,
    analytic: &ParamVector,
    mut value: F,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = params.clone();
    let mut blocks = Vec::new();
    for (name, block) in params.layout.iter() {
        let mut worst = (0.0, block.offset, 0.0);
        for i in block.range() {
            let orig = probe.values[i];
            probe.values[i] = orig + h;
            let fp = value(&probe)?;
            probe.values[i] = orig - h;
            let fm = value(&probe)?;
            probe.values[i] = orig;
            let cd = (fp - fm) / (2.0 * h);
            let floor = resolution_floor(fp.abs().max(fm.abs()), h);
            let err = relative_error(analytic.values[i], cd, floor);
            if err > worst.0 || err.is_nan() {
                worst = (err, i, cd);
            }
        }
        blocks.push(BlockCheck {
            name: name.to_string(),
            max_rel_err: worst.0,
            worst_index: worst.1,
            analytic: analytic.values[worst.1],
            numeric: worst.2,
            passed: worst.0 < tol,
        });
    }
    Ok(GradCheckReport { h, tol, blocks })
}

/// Evaluates `f` once for the analytic gradient, then checks every coordinate.
pub fn check_gradient<F>(params: &ParamVector, mut f: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamVector) -> Result<(f64, ParamVector)>,
{
    let (_, analytic) = f(params)?;
    compare_with_finite_differences(params, &analytic, |p| f(p).map(|(v, _)| v), h, tol)
}

/// Checks each loss term of `obj` in isolation (unit weight, targets frozen
/// at `params`). Terms that do not apply to the batch are skipped.
pub fn check_objective_terms(
    obj: &Objective,
    params: &ParamVector,
    batch: BatchView<'_>,
    seed: u64,
    h: f64,
    tol: f64,
) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let series = batch.steps().is_some();
    let singles: [(&'static str, TermMask, bool); 6] = [
        ("cah", TermMask { cah: true, ..TermMask::NONE }, true),
        ("ssom", TermMask { ssom: true, ..TermMask::NONE }, true),
        ("elbo_recon", TermMask { recon: true, ..TermMask::NONE }, true),
        ("elbo_kl", TermMask { kl: true, ..TermMask::NONE }, !obj.plain_ae),
        ("smooth", TermMask { smooth: true, ..TermMask::NONE }, series),
        ("pred", TermMask::PRED_ONLY, series && obj.spec.forecaster),
    ];
    let frozen = Frozen::capture(obj, params, batch)?;
    let mut out = Vec::new();
    for (name, terms, applies) in singles {
        if !applies {
            continue;
        }
        let single = Objective { gamma: 1.0, beta: 1.0, terms, ..obj.clone() };
        let report = check_gradient(
            params,
            |p| value_and_grad(&single, p, batch, &frozen, seed).map(|(r, g)| (r.total, g)),
            h,
            tol,
        )?;
        out.push((name, report));
    }
    Ok(out)
}
