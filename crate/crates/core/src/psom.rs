//! Probabilistic SOM losses.
//!
//! Soft assignments use a Student-t kernel between latent points and
//! centroids; the hardened target squares them (κ = 2) and divides by the
//! cluster frequency. The clustering loss is `KL(T ‖ S)` and the S-SOM loss
//! ties each cluster's assignment mass to that of its four grid neighbours.
//!
//! The clustering loss is summed over rows while the S-SOM loss is averaged;
//! all logs clamp their argument at [`LOG_CLAMP`].

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::somgrid::GridSpec;
use crate::{Error, Result};

pub const LOG_CLAMP: f64 = 1e-10;
pub const KAPPA: i32 = 2;
pub const DEFAULT_ALPHA: f64 = 10.0;

#[inline]
fn clamped_ln(v: f64) -> f64 {
    v.max(LOG_CLAMP).ln()
}

/// Soft assignments `S` together with hardened targets `T`.
#[derive(Clone, Debug)]
pub struct Assignments {
    pub s: Array2<f64>,
    pub t: Array2<f64>,
    pub alpha: f64,
}

impl Assignments {
    pub fn compute(z: ArrayView2<f64>, centroids: ArrayView2<f64>, alpha: f64) -> Result<Self> {
        let s = soft_assignments(z, centroids, alpha)?;
        let t = target_distribution(s.view());
        Ok(Self { s, t, alpha })
    }

    pub fn kappa(&self) -> i32 {
        KAPPA
    }

    /// Hard cluster per row (argmax of `S`, lowest index on ties).
    pub fn hard(&self) -> Vec<usize> {
        argmax_rows(self.s.view())
    }
}

pub fn argmax_rows(s: ArrayView2<f64>) -> Vec<usize> {
    s.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("Student-t degrees of freedom must be positive, got {alpha}")))
    }
}

/// Squared distances `‖z_i − μ_j‖²`, N × K.
pub fn squared_distances(z: ArrayView2<f64>, centroids: ArrayView2<f64>) -> Array2<f64> {
    let zn: Array1<f64> = z.rows().into_iter().map(|r| r.dot(&r)).collect();
    let cn: Array1<f64> = centroids.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut d = z.dot(&centroids.t());
    Zip::indexed(&mut d).for_each(|(i, j), v| *v = (zn[i] + cn[j] - 2.0 * *v).max(0.0));
    d
}

/// `u ↦ (1 + u/α)^(−(α+1)/2)`; integer `α` avoids `powf`.
fn student_kernel(alpha: f64) -> impl Fn(f64) -> f64 {
    let twice = alpha + 1.0;
    let exact = twice.fract() == 0.0 && twice <= 128.0;
    let n = twice as i32;
    move |u: f64| {
        let x = 1.0 + u / alpha;
        if !exact {
            x.powf(-twice / 2.0)
        } else if n % 2 == 0 {
            1.0 / x.powi(n / 2)
        } else {
            1.0 / (x.powi(n / 2) * x.sqrt())
        }
    }
}

/// `s_ij ∝ (1 + ‖z_i − μ_j‖²/α)^(−(α+1)/2)`, rows normalised.
pub fn soft_assignments(z: ArrayView2<f64>, centroids: ArrayView2<f64>, alpha: f64) -> Result<Array2<f64>> {
    check_alpha(alpha)?;
    if z.ncols() != centroids.ncols() {
        return Err(Error::dim(format!("latents have {} dims, centroids {}", z.ncols(), centroids.ncols())));
    }
    if centroids.nrows() == 0 {
        return Err(Error::dim("no centroids"));
    }
    let power = -(alpha + 1.0) / 2.0;
    let d = squared_distances(z, centroids);
    let mut s = d.mapv(student_kernel(alpha));
    for (mut row, drow) in s.axis_iter_mut(Axis(0)).zip(d.axis_iter(Axis(0))) {
        let sum = row.sum();
        if sum >= 1e-250 {
            row /= sum;
            continue;
        }
        // far-away points underflow; normalise in the log domain instead
        row.zip_mut_with(&drow, |v, &dv| *v = power * (dv / alpha).ln_1p());
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let sum = row.sum();
        row /= sum;
    }
    Ok(s)
}

/// Backward pass of [`soft_assignments`] given `∂L/∂S`.
///
/// Returns `(∂L/∂Z, ∂L/∂centroids)`.
pub fn soft_assignments_backward(
    z: ArrayView2<f64>,
    centroids: ArrayView2<f64>,
    alpha: f64,
    s: ArrayView2<f64>,
    grad_s: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let power = (alpha + 1.0) / 2.0;
    let d = squared_distances(z, centroids);
    // ∂L/∂log q_ij, then ∂log q/∂d = −p / (α + d)
    let mut g_d = Array2::zeros(s.raw_dim());
    Zip::from(g_d.rows_mut()).and(s.rows()).and(grad_s.rows()).and(d.rows()).for_each(|mut gd, sr, gr, dr| {
        let inner = sr.dot(&gr);
        Zip::from(&mut gd).and(&sr).and(&gr).and(&dr).for_each(|o, &sv, &gv, &dv| {
            *o = sv * (gv - inner) * (-power / (alpha + dv));
        });
    });
    // Σ_j g_d_ij 2(z_i − μ_j) and its negative transposed counterpart
    let row_sum = g_d.sum_axis(Axis(1)).insert_axis(Axis(1));
    let col_sum = g_d.sum_axis(Axis(0)).insert_axis(Axis(1));
    let gz = (&z * &row_sum - g_d.dot(&centroids)) * 2.0;
    let gc = (&centroids * &col_sum - g_d.t().dot(&z)) * 2.0;
    (gz, gc)
}

/// Column sums `f_j = Σ_i s_ij`, clamped at [`LOG_CLAMP`].
pub fn cluster_frequencies(s: ArrayView2<f64>) -> Array1<f64> {
    let mut f = s.sum_axis(Axis(0));
    if f.iter().any(|&v| v < LOG_CLAMP) {
        warn!("target_distribution: empty cluster frequency clamped to {LOG_CLAMP:e}");
        f.mapv_inplace(|v| v.max(LOG_CLAMP));
    }
    f
}

/// Hardened targets with frequencies from `s` itself.
pub fn target_distribution(s: ArrayView2<f64>) -> Array2<f64> {
    let f = cluster_frequencies(s);
    target_distribution_with(s, f.view())
}

/// `t_ij ∝ s_ij^κ / f_j` with externally supplied frequencies (e.g. exact
/// column sums over the full training set).
pub fn target_distribution_with(s: ArrayView2<f64>, freq: ArrayView1<f64>) -> Array2<f64> {
    let mut t = s.to_owned();
    Zip::from(t.rows_mut()).for_each(|mut row| {
        Zip::from(&mut row).and(&freq).for_each(|v, &f| *v = v.powi(KAPPA) / f.max(LOG_CLAMP));
        let sum = row.sum();
        if sum > 0.0 {
            row /= sum;
        } else {
            let k = row.len() as f64;
            row.fill(1.0 / k);
        }
    });
    t
}

fn check_same_shape(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::dim(format!("shapes {:?} and {:?} differ", a.dim(), b.dim())));
    }
    Ok(())
}

/// `Σ_i Σ_j t_ij log(t_ij / s_ij)`, summed (not averaged) over rows.
pub fn cah_loss(s: ArrayView2<f64>, t: ArrayView2<f64>) -> Result<f64> {
    check_same_shape(s, t)?;
    let mut total = 0.0;
    Zip::from(&s).and(&t).for_each(|&sv, &tv| {
        if tv > 0.0 {
            total += tv * (tv.max(LOG_CLAMP) / sv.max(LOG_CLAMP)).ln();
        }
    });
    Ok(total)
}

/// Gradient of [`cah_loss`] w.r.t. `S` with `T` held constant.
pub fn cah_grad(s: ArrayView2<f64>, t: ArrayView2<f64>) -> Array2<f64> {
    let mut g = Array2::zeros(s.raw_dim());
    Zip::from(&mut g).and(&s).and(&t).for_each(|g, &sv, &tv| {
        if sv > LOG_CLAMP {
            *g = -tv / sv;
        }
    });
    g
}

fn check_grid(s: ArrayView2<f64>, spec: &GridSpec) -> Result<()> {
    if s.ncols() != spec.k() {
        return Err(Error::dim(format!("assignments have {} columns, grid {spec} has {} nodes", s.ncols(), spec.k())));
    }
    Ok(())
}

/// `−(1/N) Σ_i Σ_j s_ij Σ_{e ∈ N(j)} log s_ie`.
pub fn ssom_loss(s: ArrayView2<f64>, spec: &GridSpec) -> Result<f64> {
    Ok(ssom_loss_grad(s, spec)?.0)
}

/// Gradient of [`ssom_loss`] w.r.t. `S`.
pub fn ssom_grad(s: ArrayView2<f64>, spec: &GridSpec) -> Result<Array2<f64>> {
    Ok(ssom_loss_grad(s, spec)?.1)
}

/// [`ssom_loss`] and [`ssom_grad`] in one pass.
pub fn ssom_loss_grad(s: ArrayView2<f64>, spec: &GridSpec) -> Result<(f64, Array2<f64>)> {
    check_grid(s, spec)?;
    let nbrs = spec.neighbor_table();
    let n = s.nrows().max(1) as f64;
    let mut total = 0.0;
    let mut g = Array2::zeros(s.raw_dim());
    let mut logs = vec![0.0; s.ncols()];
    let mut inv = vec![0.0; s.ncols()];
    for (row, mut gi) in s.axis_iter(Axis(0)).zip(g.axis_iter_mut(Axis(0))) {
        for (e, &v) in row.iter().enumerate() {
            logs[e] = clamped_ln(v);
            inv[e] = if v > LOG_CLAMP { 1.0 / (v * n) } else { 0.0 };
        }
        for (j, nb) in nbrs.iter().enumerate() {
            let rj = row[j];
            let mut acc = 0.0;
            for &e in nb {
                acc += logs[e];
                gi[e] -= rj * inv[e];
            }
            total += rj * acc;
            gi[j] -= acc / n;
        }
    }
    Ok((-total / n, g))
}

/// `cah_loss + β · ssom_loss`.
pub fn psom_loss(s: ArrayView2<f64>, t: ArrayView2<f64>, spec: &GridSpec, beta: f64) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(Error::config(format!("beta must be non-negative, got {beta}")));
    }
    let cah = cah_loss(s, t)?;
    if beta == 0.0 {
        check_grid(s, spec)?;
        return Ok(cah);
    }
    Ok(cah + beta * ssom_loss(s, spec)?)
}
