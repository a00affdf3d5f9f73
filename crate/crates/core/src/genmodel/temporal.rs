use ndarray::{Array3, ArrayView3};

use crate::{Error, Result};

fn check(z: &ArrayView3<f64>, alpha: f64) -> Result<()> {
    if z.dim().1 < 2 {
        return Err(Error::input("smoothness loss needs at least two time steps"));
    }
    if z.dim().0 == 0 {
        return Err(Error::input("smoothness loss needs at least one series"));
    }
    if !(alpha > 0.0) {
        return Err(Error::config(format!("alpha must be positive, got {alpha}")));
    }
    Ok(())
}

/// Negative mean Student-t similarity between consecutive latents,
/// `−1/(N(T−1)) Σ_i Σ_t (1 + ‖z_{i,t} − z_{i,t+1}‖²/α)^(−(α+1)/2)`.
///
/// Lies in `[−1, 0]`; equals −1 exactly when every trajectory is constant.
pub fn smooth_loss(z: ArrayView3<f64>, alpha: f64) -> Result<f64> {
    smooth_loss_impl(z, alpha, false).map(|(v, _)| v)
}

pub fn smooth_loss_grad(z: ArrayView3<f64>, alpha: f64) -> Result<(f64, Array3<f64>)> {
    smooth_loss_impl(z, alpha, true).map(|(v, g)| (v, g.unwrap()))
}

fn smooth_loss_impl(z: ArrayView3<f64>, alpha: f64, want_grad: bool) -> Result<(f64, Option<Array3<f64>>)> {
    check(&z, alpha)?;
    let (n, t_len, l) = z.dim();
    let pairs = (n * (t_len - 1)) as f64;
    let p = (alpha + 1.0) / 2.0;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Array3::zeros(z.raw_dim()));
    for i in 0..n {
        for t in 0..t_len - 1 {
            let mut d2 = 0.0;
            for c in 0..l {
                let d = z[[i, t, c]] - z[[i, t + 1, c]];
                d2 += d * d;
            }
            let base = 1.0 + d2 / alpha;
            let u = base.powf(-p);
            total += u;
            if let Some(g) = grad.as_mut() {
                // ∂(−u/pairs)/∂Δ = p · base^(−p−1) · 2Δ/α / pairs
                let coef = p * u / base * 2.0 / alpha / pairs;
                for c in 0..l {
                    let d = z[[i, t, c]] - z[[i, t + 1, c]];
                    g[[i, t, c]] += coef * d;
                    g[[i, t + 1, c]] -= coef * d;
                }
            }
        }
    }
    Ok((-total / pairs, grad))
}
