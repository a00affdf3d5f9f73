//! Single-layer LSTM over latent sequences with Gaussian next-step heads.
//!
//! Gate layout inside the `4l` pre-activation is `[input, forget, cell, output]`.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};

use super::blocks::{FC_LOG_VAR, FC_MEAN, LSTM_B, LSTM_WH, LSTM_WX};
use super::vae::mask_clamped;
use crate::ndcore::nn::{affine, affine_backward, sigmoid};
use crate::ndcore::rng::clamp_log_var;
use crate::ndcore::ParamVector;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn latent_dim(p: &ParamVector) -> Result<usize> {
    p.layout
        .get(LSTM_WX)
        .map(|b| b.shape[0])
        .ok_or_else(|| Error::config("parameters have no forecaster blocks"))
}

#[derive(Clone, Debug)]
pub struct LstmState {
    pub h: Array2<f64>,
    pub c: Array2<f64>,
}

impl LstmState {
    pub fn zeros(rows: usize, l: usize) -> Self {
        Self { h: Array2::zeros((rows, l)), c: Array2::zeros((rows, l)) }
    }
}

/// Activated gates `[i, f, g, o]` for one step.
fn gates(p: &ParamVector, x: ArrayView2<f64>, h: ArrayView2<f64>, l: usize) -> Array2<f64> {
    let mut a = x.dot(&p.view2(LSTM_WX));
    a += &h.dot(&p.view2(LSTM_WH));
    a += &p.view1(LSTM_B);
    a.slice_mut(s![.., 0..2 * l]).mapv_inplace(sigmoid);
    a.slice_mut(s![.., 2 * l..3 * l]).mapv_inplace(f64::tanh);
    a.slice_mut(s![.., 3 * l..4 * l]).mapv_inplace(sigmoid);
    a
}

/// Advances the cell one step; returns the new state and next-step
/// `(mean, log_var)` for each row.
pub fn lstm_step(
    p: &ParamVector,
    state: &LstmState,
    x: ArrayView2<f64>,
) -> Result<(LstmState, Array2<f64>, Array2<f64>)> {
    let l = latent_dim(p)?;
    if x.ncols() != l {
        return Err(Error::dim(format!("forecaster input has {} dims, expected {l}", x.ncols())));
    }
    let gt = gates(p, x, state.h.view(), l);
    let c = &gt.slice(s![.., l..2 * l]) * &state.c + &gt.slice(s![.., 0..l]) * &gt.slice(s![.., 2 * l..3 * l]);
    let h = &gt.slice(s![.., 3 * l..4 * l]) * &c.mapv(f64::tanh);
    let mean = affine(p, FC_MEAN, h.view());
    let log_var = affine(p, FC_LOG_VAR, h.view()).mapv(clamp_log_var);
    Ok((LstmState { h, c }, mean, log_var))
}

/// Forward activations over a batch of sequences.
#[derive(Clone, Debug)]
pub struct LstmPass {
    /// Inputs per step, each rows × l.
    xs: Vec<Array2<f64>>,
    /// `hs[t]` / `cs[t]` are the states *before* step `t`; length T + 1.
    hs: Vec<Array2<f64>>,
    cs: Vec<Array2<f64>>,
    gates: Vec<Array2<f64>>,
    raw_log_vars: Vec<Array2<f64>>,
    /// Predicted next-step mean after consuming input `t`.
    pub means: Vec<Array2<f64>>,
    pub log_vars: Vec<Array2<f64>>,
}

/// Runs the cell over `z` (N × T × l), one prediction per input step.
pub fn lstm_forward(p: &ParamVector, z: ArrayView3<f64>) -> Result<LstmPass> {
    let l = latent_dim(p)?;
    let (n, t_len, dim) = z.dim();
    if dim != l {
        return Err(Error::dim(format!("forecaster input has {dim} dims, expected {l}")));
    }
    if t_len == 0 {
        return Err(Error::input("forecaster needs a non-empty sequence"));
    }
    let mut pass = LstmPass {
        xs: Vec::with_capacity(t_len),
        hs: vec![Array2::zeros((n, l))],
        cs: vec![Array2::zeros((n, l))],
        gates: Vec::with_capacity(t_len),
        raw_log_vars: Vec::with_capacity(t_len),
        means: Vec::with_capacity(t_len),
        log_vars: Vec::with_capacity(t_len),
    };
    for t in 0..t_len {
        let x = z.index_axis(Axis(1), t).to_owned();
        let gt = gates(p, x.view(), pass.hs[t].view(), l);
        let c = &gt.slice(s![.., l..2 * l]) * &pass.cs[t] + &gt.slice(s![.., 0..l]) * &gt.slice(s![.., 2 * l..3 * l]);
        let h = &gt.slice(s![.., 3 * l..4 * l]) * &c.mapv(f64::tanh);
        let mean = affine(p, FC_MEAN, h.view());
        let raw = affine(p, FC_LOG_VAR, h.view());
        pass.log_vars.push(raw.mapv(clamp_log_var));
        pass.raw_log_vars.push(raw);
        pass.means.push(mean);
        pass.xs.push(x);
        pass.gates.push(gt);
        pass.hs.push(h);
        pass.cs.push(c);
    }
    Ok(pass)
}

/// Backpropagation through time. `g_means[t]` / `g_log_vars[t]` are the
/// gradients w.r.t. the outputs of step `t` (clamped log-variance). Returns
/// the gradient w.r.t. the inputs as N × T × l.
pub fn lstm_backward(
    p: &ParamVector,
    g: &mut ParamVector,
    pass: &LstmPass,
    g_means: &[Array2<f64>],
    g_log_vars: &[Array2<f64>],
) -> Array3<f64> {
    let t_len = pass.xs.len();
    let (n, l) = pass.xs[0].dim();
    let wx = p.view2(LSTM_WX).to_owned();
    let wh = p.view2(LSTM_WH).to_owned();
    let mut gx = Array3::zeros((n, t_len, l));
    let mut dh_next = Array2::<f64>::zeros((n, l));
    let mut dc_next = Array2::<f64>::zeros((n, l));
    let mut g_wx = Array2::<f64>::zeros(wx.raw_dim());
    let mut g_wh = Array2::<f64>::zeros(wh.raw_dim());
    let mut g_b = Array1::<f64>::zeros(4 * l);
    for t in (0..t_len).rev() {
        let h = &pass.hs[t + 1];
        let mut dh = dh_next.clone();
        dh += &affine_backward(p, g, FC_MEAN, h.view(), g_means[t].view(), true).unwrap();
        let mut glv = g_log_vars[t].clone();
        mask_clamped(&mut glv, &pass.raw_log_vars[t]);
        dh += &affine_backward(p, g, FC_LOG_VAR, h.view(), glv.view(), true).unwrap();

        let gt = &pass.gates[t];
        let (gi, gf, gg, go) = (
            gt.slice(s![.., 0..l]),
            gt.slice(s![.., l..2 * l]),
            gt.slice(s![.., 2 * l..3 * l]),
            gt.slice(s![.., 3 * l..4 * l]),
        );
        let tc = pass.cs[t + 1].mapv(f64::tanh);
        let mut da = Array2::<f64>::zeros((n, 4 * l));
        let mut dc = dc_next.clone();
        for r in 0..n {
            for k in 0..l {
                let dhv = dh[[r, k]];
                let o = go[[r, k]];
                let th = tc[[r, k]];
                let dcv = dc[[r, k]] + dhv * o * (1.0 - th * th);
                dc[[r, k]] = dcv;
                let (i, f, gv) = (gi[[r, k]], gf[[r, k]], gg[[r, k]]);
                da[[r, k]] = dcv * gv * i * (1.0 - i);
                da[[r, l + k]] = dcv * pass.cs[t][[r, k]] * f * (1.0 - f);
                da[[r, 2 * l + k]] = dcv * i * (1.0 - gv * gv);
                da[[r, 3 * l + k]] = dhv * th * o * (1.0 - o);
            }
        }
        dc_next = &dc * &gf;
        ndarray::linalg::general_mat_mul(1.0, &pass.xs[t].t(), &da, 1.0, &mut g_wx);
        ndarray::linalg::general_mat_mul(1.0, &pass.hs[t].t(), &da, 1.0, &mut g_wh);
        g_b += &da.sum_axis(Axis(0));
        gx.index_axis_mut(Axis(1), t).assign(&da.dot(&wx.t()));
        dh_next = da.dot(&wh.t());
    }
    g.view2_mut(LSTM_WX).zip_mut_with(&g_wx, |a, b| *a += b);
    g.view2_mut(LSTM_WH).zip_mut_with(&g_wh, |a, b| *a += b);
    g.view1_mut(LSTM_B).zip_mut_with(&g_b, |a, b| *a += b);
    gx
}

/// Next-step `(mean, log_var)` for every position of one `T × l` sequence.
pub fn forecast(p: &ParamVector, z_sequence: ArrayView2<f64>) -> Result<Vec<(Array1<f64>, Array1<f64>)>> {
    let z = z_sequence.insert_axis(Axis(0));
    let pass = lstm_forward(p, z)?;
    Ok(pass
        .means
        .iter()
        .zip(&pass.log_vars)
        .map(|(m, lv)| (m.row(0).to_owned(), lv.row(0).to_owned()))
        .collect())
}

fn gaussian_nll(target: f64, mean: f64, log_var: f64) -> f64 {
    let r = target - mean;
    0.5 * (LN_2PI + log_var + r * r * (-log_var).exp())
}

/// Sum over all `N(T−1)` transitions of `−log N(z_{t+1}; m_t, diag e^{lv_t})`.
///
/// `targets` defaults to `z` itself; either way no gradient flows into them.
pub fn pred_loss(p: &ParamVector, z: ArrayView3<f64>, targets: Option<ArrayView3<f64>>) -> Result<f64> {
    pred_impl(p, z, targets, false).map(|(v, _)| v)
}

/// [`pred_loss`] with gradients accumulated into `g`; returns `(loss, ∂/∂z)`.
pub fn pred_loss_grad(
    p: &ParamVector,
    g: &mut ParamVector,
    z: ArrayView3<f64>,
    targets: Option<ArrayView3<f64>>,
) -> Result<(f64, Array3<f64>)> {
    let (v, pass_grad) = pred_impl(p, z, targets, true)?;
    let (pass, g_means, g_lvs) = pass_grad.unwrap();
    let gx = lstm_backward(p, g, &pass, &g_means, &g_lvs);
    Ok((v, gx))
}

type PassGrads = (LstmPass, Vec<Array2<f64>>, Vec<Array2<f64>>);

fn pred_impl(
    p: &ParamVector,
    z: ArrayView3<f64>,
    targets: Option<ArrayView3<f64>>,
    want_grad: bool,
) -> Result<(f64, Option<PassGrads>)> {
    let (n, t_len, l) = z.dim();
    if t_len < 2 {
        return Err(Error::input("prediction loss needs at least two time steps"));
    }
    let targets = targets.unwrap_or(z);
    if targets.dim() != z.dim() {
        return Err(Error::dim("prediction targets must match the latent shape"));
    }
    // the last step has no successor
    let inputs = z.slice(s![.., 0..t_len - 1, ..]);
    let pass = lstm_forward(p, inputs)?;
    let mut total = 0.0;
    let mut g_means = Vec::new();
    let mut g_lvs = Vec::new();
    for t in 0..t_len - 1 {
        let (m, lv) = (&pass.means[t], &pass.log_vars[t]);
        let mut gm = Array2::zeros((n, l));
        let mut glv = Array2::zeros((n, l));
        for r in 0..n {
            for k in 0..l {
                let y = targets[[r, t + 1, k]];
                total += gaussian_nll(y, m[[r, k]], lv[[r, k]]);
                if want_grad {
                    let prec = (-lv[[r, k]]).exp();
                    let res = y - m[[r, k]];
                    gm[[r, k]] = -res * prec;
                    glv[[r, k]] = 0.5 * (1.0 - res * res * prec);
                }
            }
        }
        g_means.push(gm);
        g_lvs.push(glv);
    }
    let loss = total;
    if !loss.is_finite() {
        return Err(Error::numerical("pred"));
    }
    Ok((loss, want_grad.then_some((pass, g_means, g_lvs))))
}
