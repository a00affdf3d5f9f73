//! Dense layers over [`ParamVector`] blocks with explicit backward passes.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::params::{Layout, ParamVector};

/// Registers `{name}.w` (in × out) and `{name}.b` (out).
pub fn register_affine(layout: &mut Layout, name: &str, fan_in: usize, fan_out: usize) {
    layout.push(format!("{name}.w"), &[fan_in, fan_out]);
    layout.push(format!("{name}.b"), &[fan_out]);
}

/// Glorot-uniform weights scaled by `gain`, zero bias.
pub fn init_affine<R: Rng + ?Sized>(p: &mut ParamVector, name: &str, gain: f64, rng: &mut R) {
    let mut w = p.view2_mut(&format!("{name}.w"));
    let (fi, fo) = w.dim();
    let limit = gain * (6.0 / (fi + fo) as f64).sqrt();
    w.mapv_inplace(|_| rng.random_range(-limit..limit));
    p.view1_mut(&format!("{name}.b")).fill(0.0);
}

pub fn affine(p: &ParamVector, name: &str, x: ArrayView2<f64>) -> Array2<f64> {
    let w = p.view2(&format!("{name}.w"));
    let b = p.view1(&format!("{name}.b"));
    let mut y = x.dot(&w);
    y += &b;
    y
}

/// Accumulates weight/bias gradients into `g` and returns the input gradient
/// when `need_input` is set.
pub fn affine_backward(
    p: &ParamVector,
    g: &mut ParamVector,
    name: &str,
    x: ArrayView2<f64>,
    gout: ArrayView2<f64>,
    need_input: bool,
) -> Option<Array2<f64>> {
    let wname = format!("{name}.w");
    {
        let mut gw = g.view2_mut(&wname);
        ndarray::linalg::general_mat_mul(1.0, &x.t(), &gout, 1.0, &mut gw);
    }
    {
        let mut gb = g.view1_mut(&format!("{name}.b"));
        gb += &gout.sum_axis(Axis(0));
    }
    need_input.then(|| gout.dot(&p.view2(&wname).t()))
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Fully connected stack; every layer is affine → ELU → (inverted) dropout.
#[derive(Clone, Debug)]
pub struct Mlp {
    prefix: String,
    dims: Vec<usize>,
}

/// Activations kept from the forward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpTrace {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
}

impl Mlp {
    /// `dims` = [input, hidden_1, ..., hidden_k]; may be a single entry (identity).
    pub fn new(prefix: impl Into<String>, dims: Vec<usize>) -> Self {
        assert!(!dims.is_empty());
        Self { prefix: prefix.into(), dims }
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn layer(&self, k: usize) -> String {
        format!("{}.h{k}", self.prefix)
    }

    pub fn register(&self, layout: &mut Layout) {
        for k in 0..self.dims.len() - 1 {
            register_affine(layout, &self.layer(k), self.dims[k], self.dims[k + 1]);
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut ParamVector, rng: &mut R) {
        for k in 0..self.dims.len() - 1 {
            init_affine(p, &self.layer(k), 1.0, rng);
        }
    }

    /// Dropout is applied only when `rng` is given and `dropout > 0`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        p: &ParamVector,
        x: ArrayView2<f64>,
        dropout: f64,
        mut rng: Option<&mut R>,
    ) -> (Array2<f64>, MlpTrace) {
        let mut trace = MlpTrace::default();
        let mut h = x.to_owned();
        for k in 0..self.dims.len() - 1 {
            let pre = affine(p, &self.layer(k), h.view());
            let mut act = pre.mapv(elu);
            let mask = match rng.as_deref_mut() {
                Some(r) if dropout > 0.0 => {
                    let keep = 1.0 / (1.0 - dropout);
                    let m = Array2::from_shape_simple_fn(act.dim(), || {
                        if r.random::<f64>() < dropout {
                            0.0
                        } else {
                            keep
                        }
                    });
                    act *= &m;
                    Some(m)
                }
                _ => None,
            };
            trace.inputs.push(std::mem::replace(&mut h, act));
            trace.pre.push(pre);
            trace.masks.push(mask);
        }
        (h, trace)
    }

    pub fn backward(
        &self,
        p: &ParamVector,
        g: &mut ParamVector,
        trace: &MlpTrace,
        gout: Array2<f64>,
        need_input: bool,
    ) -> Option<Array2<f64>> {
        let mut grad = gout;
        let n = self.dims.len() - 1;
        if n == 0 {
            return need_input.then_some(grad);
        }
        for k in (0..n).rev() {
            if let Some(m) = &trace.masks[k] {
                grad *= m;
            }
            grad.zip_mut_with(&trace.pre[k], |gv, &z| *gv *= elu_grad(z));
            let want = k > 0 || need_input;
            match affine_backward(p, g, &self.layer(k), trace.inputs[k].view(), grad.view(), want) {
                Some(gin) => grad = gin,
                None => return None,
            }
        }
        Some(grad)
    }
}

/// Column-wise mean of a matrix (used for bias initialisation of output heads).
pub fn column_means(x: ArrayView2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()))
}
