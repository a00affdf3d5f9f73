use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use super::{blocks, Likelihood, ModelSpec};
use crate::ndcore::nn::{affine, affine_backward, sigmoid, softplus, MlpTrace};
use crate::ndcore::rng::{clamp_log_var, standard_normal, LOG_VAR_MAX, LOG_VAR_MIN};
use crate::ndcore::ParamVector;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Zeroes gradient entries whose pre-clamp value fell outside the clamp range.
pub(crate) fn mask_clamped(grad: &mut Array2<f64>, raw: &Array2<f64>) {
    Zip::from(grad).and(raw).for_each(|g, &r| {
        if !(LOG_VAR_MIN..=LOG_VAR_MAX).contains(&r) {
            *g = 0.0;
        }
    });
}

/// Encoder activations for a batch of rows.
#[derive(Clone, Debug)]
pub struct EncoderPass {
    pub mean: Array2<f64>,
    pub log_var: Array2<f64>,
    raw_log_var: Array2<f64>,
    hidden: Array2<f64>,
    trace: MlpTrace,
}

pub fn encoder_forward<R: Rng + ?Sized>(
    spec: &ModelSpec,
    p: &ParamVector,
    x: ArrayView2<f64>,
    rng: Option<&mut R>,
) -> Result<EncoderPass> {
    if x.ncols() != spec.arch.input_dim {
        return Err(Error::dim(format!("input has {} columns, encoder expects {}", x.ncols(), spec.arch.input_dim)));
    }
    let (hidden, trace) = spec.encoder_mlp().forward(p, x, spec.arch.dropout, rng);
    let mean = affine(p, blocks::ENC_MEAN, hidden.view());
    let raw_log_var = affine(p, blocks::ENC_LOG_VAR, hidden.view());
    let log_var = raw_log_var.mapv(clamp_log_var);
    Ok(EncoderPass { mean, log_var, raw_log_var, hidden, trace })
}

/// Backpropagates gradients w.r.t. the mean and the clamped log-variance.
pub fn encoder_backward(
    spec: &ModelSpec,
    p: &ParamVector,
    g: &mut ParamVector,
    pass: &EncoderPass,
    g_mean: &Array2<f64>,
    g_log_var: Option<Array2<f64>>,
) {
    let mut gh = affine_backward(p, g, blocks::ENC_MEAN, pass.hidden.view(), g_mean.view(), true).unwrap();
    if let Some(mut glv) = g_log_var {
        mask_clamped(&mut glv, &pass.raw_log_var);
        gh += &affine_backward(p, g, blocks::ENC_LOG_VAR, pass.hidden.view(), glv.view(), true).unwrap();
    }
    spec.encoder_mlp().backward(p, g, &pass.trace, gh, false);
}

#[derive(Clone, Debug)]
pub struct DecoderPass {
    /// Logits (Bernoulli) or means (Gaussian).
    pub out: Array2<f64>,
    pub log_var: Option<Array2<f64>>,
    raw_log_var: Option<Array2<f64>>,
    hidden: Array2<f64>,
    trace: MlpTrace,
}

pub fn decoder_forward<R: Rng + ?Sized>(
    spec: &ModelSpec,
    p: &ParamVector,
    z: ArrayView2<f64>,
    rng: Option<&mut R>,
) -> Result<DecoderPass> {
    if z.ncols() != spec.arch.latent_dim {
        return Err(Error::dim(format!("latent has {} columns, decoder expects {}", z.ncols(), spec.arch.latent_dim)));
    }
    let (hidden, trace) = spec.decoder_mlp().forward(p, z, spec.arch.dropout, rng);
    let out = affine(p, blocks::DEC_OUT, hidden.view());
    let (log_var, raw_log_var) = match spec.arch.likelihood {
        Likelihood::Bernoulli => (None, None),
        Likelihood::DiagonalGaussian => {
            let raw = affine(p, blocks::DEC_LOG_VAR, hidden.view());
            (Some(raw.mapv(clamp_log_var)), Some(raw))
        }
    };
    Ok(DecoderPass { out, log_var, raw_log_var, hidden, trace })
}

/// Returns `∂L/∂z`.
pub fn decoder_backward(
    spec: &ModelSpec,
    p: &ParamVector,
    g: &mut ParamVector,
    pass: &DecoderPass,
    g_out: &Array2<f64>,
    g_log_var: Option<Array2<f64>>,
) -> Array2<f64> {
    let mut gh = affine_backward(p, g, blocks::DEC_OUT, pass.hidden.view(), g_out.view(), true).unwrap();
    if let (Some(mut glv), Some(raw)) = (g_log_var, pass.raw_log_var.as_ref()) {
        mask_clamped(&mut glv, raw);
        gh += &affine_backward(p, g, blocks::DEC_LOG_VAR, pass.hidden.view(), glv.view(), true).unwrap();
    }
    spec.decoder_mlp().backward(p, g, &pass.trace, gh, true).unwrap()
}

/// Per-row negative log-likelihood plus gradients w.r.t. the decoder heads.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub nll: Array1<f64>,
    pub g_out: Array2<f64>,
    pub g_log_var: Option<Array2<f64>>,
}

pub fn reconstruction_nll(likelihood: Likelihood, x: ArrayView2<f64>, pass: &DecoderPass) -> Reconstruction {
    let mut nll = Array1::zeros(x.nrows());
    let mut g_out = Array2::zeros(x.raw_dim());
    match likelihood {
        Likelihood::Bernoulli => {
            for i in 0..x.nrows() {
                let mut acc = 0.0;
                for j in 0..x.ncols() {
                    let a = pass.out[[i, j]];
                    let t = x[[i, j]];
                    acc += softplus(a) - t * a;
                    g_out[[i, j]] = sigmoid(a) - t;
                }
                nll[i] = acc;
            }
            Reconstruction { nll, g_out, g_log_var: None }
        }
        Likelihood::DiagonalGaussian => {
            let lv = pass.log_var.as_ref().expect("gaussian decoder has a log-variance head");
            let mut g_lv = Array2::zeros(x.raw_dim());
            for i in 0..x.nrows() {
                let mut acc = 0.0;
                for j in 0..x.ncols() {
                    let r = x[[i, j]] - pass.out[[i, j]];
                    let prec = (-lv[[i, j]]).exp();
                    acc += 0.5 * (LN_2PI + lv[[i, j]] + r * r * prec);
                    g_out[[i, j]] = -r * prec;
                    g_lv[[i, j]] = 0.5 * (1.0 - r * r * prec);
                }
                nll[i] = acc;
            }
            Reconstruction { nll, g_out, g_log_var: Some(g_lv) }
        }
    }
}

/// Closed-form `KL(N(μ, diag e^lv) ‖ N(0, I))` per row, with gradients.
pub fn gaussian_kl(mean: &Array2<f64>, log_var: &Array2<f64>) -> (Array1<f64>, Array2<f64>, Array2<f64>) {
    let mut kl = Array1::zeros(mean.nrows());
    let g_mean = mean.clone();
    let mut g_lv = Array2::zeros(log_var.raw_dim());
    for i in 0..mean.nrows() {
        let mut acc = 0.0;
        for j in 0..mean.ncols() {
            let (m, lv) = (mean[[i, j]], log_var[[i, j]]);
            let e = lv.exp();
            acc += 0.5 * (m * m + e - 1.0 - lv);
            g_lv[[i, j]] = 0.5 * (e - 1.0);
        }
        kl[i] = acc;
    }
    (kl, g_mean, g_lv)
}

/// Posterior parameters and a reparameterised sample for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    pub mean: Array1<f64>,
    pub log_var: Array1<f64>,
    pub z: Array1<f64>,
}

/// Encodes a single input. Dropout is active only when `training` is set;
/// `z` is always drawn from `rng`.
pub fn encode<R: Rng + ?Sized>(
    spec: &ModelSpec,
    p: &ParamVector,
    x: ArrayView1<f64>,
    training: bool,
    rng: &mut R,
) -> Result<Encoding> {
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::input("encode: non-finite input"));
    }
    let x2 = x.insert_axis(Axis(0));
    let pass = if training {
        encoder_forward(spec, p, x2, Some(&mut *rng))?
    } else {
        encoder_forward::<R>(spec, p, x2, None)?
    };
    let mean = pass.mean.row(0).to_owned();
    let log_var = pass.log_var.row(0).to_owned();
    let z = crate::ndcore::sample_gaussian(mean.view(), log_var.view(), rng)?;
    Ok(Encoding { mean, log_var, z })
}

#[derive(Clone, Debug, PartialEq)]
pub enum DecodedLikelihood {
    Bernoulli { probs: Array1<f64> },
    Gaussian { mean: Array1<f64>, log_var: Array1<f64> },
}

impl DecodedLikelihood {
    /// Expected value of the reconstruction.
    pub fn mean(&self) -> &Array1<f64> {
        match self {
            DecodedLikelihood::Bernoulli { probs } => probs,
            DecodedLikelihood::Gaussian { mean, .. } => mean,
        }
    }
}

pub fn decode(spec: &ModelSpec, p: &ParamVector, z: ArrayView1<f64>) -> Result<DecodedLikelihood> {
    let pass = decoder_forward::<rand_chacha::ChaCha8Rng>(spec, p, z.insert_axis(Axis(0)), None)?;
    Ok(match spec.arch.likelihood {
        Likelihood::Bernoulli => DecodedLikelihood::Bernoulli { probs: pass.out.row(0).mapv(sigmoid) },
        Likelihood::DiagonalGaussian => DecodedLikelihood::Gaussian {
            mean: pass.out.row(0).to_owned(),
            log_var: pass.log_var.unwrap().row(0).to_owned(),
        },
    })
}

/// Decoder expectation for a batch of latents (probabilities or means).
pub(crate) fn decode_mean(spec: &ModelSpec, p: &ParamVector, z: ArrayView2<f64>) -> Result<Array2<f64>> {
    let pass = decoder_forward::<rand_chacha::ChaCha8Rng>(spec, p, z, None)?;
    Ok(match spec.arch.likelihood {
        Likelihood::Bernoulli => pass.out.mapv(sigmoid),
        Likelihood::DiagonalGaussian => pass.out,
    })
}

/// `(reconstruction, kl)`, each summed over rows, with one latent sample
/// per row. With `plain_ae` the bottleneck is the posterior mean and the KL
/// term is zero.
pub fn elbo_loss<R: Rng + ?Sized>(
    spec: &ModelSpec,
    p: &ParamVector,
    x: ArrayView2<f64>,
    training: bool,
    plain_ae: bool,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if x.nrows() == 0 {
        return Err(Error::input("elbo_loss: empty batch"));
    }
    let enc = if training {
        encoder_forward(spec, p, x, Some(&mut *rng))?
    } else {
        encoder_forward::<R>(spec, p, x, None)?
    };
    let (z, kl) = if plain_ae {
        (enc.mean.clone(), 0.0)
    } else {
        let eps = standard_normal(rng, x.nrows(), spec.arch.latent_dim);
        let z = &enc.mean + &(enc.log_var.mapv(|v| (0.5 * v).exp()) * &eps);
        let (kl, _, _) = gaussian_kl(&enc.mean, &enc.log_var);
        (z, kl.sum())
    };
    let dec = if training {
        decoder_forward(spec, p, z.view(), Some(&mut *rng))?
    } else {
        decoder_forward::<R>(spec, p, z.view(), None)?
    };
    let recon = reconstruction_nll(spec.arch.likelihood, x, &dec).nll.sum();
    if !recon.is_finite() {
        return Err(Error::numerical("elbo_recon"));
    }
    if !kl.is_finite() {
        return Err(Error::numerical("elbo_kl"));
    }
    Ok((recon, kl))
}
