//! Generative components: VAE encoder/decoder, ELBO, temporal smoothness
//! and the recurrent latent forecaster.

mod forecaster;
mod temporal;
mod vae;

pub use forecaster::{
    forecast, lstm_backward, lstm_forward, lstm_step, pred_loss, pred_loss_grad, LstmPass, LstmState,
};
pub use temporal::{smooth_loss, smooth_loss_grad};
pub(crate) use vae::decode_mean;
pub use vae::{
    decode, decoder_backward, decoder_forward, elbo_loss, encode, encoder_backward, encoder_forward, gaussian_kl,
    reconstruction_nll, DecodedLikelihood, DecoderPass, EncoderPass, Encoding, Reconstruction,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ndcore::nn::{init_affine, register_affine, Mlp};
use crate::ndcore::rng::{seeded, stream};
use crate::ndcore::{Layout, ParamVector};
use crate::somgrid::GridSpec;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Likelihood {
    /// Logistic outputs; targets are intensities in `[0, 1]`.
    Bernoulli,
    /// Per-dimension mean and clamped log-variance heads.
    DiagonalGaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub dropout: f64,
    pub likelihood: Likelihood,
}

impl VaeArchitecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::config("network dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Everything needed to lay out and interpret a [`ParamVector`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: VaeArchitecture,
    pub grid: GridSpec,
    pub forecaster: bool,
}

pub mod blocks {
    pub const ENC_MEAN: &str = "encoder.mean";
    pub const ENC_LOG_VAR: &str = "encoder.log_var";
    pub const DEC_OUT: &str = "decoder.out";
    pub const DEC_LOG_VAR: &str = "decoder.log_var";
    pub const CENTROIDS: &str = "centroids";
    pub const LSTM_WX: &str = "forecaster.wx";
    pub const LSTM_WH: &str = "forecaster.wh";
    pub const LSTM_B: &str = "forecaster.b";
    pub const FC_MEAN: &str = "forecaster.mean";
    pub const FC_LOG_VAR: &str = "forecaster.log_var";
    pub const FORECASTER_PREFIX: &str = "forecaster.";
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub(crate) fn encoder_mlp(&self) -> Mlp {
        let mut dims = vec![self.arch.input_dim];
        dims.extend(&self.arch.hidden);
        Mlp::new("encoder", dims)
    }

    pub(crate) fn decoder_mlp(&self) -> Mlp {
        let mut dims = vec![self.arch.latent_dim];
        dims.extend(self.arch.hidden.iter().rev());
        Mlp::new("decoder", dims)
    }

    pub fn layout(&self) -> Layout {
        use blocks::*;
        let l = self.arch.latent_dim;
        let mut layout = Layout::new();
        let enc = self.encoder_mlp();
        enc.register(&mut layout);
        register_affine(&mut layout, ENC_MEAN, enc.output_dim(), l);
        register_affine(&mut layout, ENC_LOG_VAR, enc.output_dim(), l);
        let dec = self.decoder_mlp();
        dec.register(&mut layout);
        register_affine(&mut layout, DEC_OUT, dec.output_dim(), self.arch.input_dim);
        if self.arch.likelihood == Likelihood::DiagonalGaussian {
            register_affine(&mut layout, DEC_LOG_VAR, dec.output_dim(), self.arch.input_dim);
        }
        layout.push(CENTROIDS, &[self.grid.k(), l]);
        if self.forecaster {
            layout.push(LSTM_WX, &[l, 4 * l]);
            layout.push(LSTM_WH, &[l, 4 * l]);
            layout.push(LSTM_B, &[4 * l]);
            register_affine(&mut layout, FC_MEAN, l, l);
            register_affine(&mut layout, FC_LOG_VAR, l, l);
        }
        layout
    }

    /// Fresh parameters; centroids are small random vectors until a SOM
    /// initialisation replaces them.
    pub fn init(&self, seed: u64) -> ParamVector {
        use blocks::*;
        let mut rng = seeded(seed, stream::INIT);
        let mut p = ParamVector::zeros(self.layout());
        self.encoder_mlp().init(&mut p, &mut rng);
        init_affine(&mut p, ENC_MEAN, 1.0, &mut rng);
        init_affine(&mut p, ENC_LOG_VAR, 0.1, &mut rng);
        self.decoder_mlp().init(&mut p, &mut rng);
        init_affine(&mut p, DEC_OUT, 1.0, &mut rng);
        if p.has(DEC_LOG_VAR) {
            init_affine(&mut p, DEC_LOG_VAR, 0.1, &mut rng);
        }
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        for v in p.slice_mut(CENTROIDS) {
            *v = normal.sample(&mut rng);
        }
        if self.forecaster {
            let l = self.arch.latent_dim;
            let bound = 1.0 / (l as f64).sqrt();
            for name in [LSTM_WX, LSTM_WH] {
                for v in p.slice_mut(name) {
                    *v = rng.random_range(-bound..bound);
                }
            }
            let mut b = p.view1_mut(LSTM_B);
            b.fill(0.0);
            b.slice_mut(ndarray::s![l..2 * l]).fill(1.0);
            init_affine(&mut p, FC_MEAN, 1.0, &mut rng);
            init_affine(&mut p, FC_LOG_VAR, 0.1, &mut rng);
        }
        p
    }

    /// Flat index ranges of the forecaster blocks.
    pub fn forecaster_ranges(&self, layout: &Layout) -> Vec<std::ops::Range<usize>> {
        layout
            .iter()
            .filter(|(n, _)| n.starts_with(blocks::FORECASTER_PREFIX))
            .map(|(_, b)| b.range())
            .collect()
    }

    pub fn check_params(&self, p: &ParamVector) -> Result<()> {
        if p.layout != self.layout() {
            return Err(Error::config("parameter layout does not match the model architecture"));
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn tiny_spec(likelihood: Likelihood, forecaster: bool) -> ModelSpec {
        ModelSpec {
            arch: VaeArchitecture { input_dim: 5, hidden: vec![6, 4], latent_dim: 3, dropout: 0.0, likelihood },
            grid: GridSpec::new(2, 3).unwrap(),
            forecaster,
        }
    }
}
