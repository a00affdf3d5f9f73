//! Probabilistic self-organizing maps on learned latent spaces.
//!
//! The crate is organised bottom-up:
//!
//! * [`ndcore`] – flat parameter storage, dense layers with hand-written
//!   backward passes, seeded sampling, Adam, finite-difference checks and the
//!   combined objective ([`ndcore::value_and_grad`]).
//! * [`somgrid`] – toroidal grid topology and the classical Kohonen SOM.
//! * [`psom`] – Student-t soft assignments, hardened targets, CAH and S-SOM losses.
//! * [`genmodel`] – VAE encoder/decoder, ELBO, temporal smoothness and the LSTM forecaster.
//! * [`data`] – IDX / CSV ingestion, the synthetic ICU-like generator, splits and batching.
//! * [`trainer`] – phased DPSOM / T-DPSOM training, checkpoints, rollout forecasting.
//! * [`metrics`] – purity, NMI, Moran's I, forecast MSE and a k-means baseline.

pub mod data;
pub mod error;
pub mod genmodel;
pub mod metrics;
pub mod ndcore;
pub mod psom;
pub mod somgrid;
pub mod trainer;

pub use error::{Error, Result};
