use serde::{Deserialize, Serialize};

use crate::genmodel::{Likelihood, ModelSpec, VaeArchitecture};
use crate::ndcore::{Objective, TermMask};
use crate::somgrid::GridSpec;
use crate::{Error, Result};

/// How hardened targets are refreshed during joint training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// Targets for the whole training set recomputed at the start of every epoch.
    Epoch,
    /// Targets from each mini-batch's own assignments and column sums.
    Minibatch,
}

/// Fractions of `epochs` spent in each phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseBudget {
    pub pretrain: f64,
    pub som_init: f64,
    pub joint: f64,
    pub finetune: f64,
}

impl Default for PhaseBudget {
    fn default() -> Self {
        Self { pretrain: 0.08, som_init: 0.02, joint: 0.75, finetune: 0.15 }
    }
}

/// Resolved epoch counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseEpochs {
    pub pretrain: usize,
    pub som_init: usize,
    pub joint: usize,
    pub finetune: usize,
}

/// Dataset shape and splitting; only the fields relevant to the chosen
/// dataset are used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Synthetic series count.
    pub n_series: usize,
    pub series_len: usize,
    pub channels: usize,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    /// Keep at most this many training samples (images).
    pub subset: Option<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub grid: GridSpec,
    /// Rows per mini-batch; series batches take `max(1, round(batch_size / T))`
    /// whole series.
    pub batch_size: usize,
    pub epochs: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub dropout: f64,
    pub likelihood: Likelihood,
    pub disable_ssom: bool,
    pub use_plain_ae: bool,
    pub disable_smooth: bool,
    pub disable_pred: bool,
    pub seed: u64,
    pub phases: PhaseBudget,
    /// Explicit per-phase epoch counts; override `phases` when set.
    pub pretrain_epochs: Option<usize>,
    pub som_epochs: Option<usize>,
    pub joint_epochs: Option<usize>,
    pub finetune_epochs: Option<usize>,
    /// Initial SOM learning rate for centroid initialisation.
    pub som_alpha0: f64,
    pub target_mode: TargetMode,
    pub data: DataConfig,
}

impl TrainConfig {
    /// Image preset (MNIST-sized); `beta` differs between MNIST (0.25) and
    /// Fashion-MNIST (0.4).
    pub fn images(beta: f64) -> Self {
        Self {
            gamma: 20.0,
            beta,
            alpha: 10.0,
            grid: GridSpec::new(8, 8).expect("valid grid"),
            batch_size: 300,
            epochs: 300,
            latent_dim: 100,
            hidden: vec![500, 500, 2000],
            learning_rate: 1e-3,
            dropout: 0.4,
            likelihood: Likelihood::Bernoulli,
            disable_ssom: false,
            use_plain_ae: false,
            disable_smooth: false,
            disable_pred: false,
            seed: 0,
            phases: PhaseBudget::default(),
            pretrain_epochs: None,
            som_epochs: None,
            joint_epochs: None,
            finetune_epochs: None,
            som_alpha0: 0.5,
            target_mode: TargetMode::Epoch,
            data: DataConfig { n_series: 0, series_len: 0, channels: 0, split: [1.0, 0.0, 0.0], subset: None, seed: 0 },
        }
    }

    pub fn mnist() -> Self {
        Self::images(0.25)
    }

    pub fn fmnist() -> Self {
        Self::images(0.4)
    }

    pub fn series() -> Self {
        Self {
            gamma: 50.0,
            beta: 10.0,
            grid: GridSpec::new(16, 16).expect("valid grid"),
            epochs: 100,
            latent_dim: 50,
            dropout: 0.5,
            likelihood: Likelihood::DiagonalGaussian,
            data: DataConfig { n_series: 1000, series_len: 72, channels: 98, split: [0.8, 0.1, 0.1], subset: None, seed: 0 },
            ..Self::images(10.0)
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "mnist" => Ok(Self::mnist()),
            "fmnist" => Ok(Self::fmnist()),
            "synth-icu" | "series" => Ok(Self::series()),
            other => Err(Error::config(format!("unknown preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("beta", self.beta), ("learning_rate", self.learning_rate)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config(format!("alpha must be positive, got {}", self.alpha)));
        }
        GridSpec::new(self.grid.rows, self.grid.cols)?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.som_alpha0 > 0.0 && self.som_alpha0 <= 1.0) {
            return Err(Error::config("som_alpha0 must be in (0, 1]"));
        }
        let p = self.phases;
        if [p.pretrain, p.som_init, p.joint, p.finetune].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::config("phase fractions must be non-negative"));
        }
        self.arch(1).validate()
    }

    fn arch(&self, input_dim: usize) -> VaeArchitecture {
        VaeArchitecture {
            input_dim,
            hidden: self.hidden.clone(),
            latent_dim: self.latent_dim,
            dropout: self.dropout,
            likelihood: self.likelihood,
        }
    }

    pub fn model_spec(&self, input_dim: usize, forecaster: bool) -> ModelSpec {
        ModelSpec { arch: self.arch(input_dim), grid: self.grid, forecaster }
    }

    /// Effective weight of the S-SOM term.
    pub fn effective_beta(&self) -> f64 {
        if self.disable_ssom {
            0.0
        } else {
            self.beta
        }
    }

    pub fn objective(&self, spec: &ModelSpec, terms: TermMask) -> Objective {
        Objective {
            spec: spec.clone(),
            gamma: self.gamma,
            beta: self.effective_beta(),
            alpha: self.alpha,
            terms,
            plain_ae: self.use_plain_ae,
            training: self.dropout > 0.0,
        }
    }

    /// Joint-phase terms for static (`series = false`) or temporal models.
    pub fn joint_terms(&self, series: bool) -> TermMask {
        TermMask {
            cah: true,
            ssom: !self.disable_ssom,
            recon: true,
            kl: true,
            smooth: series && !self.disable_smooth,
            pred: series && !self.disable_pred,
        }
    }

    /// Epochs per phase. Static models have no fine-tuning phase; its share
    /// goes to joint training.
    pub fn phase_epochs(&self, series: bool) -> PhaseEpochs {
        let p = self.phases;
        let total = p.pretrain + p.som_init + p.joint + p.finetune;
        let share = |f: f64| if total > 0.0 { (f / total * self.epochs as f64).round() as usize } else { 0 };
        let finetune_share = if series && !self.disable_pred { p.finetune } else { 0.0 };
        let joint_share = p.joint + (p.finetune - finetune_share);
        PhaseEpochs {
            pretrain: self.pretrain_epochs.unwrap_or_else(|| share(p.pretrain)),
            som_init: self.som_epochs.unwrap_or_else(|| share(p.som_init).max(1)),
            joint: self.joint_epochs.unwrap_or_else(|| share(joint_share)),
            finetune: if series && !self.disable_pred { self.finetune_epochs.unwrap_or_else(|| share(finetune_share)) } else { 0 },
        }
    }

    /// Applies `key=value`; dotted keys address nested fields
    /// (`data.n_series=200`, `phases.joint=0.8`). `grid` accepts `RxC`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value: serde_json::Value = if key == "grid" {
            serde_json::to_value(GridSpec::parse(raw)?)?
        } else {
            serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()))
        };
        let mut doc = serde_json::to_value(&*self)?;
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .get_mut(part)
                .ok_or_else(|| Error::config(format!("unknown config field `{key}`")))?;
        }
        *slot = value;
        *self = serde_json::from_value(doc).map_err(|e| Error::config(format!("override `{key}`: {e}")))?;
        self.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_follow_the_hyperparameter_table() {
        let m = TrainConfig::mnist();
        assert_eq!((m.gamma, m.beta, m.alpha, m.batch_size, m.epochs, m.latent_dim), (20.0, 0.25, 10.0, 300, 300, 100));
        assert_eq!(TrainConfig::fmnist().beta, 0.4);
        let s = TrainConfig::series();
        assert_eq!((s.gamma, s.beta, s.grid.k(), s.epochs, s.latent_dim, s.dropout), (50.0, 10.0, 256, 100, 50, 0.5));
        assert_eq!(m.hidden, vec![500, 500, 2000]);
    }

    #[test]
    fn phase_split() {
        let s = TrainConfig::series();
        assert_eq!(s.phase_epochs(true), PhaseEpochs { pretrain: 8, som_init: 2, joint: 75, finetune: 15 });
        assert_eq!(s.phase_epochs(false), PhaseEpochs { pretrain: 8, som_init: 2, joint: 90, finetune: 0 });
        let m = TrainConfig { pretrain_epochs: Some(30), joint_epochs: Some(50), ..TrainConfig::mnist() };
        let p = m.phase_epochs(false);
        assert_eq!((p.pretrain, p.joint), (30, 50));
    }

    #[test]
    fn overrides() {
        let mut c = TrainConfig::series();
        c.apply_override("beta=0").unwrap();
        c.apply_override("grid=4x5").unwrap();
        c.apply_override("data.n_series=12").unwrap();
        c.apply_override("target_mode=minibatch").unwrap();
        c.apply_override("joint_epochs=3").unwrap();
        assert_eq!(c.beta, 0.0);
        assert_eq!(c.grid, GridSpec::new(4, 5).unwrap());
        assert_eq!(c.data.n_series, 12);
        assert_eq!(c.target_mode, TargetMode::Minibatch);
        assert_eq!(c.joint_epochs, Some(3));
        assert!(c.apply_override("nonsense=1").is_err());
        assert!(c.apply_override("beta=-1").is_err());
        assert!(c.apply_override("beta").is_err());
    }

    #[test]
    fn json_round_trip_and_missing_field() {
        let c = TrainConfig::mnist();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(TrainConfig::from_json(&text).unwrap(), c);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v.as_object_mut().unwrap().remove("gamma");
        let err = TrainConfig::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
    }
}
