//! Phased training of DPSOM (static data) and T-DPSOM (series), evaluation,
//! rollout forecasting and checkpoints.

mod checkpoint;
mod config;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{DataConfig, PhaseBudget, PhaseEpochs, TargetMode, TrainConfig};

use std::ops::Range;

use log::{debug, info};
use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{batch_indices, Batch, Dataset, SeriesBatch, Standardizer};
use crate::genmodel::{blocks, encoder_forward, lstm_step, LstmState, ModelSpec};
use crate::metrics::{morans_index_of_assignment, nmi, purity};
use crate::ndcore::rng::child_seed;
use crate::ndcore::{value_and_grad, Adam, BatchView, Frozen, LossReport, Objective, ParamVector, TermMask};
use crate::psom::{argmax_rows, soft_assignments, target_distribution};
use crate::somgrid::{som_fit, SomSchedule};
use crate::{Error, Result};

/// Rows encoded per chunk during inference passes.
const ENCODE_CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Pretrain,
    SomInit,
    Joint,
    Finetune,
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    /// Index within the phase.
    pub epoch: usize,
    /// Mean of the per-batch reports over the epoch.
    pub loss: LossReport,
    pub purity: Option<f64>,
    pub nmi: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub config: TrainConfig,
    pub params: ParamVector,
    /// Number of completed epochs across all phases.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Channel standardisation applied to series inputs, if any.
    pub standardizer: Option<Standardizer>,
}

/// Training inputs; series batches hold whole series.
#[derive(Clone, Copy, Debug)]
pub enum TrainData<'a> {
    Static(&'a Batch),
    Series(&'a SeriesBatch),
}

impl<'a> TrainData<'a> {
    fn units(&self) -> usize {
        match self {
            TrainData::Static(b) => b.len(),
            TrainData::Series(s) => s.len(),
        }
    }

    /// Units per mini-batch: `batch_size` rows, rounded to whole series.
    fn batch_units(&self, batch_size: usize) -> usize {
        match self {
            TrainData::Static(_) => batch_size,
            TrainData::Series(s) => ((batch_size as f64 / s.steps().max(1) as f64).round() as usize).max(1),
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            TrainData::Static(b) => b.dim(),
            TrainData::Series(s) => s.dim(),
        }
    }

    fn is_series(&self) -> bool {
        matches!(self, TrainData::Series(_))
    }

    /// All rows (series steps flattened).
    fn rows(&self) -> Array2<f64> {
        match self {
            TrainData::Static(b) => b.x.clone(),
            TrainData::Series(s) => s.flatten_steps(),
        }
    }

    fn labels(&self) -> Option<Vec<usize>> {
        match self {
            TrainData::Static(b) => b.labels.clone(),
            TrainData::Series(s) => s.flat_labels(),
        }
    }

    /// Flattened row indices of the given units.
    fn row_indices(&self, units: &[usize]) -> Vec<usize> {
        match self {
            TrainData::Static(_) => units.to_vec(),
            TrainData::Series(s) => {
                let t = s.steps();
                units.iter().flat_map(|&i| i * t..(i + 1) * t).collect()
            }
        }
    }
}

/// Called after every completed epoch with the record and current parameters.
pub type Observer<'o> = &'o mut dyn FnMut(&EpochRecord, &ParamVector);

/// Posterior means for every row, without dropout.
pub fn encode_means(spec: &ModelSpec, params: &ParamVector, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((x.nrows(), spec.latent_dim()));
    for start in (0..x.nrows()).step_by(ENCODE_CHUNK) {
        let end = (start + ENCODE_CHUNK).min(x.nrows());
        let pass = encoder_forward::<crate::ndcore::rng::SeededRng>(spec, params, x.slice(s![start..end, ..]), None)?;
        out.slice_mut(s![start..end, ..]).assign(&pass.mean);
    }
    Ok(out)
}

/// Soft assignments of every row from its posterior mean.
pub fn soft_assign(spec: &ModelSpec, params: &ParamVector, alpha: f64, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let z = encode_means(spec, params, x)?;
    soft_assignments(z.view(), params.view2(blocks::CENTROIDS), alpha)
}

/// Most probable cluster of every row.
pub fn hard_assign(spec: &ModelSpec, params: &ParamVector, alpha: f64, x: ArrayView2<f64>) -> Result<Vec<usize>> {
    Ok(argmax_rows(soft_assign(spec, params, alpha, x)?.view()))
}

struct Session<'a, 'o> {
    config: &'a TrainConfig,
    spec: ModelSpec,
    data: TrainData<'a>,
    rows: Array2<f64>,
    labels: Option<Vec<usize>>,
    params: ParamVector,
    history: Vec<EpochRecord>,
    epochs_done: usize,
    observer: Option<Observer<'o>>,
    /// Soft assignments of every row under the current parameters.
    assignments: Option<Array2<f64>>,
}

impl<'a, 'o> Session<'a, 'o> {
    fn new(config: &'a TrainConfig, data: TrainData<'a>, observer: Option<Observer<'o>>) -> Result<Self> {
        config.validate()?;
        if data.units() == 0 {
            return Err(Error::input("training data is empty"));
        }
        if data.is_series() {
            if let TrainData::Series(s) = data {
                if s.steps() < 2 {
                    return Err(Error::input("series need at least two steps"));
                }
            }
        }
        let spec = config.model_spec(data.input_dim(), data.is_series());
        let params = spec.init(config.seed);
        Ok(Self {
            config,
            spec,
            data,
            rows: data.rows(),
            labels: data.labels(),
            params,
            history: Vec::new(),
            epochs_done: 0,
            observer,
            assignments: None,
        })
    }

    fn record(&mut self, rec: EpochRecord) {
        debug!("{:?} epoch {}: total {:.5}", rec.phase, rec.epoch, rec.loss.total);
        if let Some(obs) = self.observer.as_mut() {
            obs(&rec, &self.params);
        }
        self.history.push(rec);
    }

    fn all_assignments(&mut self) -> Result<&Array2<f64>> {
        if self.assignments.is_none() {
            self.assignments = Some(soft_assign(&self.spec, &self.params, self.config.alpha, self.rows.view())?);
        }
        Ok(self.assignments.as_ref().expect("just filled"))
    }

    fn clustering_metrics(&mut self) -> Result<(Option<f64>, Option<f64>)> {
        if self.labels.is_none() {
            return Ok((None, None));
        }
        let a = argmax_rows(self.all_assignments()?.view());
        let labels = self.labels.as_ref().expect("checked");
        Ok((Some(purity(&a, labels)?), Some(nmi(&a, labels)?)))
    }

    /// Hardened targets for every row from the current parameters.
    fn epoch_targets(&mut self) -> Result<Array2<f64>> {
        Ok(target_distribution(self.all_assignments()?.view()))
    }

    fn run_phase(&mut self, phase: Phase, epochs: usize, terms: TermMask, ranges: Option<Vec<Range<usize>>>) -> Result<()> {
        if epochs == 0 {
            return Ok(());
        }
        let obj: Objective = self.config.objective(&self.spec, terms);
        let mut adam = Adam::new(self.params.len(), self.config.learning_rate);
        let uses_targets = terms.cah && obj.gamma > 0.0;
        for e in 0..epochs {
            let epoch_seed = child_seed(self.config.seed, self.epochs_done as u64);
            let targets = if uses_targets && self.config.target_mode == TargetMode::Epoch {
                Some(self.epoch_targets()?)
            } else {
                None
            };
            let mut sum = LossReport::default();
            let mut weight = 0.0;
            for (b, units) in batch_indices(self.data.units(), self.data.batch_units(self.config.batch_size), Some(epoch_seed))
                .into_iter()
                .enumerate()
            {
                let rows = self.data.row_indices(&units);
                let frozen = Frozen { targets: targets.as_ref().map(|t| t.select(Axis(0), &rows)), ..Frozen::default() };
                let seed = child_seed(epoch_seed, b as u64 + 1);
                let (report, grad) = match self.data {
                    TrainData::Static(batch) => {
                        let x = batch.x.select(Axis(0), &units);
                        value_and_grad(&obj, &self.params, BatchView::Static(x.view()), &frozen, seed)?
                    }
                    TrainData::Series(series) => {
                        let x = series.x.select(Axis(0), &units);
                        value_and_grad(&obj, &self.params, BatchView::Series(x.view()), &frozen, seed)?
                    }
                };
                match &ranges {
                    Some(r) => adam.step_ranges(&mut self.params.values, &grad.values, r),
                    None => adam.step(&mut self.params.values, &grad.values),
                }
                self.assignments = None;
                if let Some(block) = self.params.non_finite_block() {
                    return Err(Error::numerical(format!("parameters:{block}")));
                }
                let w = 1.0;
                sum.total += w * report.total;
                sum.terms.add_scaled(&report.terms, w);
                weight += w;
            }
            let loss = LossReport { total: sum.total / weight, terms: scaled(&sum, 1.0 / weight).terms };
            let (pur, nm) = if matches!(phase, Phase::Joint | Phase::Finetune) {
                self.clustering_metrics()?
            } else {
                (None, None)
            };
            self.epochs_done += 1;
            self.record(EpochRecord { phase, epoch: e, loss, purity: pur, nmi: nm });
        }
        Ok(())
    }

    fn init_centroids(&mut self, som_epochs: usize) -> Result<()> {
        let c = init_centroids_from(&self.spec, &self.params, self.config, self.rows.view(), som_epochs)?;
        self.params.view2_mut(blocks::CENTROIDS).assign(&c);
        self.assignments = None;
        let (pur, nm) = self.clustering_metrics()?;
        self.epochs_done += som_epochs;
        self.record(EpochRecord { phase: Phase::SomInit, epoch: 0, loss: LossReport::default(), purity: pur, nmi: nm });
        Ok(())
    }

    fn finish(self) -> Checkpoint {
        Checkpoint {
            spec: self.spec,
            config: self.config.clone(),
            params: self.params,
            epoch: self.epochs_done,
            history: self.history,
            standardizer: None,
        }
    }
}

fn scaled(r: &LossReport, w: f64) -> LossReport {
    let mut terms = crate::ndcore::LossTerms::default();
    terms.add_scaled(&r.terms, w);
    LossReport { total: r.total * w, terms }
}

fn init_centroids_from(
    spec: &ModelSpec,
    params: &ParamVector,
    config: &TrainConfig,
    rows: ArrayView2<f64>,
    som_epochs: usize,
) -> Result<Array2<f64>> {
    let z = encode_means(spec, params, rows)?;
    let steps = som_epochs.max(1) * z.nrows();
    let state = som_fit(z.view(), spec.grid, SomSchedule::new(config.som_alpha0, steps), child_seed(config.seed, 0x50))?;
    info!(
        "SOM init: quantisation error {:.4} -> {:.4}",
        state.qe_history.first().copied().unwrap_or(f64::NAN),
        state.qe_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(state.centroids)
}

/// Optimises the ELBO alone for `config`'s pretraining budget, starting from
/// `params` (or a fresh seeded initialisation).
pub fn pretrain_vae(config: &TrainConfig, data: TrainData<'_>, params: Option<ParamVector>) -> Result<(ParamVector, Vec<EpochRecord>)> {
    let mut session = Session::new(config, data, None)?;
    if let Some(p) = params {
        session.spec.check_params(&p)?;
        session.params = p;
        session.assignments = None;
    }
    let epochs = config.phase_epochs(data.is_series()).pretrain;
    session.run_phase(Phase::Pretrain, epochs, TermMask::ELBO_ONLY, None)?;
    Ok((session.params, session.history))
}

/// SOM on the posterior means of `data`; returns `K × l` centroids.
pub fn init_centroids(params: &ParamVector, config: &TrainConfig, data: TrainData<'_>) -> Result<Array2<f64>> {
    let spec = config.model_spec(data.input_dim(), data.is_series());
    spec.check_params(params)?;
    let epochs = config.phase_epochs(data.is_series()).som_init;
    init_centroids_from(&spec, params, config, data.rows().view(), epochs)
}

/// Pretraining, SOM initialisation and joint optimisation on static data.
pub fn train_dpsom(config: &TrainConfig, data: &Batch) -> Result<Checkpoint> {
    train_dpsom_observed(config, data, None)
}

pub fn train_dpsom_observed(config: &TrainConfig, data: &Batch, observer: Option<Observer<'_>>) -> Result<Checkpoint> {
    let mut session = Session::new(config, TrainData::Static(data), observer)?;
    let phases = config.phase_epochs(false);
    info!("DPSOM phases: {phases:?}");
    session.run_phase(Phase::Pretrain, phases.pretrain, TermMask::ELBO_ONLY, None)?;
    session.init_centroids(phases.som_init)?;
    session.run_phase(Phase::Joint, phases.joint, config.joint_terms(false), None)?;
    Ok(session.finish())
}

/// T-DPSOM: pretraining, SOM initialisation, joint training with the
/// temporal terms, then prediction-only fine-tuning of the forecaster.
pub fn train_tdpsom(config: &TrainConfig, data: &SeriesBatch) -> Result<Checkpoint> {
    train_tdpsom_observed(config, data, None)
}

pub fn train_tdpsom_observed(config: &TrainConfig, data: &SeriesBatch, observer: Option<Observer<'_>>) -> Result<Checkpoint> {
    let mut session = Session::new(config, TrainData::Series(data), observer)?;
    let phases = config.phase_epochs(true);
    info!("T-DPSOM phases: {phases:?}");
    session.run_phase(Phase::Pretrain, phases.pretrain, TermMask::ELBO_ONLY, None)?;
    session.init_centroids(phases.som_init)?;
    session.run_phase(Phase::Joint, phases.joint, config.joint_terms(true), None)?;
    let ranges = session.spec.forecaster_ranges(&session.params.layout);
    session.run_phase(Phase::Finetune, phases.finetune, TermMask::PRED_ONLY, Some(ranges))?;
    Ok(session.finish())
}

/// Evaluation summary on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub purity: f64,
    pub nmi: f64,
    /// Moran's I over the mean label of each occupied cell; `None` when undefined.
    pub morans_i: Option<f64>,
    /// Fraction of grid cells holding at least one point.
    pub occupancy: f64,
}

/// Purity, NMI and Moran's I of the checkpoint's hard assignments. For
/// series the labels are per-step (enrichment).
pub fn evaluate(ckpt: &Checkpoint, data: TrainData<'_>) -> Result<EvalMetrics> {
    let labels = data.labels().ok_or_else(|| Error::input("evaluation needs labels"))?;
    let a = hard_assign(&ckpt.spec, &ckpt.params, ckpt.config.alpha, data.rows().view())?;
    let k = ckpt.spec.grid.k();
    let mut occupied = vec![false; k];
    a.iter().for_each(|&j| occupied[j] = true);
    let yl: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let morans_i = match morans_index_of_assignment(&ckpt.spec.grid, &a, &yl) {
        Ok(v) => Some(v),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalMetrics {
        purity: purity(&a, &labels)?,
        nmi: nmi(&a, &labels)?,
        morans_i,
        occupancy: occupied.iter().filter(|&&o| o).count() as f64 / k as f64,
    })
}

/// Predicts `horizon` future steps after each prefix by feeding predicted
/// latent means back into the forecaster, decoding each to input space.
pub fn forecast_rollout(ckpt: &Checkpoint, prefix: ArrayView3<f64>, horizon: usize) -> Result<Array3<f64>> {
    if horizon == 0 {
        return Err(Error::config("forecast horizon must be at least 1"));
    }
    if !ckpt.spec.forecaster {
        return Err(Error::config("checkpoint has no forecaster"));
    }
    let (n, t_len, d) = prefix.dim();
    if t_len == 0 {
        return Err(Error::input("forecast prefix is empty"));
    }
    if d != ckpt.spec.arch.input_dim {
        return Err(Error::dim(format!("prefix has {d} channels, model expects {}", ckpt.spec.arch.input_dim)));
    }
    let l = ckpt.spec.latent_dim();
    let flat = prefix.as_standard_layout().into_owned().into_shape_with_order((n * t_len, d)).expect("contiguous");
    let z = encode_means(&ckpt.spec, &ckpt.params, flat.view())?
        .into_shape_with_order((n, t_len, l))
        .expect("contiguous");
    let mut state = LstmState::zeros(n, l);
    let mut next = Array2::zeros((n, l));
    for t in 0..t_len {
        let (st, m, _) = lstm_step(&ckpt.params, &state, z.index_axis(Axis(1), t))?;
        state = st;
        next = m;
    }
    let mut out = Array3::zeros((n, horizon, d));
    for h in 0..horizon {
        let x = crate::genmodel::decode_mean(&ckpt.spec, &ckpt.params, next.view())?;
        out.index_axis_mut(Axis(1), h).assign(&x);
        if h + 1 < horizon {
            let (st, m, _) = lstm_step(&ckpt.params, &state, next.view())?;
            state = st;
            next = m;
        }
    }
    Ok(out)
}

/// Repeats the last observed frame `horizon` times.
pub fn copy_last_forecast(prefix: ArrayView3<f64>, horizon: usize) -> Result<Array3<f64>> {
    let (n, t_len, d) = prefix.dim();
    if horizon == 0 || t_len == 0 {
        return Err(Error::config("copy-last forecast needs horizon >= 1 and a non-empty prefix"));
    }
    let last = prefix.index_axis(Axis(1), t_len - 1);
    Ok(Array3::from_shape_fn((n, horizon, d), |(i, _, c)| last[[i, c]]))
}

/// Per-epoch loss ratios behind the tuning heuristics for γ and β.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub epoch: usize,
    /// `elbo_recon / (γ · cah)`; the heuristic asks for at least 10.
    pub recon_over_gamma_cah: f64,
    /// `cah / (β · ssom)`; the heuristic asks for a value within [0.2, 5].
    pub cah_over_beta_ssom: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HparamReport {
    pub rows: Vec<RatioRow>,
    pub gamma_ok: bool,
    /// `None` when the S-SOM term is disabled.
    pub beta_ok: Option<bool>,
}

pub const GAMMA_MIN_RATIO: f64 = 10.0;
pub const BETA_RATIO_RANGE: (f64, f64) = (0.2, 5.0);

/// Checks the last joint epoch against the γ ≥ 10× and β similar-magnitude
/// heuristics; every joint epoch is reported.
pub fn diagnose_hparams(config: &TrainConfig, history: &[EpochRecord]) -> Result<HparamReport> {
    let beta = config.effective_beta();
    let rows: Vec<RatioRow> = history
        .iter()
        .filter(|r| r.phase == Phase::Joint)
        .map(|r| RatioRow {
            epoch: r.epoch,
            recon_over_gamma_cah: r.loss.terms.elbo_recon / (config.gamma * r.loss.terms.cah),
            cah_over_beta_ssom: r.loss.terms.cah / (beta * r.loss.terms.ssom),
        })
        .collect();
    let last = rows.last().ok_or_else(|| Error::input("history has no joint-training epochs"))?;
    let gamma_ok = last.recon_over_gamma_cah >= GAMMA_MIN_RATIO;
    let beta_ok = (beta > 0.0).then(|| (BETA_RATIO_RANGE.0..=BETA_RATIO_RANGE.1).contains(&last.cah_over_beta_ssom));
    Ok(HparamReport { rows, gamma_ok, beta_ok })
}

impl Checkpoint {
    /// Loss of the current parameters on `data` without dropout or updates,
    /// with per-epoch style targets computed from the same parameters.
    pub fn evaluate_loss(&self, data: TrainData<'_>, seed: u64) -> Result<LossReport> {
        let mut obj = self.config.objective(&self.spec, self.config.joint_terms(data.is_series()));
        obj.training = false;
        let view = match data {
            TrainData::Static(b) => BatchView::Static(b.x.view()),
            TrainData::Series(s) => BatchView::Series(s.x.view()),
        };
        value_and_grad(&obj, &self.params, view, &Frozen::default(), seed).map(|(r, _)| r)
    }
}
