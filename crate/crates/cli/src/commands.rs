use std::fs;
use std::io::Write as _;
use std::path::Path;

use dpsom::data::{synth_icu, Batch, SeriesBatch};
use dpsom::genmodel::{blocks, decode, Likelihood};
use dpsom::metrics::forecast_mse;
use dpsom::ndcore::{check_objective_terms, BatchView, ParamVector, TermMask};
use dpsom::somgrid::GridSpec;
use dpsom::trainer::{
    copy_last_forecast, diagnose_hparams, evaluate, forecast_rollout, soft_assign, train_dpsom_observed,
    train_tdpsom_observed, Checkpoint, EpochRecord, TrainConfig, TrainData,
};
use dpsom::Error;
use log::{info, warn};
use ndarray::s;

use crate::dataset::{self, Loaded, Source, Splits, SPLIT_NAMES};
use crate::failure::{Failure, EXIT_NUMERICAL};
use crate::output::{
    write_grid_csv, write_json, write_pgm, write_trajectories, Manifest, Metrics, CHECKPOINT_FILE,
    PARTIAL_CHECKPOINT_FILE,
};

pub struct TrainArgs<'a> {
    pub dataset: &'a str,
    pub config: Option<&'a Path>,
    pub overrides: &'a [String],
    pub out: &'a Path,
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::from(e).context(dir.display()))
}

/// Config file (or dataset preset) with overrides applied.
pub fn resolve_config(source: &Source, path: Option<&Path>, overrides: &[String]) -> Result<TrainConfig, Failure> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
            TrainConfig::from_json(&text).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?
        }
        None => source.preset(),
    };
    for o in overrides {
        cfg.apply_override(o).map_err(|e| Failure::config(e.to_string()))?;
    }
    cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path).map_err(|e| Failure::from(e).context(path.display()))
}

/// Trains on the training split, saving the last finite parameters to a
/// partial checkpoint if a numerical failure aborts the run.
fn run_training(cfg: &TrainConfig, data: &Loaded, out: Option<&Path>) -> Result<Checkpoint, Failure> {
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut last: Option<ParamVector> = None;
    let result = {
        let mut observer = |r: &EpochRecord, p: &ParamVector| {
            info!(
                "{:?} epoch {}: loss {:.4}{}",
                r.phase,
                r.epoch,
                r.loss.total,
                r.purity.map(|v| format!(", purity {v:.4}")).unwrap_or_default()
            );
            history.push(r.clone());
            last = Some(p.clone());
        };
        match &data.splits {
            Splits::Static(s) => train_dpsom_observed(cfg, &s[0], Some(&mut observer)),
            Splits::Series(s) => train_tdpsom_observed(cfg, &s[0], Some(&mut observer)),
        }
    };
    match result {
        Ok(mut ck) => {
            ck.standardizer = data.standardizer.clone();
            Ok(ck)
        }
        Err(e @ Error::Numerical { .. }) => {
            if let (Some(params), Some(out)) = (last, out) {
                let partial = Checkpoint {
                    spec: cfg.model_spec(data.input_dim(), data.is_series()),
                    config: cfg.clone(),
                    params,
                    epoch: history.len(),
                    history,
                    standardizer: data.standardizer.clone(),
                };
                let path = out.join(PARTIAL_CHECKPOINT_FILE);
                partial.save(&path)?;
                warn!("saved last finite state to {}", path.display());
            }
            Err(e.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn check_compatible(ck: &Checkpoint, data: &Loaded) -> Result<(), Failure> {
    if ck.spec.arch.input_dim != data.input_dim() {
        return Err(Failure::config(format!(
            "checkpoint expects {} input channels, dataset has {}",
            ck.spec.arch.input_dim,
            data.input_dim()
        )));
    }
    if ck.spec.forecaster != data.is_series() {
        return Err(Failure::config("checkpoint and dataset disagree on static vs series data"));
    }
    Ok(())
}

/// Clustering metrics of every non-empty split under `<split>.<name>` keys.
fn evaluation_metrics(ck: &Checkpoint, data: &Loaded, m: &mut Metrics) -> Result<(), Failure> {
    let nmi_key = if data.is_series() { "enrichment_nmi" } else { "nmi" };
    for (i, name) in SPLIT_NAMES.iter().enumerate() {
        if data.split_len(i) == 0 {
            continue;
        }
        let e = evaluate(ck, data.split(i))?;
        m.num(format!("{name}.purity"), e.purity);
        m.num(format!("{name}.{nmi_key}"), e.nmi);
        m.opt(format!("{name}.morans_i"), e.morans_i);
        m.num(format!("{name}.occupancy"), e.occupancy);
    }
    Ok(())
}

fn rows_of(data: TrainData<'_>) -> ndarray::Array2<f64> {
    match data {
        TrainData::Static(b) => b.x.clone(),
        TrainData::Series(s) => s.flatten_steps(),
    }
}

fn labels_of(data: TrainData<'_>) -> Option<Vec<usize>> {
    match data {
        TrainData::Static(b) => b.labels.clone(),
        TrainData::Series(s) => s.flat_labels(),
    }
}

/// grid.csv, trajectories.csv (series) and decoded centroid tiles (images).
fn export_grid(ck: &Checkpoint, data: &Loaded, out: &Path, manifest: &mut Manifest) -> Result<(), Failure> {
    let split = data.split(data.eval_index());
    let rows = rows_of(split);
    let grid = ck.spec.grid;
    let s = soft_assign(&ck.spec, &ck.params, ck.config.alpha, rows.view())?;
    let hard = dpsom::psom::argmax_rows(s.view());
    let path = out.join("grid.csv");
    write_grid_csv(&path, &grid, &hard, labels_of(split).as_deref())?;
    manifest.add(path);
    if let TrainData::Series(series) = split {
        let path = out.join("trajectories.csv");
        write_trajectories(&path, &grid, series.steps(), s.view())?;
        manifest.add(path);
    }
    let d = ck.spec.arch.input_dim;
    let side = (d as f64).sqrt().round() as usize;
    if ck.spec.arch.likelihood == Likelihood::Bernoulli && side * side == d {
        let tiles = out.join("tiles");
        create_dir(&tiles)?;
        let centroids = ck.params.view2(blocks::CENTROIDS);
        let mut mosaic = vec![0.0; grid.k() * d];
        let width = grid.cols * side;
        for j in 0..grid.k() {
            let img = decode(&ck.spec, &ck.params, centroids.row(j))?;
            let pixels = img.mean().to_vec();
            let (r, c) = grid.coords(j);
            let path = tiles.join(format!("node_{r:02}_{c:02}.pgm"));
            write_pgm(&path, side, side, &pixels)?;
            manifest.add(path);
            for y in 0..side {
                let dst = (r * side + y) * width + c * side;
                mosaic[dst..dst + side].copy_from_slice(&pixels[y * side..(y + 1) * side]);
            }
        }
        let path = out.join("grid.pgm");
        write_pgm(&path, width, grid.rows * side, &mosaic)?;
        manifest.add(path);
    }
    Ok(())
}

pub fn train(args: TrainArgs<'_>) -> Result<(), Failure> {
    let source = Source::parse(args.dataset)?;
    let cfg = resolve_config(&source, args.config, args.overrides)?;
    let data = dataset::load(&source, &cfg, None)?;
    create_dir(args.out)?;
    let ck = run_training(&cfg, &data, Some(args.out))?;
    let mut manifest = Manifest::new("train", &data, Some(&cfg));
    let ck_path = args.out.join(CHECKPOINT_FILE);
    ck.save(&ck_path)?;
    manifest.add(ck_path);

    let mut m = Metrics::default();
    m.history(&ck.history);
    evaluation_metrics(&ck, &data, &mut m)?;
    if let Ok(report) = diagnose_hparams(&ck.config, &ck.history) {
        if let Some(last) = report.rows.last() {
            m.num("diagnostics.recon_over_gamma_cah", last.recon_over_gamma_cah);
            m.num("diagnostics.cah_over_beta_ssom", last.cah_over_beta_ssom);
        }
        if !report.gamma_ok {
            warn!("gamma heuristic violated: reconstruction is not 10x the weighted clustering loss");
        }
        if report.beta_ok == Some(false) {
            warn!("beta heuristic violated: S-SOM and CAH losses differ by more than a factor of 5");
        }
    }
    let path = args.out.join("metrics.json");
    m.write(&path)?;
    manifest.add(path);
    export_grid(&ck, &data, args.out, &mut manifest)?;
    manifest.write(args.out)
}

pub struct CheckpointArgs<'a> {
    pub checkpoint: &'a Path,
    pub dataset: &'a str,
    pub out: &'a Path,
}

fn load_for_checkpoint(args: &CheckpointArgs<'_>) -> Result<(Checkpoint, Loaded), Failure> {
    let ck = load_checkpoint(args.checkpoint)?;
    let data = load_matching(args, &ck)?;
    Ok((ck, data))
}

fn load_matching(args: &CheckpointArgs<'_>, ck: &Checkpoint) -> Result<Loaded, Failure> {
    let source = Source::parse(args.dataset)?;
    let data = dataset::load(&source, &ck.config, ck.standardizer.as_ref())?;
    check_compatible(ck, &data)?;
    Ok(data)
}

pub fn eval(args: CheckpointArgs<'_>, grid: Option<&str>) -> Result<(), Failure> {
    let ck = load_checkpoint(args.checkpoint)?;
    if let Some(g) = grid {
        let g = GridSpec::parse(g).map_err(|e| Failure::config(e.to_string()))?;
        if g != ck.spec.grid {
            return Err(Failure::config(format!("grid {g} does not match the checkpoint grid {}", ck.spec.grid)));
        }
    }
    let data = load_matching(&args, &ck)?;
    create_dir(args.out)?;
    let mut m = Metrics::default();
    evaluation_metrics(&ck, &data, &mut m)?;
    m.num("epochs", ck.epoch as f64);
    let path = args.out.join("metrics.json");
    m.write(&path)?;
    let mut manifest = Manifest::new("eval", &data, Some(&ck.config));
    manifest.add(path);
    manifest.write(args.out)
}

pub fn forecast(args: CheckpointArgs<'_>, horizon: usize) -> Result<(), Failure> {
    if !Source::parse(args.dataset)?.is_series() {
        return Err(Failure::config("forecasting needs a series dataset"));
    }
    let (ck, data) = load_for_checkpoint(&args)?;
    let Splits::Series(splits) = &data.splits else { unreachable!("checked above") };
    let series = &splits[data.eval_index()];
    let t = series.steps();
    if horizon == 0 || horizon >= t {
        return Err(Failure::config(format!("horizon must be in 1..={} for series of length {t}", t - 1)));
    }
    let prefix = series.x.slice(s![.., ..t - horizon, ..]);
    let truth = series.x.slice(s![.., t - horizon.., ..]);
    let pred = forecast_rollout(&ck, prefix, horizon)?;
    let copy = copy_last_forecast(prefix, horizon)?;
    create_dir(args.out)?;
    let mut m = Metrics::default();
    m.num("horizon", horizon as f64);
    m.num("n_series", series.x.shape()[0] as f64);
    m.num("forecast_mse.tdpsom", forecast_mse(pred.view(), truth)?);
    m.num("forecast_mse.copy_last", forecast_mse(copy.view(), truth)?);
    let metrics_path = args.out.join("metrics.json");
    m.write(&metrics_path)?;

    let pred_path = args.out.join("predictions.csv");
    let mut w = std::io::BufWriter::new(fs::File::create(&pred_path)?);
    write!(w, "series_id,t")?;
    for c in 0..series.dim() {
        write!(w, ",ch_{c}")?;
    }
    writeln!(w)?;
    for (i, seq) in pred.outer_iter().enumerate() {
        for (h, step) in seq.outer_iter().enumerate() {
            write!(w, "{i},{}", t - horizon + h)?;
            for v in step {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    drop(w);
    let mut manifest = Manifest::new("forecast", &data, Some(&ck.config));
    manifest.add(metrics_path);
    manifest.add(pred_path);
    manifest.write(args.out)
}

pub fn export(args: CheckpointArgs<'_>) -> Result<(), Failure> {
    let (ck, data) = load_for_checkpoint(&args)?;
    create_dir(args.out)?;
    let mut manifest = Manifest::new("export-grid", &data, Some(&ck.config));
    export_grid(&ck, &data, args.out, &mut manifest)?;
    manifest.write(args.out)
}

pub struct SweepArgs<'a> {
    pub train: TrainArgs<'a>,
    pub param: &'a str,
    pub values: &'a [String],
    pub seeds: &'a [u64],
}

pub fn sweep(args: SweepArgs<'_>) -> Result<(), Failure> {
    if !["beta", "gamma", "grid"].contains(&args.param) {
        return Err(Failure::config(format!("cannot sweep `{}`; expected beta, gamma or grid", args.param)));
    }
    if args.values.is_empty() || args.seeds.is_empty() {
        return Err(Failure::config("sweep needs at least one value and one seed"));
    }
    let source = Source::parse(args.train.dataset)?;
    let base = resolve_config(&source, args.train.config, args.train.overrides)?;
    let mut configs = Vec::new();
    for v in args.values {
        for &seed in args.seeds {
            let mut cfg = base.clone();
            cfg.apply_override(&format!("{}={v}", args.param)).map_err(|e| Failure::config(e.to_string()))?;
            cfg.seed = seed;
            cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
            configs.push((v.clone(), seed, cfg));
        }
    }
    let data = dataset::load(&source, &base, None)?;
    create_dir(args.train.out)?;
    let csv_path = args.train.out.join("sweep.csv");
    let mut csv = String::from("param,value,seed,purity,nmi,morans_i\n");
    let mut manifest = Manifest::new("sweep", &data, Some(&base));
    for (value, seed, cfg) in configs {
        info!("sweep {}={value} seed {seed}", args.param);
        let run_dir = args.train.out.join(format!("{}-{value}-seed{seed}", args.param));
        create_dir(&run_dir)?;
        let ck = run_training(&cfg, &data, Some(&run_dir))?;
        let e = evaluate(&ck, data.split(data.eval_index()))?;
        let mut m = Metrics::default();
        m.history(&ck.history);
        evaluation_metrics(&ck, &data, &mut m)?;
        let path = run_dir.join("metrics.json");
        m.write(&path)?;
        manifest.add(path);
        let mi = e.morans_i.map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},{value},{seed},{},{},{mi}\n", args.param, e.purity, e.nmi));
        fs::write(&csv_path, &csv)?;
    }
    manifest.add(csv_path);
    manifest.write(args.train.out)
}

pub struct CheckGradArgs<'a> {
    pub dataset: &'a str,
    pub points: usize,
    pub samples: usize,
    pub h: f64,
    pub tol: f64,
    pub seed: u64,
    pub out: Option<&'a Path>,
}

/// Small model matching the dataset's input kind, for gradient checks.
fn gradcheck_config(likelihood: Likelihood) -> TrainConfig {
    TrainConfig {
        grid: GridSpec::new(3, 3).expect("valid grid"),
        latent_dim: 3,
        hidden: vec![6, 5],
        dropout: 0.0,
        likelihood,
        ..TrainConfig::series()
    }
}

enum Fixture {
    Static(Batch),
    Series(SeriesBatch),
}

fn gradcheck_fixture(source: &Source, samples: usize, seed: u64) -> Result<Fixture, Failure> {
    if samples < 2 {
        return Err(Failure::config("gradient check needs at least two samples"));
    }
    match source {
        Source::Mnist | Source::Fmnist => {
            let cfg = TrainConfig { data: dpsom::trainer::DataConfig { subset: Some(samples), ..source.preset().data }, ..source.preset() };
            let data = dataset::load(source, &cfg, None)?;
            let Splits::Static(s) = data.splits else { unreachable!() };
            Ok(Fixture::Static(s[0].clone()))
        }
        _ => {
            // series of five steps; samples counts steps across series
            let per = 5;
            let n = samples.div_ceil(per).max(1);
            let s = synth_icu(n, 8, 4, seed)?.prefix(per);
            Ok(Fixture::Series(s))
        }
    }
}

pub fn check_grad(args: CheckGradArgs<'_>) -> Result<(), Failure> {
    let source = Source::parse(args.dataset)?;
    if !(args.h > 0.0) || !(args.tol > 0.0) {
        return Err(Failure::config("h and tol must be positive"));
    }
    let fixture = gradcheck_fixture(&source, args.samples, args.seed)?;
    let (cfg, view, dim, series) = match &fixture {
        Fixture::Static(b) => (gradcheck_config(Likelihood::Bernoulli), BatchView::Static(b.x.view()), b.x.ncols(), false),
        Fixture::Series(s) => (gradcheck_config(Likelihood::DiagonalGaussian), BatchView::Series(s.x.view()), s.x.shape()[2], true),
    };
    let spec = cfg.model_spec(dim, series);
    let obj = cfg.objective(&spec, TermMask::ALL);
    let mut worst = std::collections::BTreeMap::<&str, f64>::new();
    let mut failed = Vec::new();
    for point in 0..args.points {
        let params = spec.init(dpsom::ndcore::rng::child_seed(args.seed, point as u64));
        for (term, report) in check_objective_terms(&obj, &params, view, args.seed, args.h, args.tol)? {
            let e = report.max_rel_err();
            let w = worst.entry(term).or_insert(0.0);
            *w = w.max(e);
            for b in report.blocks.iter().filter(|b| !b.passed) {
                log::debug!("{term} {} analytic {:e} numeric {:e}", b.name, b.analytic, b.numeric);
                failed.push(format!("point {point} term {term} block {}", b.name));
            }
        }
    }
    for (term, e) in &worst {
        println!("{term:<8} max relative error {e:.3e} {}", if *e < args.tol { "ok" } else { "FAILED" });
    }
    if let Some(out) = args.out {
        create_dir(out)?;
        let v = serde_json::json!({
            "h": args.h,
            "tol": args.tol,
            "points": args.points,
            "max_rel_err": worst,
            "failed": failed,
        });
        write_json(&out.join("gradcheck.json"), &v)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure { code: EXIT_NUMERICAL, message: format!("gradient check failed: {}", failed.join("; ")) })
    }
}

pub fn parse_seeds(list: &str) -> Result<Vec<u64>, Failure> {
    list.split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| Failure::config(format!("invalid seed `{s}`"))))
        .collect()
}

pub fn parse_values(list: &str) -> Vec<String> {
    list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}
