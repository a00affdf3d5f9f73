//! Output files: manifest, metrics, grid and trajectory CSVs, PGM tiles.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dpsom::somgrid::GridSpec;
use dpsom::trainer::{EpochRecord, TrainConfig};
use ndarray::ArrayView2;
use serde_json::{json, Value};

use crate::dataset::{sha256_bytes, Loaded};
use crate::failure::Failure;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const PARTIAL_CHECKPOINT_FILE: &str = "checkpoint.partial.bin";

/// Flat `key → number` metrics plus optional per-epoch arrays; keys sort
/// deterministically.
#[derive(Default)]
pub struct Metrics(pub BTreeMap<String, Value>);

impl Metrics {
    pub fn num(&mut self, key: impl Into<String>, v: f64) {
        self.0.insert(key.into(), if v.is_finite() { json!(v) } else { Value::Null });
    }

    pub fn opt(&mut self, key: impl Into<String>, v: Option<f64>) {
        match v {
            Some(v) => self.num(key, v),
            None => {
                self.0.insert(key.into(), Value::Null);
            }
        }
    }

    pub fn history(&mut self, history: &[EpochRecord]) {
        let col = |f: &dyn Fn(&EpochRecord) -> Value| Value::Array(history.iter().map(f).collect());
        let num = |v: f64| if v.is_finite() { json!(v) } else { Value::Null };
        let mut h = serde_json::Map::new();
        h.insert("phase".into(), col(&|r| json!(r.phase)));
        h.insert("epoch".into(), col(&|r| json!(r.epoch)));
        h.insert("total".into(), col(&|r| num(r.loss.total)));
        for name in dpsom::ndcore::objective::TERM_NAMES {
            h.insert(name.into(), col(&|r| num(r.loss.terms.get(name).unwrap_or(f64::NAN))));
        }
        h.insert("purity".into(), col(&|r| r.purity.map(num).unwrap_or(Value::Null)));
        h.insert("nmi".into(), col(&|r| r.nmi.map(num).unwrap_or(Value::Null)));
        self.0.insert("history".into(), Value::Object(h));
    }

    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        write_json(path, &Value::Object(self.0.clone().into_iter().collect()))
    }
}

pub fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Failure::from(e).context(path.display()))
}

/// Records everything needed to repeat a command: config, dataset digest,
/// seed, software version and the digest of each output file.
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Option<TrainConfig>,
    pub dataset_id: String,
    pub dataset_sha256: String,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str, data: &Loaded, config: Option<&TrainConfig>) -> Self {
        Self {
            command: command.into(),
            args: std::env::args().skip(1).collect(),
            config: config.cloned(),
            dataset_id: data.id.clone(),
            dataset_sha256: data.sha256.clone(),
            outputs: Vec::new(),
        }
    }

    pub fn add(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// Writes `manifest.json` into `dir`; output paths are stored relative to it.
    pub fn write(&self, dir: &Path) -> Result<(), Failure> {
        let mut outputs = serde_json::Map::new();
        for p in &self.outputs {
            let bytes = fs::read(p).map_err(|e| Failure::from(e).context(p.display()))?;
            let rel = p.strip_prefix(dir).unwrap_or(p);
            outputs.insert(rel.to_string_lossy().replace('\\', "/"), json!(sha256_bytes(&bytes)));
        }
        let v = json!({
            "software": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
            "command": self.command,
            "args": self.args,
            "dataset": { "id": self.dataset_id, "sha256": self.dataset_sha256 },
            "seed": self.config.as_ref().map(|c| c.seed),
            "config": self.config,
            "outputs": outputs,
        });
        write_json(&dir.join("manifest.json"), &v)
    }
}

/// `row,col,cluster_id,mean_label,count`; empty cells leave `mean_label` blank.
pub fn write_grid_csv(path: &Path, grid: &GridSpec, assignment: &[usize], labels: Option<&[usize]>) -> Result<(), Failure> {
    let k = grid.k();
    let mut count = vec![0usize; k];
    let mut sum = vec![0.0; k];
    for (i, &j) in assignment.iter().enumerate() {
        count[j] += 1;
        if let Some(l) = labels {
            sum[j] += l[i] as f64;
        }
    }
    let mut s = String::from("row,col,cluster_id,mean_label,count\n");
    for j in 0..k {
        let (r, c) = grid.coords(j);
        let mean = if labels.is_some() && count[j] > 0 { (sum[j] / count[j] as f64).to_string() } else { String::new() };
        writeln!(s, "{r},{c},{j},{mean},{}", count[j]).unwrap();
    }
    fs::write(path, s).map_err(|e| Failure::from(e).context(path.display()))
}

/// One row per series step: position of the most probable node and the full
/// assignment distribution.
pub fn write_trajectories(path: &Path, grid: &GridSpec, steps: usize, s: ArrayView2<f64>) -> Result<(), Failure> {
    let k = grid.k();
    let mut out = String::from("series_id,t,row,col");
    for j in 0..k {
        write!(out, ",p_{j}").unwrap();
    }
    out.push('\n');
    let hard = dpsom::psom::argmax_rows(s);
    for (i, row) in s.outer_iter().enumerate() {
        let (r, c) = grid.coords(hard[i]);
        write!(out, "{},{},{r},{c}", i / steps, i % steps).unwrap();
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Failure::from(e).context(path.display()))
}

/// Binary greyscale PGM (P5, maxval 255) from intensities in `[0, 1]`.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<(), Failure> {
    assert_eq!(pixels.len(), width * height);
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes).map_err(|e| Failure::from(e).context(path.display()))
}
