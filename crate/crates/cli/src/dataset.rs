//! Dataset selection by flag, splitting and standardisation.

use std::path::{Path, PathBuf};

use dpsom::data::{data_root, load_idx, read_series_csv, split, synth_icu, Batch, Dataset, SeriesBatch, Standardizer};
use dpsom::trainer::{TrainConfig, TrainData};
use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Mnist,
    Fmnist,
    SynthIcu,
    Csv(PathBuf),
}

impl Source {
    pub fn parse(flag: &str) -> Result<Self, Failure> {
        match flag {
            "mnist" => Ok(Source::Mnist),
            "fmnist" => Ok(Source::Fmnist),
            "synth-icu" => Ok(Source::SynthIcu),
            other => match other.strip_prefix("csv:") {
                Some(path) if !path.is_empty() => Ok(Source::Csv(PathBuf::from(path))),
                _ => Err(Failure::config(format!(
                    "unknown dataset `{other}`; expected mnist, fmnist, synth-icu or csv:<path>"
                ))),
            },
        }
    }

    pub fn is_series(&self) -> bool {
        matches!(self, Source::SynthIcu | Source::Csv(_))
    }

    /// Default configuration when no config file is given.
    pub fn preset(&self) -> TrainConfig {
        match self {
            Source::Mnist => TrainConfig::mnist(),
            Source::Fmnist => TrainConfig::fmnist(),
            Source::SynthIcu | Source::Csv(_) => TrainConfig::series(),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Source::Mnist => "mnist".into(),
            Source::Fmnist => "fmnist".into(),
            Source::SynthIcu => "synth-icu".into(),
            Source::Csv(p) => format!("csv:{}", p.display()),
        }
    }
}

pub enum Splits {
    Static([Batch; 3]),
    Series([SeriesBatch; 3]),
}

pub struct Loaded {
    pub id: String,
    /// SHA-256 of the source files, or of the generated tensor for synthetic data.
    pub sha256: String,
    pub splits: Splits,
    pub standardizer: Option<Standardizer>,
}

impl Loaded {
    pub fn split(&self, i: usize) -> TrainData<'_> {
        match &self.splits {
            Splits::Static(s) => TrainData::Static(&s[i]),
            Splits::Series(s) => TrainData::Series(&s[i]),
        }
    }

    pub fn split_len(&self, i: usize) -> usize {
        match &self.splits {
            Splits::Static(s) => s[i].len(),
            Splits::Series(s) => s[i].len(),
        }
    }

    /// Index of the split used for evaluation: test when non-empty, else train.
    pub fn eval_index(&self) -> usize {
        if self.split_len(2) > 0 {
            2
        } else {
            0
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.splits {
            Splits::Static(s) => s[0].dim(),
            Splits::Series(s) => s[0].dim(),
        }
    }

    pub fn is_series(&self) -> bool {
        matches!(self.splits, Splits::Series(_))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_files(paths: &[&Path]) -> Result<String, Failure> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = std::fs::read(p).map_err(|e| Failure::data(format!("{}: {e}", p.display())))?;
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn series_digest(s: &SeriesBatch) -> String {
    let mut h = Sha256::new();
    for v in s.x.iter() {
        h.update(v.to_le_bytes());
    }
    if let Some(l) = &s.step_labels {
        for v in l.iter() {
            h.update((*v as u64).to_le_bytes());
        }
    }
    hex(&h.finalize())
}

fn idx_dir(name: &str) -> PathBuf {
    data_root().join(name)
}

fn load_images(dir: &Path) -> Result<(Batch, String), Failure> {
    let images = dir.join("train-images-idx3-ubyte");
    let labels = dir.join("train-labels-idx1-ubyte");
    for p in [&images, &labels] {
        if !p.exists() {
            return Err(Failure::data(format!("missing {}; set DPSOM_DATA_DIR or fetch the IDX files", p.display())));
        }
    }
    let sha = sha256_files(&[&images, &labels])?;
    Ok((load_idx(&images, &labels)?, sha))
}

/// Loads, subsets and splits the dataset. Series are z-scored with
/// `standardizer` when given, otherwise with statistics of the training split.
pub fn load(source: &Source, cfg: &TrainConfig, standardizer: Option<&Standardizer>) -> Result<Loaded, Failure> {
    let d = &cfg.data;
    match source {
        Source::Mnist | Source::Fmnist => {
            let (mut all, sha) = load_images(&idx_dir(&source.id()))?;
            if let Some(n) = d.subset.filter(|&n| n < all.len()) {
                if n == 0 {
                    return Err(Failure::config("data.subset must be positive"));
                }
                let f = n as f64 / all.len() as f64;
                all = split(&all, [f, 1.0 - f, 0.0], d.seed)?.0;
            }
            let (a, b, c) = split(&all, d.split, d.seed)?;
            if a.is_empty() {
                return Err(Failure::config("training split is empty"));
            }
            Ok(Loaded { id: source.id(), sha256: sha, splits: Splits::Static([a, b, c]), standardizer: None })
        }
        Source::SynthIcu | Source::Csv(_) => {
            let (all, sha) = match source {
                Source::Csv(path) => {
                    let sha = sha256_files(&[path])?;
                    (read_series_csv(path)?, sha)
                }
                _ => {
                    let s = synth_icu(d.n_series, d.series_len, d.channels, d.seed)?;
                    let sha = series_digest(&s);
                    (s, sha)
                }
            };
            let (mut a, mut b, mut c) = split(&all, d.split, d.seed)?;
            if a.is_empty() {
                return Err(Failure::config("training split is empty"));
            }
            let st = match standardizer {
                Some(s) => s.clone(),
                None => Standardizer::fit_series(&a)?,
            };
            if st.mean.len() != a.dim() {
                return Err(Failure::config(format!(
                    "standardizer has {} channels, data has {}",
                    st.mean.len(),
                    a.dim()
                )));
            }
            for s in [&mut a, &mut b, &mut c] {
                st.apply_series(s);
            }
            Ok(Loaded { id: source.id(), sha256: sha, splits: Splits::Series([a, b, c]), standardizer: Some(st) })
        }
    }
}
