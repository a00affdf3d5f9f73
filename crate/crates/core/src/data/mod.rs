//! Datasets: IDX images, CSV series, the synthetic ICU-like generator,
//! splitting, batching and standardisation.

mod idx;
mod series_csv;
mod synth;

pub use idx::{load_idx, load_idx_dir, write_idx, IMAGE_MAGIC, LABEL_MAGIC};
pub use series_csv::{read_series_csv, write_series_csv};
pub use synth::{synth_icu, synth_icu_detailed, SynthIcu, SynthIcuParams};

use std::path::PathBuf;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;

use crate::ndcore::rng::{seeded, stream};
use crate::{Error, Result};

/// Environment variable naming the dataset root directory.
pub const DATA_DIR_ENV: &str = "DPSOM_DATA_DIR";

/// `$DPSOM_DATA_DIR`, falling back to `./data`.
pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Static samples, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Array2<f64>,
    pub labels: Option<Vec<usize>>,
}

/// Fixed-length multivariate series, `N × T × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesBatch {
    pub x: Array3<f64>,
    /// Per-step labels (`N × T`), e.g. severity deciles.
    pub step_labels: Option<Array2<usize>>,
}

impl Batch {
    pub fn new(x: Array2<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != x.nrows() {
                return Err(Error::dim(format!("{} labels for {} rows", l.len(), x.nrows())));
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::input("batch contains non-finite values"));
        }
        Ok(Self { x, labels })
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

impl SeriesBatch {
    pub fn new(x: Array3<f64>, step_labels: Option<Array2<usize>>) -> Result<Self> {
        if let Some(l) = &step_labels {
            if l.dim() != (x.dim().0, x.dim().1) {
                return Err(Error::dim(format!("step labels {:?} for series {:?}", l.dim(), x.dim())));
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::input("series contain non-finite values"));
        }
        Ok(Self { x, step_labels })
    }

    pub fn steps(&self) -> usize {
        self.x.dim().1
    }

    pub fn dim(&self) -> usize {
        self.x.dim().2
    }

    /// All steps as rows of an `(N·T) × d` matrix, series-major.
    pub fn flatten_steps(&self) -> Array2<f64> {
        let (n, t, d) = self.x.dim();
        self.x.as_standard_layout().into_owned().into_shape_with_order((n * t, d)).expect("contiguous")
    }

    /// Step labels in the same order as [`Self::flatten_steps`].
    pub fn flat_labels(&self) -> Option<Vec<usize>> {
        self.step_labels.as_ref().map(|l| l.iter().copied().collect())
    }

    /// The first `t` steps of every series.
    pub fn prefix(&self, t: usize) -> SeriesBatch {
        SeriesBatch {
            x: self.x.slice(ndarray::s![.., ..t, ..]).to_owned(),
            step_labels: self.step_labels.as_ref().map(|l| l.slice(ndarray::s![.., ..t]).to_owned()),
        }
    }
}

/// Row-addressable collections (points or whole series).
pub trait Dataset: Sized {
    fn len(&self) -> usize;
    fn select(&self, idx: &[usize]) -> Self;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Dataset for Batch {
    fn len(&self) -> usize {
        self.x.nrows()
    }

    fn select(&self, idx: &[usize]) -> Self {
        Batch {
            x: self.x.select(Axis(0), idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }
}

impl Dataset for SeriesBatch {
    fn len(&self) -> usize {
        self.x.dim().0
    }

    fn select(&self, idx: &[usize]) -> Self {
        SeriesBatch {
            x: self.x.select(Axis(0), idx),
            step_labels: self.step_labels.as_ref().map(|l| l.select(Axis(0), idx)),
        }
    }
}

/// Disjoint `(train, val, test)` partition; series are never split internally.
///
/// Train and validation sizes are `round(f · N)`; the test split takes the rest.
pub fn split<D: Dataset>(data: &D, fractions: [f64; 3], seed: u64) -> Result<(D, D, D)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let n = data.len();
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed, stream::SPLIT));
    let (train, rest) = order.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok((data.select(&sorted(train)), data.select(&sorted(val)), data.select(&sorted(test))))
}

/// Mini-batch index lists covering `0..n` once; shuffled when a seed is given.
pub fn batch_indices(n: usize, size: usize, shuffle_seed: Option<u64>) -> Vec<Vec<usize>> {
    assert!(size >= 1, "batch size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut seeded(seed, stream::SHUFFLE));
    }
    order.chunks(size).map(|c| c.to_vec()).collect()
}

/// Mini-batches of `data`; the last one may be smaller.
pub fn batches<D: Dataset>(data: &D, size: usize, shuffle_seed: Option<u64>) -> impl Iterator<Item = D> + '_ {
    batch_indices(data.len(), size, shuffle_seed)
        .into_iter()
        .map(move |idx| data.select(&idx))
}

/// Per-channel affine standardisation fitted on training data.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub sd: Array1<f64>,
}

impl Standardizer {
    /// Channels with (near) zero spread keep unit scale.
    pub fn fit_rows(x: &Array2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::input("cannot standardise an empty set"));
        }
        let mean = x.mean_axis(Axis(0)).unwrap();
        let sd = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-8 { s } else { 1.0 });
        Ok(Self { mean, sd })
    }

    pub fn fit_series(s: &SeriesBatch) -> Result<Self> {
        Self::fit_rows(&s.flatten_steps())
    }

    pub fn apply_rows(&self, x: &mut Array2<f64>) {
        for mut row in x.rows_mut() {
            row -= &self.mean;
            row /= &self.sd;
        }
    }

    pub fn apply_series(&self, s: &mut SeriesBatch) {
        for mut row in s.x.lanes_mut(Axis(2)) {
            row -= &self.mean;
            row /= &self.sd;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numbered(n: usize) -> Batch {
        Batch::new(Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64), Some((0..n).map(|i| i % 3).collect()))
            .unwrap()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let b = numbered(100);
        let (tr, va, te) = split(&b, [0.8, 0.1, 0.1], 4).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (80, 10, 10));
        let mut seen: Vec<f64> = [&tr, &va, &te].iter().flat_map(|d| d.x.column(0).to_vec()).collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..100).map(|i| (2 * i) as f64).collect::<Vec<_>>());
        let again = split(&b, [0.8, 0.1, 0.1], 4).unwrap();
        assert_eq!(again.0, tr);
    }

    #[test]
    fn split_everything_into_train() {
        let b = numbered(7);
        let (tr, va, te) = split(&b, [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(tr, b);
        assert!(va.is_empty() && te.is_empty());
        assert!(split(&b, [0.5, 0.6, 0.0], 1).is_err());
    }

    #[test]
    fn series_split_keeps_whole_series() {
        let x = Array3::from_shape_fn((10, 4, 2), |(i, t, c)| (i * 100 + t * 10 + c) as f64);
        let s = SeriesBatch::new(x, None).unwrap();
        let (tr, _, te) = split(&s, [0.5, 0.0, 0.5], 2).unwrap();
        for part in [&tr, &te] {
            for series in part.x.outer_iter() {
                let base = series[[0, 0]];
                for t in 0..4 {
                    assert_eq!(series[[t, 1]], base + (t * 10 + 1) as f64);
                }
            }
        }
    }

    #[test]
    fn batch_sizes_and_order() {
        let b = numbered(10);
        let sizes: Vec<usize> = batches(&b, 3, None).map(|x| x.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        let first = batches(&b, 3, None).next().unwrap();
        assert_eq!(first.x.column(0).to_vec(), vec![0.0, 2.0, 4.0]);
        let a: Vec<Vec<usize>> = batch_indices(10, 3, Some(5));
        assert_eq!(a, batch_indices(10, 3, Some(5)));
        let mut flat: Vec<usize> = a.concat();
        flat.sort_unstable();
        assert_eq!(flat, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn standardizer_uses_training_statistics() {
        let train = array![[1.0, 5.0], [3.0, 5.0]];
        let st = Standardizer::fit_rows(&train).unwrap();
        assert_eq!(st.sd, array![1.0, 1.0]);
        let mut other = array![[2.0, 7.0]];
        st.apply_rows(&mut other);
        assert_eq!(other, array![[0.0, 2.0]]);
    }

    #[test]
    fn label_shape_checked() {
        assert!(Batch::new(Array2::zeros((3, 2)), Some(vec![0, 1])).is_err());
        assert!(SeriesBatch::new(Array3::zeros((2, 3, 1)), Some(Array2::zeros((2, 2)))).is_err());
    }
}
