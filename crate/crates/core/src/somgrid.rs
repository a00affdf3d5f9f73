//! Toroidal rectangular SOM topology and the classical Kohonen algorithm.
//!
//! Node `j` sits at `(j / cols, j % cols)`. Each node has exactly four
//! neighbours (up, down, left, right) with wraparound on both axes; on a
//! 2-wide axis both directions land on the same node, so the neighbour list
//! is a multiset.

use log::warn;
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ndcore::rng::{seeded, stream};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::config(format!("grid must be at least 2x2, got {rows}x{cols}")));
        }
        Ok(Self { rows, cols })
    }

    /// Parses `"8x8"`.
    pub fn parse(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::config(format!("grid `{s}` is not of the form RxC")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("grid `{s}` is not of the form RxC")))
        };
        Self::new(parse(r)?, parse(c)?)
    }

    pub fn k(&self) -> usize {
        self.rows * self.cols
    }

    pub fn coords(&self, j: usize) -> (usize, usize) {
        (j / self.cols, j % self.cols)
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    fn check(&self, j: usize) -> Result<()> {
        if j >= self.k() {
            Err(Error::Index { index: j, len: self.k() })
        } else {
            Ok(())
        }
    }

    /// Up, down, left, right with wraparound.
    pub fn neighbors(&self, j: usize) -> Result<[usize; 4]> {
        self.check(j)?;
        Ok(self.neighbors_unchecked(j))
    }

    pub(crate) fn neighbors_unchecked(&self, j: usize) -> [usize; 4] {
        let (r, c) = self.coords(j);
        let (rows, cols) = (self.rows, self.cols);
        [
            self.index((r + rows - 1) % rows, c),
            self.index((r + 1) % rows, c),
            self.index(r, (c + cols - 1) % cols),
            self.index(r, (c + 1) % cols),
        ]
    }

    /// Neighbour table for all nodes.
    pub fn neighbor_table(&self) -> Vec<[usize; 4]> {
        (0..self.k()).map(|j| self.neighbors_unchecked(j)).collect()
    }

    /// Toroidal Manhattan distance.
    pub fn grid_distance(&self, i: usize, j: usize) -> Result<usize> {
        self.check(i)?;
        self.check(j)?;
        Ok(self.distance_unchecked(i, j))
    }

    pub(crate) fn distance_unchecked(&self, i: usize, j: usize) -> usize {
        let (ri, ci) = self.coords(i);
        let (rj, cj) = self.coords(j);
        let wrap = |a: usize, b: usize, n: usize| {
            let d = a.abs_diff(b);
            d.min(n - d)
        };
        wrap(ri, rj, self.rows) + wrap(ci, cj, self.cols)
    }
}

impl std::fmt::Display for GridSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Learning-rate / radius schedule for [`som_fit`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SomSchedule {
    pub alpha0: f64,
    /// Initial Gaussian neighbourhood radius; `None` means `max(rows, cols) / 2`.
    pub radius0: Option<f64>,
    /// Radius reached at the last step.
    pub radius_final: f64,
    pub total_steps: usize,
}

impl SomSchedule {
    pub fn new(alpha0: f64, total_steps: usize) -> Self {
        Self { alpha0, radius0: None, radius_final: 0.5, total_steps }
    }

    fn radius0(&self, spec: &GridSpec) -> f64 {
        self.radius0
            .unwrap_or_else(|| spec.rows.max(spec.cols) as f64 / 2.0)
    }

    /// Linear decay from `(alpha0, radius0)` to `(0.01 alpha0, radius_final)`.
    pub fn at(&self, spec: &GridSpec, t: usize) -> (f64, f64) {
        let frac = if self.total_steps <= 1 {
            0.0
        } else {
            (t as f64 / (self.total_steps - 1) as f64).min(1.0)
        };
        let r0 = self.radius0(spec);
        let alpha = self.alpha0 + (0.01 * self.alpha0 - self.alpha0) * frac;
        let radius = r0 + (self.radius_final - r0) * frac;
        (alpha, radius)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassicSomState {
    pub spec: GridSpec,
    pub centroids: Array2<f64>,
    pub iteration: usize,
    pub schedule: SomSchedule,
    /// Mean quantisation error measured at each epoch boundary (first entry is
    /// the initial state).
    pub qe_history: Vec<f64>,
}

impl ClassicSomState {
    pub fn bmu(&self, x: ArrayView1<f64>) -> Result<usize> {
        bmu(self.centroids.view(), x)
    }

    pub fn quantization_error(&self, data: ArrayView2<f64>) -> f64 {
        quantization_error(self.centroids.view(), data)
    }

    /// One update for input `x` with explicit gain and radius.
    ///
    /// `Δw_k = α · η(ν, k) · (x − w_k)` with `η = exp(−d(ν,k)² / (2σ²))`.
    pub fn update(&mut self, x: ArrayView1<f64>, alpha: f64, radius: f64) -> Result<usize> {
        let winner = self.bmu(x)?;
        let denom = 2.0 * radius * radius;
        for k in 0..self.spec.k() {
            let d = self.spec.distance_unchecked(winner, k) as f64;
            let gain = alpha * (-(d * d) / denom).exp();
            if gain < 1e-12 {
                continue;
            }
            let err = &x - &self.centroids.row(k);
            self.centroids.row_mut(k).scaled_add(gain, &err);
        }
        Ok(winner)
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid; ties resolve to the lowest index.
pub fn bmu(centroids: ArrayView2<f64>, x: ArrayView1<f64>) -> Result<usize> {
    if centroids.ncols() != x.len() {
        return Err(Error::dim(format!("input has {} dims, centroids {}", x.len(), centroids.ncols())));
    }
    let mut best = (f64::INFINITY, 0);
    for (k, w) in centroids.axis_iter(Axis(0)).enumerate() {
        let d = sq_dist(w, x);
        if d < best.0 {
            best = (d, k);
        }
    }
    Ok(best.1)
}

/// Mean Euclidean distance from each row to its BMU.
pub fn quantization_error(centroids: ArrayView2<f64>, data: ArrayView2<f64>) -> f64 {
    let total: f64 = data
        .axis_iter(Axis(0))
        .map(|x| {
            centroids
                .axis_iter(Axis(0))
                .map(|w| sq_dist(w, x))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    total / data.nrows().max(1) as f64
}

/// Classical SOM fit.
///
/// Centroids start at randomly chosen data rows. Each step presents a random
/// input; `total_steps` is split into epochs of `N` presentations and the
/// quantisation error is recorded at each epoch boundary.
pub fn som_fit(data: ArrayView2<f64>, spec: GridSpec, schedule: SomSchedule, seed: u64) -> Result<ClassicSomState> {
    let n = data.nrows();
    if n == 0 || data.ncols() == 0 {
        return Err(Error::input("som_fit needs non-empty data"));
    }
    if schedule.total_steps == 0 {
        return Err(Error::config("som_fit needs total_steps >= 1"));
    }
    if n < spec.k() {
        warn!("som_fit: {n} samples for {} nodes", spec.k());
    }
    let mut rng = seeded(seed, stream::SOM);
    let mut centroids = Array2::zeros((spec.k(), data.ncols()));
    for k in 0..spec.k() {
        let i = rng.random_range(0..n);
        centroids.row_mut(k).assign(&data.row(i));
    }
    let mut state = ClassicSomState { spec, centroids, iteration: 0, schedule, qe_history: Vec::new() };
    let qe0 = state.quantization_error(data);
    state.qe_history.push(qe0);
    for t in 0..schedule.total_steps {
        let (alpha, radius) = schedule.at(&spec, t);
        let i = rng.random_range(0..n);
        state.update(data.row(i), alpha, radius)?;
        state.iteration = t + 1;
        if (t + 1) % n == 0 || t + 1 == schedule.total_steps {
            let qe = state.quantization_error(data);
            state.qe_history.push(qe);
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn corner_neighbors_wrap() {
        let g = GridSpec::new(8, 8).unwrap();
        let mut n = g.neighbors(0).unwrap().to_vec();
        n.sort();
        let mut want = vec![g.index(7, 0), g.index(1, 0), g.index(0, 7), g.index(0, 1)];
        want.sort();
        assert_eq!(n, want);
    }

    #[test]
    fn two_by_two_double_wraparound() {
        let g = GridSpec::new(2, 2).unwrap();
        let mut n = g.neighbors(0).unwrap().to_vec();
        n.sort();
        assert_eq!(n, vec![1, 1, 2, 2]);
    }

    #[test]
    fn neighbor_union_covers_grid() {
        let g = GridSpec::new(4, 4).unwrap();
        let mut seen = vec![false; 16];
        for j in 0..16 {
            for e in g.neighbors(j).unwrap() {
                seen[e] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn out_of_range_index() {
        let g = GridSpec::new(3, 3).unwrap();
        assert!(matches!(g.neighbors(9), Err(Error::Index { index: 9, len: 9 })));
        assert!(g.grid_distance(0, 9).is_err());
    }

    #[test]
    fn rejects_thin_grids() {
        assert!(GridSpec::new(1, 5).is_err());
        assert!(GridSpec::parse("8x8").is_ok());
        assert!(GridSpec::parse("8-8").is_err());
    }

    #[test]
    fn toroidal_distances() {
        let g = GridSpec::new(8, 8).unwrap();
        assert_eq!(g.grid_distance(0, g.index(7, 7)).unwrap(), 2);
        assert_eq!(g.grid_distance(0, g.index(4, 4)).unwrap(), 8);
        for i in 0..64 {
            assert_eq!(g.grid_distance(i, i).unwrap(), 0);
        }
    }

    #[test]
    fn bmu_exact_and_ties() {
        let mut c = Array2::zeros((8, 2));
        for k in 0..8 {
            c[[k, 0]] = k as f64;
        }
        assert_eq!(bmu(c.view(), array![5.0, 0.0].view()).unwrap(), 5);
        // centroids 3 and 7 equidistant from x=5 once 4..=6 are moved away
        for k in 4..7 {
            c[[k, 1]] = 100.0;
        }
        assert_eq!(bmu(c.view(), array![5.0, 0.0].view()).unwrap(), 3);
        assert!(bmu(c.view(), array![1.0].view()).is_err());
    }

    #[test]
    fn unit_gain_moves_winner_onto_input() {
        let spec = GridSpec::new(2, 2).unwrap();
        let centroids = array![[0.0, 0.0], [5.0, 5.0], [-5.0, 5.0], [5.0, -5.0]];
        let mut st = ClassicSomState {
            spec,
            centroids,
            iteration: 0,
            schedule: SomSchedule::new(1.0, 1),
            qe_history: vec![],
        };
        let x = array![1.0, -0.5];
        // radius tiny: η(ν,ν) = 1, η = 0 elsewhere
        let w = st.update(x.view(), 1.0, 1e-3).unwrap();
        assert_eq!(w, 0);
        assert_eq!(st.centroids.row(0), x);
        assert_eq!(st.centroids.row(1), array![5.0, 5.0]);
    }

    #[test]
    fn schedule_endpoints() {
        let spec = GridSpec::new(4, 6).unwrap();
        let s = SomSchedule::new(0.5, 101);
        assert_eq!(s.at(&spec, 0), (0.5, 3.0));
        let (a, r) = s.at(&spec, 100);
        assert!((a - 0.005).abs() < 1e-15);
        assert!((r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn converges_onto_distinct_points() {
        let spec = GridSpec::new(2, 2).unwrap();
        let pts = array![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]];
        let mut data = Array2::zeros((400, 2));
        for i in 0..400 {
            data.row_mut(i).assign(&pts.row(i % 4));
        }
        let schedule = SomSchedule { radius_final: 0.2, ..SomSchedule::new(0.5, 20_000) };
        let st = som_fit(data.view(), spec, schedule, 3).unwrap();
        let mut matched = [false; 4];
        for k in 0..4 {
            let c = st.centroids.row(k);
            let p = bmu(pts.view(), c).unwrap();
            assert!(sq_dist(c, pts.row(p)).sqrt() < 1e-2, "centroid {k} = {c}");
            matched[p] = true;
        }
        assert!(matched.iter().all(|&m| m));
        assert!(st.qe_history.last().unwrap() <= &st.qe_history[0]);
    }

    #[test]
    fn empty_data_is_input_error() {
        let spec = GridSpec::new(2, 2).unwrap();
        let data = Array2::<f64>::zeros((0, 3));
        assert!(matches!(som_fit(data.view(), spec, SomSchedule::new(0.5, 10), 0), Err(Error::Input(_))));
    }

    #[test]
    fn bmu_matches_exhaustive_scan() {
        let mut rng = seeded(5, 0);
        let c = Array2::from_shape_simple_fn((16, 3), || rng.random_range(-1.0..1.0));
        for _ in 0..200 {
            let x: Array1<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let mut best = 0;
            for k in 1..16 {
                if sq_dist(c.row(k), x.view()) < sq_dist(c.row(best), x.view()) {
                    best = k;
                }
            }
            assert_eq!(bmu(c.view(), x.view()).unwrap(), best);
        }
    }
}
