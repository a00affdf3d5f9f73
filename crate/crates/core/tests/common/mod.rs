//! Explicit-loop reference implementations and random fixtures shared by the
//! integration tests and the acceptance runner.

#![allow(dead_code)]

use std::collections::HashMap;

use dpsom::somgrid::GridSpec;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

/// Row-stochastic matrix with entries bounded away from zero.
pub fn stochastic_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = uniform_matrix(rng, rows, cols, 0.05, 1.0);
    for mut r in m.rows_mut() {
        let s = r.sum();
        r /= s;
    }
    m
}

pub fn random_grid(rng: &mut ChaCha8Rng, max: usize) -> GridSpec {
    GridSpec::new(rng.random_range(2..=max), rng.random_range(2..=max)).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

pub fn soft_assignments(z: &Array2<f64>, mu: &Array2<f64>, alpha: f64) -> Array2<f64> {
    let (n, k) = (z.nrows(), mu.nrows());
    let mut s = Array2::zeros((n, k));
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..k {
            let mut d = 0.0;
            for c in 0..z.ncols() {
                d += (z[[i, c]] - mu[[j, c]]).powi(2);
            }
            let q = (1.0 + d / alpha).powf(-(alpha + 1.0) / 2.0);
            s[[i, j]] = q;
            total += q;
        }
        for j in 0..k {
            s[[i, j]] /= total;
        }
    }
    s
}

pub fn target_distribution(s: &Array2<f64>) -> Array2<f64> {
    let (n, k) = s.dim();
    let mut f = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            f[j] += s[[i, j]];
        }
    }
    let mut t = Array2::zeros((n, k));
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..k {
            t[[i, j]] = s[[i, j]] * s[[i, j]] / f[j];
            total += t[[i, j]];
        }
        for j in 0..k {
            t[[i, j]] /= total;
        }
    }
    t
}

pub fn cah_loss(s: &Array2<f64>, t: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            total += t[[i, j]] * (t[[i, j]] / s[[i, j]]).ln();
        }
    }
    total
}

/// Up, down, left, right on the torus.
pub fn neighbours(g: &GridSpec, j: usize) -> [usize; 4] {
    let (r, c) = (j / g.cols, j % g.cols);
    let up = ((r + g.rows - 1) % g.rows) * g.cols + c;
    let down = ((r + 1) % g.rows) * g.cols + c;
    let left = r * g.cols + (c + g.cols - 1) % g.cols;
    let right = r * g.cols + (c + 1) % g.cols;
    [up, down, left, right]
}

pub fn ssom_loss(s: &Array2<f64>, g: &GridSpec) -> f64 {
    let mut total = 0.0;
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            for e in neighbours(g, j) {
                total += s[[i, j]] * s[[i, e]].ln();
            }
        }
    }
    -total / s.nrows() as f64
}

pub fn grid_distance(g: &GridSpec, a: usize, b: usize) -> usize {
    let (ra, ca) = (a / g.cols, a % g.cols);
    let (rb, cb) = (b / g.cols, b % g.cols);
    let dr = ra.abs_diff(rb);
    let dc = ca.abs_diff(cb);
    dr.min(g.rows - dr) + dc.min(g.cols - dc)
}

/// Moran's I over the cells in `cells` with values `y`, weights `exp(−d)`.
pub fn morans_index(g: &GridSpec, cells: &[usize], y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut w_sum = 0.0;
    for a in 0..y.len() {
        for b in 0..y.len() {
            if a != b {
                let w = (-(grid_distance(g, cells[a], cells[b]) as f64)).exp();
                num += w * (y[a] - mean) * (y[b] - mean);
                w_sum += w;
            }
        }
    }
    let den: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    n / w_sum * num / den
}

pub fn purity(assignment: &[usize], labels: &[usize]) -> f64 {
    let mut counts: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (&a, &l) in assignment.iter().zip(labels) {
        *counts.entry(a).or_default().entry(l).or_default() += 1;
    }
    let hits: usize = counts.values().map(|m| *m.values().max().unwrap()).sum();
    hits as f64 / assignment.len() as f64
}

pub fn nmi(assignment: &[usize], labels: &[usize]) -> f64 {
    let n = assignment.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ca: HashMap<usize, usize> = HashMap::new();
    let mut cl: HashMap<usize, usize> = HashMap::new();
    for (&a, &l) in assignment.iter().zip(labels) {
        *joint.entry((a, l)).or_default() += 1;
        *ca.entry(a).or_default() += 1;
        *cl.entry(l).or_default() += 1;
    }
    if ca.len() == 1 && cl.len() == 1 {
        return 1.0;
    }
    if ca.len() == 1 || cl.len() == 1 {
        return 0.0;
    }
    let h = |c: &HashMap<usize, usize>| -c.values().map(|&v| v as f64 / n * (v as f64 / n).ln()).sum::<f64>();
    let (ha, hl) = (h(&ca), h(&cl));
    let mut mi = 0.0;
    for (&(a, l), &v) in &joint {
        let p = v as f64 / n;
        mi += p * (p * n * n / (ca[&a] as f64 * cl[&l] as f64)).ln();
    }
    mi / (ha * hl).sqrt()
}

pub fn forecast_mse(pred: &Array3<f64>, truth: &Array3<f64>) -> f64 {
    let (a, b, c) = pred.dim();
    let mut total = 0.0;
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                total += (pred[[i, j, k]] - truth[[i, j, k]]).powi(2);
            }
        }
    }
    total / (a * b * c) as f64
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Result of comparing every library routine against its oracle on one
/// random fixture; the worst discrepancy per routine.
pub fn oracle_discrepancies(seed: u64) -> Vec<(&'static str, f64)> {
    use dpsom::{metrics, psom};
    let mut r = rng(seed);
    let grid = random_grid(&mut r, 6);
    let k = grid.k();
    let n = r.random_range(1..30);
    let l = r.random_range(1..5);
    let alpha = r.random_range(0.5..20.0);
    let z = uniform_matrix(&mut r, n, l, -3.0, 3.0);
    let mu = uniform_matrix(&mut r, k, l, -3.0, 3.0);
    let mut out = Vec::new();

    let s = psom::soft_assignments(z.view(), mu.view(), alpha).unwrap();
    out.push(("soft_assignments", max_abs_diff(&s, &soft_assignments(&z, &mu, alpha))));
    let s = stochastic_matrix(&mut r, n, k);
    let t = psom::target_distribution(s.view());
    out.push(("target_distribution", max_abs_diff(&t, &target_distribution(&s))));
    let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + b.abs());
    out.push(("cah_loss", rel(psom::cah_loss(s.view(), t.view()).unwrap(), cah_loss(&s, &t))));
    out.push(("ssom_loss", rel(psom::ssom_loss(s.view(), &grid).unwrap(), ssom_loss(&s, &grid))));

    let y: Vec<f64> = (0..k).map(|_| r.random_range(-2.0..2.0)).collect();
    let cells: Vec<usize> = (0..k).collect();
    out.push(("morans_index", rel(metrics::morans_index(&grid, &y).unwrap(), morans_index(&grid, &cells, &y))));

    let m = r.random_range(2..60);
    let (ka, kl) = (r.random_range(1..8), r.random_range(1..6));
    let a = random_labels(&mut r, m, ka);
    let lab = random_labels(&mut r, m, kl);
    out.push(("purity", rel(metrics::purity(&a, &lab).unwrap(), purity(&a, &lab))));
    out.push(("nmi", rel(metrics::nmi(&a, &lab).unwrap(), nmi(&a, &lab))));

    let shape = (r.random_range(1..5), r.random_range(1..7), r.random_range(1..4));
    let p = Array3::from_shape_fn(shape, |_| r.random_range(-2.0..2.0));
    let q = Array3::from_shape_fn(shape, |_| r.random_range(-2.0..2.0));
    out.push(("forecast_mse", rel(metrics::forecast_mse(p.view(), q.view()).unwrap(), forecast_mse(&p, &q))));
    out
}
