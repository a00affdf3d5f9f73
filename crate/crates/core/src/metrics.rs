//! Clustering and forecasting metrics, plus a k-means baseline.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, ArrayView3, Axis};
use rand::Rng;

use crate::ndcore::rng::{seeded, stream};
use crate::somgrid::GridSpec;
use crate::{Error, Result};

/// Cluster × class counts over compacted label sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Contingency {
    pub counts: Array2<u64>,
    pub n: u64,
}

fn compact(xs: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    for &x in xs {
        let next = map.len();
        map.entry(x).or_insert(next);
    }
    (xs.iter().map(|x| map[x]).collect(), map.len())
}

impl Contingency {
    pub fn new(assignment: &[usize], labels: &[usize]) -> Result<Self> {
        if assignment.len() != labels.len() {
            return Err(Error::dim(format!("{} assignments vs {} labels", assignment.len(), labels.len())));
        }
        if assignment.is_empty() {
            return Err(Error::input("metrics need at least one point"));
        }
        let (a, ka) = compact(assignment);
        let (l, kl) = compact(labels);
        let mut counts = Array2::zeros((ka, kl));
        for (&i, &j) in a.iter().zip(&l) {
            counts[[i, j]] += 1;
        }
        Ok(Self { counts, n: assignment.len() as u64 })
    }
}

/// Fraction of points belonging to the majority class of their cluster.
pub fn purity(assignment: &[usize], labels: &[usize]) -> Result<f64> {
    let c = Contingency::new(assignment, labels)?;
    let hits: u64 = c.counts.rows().into_iter().map(|r| *r.iter().max().unwrap()).sum();
    Ok(hits as f64 / c.n as f64)
}

fn entropy(counts: impl Iterator<Item = u64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(A; L) / sqrt(H(A) H(L))` with natural logarithms.
///
/// Two single-block partitions score 1; a single block against anything
/// else scores 0.
pub fn nmi(assignment: &[usize], labels: &[usize]) -> Result<f64> {
    let c = Contingency::new(assignment, labels)?;
    let n = c.n as f64;
    let ha = entropy(c.counts.sum_axis(Axis(1)).into_iter(), n);
    let hl = entropy(c.counts.sum_axis(Axis(0)).into_iter(), n);
    if ha == 0.0 && hl == 0.0 {
        return Ok(1.0);
    }
    if ha == 0.0 || hl == 0.0 {
        return Ok(0.0);
    }
    let rows = c.counts.sum_axis(Axis(1));
    let cols = c.counts.sum_axis(Axis(0));
    let mut mi = 0.0;
    for ((i, j), &v) in c.counts.indexed_iter() {
        if v > 0 {
            let v = v as f64;
            mi += v / n * (v * n / (rows[i] as f64 * cols[j] as f64)).ln();
        }
    }
    Ok((mi / (ha * hl).sqrt()).clamp(0.0, 1.0))
}

fn moran_from(spec: &GridSpec, nodes: &[usize], y: &[f64]) -> Result<f64> {
    let k = nodes.len();
    if k < 2 {
        return Err(Error::Undefined("Moran's I needs at least two cells".into()));
    }
    let mean = y.iter().sum::<f64>() / k as f64;
    let dev: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let denom: f64 = dev.iter().map(|d| d * d).sum();
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if denom <= 1e-24 * scale * scale * k as f64 {
        return Err(Error::Undefined("Moran's I of a constant field".into()));
    }
    let mut w_sum = 0.0;
    let mut num = 0.0;
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            let w = (-(spec.distance_unchecked(nodes[a], nodes[b]) as f64)).exp();
            w_sum += w;
            num += w * dev[a] * dev[b];
        }
    }
    Ok(k as f64 / w_sum * num / denom)
}

/// Moran's I of a field on the grid with weights `exp(−d)` and zero self-weight.
pub fn morans_index(spec: &GridSpec, y: &[f64]) -> Result<f64> {
    if y.len() != spec.k() {
        return Err(Error::dim(format!("{} values for {} cells", y.len(), spec.k())));
    }
    let nodes: Vec<usize> = (0..spec.k()).collect();
    moran_from(spec, &nodes, y)
}

/// Moran's I restricted to cells that carry a value (e.g. occupied clusters).
pub fn morans_index_masked(spec: &GridSpec, y: &[Option<f64>]) -> Result<f64> {
    if y.len() != spec.k() {
        return Err(Error::dim(format!("{} values for {} cells", y.len(), spec.k())));
    }
    let (nodes, vals): (Vec<usize>, Vec<f64>) = y.iter().enumerate().filter_map(|(j, v)| v.map(|v| (j, v))).unzip();
    moran_from(spec, &nodes, &vals)
}

/// Mean label per cluster (`None` for empty clusters) and cluster sizes.
pub fn cluster_means(assignment: &[usize], labels: &[f64], k: usize) -> Result<(Vec<Option<f64>>, Vec<usize>)> {
    if assignment.len() != labels.len() {
        return Err(Error::dim(format!("{} assignments vs {} labels", assignment.len(), labels.len())));
    }
    let mut sum = vec![0.0; k];
    let mut count = vec![0usize; k];
    for (&a, &l) in assignment.iter().zip(labels) {
        if a >= k {
            return Err(Error::Index { index: a, len: k });
        }
        sum[a] += l;
        count[a] += 1;
    }
    let means = sum.iter().zip(&count).map(|(&s, &c)| (c > 0).then(|| s / c as f64)).collect();
    Ok((means, count))
}

/// Moran's I over the mean label of each occupied cluster.
pub fn morans_index_of_assignment(spec: &GridSpec, assignment: &[usize], labels: &[f64]) -> Result<f64> {
    let (means, _) = cluster_means(assignment, labels, spec.k())?;
    morans_index_masked(spec, &means)
}

/// Mean squared error over all entries.
pub fn forecast_mse(pred: ArrayView3<f64>, truth: ArrayView3<f64>) -> Result<f64> {
    if pred.dim() != truth.dim() {
        return Err(Error::dim(format!("prediction {:?} vs truth {:?}", pred.dim(), truth.dim())));
    }
    if pred.is_empty() {
        return Err(Error::input("forecast_mse of an empty array"));
    }
    let sum: f64 = pred.iter().zip(truth.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / pred.len() as f64)
}

#[derive(Clone, Debug)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    pub centroids: Array2<f64>,
    /// Inertia after each Lloyd iteration.
    pub inertia: Vec<f64>,
}

/// Squared distances `N × K` via `‖x‖² − 2x·c + ‖c‖²`, floored at 0.
fn sq_distances(x: ArrayView2<f64>, c: ArrayView2<f64>) -> Array2<f64> {
    let xn: Array1<f64> = x.rows().into_iter().map(|r| r.dot(&r)).collect();
    let cn: Array1<f64> = c.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut d = x.dot(&c.t());
    for ((i, j), v) in d.indexed_iter_mut() {
        *v = (xn[i] - 2.0 * *v + cn[j]).max(0.0);
    }
    d
}

fn assign(d: &Array2<f64>) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let a = d
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = (f64::INFINITY, 0);
            for (j, &v) in r.iter().enumerate() {
                if v < best.0 {
                    best = (v, j);
                }
            }
            inertia += best.0;
            best.1
        })
        .collect();
    (a, inertia)
}

/// k-means++ seeding followed by Lloyd iterations (stops early once
/// assignments are stable). Empty clusters are moved onto the point farthest
/// from its centroid.
pub fn kmeans(data: ArrayView2<f64>, k: usize, seed: u64, iters: usize) -> Result<KMeans> {
    let n = data.nrows();
    if k == 0 || n < k {
        return Err(Error::input(format!("k-means needs 1 <= K <= N (K={k}, N={n})")));
    }
    let mut rng = seeded(seed, stream::KMEANS);
    let mut centroids = Array2::zeros((k, data.ncols()));
    centroids.row_mut(0).assign(&data.row(rng.random_range(0..n)));
    let mut best: Vec<f64> = data.rows().into_iter().map(|r| {
        let diff = &r - &centroids.row(0);
        diff.dot(&diff)
    }).collect();
    for j in 1..k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &b) in best.iter().enumerate() {
                if u < b {
                    idx = i;
                    break;
                }
                u -= b;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(j).assign(&data.row(pick));
        for (i, b) in best.iter_mut().enumerate() {
            let diff = &data.row(i) - &centroids.row(j);
            *b = b.min(diff.dot(&diff));
        }
    }
    let (mut assignment, _) = assign(&sq_distances(data, centroids.view()));
    let mut inertia = Vec::new();
    for _ in 0..iters.max(1) {
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, &a) in assignment.iter().enumerate() {
            sums.row_mut(a).scaled_add(1.0, &data.row(i));
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids.row_mut(j).assign(&(&sums.row(j) / counts[j] as f64));
            }
        }
        let mut d = sq_distances(data, centroids.view());
        let (mut next, mut cost) = assign(&d);
        // bounded: with duplicate points a reseeded centroid may still lose ties
        for _ in 0..k {
            let mut occupied = vec![false; k];
            next.iter().for_each(|&a| occupied[a] = true);
            let Some(empty) = occupied.iter().position(|o| !o) else { break };
            let far = (0..n)
                .max_by(|&a, &b| d[[a, next[a]]].total_cmp(&d[[b, next[b]]]).then(b.cmp(&a)))
                .unwrap();
            centroids.row_mut(empty).assign(&data.row(far));
            d = sq_distances(data, centroids.view());
            (next, cost) = assign(&d);
        }
        inertia.push(cost);
        let stable = next == assignment;
        assignment = next;
        if stable {
            break;
        }
    }
    Ok(KMeans { assignment, centroids, inertia })
}
