mod common;

use common::*;
use dpsom::genmodel::{gaussian_kl, smooth_loss};
use dpsom::metrics::{kmeans, morans_index, morans_index_masked, nmi, purity};
use dpsom::psom::{cah_loss, soft_assignments, ssom_loss, target_distribution};
use dpsom::somgrid::GridSpec;
use ndarray::{Array2, Array3, Axis};
use proptest::prelude::*;
use rand::Rng;

fn rows_sum_to_one(m: &Array2<f64>) -> bool {
    m.sum_axis(Axis(1)).iter().all(|s| (s - 1.0).abs() < 1e-9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assignments_and_targets_are_row_stochastic(seed in any::<u64>(), n in 1usize..40, k in 2usize..40, l in 1usize..6, alpha in 0.2f64..50.0) {
        let mut r = rng(seed);
        let z = uniform_matrix(&mut r, n, l, -20.0, 20.0);
        let mu = uniform_matrix(&mut r, k, l, -20.0, 20.0);
        let s = soft_assignments(z.view(), mu.view(), alpha).unwrap();
        let t = target_distribution(s.view());
        prop_assert!(rows_sum_to_one(&s));
        prop_assert!(rows_sum_to_one(&t));
        prop_assert!(s.iter().chain(t.iter()).all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn single_row_targets_are_fixed_points(seed in any::<u64>(), k in 2usize..30) {
        let s = stochastic_matrix(&mut rng(seed), 1, k);
        let t = target_distribution(s.view());
        prop_assert!(max_abs_diff(&s, &t) < 1e-12);
    }

    #[test]
    fn assignments_ignore_rigid_motions(seed in any::<u64>(), n in 1usize..20, k in 2usize..20, theta in 0.0f64..6.3, dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
        let mut r = rng(seed);
        let z = uniform_matrix(&mut r, n, 2, -3.0, 3.0);
        let mu = uniform_matrix(&mut r, k, 2, -3.0, 3.0);
        let rot = Array2::from_shape_vec((2, 2), vec![theta.cos(), theta.sin(), -theta.sin(), theta.cos()]).unwrap();
        let shift = ndarray::arr1(&[dx, dy]);
        let z2 = z.dot(&rot) + &shift;
        let mu2 = mu.dot(&rot) + &shift;
        let a = soft_assignments(z.view(), mu.view(), 10.0).unwrap();
        let b = soft_assignments(z2.view(), mu2.view(), 10.0).unwrap();
        prop_assert!(max_abs_diff(&a, &b) < 1e-9);
    }

    #[test]
    fn cah_is_nonnegative_and_zero_on_itself(seed in any::<u64>(), n in 1usize..20, k in 2usize..20) {
        let mut r = rng(seed);
        let s = stochastic_matrix(&mut r, n, k);
        let t = stochastic_matrix(&mut r, n, k);
        prop_assert!(cah_loss(s.view(), t.view()).unwrap() >= -1e-12);
        prop_assert!(cah_loss(s.view(), s.view()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_is_nonnegative(seed in any::<u64>(), n in 1usize..10, l in 1usize..8) {
        let mut r = rng(seed);
        let mean = uniform_matrix(&mut r, n, l, -5.0, 5.0);
        let log_var = uniform_matrix(&mut r, n, l, -6.0, 2.0);
        let (kl, _, _) = gaussian_kl(&mean, &log_var);
        prop_assert!(kl.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn smooth_loss_is_bounded(seed in any::<u64>(), n in 1usize..5, t in 2usize..10, l in 1usize..5, scale in 0.0f64..100.0) {
        let mut r = rng(seed);
        let z = Array3::from_shape_fn((n, t, l), |_| r.random_range(-1.0..1.0) * scale);
        let v = smooth_loss(z.view(), 10.0).unwrap();
        prop_assert!((-1.0..=0.0).contains(&v), "{v}");
    }

    #[test]
    fn ssom_is_nonnegative_and_uniform_rows_cost_4_ln_k(seed in any::<u64>(), rows in 2usize..8, cols in 2usize..8, n in 1usize..6) {
        let g = GridSpec::new(rows, cols).unwrap();
        let k = g.k();
        let s = stochastic_matrix(&mut rng(seed), n, k);
        prop_assert!(ssom_loss(s.view(), &g).unwrap() >= 0.0);
        let u = Array2::from_elem((n, k), 1.0 / k as f64);
        prop_assert!(close(ssom_loss(u.view(), &g).unwrap(), 4.0 * (k as f64).ln(), 1e-12));
    }

    #[test]
    fn ssom_ignores_toroidal_translation(seed in any::<u64>(), rows in 2usize..8, cols in 2usize..8, dr in 0usize..8, dc in 0usize..8) {
        let g = GridSpec::new(rows, cols).unwrap();
        let s = stochastic_matrix(&mut rng(seed), 3, g.k());
        let moved = Array2::from_shape_fn(s.dim(), |(i, j)| {
            let (r, c) = (j / cols, j % cols);
            s[[i, ((r + dr) % rows) * cols + (c + dc) % cols]]
        });
        prop_assert!(close(ssom_loss(moved.view(), &g).unwrap(), ssom_loss(s.view(), &g).unwrap(), 1e-12));
    }

    #[test]
    fn purity_and_nmi_ignore_relabelling(seed in any::<u64>(), n in 1usize..80, ka in 1usize..10, kl in 1usize..10) {
        let mut r = rng(seed);
        let a = random_labels(&mut r, n, ka);
        let l = random_labels(&mut r, n, kl);
        let pa: Vec<usize> = (0..ka).map(|i| (i + 3) % ka + 100).collect();
        let pl: Vec<usize> = (0..kl).rev().collect();
        let a2: Vec<usize> = a.iter().map(|&v| pa[v]).collect();
        let l2: Vec<usize> = l.iter().map(|&v| pl[v]).collect();
        prop_assert!((purity(&a, &l).unwrap() - purity(&a2, &l2).unwrap()).abs() < 1e-12);
        prop_assert!((nmi(&a, &l).unwrap() - nmi(&a2, &l2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn nmi_is_symmetric_and_bounded(seed in any::<u64>(), n in 1usize..80, ka in 1usize..10, kl in 1usize..10) {
        let mut r = rng(seed);
        let a = random_labels(&mut r, n, ka);
        let l = random_labels(&mut r, n, kl);
        let v = nmi(&a, &l).unwrap();
        prop_assert!((v - nmi(&l, &a).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((nmi(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moran_ignores_shift_and_positive_scale(seed in any::<u64>(), rows in 2usize..8, cols in 2usize..8, c in -50.0f64..50.0, a in 0.01f64..100.0) {
        let g = GridSpec::new(rows, cols).unwrap();
        let mut r = rng(seed);
        let y: Vec<f64> = (0..g.k()).map(|_| r.random_range(-1.0..1.0)).collect();
        let y2: Vec<f64> = y.iter().map(|v| a * v + c).collect();
        let i1 = morans_index(&g, &y).unwrap();
        prop_assert!((i1 - morans_index(&g, &y2).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn masked_moran_matches_the_oracle(seed in any::<u64>(), rows in 2usize..7, cols in 2usize..7) {
        let g = GridSpec::new(rows, cols).unwrap();
        let mut r = rng(seed);
        let y: Vec<Option<f64>> = (0..g.k()).map(|_| r.random_bool(0.7).then(|| r.random_range(-1.0..1.0))).collect();
        let (cells, vals): (Vec<usize>, Vec<f64>) = y.iter().enumerate().filter_map(|(j, v)| v.map(|v| (j, v))).unzip();
        prop_assume!(cells.len() >= 2);
        let got = morans_index_masked(&g, &y).unwrap();
        prop_assert!(close(got, common::morans_index(&g, &cells, &vals), 1e-10));
    }

    #[test]
    fn kmeans_inertia_never_increases(seed in any::<u64>(), n in 2usize..60, d in 1usize..4, k in 1usize..6) {
        prop_assume!(k <= n);
        let x = uniform_matrix(&mut rng(seed), n, d, -5.0, 5.0);
        let km = kmeans(x.view(), k, seed, 50).unwrap();
        for w in km.inertia.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0]), "{:?}", km.inertia);
        }
    }
}

#[test]
fn neighbour_union_covers_every_grid_up_to_12x12() {
    for rows in 2..=12 {
        for cols in 2..=12 {
            let g = GridSpec::new(rows, cols).unwrap();
            let mut seen = vec![false; g.k()];
            for j in 0..g.k() {
                let nb = g.neighbors(j).unwrap();
                assert_eq!(nb, neighbours(&g, j), "{g} node {j}");
                for e in nb {
                    seen[e] = true;
                }
            }
            assert!(seen.iter().all(|&s| s), "{g}");
        }
    }
}

#[test]
fn grid_distance_is_a_metric_up_to_12x12() {
    for (rows, cols) in [(2, 2), (2, 7), (3, 5), (6, 6), (12, 12), (12, 5)] {
        let g = GridSpec::new(rows, cols).unwrap();
        let k = g.k();
        let d: Vec<Vec<usize>> = (0..k).map(|i| (0..k).map(|j| g.grid_distance(i, j).unwrap()).collect()).collect();
        for i in 0..k {
            assert_eq!(d[i][i], 0);
            for j in 0..k {
                assert_eq!(d[i][j], d[j][i]);
                assert_eq!(d[i][j], grid_distance(&g, i, j));
                if i != j {
                    assert!(d[i][j] > 0);
                }
                for m in 0..k {
                    assert!(d[i][m] <= d[i][j] + d[j][m]);
                }
            }
        }
    }
}
