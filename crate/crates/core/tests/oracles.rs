mod common;

use common::*;
use dpsom::data::synth_icu;
use dpsom::genmodel::{Likelihood, ModelSpec, VaeArchitecture};
use dpsom::metrics::{morans_index_of_assignment, purity};
use dpsom::ndcore::{check_objective_terms, BatchView, Objective, TermMask};
use dpsom::psom::{psom_loss, soft_assignments, target_distribution};
use dpsom::somgrid::GridSpec;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn library_matches_explicit_loops(seed in any::<u64>()) {
        for (name, err) in oracle_discrepancies(seed) {
            prop_assert!(err < 1e-10, "{name}: {err:e}");
        }
    }

    #[test]
    fn psom_loss_is_the_weighted_sum_of_oracles(seed in any::<u64>(), beta in 0.0f64..5.0) {
        let mut r = rng(seed);
        let g = random_grid(&mut r, 5);
        let n = r.random_range(1..15);
        let s = stochastic_matrix(&mut r, n, g.k());
        let t = target_distribution(s.view());
        let want = cah_loss(&s, &t) + beta * ssom_loss(&s, &g);
        prop_assert!(close(psom_loss(s.view(), t.view(), &g, beta).unwrap(), want, 1e-10));
    }

    #[test]
    fn assignments_of_distant_points_stay_normalised(seed in any::<u64>()) {
        // kernels underflow far from every centroid; the library falls back to the log domain
        let mut r = rng(seed);
        let z = uniform_matrix(&mut r, 3, 2, 1e80, 1e81);
        let mu = uniform_matrix(&mut r, 4, 2, -1.0, 1.0);
        let s = soft_assignments(z.view(), mu.view(), 10.0).unwrap();
        for row in s.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn moran_of_assignment_averages_labels_per_cell() {
    let g = GridSpec::new(3, 3).unwrap();
    let assignment = [0, 0, 1, 4, 4, 4, 8];
    let labels = [1.0, 3.0, 5.0, 0.0, 2.0, 4.0, 9.0];
    let got = morans_index_of_assignment(&g, &assignment, &labels).unwrap();
    let want = morans_index(&g, &[0, 1, 4, 8], &[2.0, 5.0, 2.0, 9.0]);
    assert!(close(got, want, 1e-12), "{got} vs {want}");
}

#[test]
fn purity_of_known_partition() {
    // clusters {a,a,b}, {b,b}, {c}: 2 + 2 + 1 of 6
    let a = [0, 0, 0, 1, 1, 2];
    let l = [5, 5, 6, 6, 6, 7];
    assert!((purity(&a, &l).unwrap() - 5.0 / 6.0).abs() < 1e-15);
}

#[test]
fn every_term_passes_the_gradient_check_on_a_series_fixture() {
    let spec = ModelSpec {
        arch: VaeArchitecture {
            input_dim: 4,
            hidden: vec![6, 5],
            latent_dim: 3,
            likelihood: Likelihood::DiagonalGaussian,
            dropout: 0.0,
        },
        grid: GridSpec::new(3, 3).unwrap(),
        forecaster: true,
    };
    let obj = Objective {
        spec: spec.clone(),
        alpha: 10.0,
        gamma: 1.0,
        beta: 1.0,
        terms: TermMask::ALL,
        plain_ae: false,
        training: true,
    };
    let x = synth_icu(2, 8, 4, 0).unwrap().prefix(5);
    for point in 0..3 {
        let p = spec.init(100 + point);
        let reports = check_objective_terms(&obj, &p, BatchView::Series(x.x.view()), point, 1e-5, 1e-4).unwrap();
        let names: Vec<&str> = reports.iter().map(|(n, _)| *n).collect();
        assert_eq!(names, ["cah", "ssom", "elbo_recon", "elbo_kl", "smooth", "pred"]);
        for (name, r) in reports {
            assert!(r.passed(), "{name}: {:e}", r.max_rel_err());
        }
    }
}
