use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mdu_core::alignment::{align_isometry, average_config_loss, distance_matrix_loss, Isometry};
use mdu_core::analysis::{cluster_agreement, kendall_tau};
use mdu_core::io::{parse_configuration, write_configuration};
use mdu_core::likelihood::neg_log_likelihood;
use mdu_core::model::{Configuration, LinkFunction, ResponseMatrix};
use mdu_core::optimizer::{project_ball, random_configuration};
use mdu_core::simulation::generate_responses;

fn config_strategy(max_rows: usize) -> impl Strategy<Value = Configuration> {
    (1usize..=3, 1..=max_rows, 1..=max_rows, any::<u64>())
        .prop_map(|(k, n, j, seed)| random_configuration(n, j, k, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// The Q factor of a diagonally shifted (hence invertible) matrix.
fn orthogonal(k: usize, raw: &[f64]) -> DMatrix<f64> {
    let m = DMatrix::from_fn(k, k, |r, c| raw[(r * k + c) % raw.len()] + if r == c { 2.0 } else { 0.0 });
    let qr = m.qr();
    qr.q()
}

fn isometry_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, bool)> {
    (
        prop::collection::vec(-1.0f64..1.0, 9),
        prop::collection::vec(-3.0f64..3.0, 3),
        any::<bool>(),
    )
}

fn build_isometry(k: usize, raw: &[f64], shift: &[f64], reflect: bool) -> Isometry {
    let mut rotation = orthogonal(k, raw);
    if reflect {
        rotation.column_mut(0).neg_mut();
    }
    Isometry {
        rotation,
        translation: DVector::from_fn(k, |r, _| shift[r]),
    }
}

proptest! {
    // Beyond x of about 745 the value underflows to zero in double precision.
    #[test]
    fn link_stays_in_unit_interval(x in 0.0f64..700.0, delta in 1e-6f64..50.0) {
        let f = LinkFunction::new(delta).unwrap().eval(x).unwrap();
        prop_assert!(f > 0.0 && f < 1.0, "f({x}) = {f} at delta {delta}");
    }

    #[test]
    fn distances_invariant_under_isometry(c in config_strategy(8), (raw, shift, reflect) in isometry_strategy()) {
        let moved = build_isometry(c.dim(), &raw, &shift, reflect).apply(&c).unwrap();
        let diff = (moved.partial_distances().0 - c.partial_distances().0).mapv(f64::abs);
        prop_assert!(diff.iter().all(|&d| d < 1e-10));
    }

    #[test]
    fn equal_distances_align_exactly(c in config_strategy(8), (raw, shift, reflect) in isometry_strategy()) {
        // Same full pairwise distances means the sets differ by an isometry.
        let moved = build_isometry(c.dim(), &raw, &shift, reflect).apply(&c).unwrap();
        prop_assert!(align_isometry(&c, &moved).unwrap().loss < 1e-8);
    }

    #[test]
    fn alignment_loss_ignores_isometry_of_estimate(
        truth in config_strategy(8),
        seed in any::<u64>(),
        (raw, shift, reflect) in isometry_strategy(),
    ) {
        let estimate = random_configuration(truth.n_persons(), truth.n_items(), truth.dim(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let moved = build_isometry(truth.dim(), &raw, &shift, reflect).apply(&estimate).unwrap();
        let a = align_isometry(&truth, &estimate).unwrap().loss;
        let b = align_isometry(&truth, &moved).unwrap().loss;
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a), "{a} vs {b}");
        prop_assert!(a >= 0.0);
        prop_assert!(average_config_loss(&truth, &truth).unwrap() < 1e-20);
    }

    #[test]
    fn distance_loss_is_bounded(a in config_strategy(8), seed in any::<u64>(), radius in 0.1f64..3.0) {
        let scale = |c: &Configuration| Configuration::new(c.persons().mapv(|v| v * radius), c.items().mapv(|v| v * radius), radius).unwrap();
        let b = random_configuration(a.n_persons(), a.n_items(), a.dim(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let loss = distance_matrix_loss(&scale(&a).partial_distances(), &scale(&b).partial_distances()).unwrap();
        prop_assert!(loss >= 0.0 && loss <= (4.0 * radius * radius).powi(2));
    }

    #[test]
    fn projection_lands_in_ball(x in prop::collection::vec(-10.0f64..10.0, 1..5), bound in 0.1f64..5.0) {
        let p = project_ball(&x, bound);
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm <= bound * (1.0 + 1e-12));
        let again = project_ball(&p, bound);
        prop_assert!(again.iter().zip(&p).all(|(a, b)| (a - b).abs() <= 1e-15 * bound));
        if x.iter().map(|v| v * v).sum::<f64>().sqrt() <= bound {
            prop_assert_eq!(p, x);
        }
    }

    #[test]
    fn objective_is_nonnegative(c in config_strategy(6), seed in any::<u64>(), delta in 0.01f64..3.0) {
        let link = LinkFunction::new(delta).unwrap();
        let data = generate_responses(&c, &link, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(neg_log_likelihood(&c, &data, &link).unwrap() >= 0.0);
    }

    #[test]
    fn tau_is_symmetric(v in prop::collection::vec((0u8..5, 0u8..5), 2..30)) {
        let x: Vec<f64> = v.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = v.iter().map(|p| p.1 as f64).collect();
        match (kendall_tau(&x, &y), kendall_tau(&y, &x)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (a, b) => prop_assert!(a.is_err() && b.is_err()),
        }
    }

    #[test]
    fn agreement_ignores_relabeling(
        labels in prop::collection::vec((0usize..4, 0usize..4), 1..40),
        perm_seed in 0usize..24,
    ) {
        let mut perm = [0, 1, 2, 3];
        let mut s = perm_seed;
        for i in (1..4).rev() {
            perm.swap(i, s % (i + 1));
            s /= i + 1;
        }
        let t: Vec<usize> = labels.iter().map(|p| p.0).collect();
        let e: Vec<usize> = labels.iter().map(|p| p.1).collect();
        let relabeled: Vec<usize> = e.iter().map(|&l| perm[l]).collect();
        let base = cluster_agreement(&t, &e, 4).unwrap();
        prop_assert_eq!(base, cluster_agreement(&t, &relabeled, 4).unwrap());
        prop_assert_eq!(base, cluster_agreement(&e, &t, 4).unwrap());
    }

    #[test]
    fn configuration_csv_round_trips(c in config_strategy(6)) {
        let mut buf = Vec::new();
        write_configuration(&c, &mut buf).unwrap();
        let back = parse_configuration(std::str::from_utf8(&buf).unwrap(), Some(c.bound())).unwrap();
        prop_assert_eq!(back.persons(), c.persons());
        prop_assert_eq!(back.items(), c.items());
    }

    #[test]
    fn response_csv_round_trips(cells in prop::collection::vec(prop::option::of(any::<bool>()), 1..60), width in 1usize..6) {
        let rows = cells.len() / width;
        prop_assume!(rows > 0);
        let grid = Array2::from_shape_vec((rows, width), cells[..rows * width].to_vec()).unwrap();
        let data = ResponseMatrix::from_cells(grid).unwrap();
        let mut buf = Vec::new();
        mdu_core::io::write_response_csv(&data, &mut buf).unwrap();
        prop_assert_eq!(mdu_core::io::parse_response_csv(std::str::from_utf8(&buf).unwrap()).unwrap(), data);
    }
}
