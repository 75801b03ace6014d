use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mdu_core::model::{Configuration, LinkFunction, ResponseMatrix};
use mdu_core::optimizer::{fit_alternating, fit_multistart, random_configuration, start_configuration, FitOptions};
use mdu_core::simulation::generate_responses;

fn problem(seed: u64, n: usize, j: usize, observed: f64) -> ResponseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = random_configuration(n, j, 2, 1.0, &mut rng);
    let data = generate_responses(&truth, &LinkFunction::new(0.1).unwrap(), &mut rng);
    let mask = Array2::from_shape_fn((n, j), |(i, k)| (i * 7 + k * 3 + seed as usize) % 100 < (observed * 100.0) as usize);
    data.with_mask(mask.view()).unwrap()
}

#[test]
fn objective_never_increases() {
    for seed in 0..5 {
        let data = problem(seed, 60, 20, if seed % 2 == 0 { 1.0 } else { 0.6 });
        for warm_start in [true, false] {
            let options = FitOptions {
                max_iters: 200,
                seed,
                warm_start,
                ..FitOptions::default()
            };
            let fit = fit_alternating(&data, &start_configuration(&data, &options, 0), &options).unwrap();
            assert_eq!(fit.trace.len(), fit.iterations + 1);
            for w in fit.trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "objective rose from {} to {}", w[0], w[1]);
            }
            for p in fit.config.persons().rows().into_iter().chain(fit.config.items().rows()) {
                assert!(p.dot(&p).sqrt() <= options.bound + 1e-9);
            }
        }
    }
}

#[test]
fn seeded_fits_are_reproducible() {
    let data = problem(11, 80, 25, 0.8);
    let run = |threads| {
        fit_multistart(
            &data,
            &FitOptions {
                n_starts: 3,
                max_iters: 100,
                seed: 5,
                threads: Some(threads),
                ..FitOptions::default()
            },
        )
        .unwrap()
    };
    let (a, b) = (run(1), run(1));
    assert_eq!(a.trace.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.trace.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.config, b.config);
    let c = run(3);
    assert!((a.final_objective - c.final_objective).abs() <= 1e-8 * a.final_objective.abs());
}

#[test]
fn person_order_does_not_matter() {
    let data = problem(21, 50, 15, 0.9);
    let options = FitOptions {
        max_iters: 40,
        ..FitOptions::default()
    };
    let start = start_configuration(&data, &options, 0);
    let n = data.n_persons();
    let perm: Vec<usize> = (0..n).map(|i| (i * 17 + 3) % n).collect();

    let cells = data.cells();
    let permuted_data = ResponseMatrix::from_cells(Array2::from_shape_fn((n, data.n_items()), |(i, j)| cells[[perm[i], j]])).unwrap();
    let persons = start.persons();
    let permuted_start = Configuration::new(
        Array2::from_shape_fn((n, 2), |(i, k)| persons[[perm[i], k]]),
        start.items().to_owned(),
        start.bound(),
    )
    .unwrap();

    let a = fit_alternating(&data, &start, &options).unwrap();
    let b = fit_alternating(&permuted_data, &permuted_start, &options).unwrap();
    assert!((a.final_objective - b.final_objective).abs() <= 1e-9 * a.final_objective);
    for (i, &p) in perm.iter().enumerate() {
        for k in 0..2 {
            assert!((b.config.persons()[[i, k]] - a.config.persons()[[p, k]]).abs() < 1e-6);
        }
    }
}

#[test]
fn best_start_is_reported() {
    let data = problem(3, 40, 12, 1.0);
    let fit = fit_multistart(
        &data,
        &FitOptions {
            n_starts: 4,
            max_iters: 50,
            ..FitOptions::default()
        },
    )
    .unwrap();
    assert_eq!(fit.per_start_objectives.len(), 4);
    let best = fit.per_start_objectives.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(fit.final_objective, best);
    assert_eq!(fit.per_start_objectives[fit.start_index], best);
}
