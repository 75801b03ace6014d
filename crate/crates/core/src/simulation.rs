//! Random-design data generation and the replicated recovery experiments.

use std::io::Write;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{average_config_loss, distance_matrix_loss};
use crate::error::{MduError, Result};
use crate::likelihood::neg_log_likelihood;
use crate::model::{Configuration, LinkFunction, ResponseMatrix};
use crate::optimizer::{check_likelihood_dominance, fit_multistart, random_configuration, FitOptions};

/// Generator for stream `stream` of `seed`. Distinct streams are
/// statistically independent.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes `parts` into `seed` (splitmix64 finaliser after each part).
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

/// A point drawn uniformly from the closed ball of the given radius.
pub fn sample_uniform_ball(dim: usize, radius: f64, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            continue;
        }
        let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
        return dir.into_iter().map(|v| v * r / norm).collect();
    }
}

/// Independent Bernoulli responses with success probability `f(d_ij)`,
/// drawn in row-major order. Every cell is observed.
pub fn generate_responses(config: &Configuration, link: &LinkFunction, rng: &mut impl Rng) -> ResponseMatrix {
    let d = config.partial_distances();
    let cells = d.0.mapv(|x| Some(rng.random::<f64>() < link.eval_unchecked(x)));
    ResponseMatrix::from_cells(cells).expect("configuration has at least one person and one item")
}

/// I.i.d. Bernoulli(`expected_observed / (n * j)`) observation mask.
pub fn generate_missing_mask(n: usize, j: usize, expected_observed: f64, rng: &mut impl Rng) -> Result<Array2<bool>> {
    let total = (n * j) as f64;
    if !(expected_observed > 0.0 && expected_observed <= total) {
        return Err(MduError::InvalidOptions(format!(
            "expected observed count must lie in (0, {total}], got {expected_observed}"
        )));
    }
    let p = expected_observed / total;
    Ok(Array2::from_shape_simple_fn((n, j), || rng.random::<f64>() < p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySpec {
    pub j_values: Vec<usize>,
    /// Persons per item.
    pub n_mult: usize,
    pub true_dim: usize,
    pub fit_dim: usize,
    /// Radius of the ball the true ideal points are drawn from.
    pub radius_true: f64,
    /// Constraint radius used when fitting.
    pub bound_fit: f64,
    pub delta: f64,
    pub replications: usize,
    pub n_starts: usize,
    /// Probability that a cell is observed; `None` means complete data.
    pub observed_fraction: Option<f64>,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub threads: Option<usize>,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            j_values: vec![200, 400, 600, 800, 1000],
            n_mult: 20,
            true_dim: 2,
            fit_dim: 2,
            radius_true: 1.0,
            bound_fit: 1.5,
            delta: 0.1,
            replications: 20,
            n_starts: 5,
            observed_fraction: None,
            seed: 0,
            max_iters: 1000,
            tol: 1e-6,
            threads: None,
        }
    }
}

impl StudySpec {
    /// The full published protocol: 100 datasets per cell, 10 starts each.
    pub fn full_protocol(fit_dim: usize) -> Self {
        Self {
            fit_dim,
            replications: 100,
            n_starts: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MduError::InvalidOptions(m));
        if self.j_values.is_empty() || self.j_values.contains(&0) {
            return bad("j_values must be non-empty and positive".into());
        }
        if self.n_mult == 0 || self.true_dim == 0 {
            return bad("n_mult and true_dim must be positive".into());
        }
        if self.fit_dim < self.true_dim {
            return bad(format!("fit_dim {} is below true_dim {}", self.fit_dim, self.true_dim));
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if !(self.radius_true > 0.0 && self.radius_true.is_finite()) {
            return bad(format!("radius_true must be positive, got {}", self.radius_true));
        }
        if let Some(q) = self.observed_fraction {
            if !(q > 0.0 && q <= 1.0) {
                return bad(format!("observed_fraction must lie in (0, 1], got {q}"));
            }
        }
        self.fit_options(0).validate()
    }

    pub fn fit_options(&self, seed: u64) -> FitOptions {
        FitOptions {
            dim: self.fit_dim,
            bound: self.bound_fit,
            delta: self.delta,
            max_iters: self.max_iters,
            tol: self.tol,
            n_starts: self.n_starts,
            seed,
            ..FitOptions::default()
        }
    }
}

/// Truth, data and fit seed of one replication. The truth and responses do
/// not depend on `observed_fraction`, so cells that differ only in the
/// missingness rate share their complete data.
pub struct SimulatedDataset {
    pub truth: Configuration,
    pub data: ResponseMatrix,
    pub fit_seed: u64,
}

pub fn simulate_dataset(spec: &StudySpec, j: usize, replication: usize) -> Result<SimulatedDataset> {
    let link = LinkFunction::new(spec.delta)?;
    let n = spec.n_mult * j;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[j as u64, replication as u64]));
    let truth = random_configuration(n, j, spec.true_dim, spec.radius_true, &mut rng);
    let mut data = generate_responses(&truth, &link, &mut rng);
    if let Some(q) = spec.observed_fraction {
        if q < 1.0 {
            let mask = generate_missing_mask(n, j, q * (n * j) as f64, &mut rng)?;
            data = data.with_mask(mask.view())?;
        }
    }
    let fit_seed = derive_seed(spec.seed, &[j as u64, replication as u64, 1]);
    Ok(SimulatedDataset { truth, data, fit_seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub replication: usize,
    pub distance_loss: f64,
    pub config_loss: f64,
    pub fitted_objective: f64,
    pub truth_objective: f64,
    pub likelihood_dominates: bool,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    pub seconds: f64,
}

pub fn run_replication(spec: &StudySpec, j: usize, replication: usize) -> Result<ReplicationOutcome> {
    let link = LinkFunction::new(spec.delta)?;
    let SimulatedDataset { truth, data, fit_seed } = simulate_dataset(spec, j, replication)?;
    let started = Instant::now();
    let fit = fit_multistart(&data, &spec.fit_options(fit_seed))?;
    let seconds = started.elapsed().as_secs_f64();
    Ok(ReplicationOutcome {
        replication,
        distance_loss: distance_matrix_loss(&fit.config.partial_distances(), &truth.partial_distances())?,
        config_loss: average_config_loss(&truth, &fit.config)?,
        fitted_objective: fit.final_objective,
        truth_objective: neg_log_likelihood(&truth, &data, &link)?,
        likelihood_dominates: check_likelihood_dominance(&fit, &truth, &data, &link)?,
        iterations: fit.per_start_iterations,
        converged: fit.per_start_converged,
        seconds,
    })
}

/// 25%, 50% and 75% sample quantiles (linear interpolation between order
/// statistics).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            q25: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q75: quantile_sorted(&v, 0.75),
        }
    }
}

pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub j: usize,
    pub n: usize,
    pub true_dim: usize,
    pub fit_dim: usize,
    pub observed_fraction: f64,
    pub distance_loss: Quantiles,
    pub config_loss: Quantiles,
    pub seconds: Quantiles,
    pub dominance_rate: f64,
    pub replications: Vec<ReplicationOutcome>,
}

impl CellReport {
    pub fn from_outcomes(spec: &StudySpec, j: usize, mut outcomes: Vec<ReplicationOutcome>) -> Self {
        outcomes.sort_by_key(|o| o.replication);
        let collect = |f: fn(&ReplicationOutcome) -> f64| outcomes.iter().map(f).collect::<Vec<_>>();
        let dominance =
            outcomes.iter().filter(|o| o.likelihood_dominates).count() as f64 / outcomes.len().max(1) as f64;
        Self {
            j,
            n: spec.n_mult * j,
            true_dim: spec.true_dim,
            fit_dim: spec.fit_dim,
            observed_fraction: spec.observed_fraction.unwrap_or(1.0),
            distance_loss: Quantiles::of(&collect(|o| o.distance_loss)),
            config_loss: Quantiles::of(&collect(|o| o.config_loss)),
            seconds: Quantiles::of(&collect(|o| o.seconds)),
            dominance_rate: dominance,
            replications: outcomes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub spec: StudySpec,
    pub cells: Vec<CellReport>,
}

pub fn run_cell(spec: &StudySpec, j: usize) -> Result<CellReport> {
    let outcomes = (0..spec.replications)
        .into_par_iter()
        .map(|r| run_replication(spec, j, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(CellReport::from_outcomes(spec, j, outcomes))
}

pub fn run_study(spec: &StudySpec) -> Result<StudyReport> {
    spec.validate()?;
    let run = || -> Result<Vec<CellReport>> { spec.j_values.iter().map(|&j| run_cell(spec, j)).collect() };
    let cells = match spec.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| MduError::InvalidOptions(format!("cannot build thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    Ok(StudyReport {
        spec: spec.clone(),
        cells,
    })
}

impl StudyReport {
    pub const CSV_HEADER: &'static str = "j,n,true_dim,fit_dim,observed_fraction,replications,\
distance_q25,distance_median,distance_q75,config_q25,config_median,config_q75,\
seconds_q25,seconds_median,seconds_q75,dominance_rate";

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3},{:.3},{:.3},{:.4}",
                c.j,
                c.n,
                c.true_dim,
                c.fit_dim,
                c.observed_fraction,
                c.replications.len(),
                c.distance_loss.q25,
                c.distance_loss.median,
                c.distance_loss.q75,
                c.config_loss.q25,
                c.config_loss.median,
                c.config_loss.q75,
                c.seconds.q25,
                c.seconds.median,
                c.seconds.q75,
                c.dominance_rate
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "K = {}, K+ = {}, M = {}, delta = {}, {} replications x {} starts\n",
            self.spec.true_dim,
            self.spec.fit_dim,
            self.spec.bound_fit,
            self.spec.delta,
            self.spec.replications,
            self.spec.n_starts
        );
        s.push_str("     J      N  obs   distance loss (25/50/75%)       config loss (25/50/75%)     dominance\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{:>6} {:>6} {:>4.2}   {:.4} {:.4} {:.4}   {:.4} {:.4} {:.4}   {:>5.1}%\n",
                c.j,
                c.n,
                c.observed_fraction,
                c.distance_loss.q25,
                c.distance_loss.median,
                c.distance_loss.q75,
                c.config_loss.q25,
                c.config_loss.median,
                c.config_loss.q75,
                100.0 * c.dominance_rate
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = stream_rng(1, 0);
        for dim in 1..5 {
            for _ in 0..1000 {
                let x = sample_uniform_ball(dim, 1.5, &mut rng);
                assert!(x.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1.5);
            }
        }
    }

    #[test]
    fn planar_radius_follows_area_law() {
        let mut rng = stream_rng(2, 0);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| {
                let x = sample_uniform_ball(2, 2.0, &mut rng);
                (x[0] * x[0] + x[1] * x[1]).sqrt()
            })
            .collect();
        for r in [0.5, 1.0, 1.5] {
            let emp = draws.iter().filter(|&&d| d <= r).count() as f64 / draws.len() as f64;
            assert!((emp - (r / 2.0f64).powi(2)).abs() < 0.01);
        }
    }

    #[test]
    fn ball_mean_is_zero() {
        let mut rng = stream_rng(3, 0);
        let n = 100_000;
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..n {
            for (k, v) in sample_uniform_ball(3, 1.0, &mut rng).into_iter().enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
        }
        for k in 0..3 {
            let mean = sum[k] / n as f64;
            let se = (sq[k] / n as f64 - mean * mean).sqrt() / (n as f64).sqrt();
            assert!(mean.abs() < 3.0 * se, "axis {k}: mean {mean}, se {se}");
        }
    }

    #[test]
    fn collocated_responses_match_link() {
        let c = Configuration::new(Array2::zeros((1000, 2)), Array2::zeros((100, 2)), 1.0).unwrap();
        let link = LinkFunction::new(0.1).unwrap();
        let data = generate_responses(&c, &link, &mut stream_rng(4, 0));
        let mean = data.values().mapv(f64::from).mean().unwrap();
        assert!((mean - 0.950042).abs() < 0.007, "{mean}");
    }

    #[test]
    fn distant_points_answer_no() {
        let c = Configuration::new(array![[-50.0, 0.0]], array![[50.0, 0.0], [0.0, 50.0]], 50.0).unwrap();
        let link = LinkFunction::new(0.1).unwrap();
        let data = generate_responses(&c, &link, &mut stream_rng(5, 0));
        assert_eq!(data.values(), array![[0u8, 0]]);
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let c = random_configuration(20, 10, 2, 1.0, &mut stream_rng(6, 0));
        let link = LinkFunction::new(0.1).unwrap();
        let a = generate_responses(&c, &link, &mut stream_rng(6, 1));
        let b = generate_responses(&c, &link, &mut stream_rng(6, 1));
        assert_eq!(a, b);
        let m1 = generate_missing_mask(20, 10, 50.0, &mut stream_rng(6, 2)).unwrap();
        let m2 = generate_missing_mask(20, 10, 50.0, &mut stream_rng(6, 2)).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn mask_rate() {
        let full = generate_missing_mask(30, 40, 1200.0, &mut stream_rng(7, 0)).unwrap();
        assert!(full.iter().all(|&m| m));
        let (n, j, expected) = (400, 250, 30_000.0);
        let mask = generate_missing_mask(n, j, expected, &mut stream_rng(7, 1)).unwrap();
        let p = expected / (n * j) as f64;
        let rate = mask.iter().filter(|&&m| m).count() as f64 / (n * j) as f64;
        let se = (p * (1.0 - p) / (n * j) as f64).sqrt();
        assert!((rate - p).abs() < 3.0 * se);
        assert!(generate_missing_mask(2, 2, 0.0, &mut stream_rng(7, 2)).is_err());
        assert!(generate_missing_mask(2, 2, 5.0, &mut stream_rng(7, 2)).is_err());
    }

    #[test]
    fn quantiles_match_type_seven() {
        let q = Quantiles::of(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!((q.q25, q.median, q.q75), (1.75, 2.5, 3.25));
        assert_eq!(Quantiles::of(&[7.0]).median, 7.0);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(0, &[200, 0]), derive_seed(0, &[200, 1]));
        assert_ne!(derive_seed(0, &[200, 1]), derive_seed(0, &[1, 200]));
        assert_eq!(derive_seed(9, &[3, 4]), derive_seed(9, &[3, 4]));
    }

    #[test]
    fn tiny_study_runs() {
        let spec = StudySpec {
            j_values: vec![10],
            n_mult: 3,
            replications: 3,
            n_starts: 2,
            max_iters: 200,
            ..StudySpec::default()
        };
        let report = run_study(&spec).unwrap();
        let cell = &report.cells[0];
        assert_eq!(cell.n, 30);
        assert!(cell.distance_loss.q25 <= cell.distance_loss.median && cell.distance_loss.median <= cell.distance_loss.q75);
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(report.summary().contains("    10"));
        assert_eq!(run_study(&spec).unwrap().cells[0].distance_loss, cell.distance_loss);
    }
}
