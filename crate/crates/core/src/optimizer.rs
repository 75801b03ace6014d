//! Constrained maximum likelihood by alternating projected gradient ascent.
//!
//! One iteration updates every person once against the previous items, then
//! every item once against the freshly updated persons. Each point takes a
//! single projected gradient step on its own log-likelihood slice, with the
//! step length chosen by Armijo backtracking.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MduError, Result};
use crate::likelihood::{neg_log_likelihood, slice_log_lik, slice_log_lik_and_gradient};
use crate::model::{Configuration, LinkFunction, ResponseMatrix, BOUND_TOL};
use crate::simulation::{sample_uniform_ball, stream_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Latent dimension of the fitted space.
    pub dim: usize,
    /// Radius of the ball every ideal point is constrained to.
    pub bound: f64,
    pub delta: f64,
    pub max_iters: usize,
    /// Stop once `|obj(m-1) - obj(m)| / (1 + |obj(m)|)` drops below this.
    pub tol: f64,
    pub n_starts: usize,
    pub seed: u64,
    pub armijo_c: f64,
    pub shrink: f64,
    pub max_halvings: usize,
    /// Largest step tried by the line search.
    pub initial_step: f64,
    /// Start each point's line search from its last accepted step, grown by
    /// `1 / shrink` (up to `initial_step`) whenever that step was accepted at
    /// the first trial. When false every search starts at `initial_step`.
    pub warm_start: bool,
    pub threads: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            dim: 2,
            bound: 1.5,
            delta: 0.1,
            max_iters: 1000,
            tol: 1e-6,
            n_starts: 10,
            seed: 0,
            armijo_c: 1e-4,
            shrink: 0.5,
            max_halvings: 50,
            initial_step: 1.0,
            warm_start: true,
            threads: None,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MduError::InvalidOptions(msg));
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if !(self.bound.is_finite() && self.bound > 0.0) {
            return bad(format!("bound must be positive, got {}", self.bound));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.n_starts == 0 {
            return bad("n_starts must be at least 1".into());
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad(format!("armijo_c must lie in (0, 1), got {}", self.armijo_c));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad(format!("shrink must lie in (0, 1), got {}", self.shrink));
        }
        if !(self.initial_step.is_finite() && self.initial_step > 0.0) {
            return bad(format!("initial_step must be positive, got {}", self.initial_step));
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    pub fn link(&self) -> Result<LinkFunction> {
        LinkFunction::new(self.delta)
    }

    pub fn line_search(&self) -> LineSearch {
        LineSearch {
            initial_step: self.initial_step,
            shrink: self.shrink,
            armijo_c: self.armijo_c,
            max_halvings: self.max_halvings,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub config: Configuration,
    pub final_objective: f64,
    /// Negative log-likelihood at the start and after every iteration of the
    /// winning start.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub start_index: usize,
    pub per_start_objectives: Vec<f64>,
    pub per_start_iterations: Vec<usize>,
    pub per_start_converged: Vec<bool>,
}

/// Euclidean projection onto the closed ball of radius `bound`.
pub fn project_ball(x: &[f64], bound: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    project_ball_in_place(&mut y, bound);
    y
}

#[inline]
fn project_ball_in_place(x: &mut [f64], bound: f64) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > bound {
        let s = bound / norm;
        x.iter_mut().for_each(|v| *v *= s);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    pub initial_step: f64,
    pub shrink: f64,
    pub armijo_c: f64,
    pub max_halvings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome {
    pub point: Vec<f64>,
    /// Accepted step, or 0 when no trial satisfied the sufficient-increase
    /// condition (the point is then unchanged).
    pub step: f64,
    pub value: f64,
}

/// Backtracking search along a projected ascent direction: tries
/// `first_step * shrink^m` for `m = 0..=max_halvings` and accepts the first
/// trial with `g(new) >= g(current) + c <gradient, new - current>`.
pub fn block_line_search(
    current: &[f64],
    current_value: f64,
    gradient: &[f64],
    objective: impl Fn(&[f64]) -> f64,
    bound: f64,
    first_step: f64,
    params: &LineSearch,
) -> LineSearchOutcome {
    let unchanged = || LineSearchOutcome {
        point: current.to_vec(),
        step: 0.0,
        value: current_value,
    };
    if gradient.iter().all(|&g| g == 0.0) {
        return unchanged();
    }
    let mut step = first_step;
    let mut trial = vec![0.0; current.len()];
    for _ in 0..=params.max_halvings {
        for ((t, c), g) in trial.iter_mut().zip(current).zip(gradient) {
            *t = c + step * g;
        }
        project_ball_in_place(&mut trial, bound);
        let value = objective(&trial);
        let ascent: f64 = trial.iter().zip(current).zip(gradient).map(|((t, c), g)| g * (t - c)).sum();
        if value >= current_value + params.armijo_c * ascent {
            return LineSearchOutcome {
                point: trial,
                step,
                value,
            };
        }
        step *= params.shrink;
    }
    unchanged()
}

/// One projected gradient step for every row of `points` against the fixed
/// `others`; `data` has one row per point. Returns the summed log-likelihood
/// of the updated slices.
fn update_block(
    points: &mut Array2<f64>,
    others: &Array2<f64>,
    data: &ResponseMatrix,
    link: &LinkFunction,
    options: &FitOptions,
    steps: &mut [f64],
) -> f64 {
    let dim = points.ncols();
    let bound = options.bound;
    let params = options.line_search();
    let others = others.as_slice().expect("standard layout");
    let values: Vec<f64> = points
        .as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(dim)
        .zip(steps.par_iter_mut())
        .enumerate()
        .map(|(r, (point, last_step))| {
            let cells = data.row(r);
            let mut grad = vec![0.0; dim];
            let current = slice_log_lik_and_gradient(point, others, cells.iter(), link, &mut grad);
            let first = if options.warm_start { *last_step } else { options.initial_step };
            let outcome = block_line_search(
                point,
                current,
                &grad,
                |p| slice_log_lik(p, others, cells.iter(), link),
                bound,
                first,
                &params,
            );
            if outcome.step > 0.0 {
                // Accepted at the first trial: allow a longer step next time.
                *last_step = if outcome.step == first {
                    (first / options.shrink).min(options.initial_step)
                } else {
                    outcome.step
                };
            }
            point.copy_from_slice(&outcome.point);
            outcome.value
        })
        .collect();
    values.iter().sum()
}

fn within_ball(points: &Array2<f64>, bound: f64) -> bool {
    points.rows().into_iter().all(|r| r.dot(&r).sqrt() <= bound + BOUND_TOL)
}

fn with_threads<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| MduError::InvalidOptions(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(job))
        }
        None => Ok(job()),
    }
}

/// Runs the alternating algorithm from `initial`.
pub fn fit_alternating(data: &ResponseMatrix, initial: &Configuration, options: &FitOptions) -> Result<FitResult> {
    options.validate()?;
    initial.check_matches(data)?;
    if initial.dim() != options.dim {
        return Err(MduError::Shape(format!(
            "initial configuration has dimension {}, options ask for {}",
            initial.dim(),
            options.dim
        )));
    }
    let (mut persons, mut items, init_bound) = initial.clone().into_parts();
    if !(within_ball(&persons, options.bound) && within_ball(&items, options.bound)) {
        return Err(MduError::Constraint(format!(
            "initial configuration (bound {init_bound}) leaves the ball of radius {}",
            options.bound
        )));
    }
    let link = options.link()?;
    with_threads(options.threads, || {
        let data_t = data.transposed();
        let mut person_steps = vec![options.initial_step; persons.nrows()];
        let mut item_steps = vec![options.initial_step; items.nrows()];
        let start = Configuration::from_parts_unchecked(persons.clone(), items.clone(), options.bound);
        let mut prev = neg_log_likelihood(&start, data, &link)?;
        let mut trace = vec![prev];
        let mut converged = false;
        let mut iterations = 0;
        for _ in 0..options.max_iters {
            update_block(&mut persons, &items, data, &link, options, &mut person_steps);
            let obj = -update_block(&mut items, &persons, &data_t, &link, options, &mut item_steps);
            iterations += 1;
            debug_assert!(within_ball(&persons, options.bound) && within_ball(&items, options.bound));
            if !obj.is_finite() {
                return Err(MduError::Numerical(format!("objective became {obj} at iteration {iterations}")));
            }
            trace.push(obj);
            if (prev - obj).abs() / (1.0 + obj.abs()) < options.tol {
                converged = true;
                break;
            }
            prev = obj;
        }
        let final_objective = *trace.last().unwrap();
        Ok(FitResult {
            config: Configuration::from_parts_unchecked(persons, items, options.bound),
            final_objective,
            trace,
            iterations,
            converged,
            start_index: 0,
            per_start_objectives: vec![final_objective],
            per_start_iterations: vec![iterations],
            per_start_converged: vec![converged],
        })
    })?
}

/// `n` persons and `j` items drawn independently and uniformly from the
/// ball of radius `bound` in `dim` dimensions.
pub fn random_configuration(n: usize, j: usize, dim: usize, bound: f64, rng: &mut impl Rng) -> Configuration {
    let mut persons = Array2::zeros((n, dim));
    let mut items = Array2::zeros((j, dim));
    for mut row in persons.rows_mut().into_iter().chain(items.rows_mut()) {
        row.assign(&ndarray::Array1::from(sample_uniform_ball(dim, bound, rng)));
    }
    Configuration::from_parts_unchecked(persons, items, bound)
}

/// Random starting configuration of start `index` for `options.seed`.
pub fn start_configuration(data: &ResponseMatrix, options: &FitOptions, index: usize) -> Configuration {
    let mut rng = stream_rng(options.seed, index as u64);
    random_configuration(data.n_persons(), data.n_items(), options.dim, options.bound, &mut rng)
}

/// Fits from `n_starts` random configurations and keeps the fit with the
/// smallest negative log-likelihood.
pub fn fit_multistart(data: &ResponseMatrix, options: &FitOptions) -> Result<FitResult> {
    options.validate()?;
    let single = FitOptions {
        threads: None,
        ..options.clone()
    };
    let fits = with_threads(options.threads, || {
        (0..options.n_starts)
            .into_par_iter()
            .map(|s| fit_alternating(data, &start_configuration(data, options, s), &single))
            .collect::<Result<Vec<_>>>()
    })??;
    let per_start_objectives: Vec<f64> = fits.iter().map(|f| f.final_objective).collect();
    let per_start_iterations = fits.iter().map(|f| f.iterations).collect();
    let per_start_converged = fits.iter().map(|f| f.converged).collect();
    let best = per_start_objectives
        .iter()
        .enumerate()
        .fold(0, |b, (s, &v)| if v < per_start_objectives[b] { s } else { b });
    let mut result = fits.into_iter().nth(best).unwrap();
    result.start_index = best;
    result.per_start_objectives = per_start_objectives;
    result.per_start_iterations = per_start_iterations;
    result.per_start_converged = per_start_converged;
    Ok(result)
}

/// True when the fitted configuration is at least as likely as `truth`
/// under `data`. A lower-dimensional truth is zero-padded first.
pub fn check_likelihood_dominance(
    fit: &FitResult,
    truth: &Configuration,
    data: &ResponseMatrix,
    link: &LinkFunction,
) -> Result<bool> {
    let truth = if truth.dim() < fit.config.dim() {
        crate::alignment::embed_zero_pad(truth, fit.config.dim())?
    } else {
        truth.clone()
    };
    if truth.dim() != fit.config.dim() {
        return Err(MduError::Shape(format!(
            "truth has dimension {}, fit has {}",
            truth.dim(),
            fit.config.dim()
        )));
    }
    let fitted = neg_log_likelihood(&fit.config, data, link)?;
    let reference = neg_log_likelihood(&truth, data, link)?;
    Ok(fitted <= reference)
}
