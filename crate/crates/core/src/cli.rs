//! The `mdu` command line. Exit codes: 0 success, 1 usage, 2 bad data,
//! 3 numerical failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alignment::{align_isometry, average_config_loss, distance_matrix_loss, rotate_to_principal_axes, PointSet};
use crate::analysis::{bicluster, cluster_agreement, kendall_tau};
use crate::error::{MduError, Result};
use crate::io;
use crate::optimizer::{fit_multistart, FitOptions};
use crate::simulation::{run_study, simulate_dataset, StudySpec};

#[derive(Parser, Debug)]
#[command(name = "mdu", version, about = "Distance-based multidimensional unfolding of binary responses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit ideal points to a response matrix.
    Fit(FitArgs),
    /// Draw a true configuration and responses from the model.
    Simulate(SimulateArgs),
    /// Compare an estimate with a reference configuration.
    Align(AlignArgs),
    /// Cluster fitted persons and items.
    Cluster(ClusterArgs),
    /// Run a simulation study described by a JSON file.
    Study(StudyArgs),
    /// Rotate to principal axes and correlate each axis with a covariate.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Ball radius; 3.5 suits roll-call scale data.
    #[arg(long, default_value_t = 1.5)]
    bound: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 10)]
    starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long = "max-iter", default_value_t = 1000)]
    max_iter: usize,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    j: usize,
    #[arg(long = "n-mult", default_value_t = 20)]
    n_mult: usize,
    #[arg(long = "true-dim", default_value_t = 2)]
    true_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probability that a cell is missing.
    #[arg(long = "missing-frac")]
    missing_frac: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    estimate: PathBuf,
    /// Zero-pad the truth when the estimate has more dimensions.
    #[arg(long)]
    pad: bool,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    k1: usize,
    #[arg(long)]
    k2: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Labels file to compare against (`set,index,label`).
    #[arg(long = "truth-labels")]
    truth_labels: Option<PathBuf>,
    /// Where to write labels; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StudyArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-replication report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    covariate: PathBuf,
    #[arg(long, default_value = "items")]
    rotate: PointSet,
    /// Set the covariate describes; defaults to the rotated set.
    #[arg(long = "covariate-set")]
    covariate_set: Option<PointSet>,
    /// Where to write the rotated configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the command line and returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command, &mut std::io::stdout().lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mdu: {e}");
            e.exit_code()
        }
    }
}

fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Fit(a) => fit(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Align(a) => align(a, out),
        Command::Cluster(a) => cluster(a, out),
        Command::Study(a) => study(a, out),
        Command::Analyze(a) => analyze(a, out),
    }
}

fn fit(a: FitArgs, out: &mut dyn Write) -> Result<()> {
    let data = io::load_response_csv(&a.input)?;
    let options = FitOptions {
        dim: a.dim,
        bound: a.bound,
        delta: a.delta,
        max_iters: a.max_iter,
        tol: a.tol,
        n_starts: a.starts,
        seed: a.seed,
        threads: a.threads,
        ..FitOptions::default()
    };
    let started = Instant::now();
    let result = fit_multistart(&data, &options)?;
    let seconds = started.elapsed().as_secs_f64();
    io::save_configuration(&result.config, &a.out)?;
    if let Some(path) = &a.report {
        io::save_json(&io::RunReport::new(&options, &result, seconds), path)?;
    }
    writeln!(
        out,
        "objective={}\nstart={}\niterations={}\nconverged={}",
        result.final_objective, result.start_index, result.iterations, result.converged
    )?;
    Ok(())
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let observed_fraction = match a.missing_frac {
        None => None,
        Some(q) if (0.0..1.0).contains(&q) => Some(1.0 - q),
        Some(q) => {
            return Err(MduError::InvalidOptions(format!("missing fraction must lie in [0, 1), got {q}")));
        }
    };
    let spec = StudySpec {
        j_values: vec![a.j],
        n_mult: a.n_mult,
        true_dim: a.true_dim,
        fit_dim: a.true_dim,
        radius_true: a.radius,
        delta: a.delta,
        replications: 1,
        observed_fraction,
        seed: a.seed,
        ..StudySpec::default()
    };
    spec.validate()?;
    let sim = simulate_dataset(&spec, a.j, 0)?;
    io::save_response_csv(&sim.data, &a.out)?;
    io::save_configuration(&sim.truth, &a.truth)?;
    writeln!(
        out,
        "persons={}\nitems={}\nobserved={}",
        sim.data.n_persons(),
        sim.data.n_items(),
        sim.data.observed_count()
    )?;
    Ok(())
}

fn align(a: AlignArgs, out: &mut dyn Write) -> Result<()> {
    let truth = io::load_configuration(&a.truth, None)?;
    let estimate = io::load_configuration(&a.estimate, None)?;
    let config_loss = if a.pad {
        average_config_loss(&truth, &estimate)?
    } else {
        align_isometry(&truth, &estimate)?.loss
    };
    let distance_loss = distance_matrix_loss(&estimate.partial_distances(), &truth.partial_distances())?;
    writeln!(out, "config_loss={config_loss}\ndistance_loss={distance_loss}")?;
    Ok(())
}

fn cluster(a: ClusterArgs, out: &mut dyn Write) -> Result<()> {
    let config = io::load_configuration(&a.config, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let b = bicluster(&config, a.k1, a.k2, a.restarts, &mut rng)?;
    match &a.out {
        Some(path) => io::save_labels(&b.person_labels, &b.item_labels, path)?,
        None => io::write_labels(&b.person_labels, &b.item_labels, out)?,
    }
    if let Some(path) = &a.truth_labels {
        let (tp, ti) = io::load_labels(path)?;
        for (what, truth, est, k) in [("person", tp, &b.person_labels, a.k1), ("item", ti, &b.item_labels, a.k2)] {
            if !truth.is_empty() {
                writeln!(out, "{what}_agreement={}", cluster_agreement(&truth, est, k)?)?;
            }
        }
    }
    Ok(())
}

fn study(a: StudyArgs, out: &mut dyn Write) -> Result<()> {
    let mut spec: StudySpec = io::load_json(&a.spec)?;
    if a.threads.is_some() {
        spec.threads = a.threads;
    }
    let report = run_study(&spec)?;
    io::write_atomic(&a.out, |w| report.write_csv(w))?;
    if let Some(path) = &a.json {
        io::save_json(&report, path)?;
    }
    write!(out, "{}", report.summary())?;
    Ok(())
}

fn analyze(a: AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let config = io::load_configuration(&a.config, None)?;
    let covariate = io::load_covariate(&a.covariate)?;
    let (rotated, _) = rotate_to_principal_axes(&config, a.rotate)?;
    let points = match a.covariate_set.unwrap_or(a.rotate) {
        PointSet::Persons => rotated.persons(),
        PointSet::Items => rotated.items(),
    };
    if points.nrows() != covariate.len() {
        return Err(MduError::Shape(format!(
            "covariate has {} values for {} points",
            covariate.len(),
            points.nrows()
        )));
    }
    for (k, axis) in points.columns().into_iter().enumerate() {
        writeln!(out, "axis_{}_tau={}", k + 1, kendall_tau(&axis.to_vec(), &covariate)?)?;
    }
    if let Some(path) = &a.out {
        io::save_configuration(&rotated, path)?;
    }
    Ok(())
}
