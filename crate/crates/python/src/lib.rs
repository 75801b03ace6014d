//! Python bindings. Matrices cross the boundary as lists of rows; missing
//! responses are `None`.

use ndarray::Array2;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mdu_core::alignment::{self, PointSet};
use mdu_core::error::MduError;
use mdu_core::model::{self, LinkFunction};
use mdu_core::optimizer::{self, FitOptions};
use mdu_core::{analysis, io, likelihood, simulation};

fn to_py(e: MduError) -> PyErr {
    match e {
        MduError::Io(e) => PyOSError::new_err(e.to_string()),
        MduError::Undefined(_) | MduError::Numerical(_) => PyArithmeticError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>, width: Option<usize>) -> PyResult<Array2<f64>> {
    let k = width.or_else(|| rows.first().map(Vec::len)).unwrap_or(0);
    if rows.iter().any(|r| r.len() != k) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    let n = rows.len();
    Ok(Array2::from_shape_vec((n, k), rows.into_iter().flatten().collect()).expect("checked widths"))
}

fn rows(m: ndarray::ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[pyclass(name = "LinkFunction", module = "mdu", frozen)]
struct PyLink(LinkFunction);

#[pymethods]
impl PyLink {
    #[new]
    #[pyo3(signature = (delta = 0.1))]
    fn new(delta: f64) -> PyResult<Self> {
        LinkFunction::new(delta).map(Self).map_err(to_py)
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.0.delta()
    }

    fn eval(&self, x: f64) -> PyResult<f64> {
        self.0.eval(x).map_err(to_py)
    }

    fn deriv(&self, x: f64) -> PyResult<f64> {
        self.0.deriv(x).map_err(to_py)
    }
}

#[pyclass(name = "ResponseMatrix", module = "mdu", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyResponses(model::ResponseMatrix);

#[pymethods]
impl PyResponses {
    /// `rows` holds 0, 1 or None.
    #[new]
    fn new(rows: Vec<Vec<Option<u8>>>) -> PyResult<Self> {
        let j = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != j) {
            return Err(PyValueError::new_err("rows must all have the same length"));
        }
        let n = rows.len();
        let cells = rows
            .into_iter()
            .flatten()
            .map(|c| match c {
                None => Ok(None),
                Some(0) => Ok(Some(false)),
                Some(1) => Ok(Some(true)),
                Some(v) => Err(PyValueError::new_err(format!("responses must be 0, 1 or None, got {v}"))),
            })
            .collect::<PyResult<Vec<_>>>()?;
        let grid = Array2::from_shape_vec((n, j), cells).expect("checked widths");
        model::ResponseMatrix::from_cells(grid).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        io::load_response_csv(&path).map(Self).map_err(to_py)
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        io::save_response_csv(&self.0, &path).map_err(to_py)
    }

    #[getter]
    fn n_persons(&self) -> usize {
        self.0.n_persons()
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.0.n_items()
    }

    #[getter]
    fn observed_count(&self) -> usize {
        self.0.observed_count()
    }

    fn to_list(&self) -> Vec<Vec<Option<u8>>> {
        self.0
            .cells()
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|c| c.map(u8::from)).collect())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "ResponseMatrix({} x {}, {} observed)",
            self.0.n_persons(),
            self.0.n_items(),
            self.0.observed_count()
        )
    }
}

#[pyclass(name = "Configuration", module = "mdu", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyConfiguration(model::Configuration);

#[pymethods]
impl PyConfiguration {
    /// Without `bound` the largest point norm is used.
    #[new]
    #[pyo3(signature = (persons, items, bound = None))]
    fn new(persons: Vec<Vec<f64>>, items: Vec<Vec<f64>>, bound: Option<f64>) -> PyResult<Self> {
        let p = matrix(persons, None)?;
        let i = matrix(items, Some(p.ncols()))?;
        match bound {
            Some(b) => model::Configuration::new(p, i, b),
            None => model::Configuration::unbounded(p, i),
        }
        .map(Self)
        .map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (path, bound = None))]
    fn load(path: std::path::PathBuf, bound: Option<f64>) -> PyResult<Self> {
        io::load_configuration(&path, bound).map(Self).map_err(to_py)
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        io::save_configuration(&self.0, &path).map_err(to_py)
    }

    #[getter]
    fn persons(&self) -> Vec<Vec<f64>> {
        rows(self.0.persons())
    }

    #[getter]
    fn items(&self) -> Vec<Vec<f64>> {
        rows(self.0.items())
    }

    #[getter]
    fn bound(&self) -> f64 {
        self.0.bound()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    /// Squared person-item distances, N x J.
    fn partial_distances(&self) -> Vec<Vec<f64>> {
        rows(self.0.partial_distances().entries())
    }

    fn __repr__(&self) -> String {
        format!(
            "Configuration({} persons, {} items, dim {}, bound {})",
            self.0.n_persons(),
            self.0.n_items(),
            self.0.dim(),
            self.0.bound()
        )
    }
}

#[pyclass(name = "FitResult", module = "mdu", frozen, get_all)]
struct PyFitResult {
    config: Py<PyConfiguration>,
    objective: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    start_index: usize,
    per_start_objectives: Vec<f64>,
}

#[pyfunction]
#[pyo3(signature = (data, dim = 2, bound = 1.5, delta = 0.1, n_starts = 10, seed = 0, max_iters = 1000, tol = 1e-6, threads = None))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    data: &PyResponses,
    dim: usize,
    bound: f64,
    delta: f64,
    n_starts: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
    threads: Option<usize>,
) -> PyResult<PyFitResult> {
    let options = FitOptions {
        dim,
        bound,
        delta,
        n_starts,
        seed,
        max_iters,
        tol,
        threads,
        ..FitOptions::default()
    };
    let data = data.0.clone();
    let r = py.detach(move || optimizer::fit_multistart(&data, &options)).map_err(to_py)?;
    Ok(PyFitResult {
        config: Py::new(py, PyConfiguration(r.config))?,
        objective: r.final_objective,
        trace: r.trace,
        iterations: r.iterations,
        converged: r.converged,
        start_index: r.start_index,
        per_start_objectives: r.per_start_objectives,
    })
}

#[pyfunction]
#[pyo3(signature = (config, data, delta = 0.1))]
fn neg_log_likelihood(config: &PyConfiguration, data: &PyResponses, delta: f64) -> PyResult<f64> {
    let link = LinkFunction::new(delta).map_err(to_py)?;
    likelihood::neg_log_likelihood(&config.0, &data.0, &link).map_err(to_py)
}

/// Returns `(data, truth)`.
#[pyfunction]
#[pyo3(signature = (j, n_mult = 20, true_dim = 2, radius = 1.0, delta = 0.1, seed = 0, missing_frac = None))]
fn simulate(
    j: usize,
    n_mult: usize,
    true_dim: usize,
    radius: f64,
    delta: f64,
    seed: u64,
    missing_frac: Option<f64>,
) -> PyResult<(PyResponses, PyConfiguration)> {
    let spec = simulation::StudySpec {
        j_values: vec![j],
        n_mult,
        true_dim,
        fit_dim: true_dim,
        radius_true: radius,
        delta,
        seed,
        observed_fraction: missing_frac.map(|q| 1.0 - q),
        ..simulation::StudySpec::default()
    };
    spec.validate().map_err(to_py)?;
    let sim = simulation::simulate_dataset(&spec, j, 0).map_err(to_py)?;
    Ok((PyResponses(sim.data), PyConfiguration(sim.truth)))
}

/// Runs a study from its JSON description and returns the report as JSON.
#[pyfunction]
fn run_study(py: Python<'_>, spec_json: &str) -> PyResult<String> {
    let spec: simulation::StudySpec = serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let report = py.detach(move || simulation::run_study(&spec)).map_err(to_py)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn average_config_loss(truth: &PyConfiguration, estimate: &PyConfiguration) -> PyResult<f64> {
    alignment::average_config_loss(&truth.0, &estimate.0).map_err(to_py)
}

#[pyfunction]
fn distance_matrix_loss(estimate: &PyConfiguration, truth: &PyConfiguration) -> PyResult<f64> {
    alignment::distance_matrix_loss(&estimate.0.partial_distances(), &truth.0.partial_distances()).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (config, which = "items"))]
fn rotate_to_principal_axes(config: &PyConfiguration, which: &str) -> PyResult<PyConfiguration> {
    let set: PointSet = which.parse().map_err(to_py)?;
    alignment::rotate_to_principal_axes(&config.0, set)
        .map(|(c, _)| PyConfiguration(c))
        .map_err(to_py)
}

/// Zero-based `(person_labels, item_labels)`.
#[pyfunction]
#[pyo3(signature = (config, k1, k2, restarts = 10, seed = 0))]
fn bicluster(config: &PyConfiguration, k1: usize, k2: usize, restarts: usize, seed: u64) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let b = analysis::bicluster(&config.0, k1, k2, restarts, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(to_py)?;
    Ok((b.person_labels, b.item_labels))
}

#[pyfunction]
fn cluster_agreement(truth: Vec<usize>, estimated: Vec<usize>, k: usize) -> PyResult<f64> {
    analysis::cluster_agreement(&truth, &estimated, k).map_err(to_py)
}

#[pyfunction]
fn kendall_tau(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    analysis::kendall_tau(&x, &y).map_err(to_py)
}

#[pyfunction]
fn cross_entropy_heterogeneity(p_yea: f64, p_nay: f64, p_missing: f64) -> PyResult<f64> {
    analysis::cross_entropy_heterogeneity(p_yea, p_nay, p_missing).map_err(to_py)
}

#[pymodule]
fn mdu(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLink>()?;
    m.add_class::<PyResponses>()?;
    m.add_class::<PyConfiguration>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(neg_log_likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    m.add_function(wrap_pyfunction!(average_config_loss, m)?)?;
    m.add_function(wrap_pyfunction!(distance_matrix_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rotate_to_principal_axes, m)?)?;
    m.add_function(wrap_pyfunction!(bicluster, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_agreement, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy_heterogeneity, m)?)?;
    Ok(())
}
