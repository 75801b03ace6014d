//! Domain types for distance-based unfolding: the response matrix, the
//! joint person/item configuration, the logistic-type link and the
//! regularity constants of that link over the reachable distance range.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{MduError, Result};

/// Absolute slack allowed on the ball constraint when validating rows.
pub const BOUND_TOL: f64 = 1e-9;

/// The decreasing link `f(x) = 2 / (1 + exp(x + delta))` mapping a squared
/// person-item distance to the probability of a positive response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkFunction {
    delta: f64,
}

impl LinkFunction {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(MduError::InvalidLink(delta));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    fn check_domain(x: f64) -> Result<()> {
        if x.is_nan() || x < 0.0 {
            return Err(MduError::Domain(format!(
                "squared distance must be non-negative, got {x}"
            )));
        }
        Ok(())
    }

    /// `f(x)`, always inside (0, 1).
    pub fn eval(&self, x: f64) -> Result<f64> {
        Self::check_domain(x)?;
        Ok(self.eval_unchecked(x))
    }

    /// `f'(x) = -f(x) (1 - f(x) / 2)`.
    pub fn deriv(&self, x: f64) -> Result<f64> {
        Self::check_domain(x)?;
        let f = self.eval_unchecked(x);
        Ok(-f * (1.0 - 0.5 * f))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: f64) -> f64 {
        let t = (-(x + self.delta)).exp();
        2.0 * t / (1.0 + t)
    }

    /// Log-likelihood contribution of one observed response at squared
    /// distance `x`.
    #[inline]
    pub(crate) fn log_prob(&self, x: f64, y: bool) -> f64 {
        let z = x + self.delta;
        let t = (-z).exp();
        if y {
            std::f64::consts::LN_2 - z - t.ln_1p()
        } else {
            log_one_minus_f(z, t)
        }
    }

    /// Log-likelihood contribution together with its derivative with
    /// respect to the squared distance.
    #[inline]
    pub(crate) fn log_prob_and_slope(&self, x: f64, y: bool) -> (f64, f64) {
        let z = x + self.delta;
        let t = (-z).exp();
        if y {
            // d/dx log f = f'/f = -1 / (1 + t)
            (std::f64::consts::LN_2 - z - t.ln_1p(), -1.0 / (1.0 + t))
        } else {
            // d/dx log(1 - f) = -f'/(1 - f) = 2t / (1 - t^2)
            (log_one_minus_f(z, t), 2.0 * t / ((1.0 - t) * (1.0 + t)))
        }
    }
}

/// `log(1 - f)` for `f = 2t / (1 + t)`, `t = exp(-z)`. Below `z = 0.5` the
/// difference `1 - t` is taken from `expm1` to keep full relative accuracy
/// as `f -> 1`.
#[inline]
fn log_one_minus_f(z: f64, t: f64) -> f64 {
    if z < 0.5 {
        (-(-z).exp_m1()).ln() - t.ln_1p()
    } else {
        (-2.0 * t / (1.0 + t)).ln_1p()
    }
}

/// An N x J binary response matrix with an observation mask. Unobserved
/// cells carry no value.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    cells: Array2<Option<bool>>,
    observed: usize,
}

impl ResponseMatrix {
    pub fn from_cells(cells: Array2<Option<bool>>) -> Result<Self> {
        if cells.nrows() == 0 || cells.ncols() == 0 {
            return Err(MduError::Shape(format!(
                "response matrix must be at least 1 x 1, got {} x {}",
                cells.nrows(),
                cells.ncols()
            )));
        }
        let cells = cells.as_standard_layout().into_owned();
        let observed = cells.iter().filter(|c| c.is_some()).count();
        Ok(Self { cells, observed })
    }

    /// Builds a matrix from 0/1 values and a mask (true = observed). Values
    /// under a false mask entry are ignored.
    pub fn new(values: ArrayView2<'_, u8>, mask: ArrayView2<'_, bool>) -> Result<Self> {
        if values.dim() != mask.dim() {
            return Err(MduError::Shape(format!(
                "values are {:?} but mask is {:?}",
                values.dim(),
                mask.dim()
            )));
        }
        let mut cells = Array2::from_elem(values.dim(), None);
        for ((idx, &v), &m) in values.indexed_iter().zip(mask.iter()) {
            if !m {
                continue;
            }
            cells[idx] = match v {
                0 => Some(false),
                1 => Some(true),
                other => {
                    return Err(MduError::Parse {
                        row: idx.0,
                        column: idx.1,
                        message: format!("response must be 0 or 1, got {other}"),
                    })
                }
            };
        }
        Self::from_cells(cells)
    }

    /// Fully observed matrix.
    pub fn complete(values: ArrayView2<'_, u8>) -> Result<Self> {
        let mask = Array2::from_elem(values.dim(), true);
        Self::new(values, mask.view())
    }

    pub fn n_persons(&self) -> usize {
        self.cells.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.cells.ncols()
    }

    pub fn observed_count(&self) -> usize {
        self.observed
    }

    pub fn get(&self, i: usize, j: usize) -> Option<bool> {
        self.cells[[i, j]]
    }

    pub fn cells(&self) -> ArrayView2<'_, Option<bool>> {
        self.cells.view()
    }

    pub(crate) fn row(&self, i: usize) -> ArrayView1<'_, Option<bool>> {
        self.cells.row(i)
    }

    pub(crate) fn column(&self, j: usize) -> ArrayView1<'_, Option<bool>> {
        self.cells.column(j)
    }

    /// Response values with unobserved cells reported as 0.
    pub fn values(&self) -> Array2<u8> {
        self.cells.mapv(|c| u8::from(c == Some(true)))
    }

    pub fn mask(&self) -> Array2<bool> {
        self.cells.mapv(|c| c.is_some())
    }

    /// Returns a copy with the mask intersected with `mask`.
    pub fn with_mask(&self, mask: ArrayView2<'_, bool>) -> Result<Self> {
        if mask.dim() != self.cells.dim() {
            return Err(MduError::Shape(format!(
                "mask is {:?} but data are {:?}",
                mask.dim(),
                self.cells.dim()
            )));
        }
        let mut cells = self.cells.clone();
        cells.zip_mut_with(&mask, |c, &m| {
            if !m {
                *c = None;
            }
        });
        Self::from_cells(cells)
    }

    /// The J x N matrix in which items play the role of persons.
    pub fn transposed(&self) -> Self {
        Self {
            cells: self.cells.t().as_standard_layout().into_owned(),
            observed: self.observed,
        }
    }
}

/// Person and item ideal points sharing one latent space, together with the
/// radius of the ball they are constrained to.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    persons: Array2<f64>,
    items: Array2<f64>,
    bound: f64,
}

impl Configuration {
    pub fn new(persons: Array2<f64>, items: Array2<f64>, bound: f64) -> Result<Self> {
        if persons.ncols() != items.ncols() {
            return Err(MduError::Shape(format!(
                "persons have dimension {} but items have dimension {}",
                persons.ncols(),
                items.ncols()
            )));
        }
        if persons.ncols() == 0 {
            return Err(MduError::Shape("latent dimension must be at least 1".into()));
        }
        if bound.is_nan() || bound < 0.0 {
            return Err(MduError::Constraint(format!(
                "bound must be non-negative, got {bound}"
            )));
        }
        for (what, m) in [("person", &persons), ("item", &items)] {
            for (r, row) in m.axis_iter(Axis(0)).enumerate() {
                let norm = row.dot(&row).sqrt();
                if !norm.is_finite() || norm > bound + BOUND_TOL {
                    return Err(MduError::Constraint(format!(
                        "{what} {r} has norm {norm} exceeding bound {bound}"
                    )));
                }
            }
        }
        Ok(Self {
            persons: persons.as_standard_layout().into_owned(),
            items: items.as_standard_layout().into_owned(),
            bound,
        })
    }

    /// Uses the largest row norm as the bound.
    pub fn unbounded(persons: Array2<f64>, items: Array2<f64>) -> Result<Self> {
        let bound = persons
            .axis_iter(Axis(0))
            .chain(items.axis_iter(Axis(0)))
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max);
        Self::new(persons, items, bound)
    }

    pub(crate) fn from_parts_unchecked(persons: Array2<f64>, items: Array2<f64>, bound: f64) -> Self {
        Self {
            persons,
            items,
            bound,
        }
    }

    pub fn dim(&self) -> usize {
        self.persons.ncols()
    }

    pub fn n_persons(&self) -> usize {
        self.persons.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.items.nrows()
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn persons(&self) -> ArrayView2<'_, f64> {
        self.persons.view()
    }

    pub fn items(&self) -> ArrayView2<'_, f64> {
        self.items.view()
    }

    pub fn into_parts(self) -> (Array2<f64>, Array2<f64>, f64) {
        (self.persons, self.items, self.bound)
    }

    pub(crate) fn check_matches(&self, data: &ResponseMatrix) -> Result<()> {
        if self.n_persons() != data.n_persons() || self.n_items() != data.n_items() {
            return Err(MduError::Shape(format!(
                "configuration has {} persons and {} items, data are {} x {}",
                self.n_persons(),
                self.n_items(),
                data.n_persons(),
                data.n_items()
            )));
        }
        Ok(())
    }

    /// Entry (i, j) is the squared distance between person i and item j.
    pub fn partial_distances(&self) -> PartialDistanceMatrix {
        let mut d = Array2::zeros((self.n_persons(), self.n_items()));
        for (i, theta) in self.persons.axis_iter(Axis(0)).enumerate() {
            for (j, a) in self.items.axis_iter(Axis(0)).enumerate() {
                d[[i, j]] = squared_distance(
                    theta.as_slice().expect("standard layout"),
                    a.as_slice().expect("standard layout"),
                );
            }
        }
        PartialDistanceMatrix(d)
    }
}

#[inline]
pub(crate) fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// N x J squared person-item distances.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialDistanceMatrix(pub Array2<f64>);

impl PartialDistanceMatrix {
    pub fn entries(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }
}

/// Suprema of `|f'| / (f (1 - f))` and `f (1 - f) / f'^2` over the squared
/// distances reachable inside a ball of radius `M`, i.e. `[0, 4 M^2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityConstants {
    pub l_alpha: f64,
    pub beta_alpha: f64,
    pub alpha: f64,
}

/// Number of grid intervals on `[0, 4M^2]`.
const REGULARITY_GRID: usize = 1000;

pub fn regularity_constants(link: &LinkFunction, bound: f64) -> Result<RegularityConstants> {
    // Revalidate: a deserialized link can bypass `LinkFunction::new`.
    let link = LinkFunction::new(link.delta())?;
    if !(bound.is_finite() && bound > 0.0) {
        return Err(MduError::Domain(format!(
            "radius must be finite and positive, got {bound}"
        )));
    }
    let alpha = 4.0 * bound * bound;
    let steepness = |x: f64| {
        let f = link.eval_unchecked(x);
        (1.0 - 0.5 * f) / (1.0 - f)
    };
    let flatness = |x: f64| {
        let f = link.eval_unchecked(x);
        let fp = f * (1.0 - 0.5 * f);
        f * (1.0 - f) / (fp * fp)
    };
    Ok(RegularityConstants {
        l_alpha: grid_supremum(steepness, alpha),
        beta_alpha: grid_supremum(flatness, alpha),
        alpha,
    })
}

/// Dense grid maximisation on `[0, hi]` followed by golden-section
/// refinement inside the bracket around the best grid point.
fn grid_supremum(g: impl Fn(f64) -> f64, hi: f64) -> f64 {
    let h = hi / REGULARITY_GRID as f64;
    let (best_k, best) = (0..=REGULARITY_GRID)
        .map(|k| (k, g(if k == REGULARITY_GRID { hi } else { k as f64 * h })))
        .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
    if best_k == 0 || best_k == REGULARITY_GRID {
        return best;
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = ((best_k - 1) as f64 * h, ((best_k + 1) as f64 * h).min(hi));
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    for _ in 0..80 {
        if g(c) > g(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - inv_phi * (b - a);
        d = a + inv_phi * (b - a);
    }
    best.max(g(0.5 * (a + b)))
}
