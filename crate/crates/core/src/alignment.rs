//! Comparing configurations up to isometry.
//!
//! The configuration loss is the smallest value, over maps `F(x) = O x + b`
//! with `O` orthogonal, of
//! `(1/N) sum_i |theta*_i - F(theta_i)|^2 + (1/J) sum_j |a*_j - F(a_j)|^2`.
//! It is solved in closed form as a weighted orthogonal Procrustes problem.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{MduError, Result};
use crate::model::{Configuration, PartialDistanceMatrix};

/// `x -> rotation * x + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Isometry {
    pub rotation: DMatrix<f64>,
    pub translation: DVector<f64>,
}

impl Isometry {
    pub fn identity(dim: usize) -> Self {
        Self {
            rotation: DMatrix::identity(dim, dim),
            translation: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }

    pub fn apply_point(&self, x: &[f64]) -> Vec<f64> {
        let v = &self.rotation * DVector::from_column_slice(x) + &self.translation;
        v.iter().copied().collect()
    }

    /// Applies the map to every row.
    pub fn apply_rows(&self, points: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(points.dim());
        for (src, mut dst) in points.rows().into_iter().zip(out.rows_mut()) {
            let x: Vec<f64> = src.iter().copied().collect();
            for (d, v) in dst.iter_mut().zip(self.apply_point(&x)) {
                *d = v;
            }
        }
        out
    }

    /// Applies the map to persons and items; the bound becomes the largest
    /// row norm of the image.
    pub fn apply(&self, config: &Configuration) -> Result<Configuration> {
        if config.dim() != self.dim() {
            return Err(MduError::Shape(format!(
                "isometry acts on dimension {}, configuration has {}",
                self.dim(),
                config.dim()
            )));
        }
        Configuration::unbounded(self.apply_rows(config.persons()), self.apply_rows(config.items()))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let translation = -(&rt * &self.translation);
        Self {
            rotation: rt,
            translation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    /// Map carrying the estimate onto the reference.
    pub isometry: Isometry,
    pub loss: f64,
}

/// Appends zero coordinates up to `target_dim`.
pub fn embed_zero_pad(config: &Configuration, target_dim: usize) -> Result<Configuration> {
    let k = config.dim();
    if target_dim < k {
        return Err(MduError::Shape(format!(
            "cannot embed dimension {k} into dimension {target_dim}"
        )));
    }
    let pad = |m: ArrayView2<'_, f64>| {
        let mut out = Array2::zeros((m.nrows(), target_dim));
        out.slice_mut(s![.., ..k]).assign(&m);
        out
    };
    Configuration::new(pad(config.persons()), pad(config.items()), config.bound())
}

fn to_dmatrix(m: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[[r, c]])
}

/// Weighted orthogonal Procrustes: the isometry minimising
/// `sum_k w_k |reference_k - F(estimate_k)|^2`, reflections allowed.
fn weighted_procrustes(reference: &DMatrix<f64>, estimate: &DMatrix<f64>, weights: &[f64]) -> Isometry {
    let dim = reference.ncols();
    let total: f64 = weights.iter().sum();
    let mut ref_mean = DVector::zeros(dim);
    let mut est_mean = DVector::zeros(dim);
    for (k, &w) in weights.iter().enumerate() {
        ref_mean += reference.row(k).transpose() * (w / total);
        est_mean += estimate.row(k).transpose() * (w / total);
    }
    // H = sum_k w_k (e_k - e_bar)(r_k - r_bar)^T; the optimal rotation
    // maximises tr(O H), attained at O = V U^T for H = U S V^T.
    let mut cross = DMatrix::zeros(dim, dim);
    for (k, &w) in weights.iter().enumerate() {
        let e = estimate.row(k).transpose() - &est_mean;
        let r = reference.row(k).transpose() - &ref_mean;
        cross += (e * r.transpose()) * w;
    }
    let rotation = if cross.iter().all(|&v| v == 0.0) {
        DMatrix::identity(dim, dim)
    } else {
        let svd = cross.svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested V^T");
        v_t.transpose() * u.transpose()
    };
    let translation = &ref_mean - &rotation * &est_mean;
    Isometry {
        rotation,
        translation,
    }
}

fn weighted_residual(reference: ArrayView2<'_, f64>, image: &Array2<f64>) -> f64 {
    if reference.nrows() == 0 {
        return 0.0;
    }
    let sq: f64 = (&reference - image).mapv(|v| v * v).sum();
    sq / reference.nrows() as f64
}

/// Loss of `isometry` applied to `estimate` against `reference`.
pub fn config_loss_under(reference: &Configuration, estimate: &Configuration, isometry: &Isometry) -> Result<f64> {
    check_same_shape(reference, estimate)?;
    Ok(weighted_residual(reference.persons(), &isometry.apply_rows(estimate.persons()))
        + weighted_residual(reference.items(), &isometry.apply_rows(estimate.items())))
}

fn check_same_shape(reference: &Configuration, estimate: &Configuration) -> Result<()> {
    if reference.dim() != estimate.dim()
        || reference.n_persons() != estimate.n_persons()
        || reference.n_items() != estimate.n_items()
    {
        return Err(MduError::Shape(format!(
            "reference is {}x{} in dimension {}, estimate is {}x{} in dimension {}",
            reference.n_persons(),
            reference.n_items(),
            reference.dim(),
            estimate.n_persons(),
            estimate.n_items(),
            estimate.dim()
        )));
    }
    Ok(())
}

/// Best isometry carrying `estimate` onto `reference`, with persons weighted
/// `1/N` and items `1/J`.
pub fn align_isometry(reference: &Configuration, estimate: &Configuration) -> Result<AlignmentResult> {
    check_same_shape(reference, estimate)?;
    let (n, j) = (reference.n_persons(), reference.n_items());
    let stack = |c: &Configuration| {
        let mut m = DMatrix::zeros(n + j, c.dim());
        m.view_mut((0, 0), (n, c.dim())).copy_from(&to_dmatrix(c.persons()));
        m.view_mut((n, 0), (j, c.dim())).copy_from(&to_dmatrix(c.items()));
        m
    };
    let weights: Vec<f64> = std::iter::repeat_n(1.0 / n as f64, n)
        .chain(std::iter::repeat_n(1.0 / j as f64, j))
        .collect();
    let isometry = weighted_procrustes(&stack(reference), &stack(estimate), &weights);
    let loss = config_loss_under(reference, estimate, &isometry)?;
    Ok(AlignmentResult { isometry, loss })
}

/// Aligns two unweighted point sets given as rows.
pub fn align_point_sets(reference: ArrayView2<'_, f64>, estimate: ArrayView2<'_, f64>) -> Result<AlignmentResult> {
    if reference.dim() != estimate.dim() || reference.nrows() == 0 {
        return Err(MduError::Shape(format!(
            "point sets are {:?} and {:?}",
            reference.dim(),
            estimate.dim()
        )));
    }
    let w = vec![1.0 / reference.nrows() as f64; reference.nrows()];
    let isometry = weighted_procrustes(&to_dmatrix(reference), &to_dmatrix(estimate), &w);
    let loss = weighted_residual(reference, &isometry.apply_rows(estimate));
    Ok(AlignmentResult { isometry, loss })
}

/// Configuration-recovery loss of `estimate` (dimension `K+`) against
/// `truth` (dimension `K <= K+`), after zero-padding the truth.
pub fn average_config_loss(truth: &Configuration, estimate: &Configuration) -> Result<f64> {
    let padded = embed_zero_pad(truth, estimate.dim())?;
    Ok(align_isometry(&padded, estimate)?.loss)
}

/// `|D_est - D_truth|_F^2 / (N J)`.
pub fn distance_matrix_loss(estimate: &PartialDistanceMatrix, truth: &PartialDistanceMatrix) -> Result<f64> {
    if estimate.dim() != truth.dim() {
        return Err(MduError::Shape(format!(
            "distance matrices are {:?} and {:?}",
            estimate.dim(),
            truth.dim()
        )));
    }
    let diff = &estimate.0 - &truth.0;
    Ok(diff.mapv(|v| v * v).sum() / diff.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointSet {
    Persons,
    Items,
}

impl std::str::FromStr for PointSet {
    type Err = MduError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "persons" | "person" => Ok(PointSet::Persons),
            "items" | "item" => Ok(PointSet::Items),
            other => Err(MduError::InvalidOptions(format!(
                "expected `persons` or `items`, got `{other}`"
            ))),
        }
    }
}

/// Re-expresses the whole configuration in the principal axes of one of its
/// point sets: centre at that set's mean, then rotate onto the eigenvectors
/// of its covariance in decreasing order of variance. Each axis is oriented
/// so that the selected point with the largest absolute coordinate on it is
/// positive.
pub fn rotate_to_principal_axes(config: &Configuration, which: PointSet) -> Result<(Configuration, Isometry)> {
    let selected = match which {
        PointSet::Persons => config.persons(),
        PointSet::Items => config.items(),
    };
    let dim = config.dim();
    let n = selected.nrows() as f64;
    let x = to_dmatrix(selected);
    let mean = DVector::from_fn(dim, |c, _| x.column(c).sum() / n);
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / n;

    let rotation = if cov.iter().all(|&v| v.abs() == 0.0) {
        DMatrix::identity(dim, dim)
    } else {
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut basis = DMatrix::zeros(dim, dim);
        for (dst, &src) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(src).clone_owned();
            let proj = &centered * &v;
            let extreme = proj.iter().copied().fold(0.0f64, |m, p| if p.abs() > m.abs() { p } else { m });
            if extreme < 0.0 {
                v = -v;
            }
            basis.set_column(dst, &v);
        }
        // New coordinates are basis^T (x - mean).
        basis.transpose()
    };
    let translation = -(&rotation * &mean);
    let isometry = Isometry {
        rotation,
        translation,
    };
    let bound = config.bound() + mean.norm();
    let rotated = Configuration::new(
        isometry.apply_rows(config.persons()),
        isometry.apply_rows(config.items()),
        bound,
    )?;
    Ok((rotated, isometry))
}
