//! Negative log-likelihood over observed cells and its exact block
//! gradients.
//!
//! Every routine here is phrased in terms of a *slice*: one point (a person
//! or an item) against all points of the other set, paired with the
//! corresponding row or column of the response matrix. Item slices are
//! person slices with the roles of the two sets exchanged.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{MduError, Result};
use crate::model::{squared_distance, Configuration, LinkFunction, ResponseMatrix};

/// Log-likelihood of one slice.
#[inline]
pub(crate) fn slice_log_lik<'a>(
    point: &[f64],
    others: &[f64],
    cells: impl Iterator<Item = &'a Option<bool>>,
    link: &LinkFunction,
) -> f64 {
    let dim = point.len();
    let mut acc = 0.0;
    for (other, cell) in others.chunks_exact(dim).zip(cells) {
        if let Some(y) = *cell {
            acc += link.log_prob(squared_distance(point, other), y);
        }
    }
    acc
}

/// Log-likelihood of one slice; writes its gradient with respect to `point`
/// into `grad`.
#[inline]
pub(crate) fn slice_log_lik_and_gradient<'a>(
    point: &[f64],
    others: &[f64],
    cells: impl Iterator<Item = &'a Option<bool>>,
    link: &LinkFunction,
    grad: &mut [f64],
) -> f64 {
    let dim = point.len();
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut acc = 0.0;
    for (other, cell) in others.chunks_exact(dim).zip(cells) {
        if let Some(y) = *cell {
            let (lp, slope) = link.log_prob_and_slope(squared_distance(point, other), y);
            acc += lp;
            let s = 2.0 * slope;
            for ((g, p), o) in grad.iter_mut().zip(point).zip(other) {
                *g += s * (p - o);
            }
        }
    }
    acc
}

fn flat<'a>(view: &'a ArrayView2<'_, f64>) -> &'a [f64] {
    view.to_slice().expect("configurations are stored in standard layout")
}

/// `-log L` summed over the observed cells.
pub fn neg_log_likelihood(config: &Configuration, data: &ResponseMatrix, link: &LinkFunction) -> Result<f64> {
    config.check_matches(data)?;
    let persons = config.persons();
    let items = config.items();
    let items_flat = flat(&items);
    let per_person: Vec<f64> = (0..config.n_persons())
        .into_par_iter()
        .map(|i| {
            let theta = persons.row(i);
            slice_log_lik(theta.to_slice().unwrap(), items_flat, data.row(i).iter(), link)
        })
        .collect();
    Ok(-per_person.iter().sum::<f64>())
}

/// Gradient of person `i`'s log-likelihood slice with respect to `theta_i`
/// (the ascent direction).
pub fn person_gradient(i: usize, config: &Configuration, data: &ResponseMatrix, link: &LinkFunction) -> Result<Vec<f64>> {
    config.check_matches(data)?;
    if i >= config.n_persons() {
        return Err(MduError::IndexOutOfRange {
            what: "persons",
            index: i,
            len: config.n_persons(),
        });
    }
    let persons = config.persons();
    let items = config.items();
    let mut grad = vec![0.0; config.dim()];
    slice_log_lik_and_gradient(persons.row(i).to_slice().unwrap(), flat(&items), data.row(i).iter(), link, &mut grad);
    Ok(grad)
}

/// Gradient of item `j`'s log-likelihood slice with respect to `a_j`.
pub fn item_gradient(j: usize, config: &Configuration, data: &ResponseMatrix, link: &LinkFunction) -> Result<Vec<f64>> {
    config.check_matches(data)?;
    if j >= config.n_items() {
        return Err(MduError::IndexOutOfRange {
            what: "items",
            index: j,
            len: config.n_items(),
        });
    }
    let persons = config.persons();
    let items = config.items();
    let mut grad = vec![0.0; config.dim()];
    slice_log_lik_and_gradient(items.row(j).to_slice().unwrap(), flat(&persons), data.column(j).iter(), link, &mut grad);
    Ok(grad)
}

/// All person gradients (N x K) and item gradients (J x K) of the
/// log-likelihood.
pub fn log_likelihood_gradient(
    config: &Configuration,
    data: &ResponseMatrix,
    link: &LinkFunction,
) -> Result<(Array2<f64>, Array2<f64>)> {
    config.check_matches(data)?;
    let k = config.dim();
    let mut gp = Array2::zeros((config.n_persons(), k));
    let mut gi = Array2::zeros((config.n_items(), k));
    for i in 0..config.n_persons() {
        gp.row_mut(i).assign(&ndarray::ArrayView1::from(&person_gradient(i, config, data, link)?));
    }
    for j in 0..config.n_items() {
        gi.row_mut(j).assign(&ndarray::ArrayView1::from(&item_gradient(j, config, data, link)?));
    }
    Ok((gp, gi))
}
