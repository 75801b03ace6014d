//! Post-fit analysis: two-step bi-clustering of the fitted ideal points,
//! permutation-matched cluster agreement, Kendall's tau-b and the
//! cross-entropy heterogeneity of a three-way response split.
//!
//! Cluster labels are zero-based throughout (`0..k`).

use ndarray::{Array2, ArrayView2};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::Rng;

use crate::error::{MduError, Result};
use crate::model::{squared_distance, Configuration, ResponseMatrix};

const LLOYD_MAX_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub within_ss: f64,
    /// Within-cluster sum of squares after each assignment step.
    pub ss_history: Vec<f64>,
}

fn row(points: &ArrayView2<'_, f64>, r: usize) -> Vec<f64> {
    points.row(r).to_vec()
}

fn nearest(point: &[f64], centroids: &Array2<f64>) -> (usize, f64) {
    centroids
        .rows()
        .into_iter()
        .enumerate()
        .map(|(c, centroid)| (c, squared_distance(point, centroid.as_slice().unwrap())))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn kmeans_plus_plus(points: &ArrayView2<'_, f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    centroids.row_mut(0).assign(&points.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n)
        .map(|r| squared_distance(&row(points, r), centroids.row(0).as_slice().unwrap()))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (r, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = r;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (r, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(&row(points, r), centroids.row(c).as_slice().unwrap()));
        }
    }
    centroids
}

/// Lloyd iterations from the given centroids until the assignment stops
/// changing. A cluster that empties is reseeded at the point farthest from
/// its current centroid.
pub fn lloyd(points: ArrayView2<'_, f64>, initial: Array2<f64>) -> Result<KMeansResult> {
    if points.ncols() != initial.ncols() {
        return Err(MduError::Shape(format!(
            "points have dimension {}, centroids {}",
            points.ncols(),
            initial.ncols()
        )));
    }
    let n = points.nrows();
    let k = initial.nrows();
    let dim = points.ncols();
    let mut centroids = initial.as_standard_layout().into_owned();
    let mut labels = vec![usize::MAX; n];
    let mut ss_history = Vec::new();
    for _ in 0..LLOYD_MAX_ITERS {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for r in 0..n {
            let (c, d) = nearest(&row(&points, r), &centroids);
            if labels[r] != c {
                labels[r] = c;
                changed = true;
            }
            dists[r] = d;
        }
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]))
                    .expect("at least one point");
                counts[labels[far]] -= 1;
                labels[far] = c;
                counts[c] = 1;
                dists[far] = 0.0;
                changed = true;
            }
        }
        ss_history.push(dists.iter().sum());
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((k, dim));
        for (r, &l) in labels.iter().enumerate() {
            let mut s = sums.row_mut(l);
            s += &points.row(r);
        }
        for (mut s, &count) in sums.rows_mut().into_iter().zip(&counts) {
            s /= count as f64;
        }
        centroids = sums;
    }
    let within_ss = labels
        .iter()
        .enumerate()
        .map(|(r, &l)| squared_distance(&row(&points, r), centroids.row(l).as_slice().unwrap()))
        .sum();
    Ok(KMeansResult {
        labels,
        centroids,
        within_ss,
        ss_history,
    })
}

/// Best of `restarts` k-means++ seeded Lloyd runs by within-cluster sum of
/// squares.
pub fn kmeans(points: ArrayView2<'_, f64>, k: usize, restarts: usize, rng: &mut impl Rng) -> Result<KMeansResult> {
    if k == 0 || k > points.nrows() {
        return Err(MduError::InvalidOptions(format!(
            "k must lie in 1..={}, got {k}",
            points.nrows()
        )));
    }
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let seeds = kmeans_plus_plus(&points, k, rng);
        let run = lloyd(points, seeds)?;
        if best.as_ref().is_none_or(|b| run.within_ss < b.within_ss) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiClustering {
    pub person_labels: Vec<usize>,
    pub item_labels: Vec<usize>,
    pub person_centroids: Array2<f64>,
    pub item_centroids: Array2<f64>,
}

/// Clusters the fitted persons into `k1` groups and the fitted items into
/// `k2` groups, independently.
pub fn bicluster(fit: &Configuration, k1: usize, k2: usize, restarts: usize, rng: &mut impl Rng) -> Result<BiClustering> {
    let persons = kmeans(fit.persons(), k1, restarts, rng)?;
    let items = kmeans(fit.items(), k2, restarts, rng)?;
    Ok(BiClustering {
        person_labels: persons.labels,
        item_labels: items.labels,
        person_centroids: persons.centroids,
        item_centroids: items.centroids,
    })
}

/// Largest fraction of matching labels over all relabelings of `estimated`.
pub fn cluster_agreement(truth: &[usize], estimated: &[usize], k: usize) -> Result<f64> {
    if truth.len() != estimated.len() {
        return Err(MduError::Shape(format!(
            "label vectors have lengths {} and {}",
            truth.len(),
            estimated.len()
        )));
    }
    if k == 0 {
        return Err(MduError::InvalidOptions("k must be positive".into()));
    }
    if let Some(&bad) = truth.iter().chain(estimated).find(|&&l| l >= k) {
        return Err(MduError::InvalidOptions(format!("label {bad} outside 0..{k}")));
    }
    if truth.is_empty() {
        return Err(MduError::Undefined("agreement of empty label vectors".into()));
    }
    let mut counts = vec![0i64; k * k];
    for (&t, &e) in truth.iter().zip(estimated) {
        counts[t * k + e] += 1;
    }
    let weights = Matrix::from_vec(k, k, counts).expect("k x k contingency table");
    let (matched, _) = kuhn_munkres(&weights);
    Ok(matched as f64 / truth.len() as f64)
}

/// Kendall's tau-b, computed in O(n log n).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(MduError::Shape(format!("lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(MduError::Undefined("need at least two observations".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(MduError::Domain("NaN in input".into()));
    }
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let pairs = |t: u64| t * (t.saturating_sub(1)) / 2;
    let tie_pairs = |same: &dyn Fn(usize, usize) -> bool, order: &[usize]| {
        let mut total = 0u64;
        let mut run = 1u64;
        for w in order.windows(2) {
            if same(w[0], w[1]) {
                run += 1;
            } else {
                total += pairs(run);
                run = 1;
            }
        }
        total + pairs(run)
    };
    let x_ties = tie_pairs(&|a, b| x[a] == x[b], &idx);
    let joint_ties = tie_pairs(&|a, b| x[a] == x[b] && y[a] == y[b], &idx);

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let swaps = count_inversions(&mut ys);
    let y_ties = {
        let mut total = 0u64;
        let mut run = 1u64;
        for w in ys.windows(2) {
            if w[0] == w[1] {
                run += 1;
            } else {
                total += pairs(run);
                run = 1;
            }
        }
        total + pairs(run)
    };

    let n0 = pairs(n as u64);
    let (dx, dy) = (n0 - x_ties, n0 - y_ties);
    if dx == 0 || dy == 0 {
        return Err(MduError::Undefined("all values tied in one argument".into()));
    }
    // concordant - discordant, exact in integers
    let numerator = n0 as i64 - x_ties as i64 - y_ties as i64 + joint_ties as i64 - 2 * swaps as i64;
    Ok(numerator as f64 / (dx as f64 * dy as f64).sqrt())
}

/// Sorts `v` ascending and returns the number of strictly inverted pairs.
fn count_inversions(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = count_inversions(&mut v[..mid]) + count_inversions(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            count += (mid - i) as u64;
            merged.push(v[j]);
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..]);
    v.copy_from_slice(&merged);
    count
}

/// `-sum p log p` over the three proportions, with `0 log 0 = 0`.
pub fn cross_entropy_heterogeneity(p_yea: f64, p_nay: f64, p_missing: f64) -> Result<f64> {
    let ps = [p_yea, p_nay, p_missing];
    if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || ((ps.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
        return Err(MduError::Domain(format!(
            "proportions {ps:?} do not form a probability vector"
        )));
    }
    Ok(-ps.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>())
}

/// Heterogeneity of item `j` within the group of persons `group`: the
/// proportions of positive, negative and missing responses among them.
pub fn group_item_heterogeneity(data: &ResponseMatrix, j: usize, group: &[usize]) -> Result<f64> {
    if j >= data.n_items() {
        return Err(MduError::IndexOutOfRange {
            what: "items",
            index: j,
            len: data.n_items(),
        });
    }
    if group.is_empty() {
        return Err(MduError::Undefined("empty group".into()));
    }
    let (mut yea, mut nay, mut missing) = (0usize, 0usize, 0usize);
    for &i in group {
        if i >= data.n_persons() {
            return Err(MduError::IndexOutOfRange {
                what: "persons",
                index: i,
                len: data.n_persons(),
            });
        }
        match data.get(i, j) {
            Some(true) => yea += 1,
            Some(false) => nay += 1,
            None => missing += 1,
        }
    }
    let n = group.len() as f64;
    cross_entropy_heterogeneity(yea as f64 / n, nay as f64 / n, missing as f64 / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair_count_tau(x: &[f64], y: &[f64]) -> f64 {
        let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                let sx = (x[i] - x[j]).signum() as i64 * i64::from(x[i] != x[j]);
                let sy = (y[i] - y[j]).signum() as i64 * i64::from(y[i] != y[j]);
                match (sx, sy) {
                    (0, 0) => {}
                    (0, _) => tx += 1,
                    (_, 0) => ty += 1,
                    _ if sx == sy => c += 1,
                    _ => d += 1,
                }
            }
        }
        (c - d) as f64 / (((c + d + tx) as f64) * ((c + d + ty) as f64)).sqrt()
    }

    #[test]
    fn tau_examples() {
        assert_relative_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0, epsilon = 1e-15);
        assert_relative_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert!(matches!(kendall_tau(&[1.0, 1.0], &[1.0, 2.0]), Err(MduError::Undefined(_))));
        assert!(matches!(kendall_tau(&[1.0], &[1.0, 2.0]), Err(MduError::Shape(_))));
    }

    proptest! {
        #[test]
        fn tau_matches_pair_counting(v in prop::collection::vec((0u8..6, 0u8..6), 2..40)) {
            let x: Vec<f64> = v.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = v.iter().map(|p| p.1 as f64).collect();
            let oracle = pair_count_tau(&x, &y);
            match kendall_tau(&x, &y) {
                Ok(t) => prop_assert_eq!(t, oracle),
                Err(_) => prop_assert!(oracle.is_nan()),
            }
        }

        #[test]
        fn tau_self_and_negation(v in prop::collection::vec(-100i32..100, 2..40)) {
            let x: Vec<f64> = v.iter().map(|&a| a as f64).collect();
            let neg: Vec<f64> = x.iter().map(|a| -a).collect();
            if x.iter().any(|&a| a != x[0]) {
                prop_assert!((kendall_tau(&x, &x).unwrap() - 1.0).abs() < 1e-12);
                prop_assert!((kendall_tau(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn agreement_examples() {
        assert_eq!(cluster_agreement(&[0, 0, 1, 1], &[0, 0, 1, 1], 2).unwrap(), 1.0);
        assert_eq!(cluster_agreement(&[0, 0, 1, 1], &[1, 1, 0, 0], 2).unwrap(), 1.0);
        assert_eq!(cluster_agreement(&[0, 0, 1, 1], &[0, 0, 0, 1], 2).unwrap(), 0.75);
        assert!(cluster_agreement(&[0, 1], &[0], 2).is_err());
        assert!(cluster_agreement(&[0, 2], &[0, 1], 2).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(cross_entropy_heterogeneity(1.0, 0.0, 0.0).unwrap(), 0.0);
        let third = 1.0 / 3.0;
        assert_relative_eq!(cross_entropy_heterogeneity(third, third, third).unwrap(), 1.0986122886681098, epsilon = 1e-12);
        let a = cross_entropy_heterogeneity(0.2, 0.5, 0.3).unwrap();
        for p in [(0.5, 0.2, 0.3), (0.3, 0.5, 0.2), (0.2, 0.3, 0.5)] {
            assert_relative_eq!(cross_entropy_heterogeneity(p.0, p.1, p.2).unwrap(), a, epsilon = 1e-15);
        }
        assert!(cross_entropy_heterogeneity(0.5, 0.6, 0.0).is_err());
        assert!(cross_entropy_heterogeneity(-0.1, 0.6, 0.5).is_err());
    }

    #[test]
    fn group_heterogeneity() {
        let values = array![[1u8, 0], [0, 0], [1, 1]];
        let mask = array![[true, true], [true, false], [true, true]];
        let data = ResponseMatrix::new(values.view(), mask.view()).unwrap();
        assert_eq!(group_item_heterogeneity(&data, 0, &[0, 2]).unwrap(), 0.0);
        let ce = group_item_heterogeneity(&data, 1, &[0, 1, 2]).unwrap();
        assert_relative_eq!(ce, 3f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn two_separated_pairs() {
        let pts = array![[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        let res = kmeans(pts.view(), 2, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(res.labels[0], res.labels[1]);
        assert_eq!(res.labels[2], res.labels[3]);
        assert_ne!(res.labels[0], res.labels[2]);
        // Two partitions into pairs: {01}{23} costs 4 * 0.5^2, {02}{13} costs 4 * 5^2.
        assert_relative_eq!(res.within_ss, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn singleton_clusters() {
        let pts = array![[0.0], [1.0], [5.0]];
        let res = kmeans(pts.view(), 3, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(res.within_ss, 0.0);
        assert!(kmeans(pts.view(), 4, 1, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
        assert!(kmeans(pts.view(), 0, 1, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        let pts = array![[0.0], [1.0], [2.0], [10.0]];
        let res = lloyd(pts.view(), array![[0.0], [100.0]]).unwrap();
        let mut counts = [0; 2];
        res.labels.iter().for_each(|&l| counts[l] += 1);
        assert!(counts.iter().all(|&c| c > 0));
        assert_eq!(res.labels[3], 1);
    }

    #[test]
    fn lloyd_never_increases_ss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let pts = Array2::from_shape_fn((60, 2), |_| rng.random_range(-1.0..1.0));
            let init = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
            let res = lloyd(pts.view(), init).unwrap();
            assert!(res.ss_history.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", res.ss_history);
            assert!(res.within_ss <= *res.ss_history.last().unwrap() + 1e-12);
        }
    }

    #[test]
    fn point_mass_bicluster() {
        let persons = Array2::from_shape_fn((20, 2), |(i, k)| if i < 10 { 0.5 * k as f64 } else { -0.5 });
        let items = Array2::from_shape_fn((6, 2), |(j, _)| (j % 3) as f64 * 0.4 - 0.4);
        let c = Configuration::new(persons, items, 1.0).unwrap();
        let b = bicluster(&c, 2, 3, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let truth: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        assert_eq!(cluster_agreement(&truth, &b.person_labels, 2).unwrap(), 1.0);
        let item_truth: Vec<usize> = (0..6).map(|j| j % 3).collect();
        assert_eq!(cluster_agreement(&item_truth, &b.item_labels, 3).unwrap(), 1.0);
        assert!(b.person_labels.iter().all(|&l| l < 2) && b.item_labels.iter().all(|&l| l < 3));
    }
}
