//! Starting values from a K-means clustering of the node covariance rows.
//!
//! Lloyd's algorithm runs from `RESTARTS` k-means++ seeds and keeps the
//! lowest within-cluster sum of squares. Clusters smaller than the minimum
//! class size are folded into the cluster with the nearest centroid, so the
//! start may carry fewer nonempty classes than `k`; the remaining classes
//! start empty.

use nalgebra::DMatrix;
use rand::Rng;

use crate::covariance::{EntryMap, Partition, RhoParams};
use crate::error::{Error, Result};

pub const RESTARTS: usize = 50;
const MAX_LLOYD_STEPS: usize = 300;
const MIN_CLASS: usize = 3;
const EPS: f64 = 1e-6;

/// Start state together with the correlation averages it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansStart {
    pub partition: Partition,
    pub rho: RhoParams,
    /// Average within-class correlation per class (`None` for empty classes).
    pub within: Vec<Option<f64>>,
    /// Average correlation over node pairs in different classes.
    pub between: Option<f64>,
    /// Within-cluster sum of squares of the best restart, before merging.
    pub inertia: f64,
}

/// Converts an average correlation into a starting `rho` for `map`.
pub fn rho_from_correlation(c: f64, map: EntryMap) -> f64 {
    let c = c.clamp(EPS, 1.0);
    match map {
        EntryMap::Exponential => -c.ln(),
        EntryMap::Identity => c,
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = d.len() - 1;
            for (i, w) in d.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[pick].clone());
    }
    centers
}

fn centroids(points: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Option<Vec<f64>>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        sums[l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|x| x / n as f64).collect()))
        .collect()
}

/// One run of Lloyd's algorithm. Returns labels and the within-cluster sum
/// of squares.
fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> (Vec<usize>, f64) {
    let k = centers.len();
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
    for _ in 0..MAX_LLOYD_STEPS {
        for (c, center) in centroids(points, &labels, k).into_iter().enumerate() {
            if let Some(center) = center {
                centers[c] = center;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    (labels, inertia)
}

/// K-means with `RESTARTS` seeded restarts on the rows of `points`.
pub fn kmeans<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Result<(Vec<usize>, f64)> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot form {k} clusters from {} points",
            points.len()
        )));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..RESTARTS {
        let run = lloyd(points, plus_plus(points, k, rng));
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Folds every cluster below the minimum size into the cluster whose
/// centroid is nearest, smallest cluster first, until none is left.
fn merge_small(points: &[Vec<f64>], labels: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        let live = sizes.iter().filter(|&&n| n > 0).count();
        let small = (0..k)
            .filter(|&c| sizes[c] > 0 && sizes[c] < MIN_CLASS)
            .min_by_key(|&c| (sizes[c], c));
        let Some(c) = small else { return };
        if live < 2 {
            return;
        }
        let centers = centroids(points, labels, k);
        let from = centers[c].as_ref().expect("nonempty cluster");
        let target = (0..k)
            .filter(|&o| o != c && sizes[o] > 0)
            .min_by(|&a, &b| {
                let da = sq_dist(from, centers[a].as_ref().unwrap());
                let db = sq_dist(from, centers[b].as_ref().unwrap());
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("another nonempty cluster");
        labels.iter_mut().filter(|l| **l == c).for_each(|l| *l = target);
    }
}

/// K-means start for a chain with `k` classes from the `V x V` node
/// covariance `h_nodes`.
pub fn kmeans_init<R: Rng + ?Sized>(
    h_nodes: &DMatrix<f64>,
    k: usize,
    map: EntryMap,
    rng: &mut R,
) -> Result<KMeansStart> {
    let v = h_nodes.nrows();
    if h_nodes.ncols() != v {
        return Err(Error::DimensionMismatch(format!(
            "node covariance must be square, got {}x{}",
            v,
            h_nodes.ncols()
        )));
    }
    if k == 0 || MIN_CLASS * k > v {
        return Err(Error::Infeasible(format!(
            "K = {k} classes of at least {MIN_CLASS} nodes do not fit in V = {v}"
        )));
    }
    let diag: Vec<f64> = (0..v).map(|i| h_nodes[(i, i)]).collect();
    if let Some(i) = diag.iter().position(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidArgument(format!("node {} has non-positive variance", i + 1)));
    }
    let corr = DMatrix::from_fn(v, v, |i, j| h_nodes[(i, j)] / (diag[i] * diag[j]).sqrt());
    let points: Vec<Vec<f64>> = (0..v).map(|i| h_nodes.row(i).iter().copied().collect()).collect();
    let (mut labels, inertia) = kmeans(&points, k, rng)?;
    merge_small(&points, &mut labels, k);

    // Renumber so classes appear in order of their first node.
    let mut order: Vec<Option<usize>> = vec![None; k];
    let mut next = 0;
    for &l in &labels {
        if order[l].is_none() {
            order[l] = Some(next);
            next += 1;
        }
    }
    let labels: Vec<usize> = labels.iter().map(|&l| order[l].unwrap()).collect();
    let partition = Partition::new(labels.clone(), k)?;

    let mut sums = vec![(0.0, 0usize); k];
    let mut cross = (0.0, 0usize);
    for i in 0..v {
        for j in i + 1..v {
            let slot = if labels[i] == labels[j] { &mut sums[labels[i]] } else { &mut cross };
            slot.0 += corr[(i, j)];
            slot.1 += 1;
        }
    }
    let within: Vec<Option<f64>> = sums.iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect();
    let between = (cross.1 > 0).then(|| cross.0 / cross.1 as f64);
    let live: Vec<f64> = within.iter().flatten().copied().collect();
    let fallback = live.iter().sum::<f64>() / live.len() as f64;
    let rho = within
        .iter()
        .map(|w| rho_from_correlation(w.unwrap_or(fallback), map))
        .collect();
    let rho0 = rho_from_correlation(between.unwrap_or(0.0), map);
    Ok(KMeansStart {
        partition,
        rho: RhoParams::new(rho0, rho),
        within,
        between,
        inertia,
    })
}
