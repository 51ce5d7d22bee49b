//! Accuracy metrics for an estimated partition and covariance against the
//! ground truth.

use nalgebra::DMatrix;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::covariance::{build_dense, Partition, RhoParams};
use crate::error::{Error, Result};
use crate::simgen::GroundTruth;

fn same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "matrices are {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `sum |A - B| / (rows * cols)`.
pub fn normalized_l1_error(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> Result<f64> {
    same_shape(truth, est)?;
    let n = (truth.nrows() * truth.ncols()) as f64;
    Ok(truth.iter().zip(est.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

/// `||A - B||_F / rows`.
pub fn frobenius_error(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> Result<f64> {
    same_shape(truth, est)?;
    Ok((truth - est).norm() / truth.nrows() as f64)
}

/// Optimal matching of estimated classes to true classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAlignment {
    /// `mapping[e]` is the true class matched to estimated class `e`;
    /// `None` for empty estimated classes and for those left over when the
    /// estimate has more nonempty classes than the truth.
    pub mapping: Vec<Option<usize>>,
    pub matched_nodes: usize,
}

/// Maximises the matched node count over the contingency table. Among equal
/// optima the assignment keeping more classes on their own id wins.
pub fn align_labels(truth: &Partition, est: &Partition) -> Result<LabelAlignment> {
    if truth.nodes() != est.nodes() {
        return Err(Error::DimensionMismatch(format!(
            "partitions cover {} and {} nodes",
            truth.nodes(),
            est.nodes()
        )));
    }
    let kt = truth.num_classes();
    let ke = est.num_classes();
    let n = kt.max(ke);
    let mut table = vec![0i64; n * n];
    for (&t, &e) in truth.labels().iter().zip(est.labels()) {
        table[e * n + t] += 1;
    }
    // Scale counts so the same-id bonus (at most n in total) never
    // outweighs one matched node.
    let scale = n as i64 + 1;
    let weights: Vec<i64> = (0..n * n)
        .map(|idx| table[idx] * scale + i64::from(idx / n == idx % n))
        .collect();
    let matrix = Matrix::from_vec(n, n, weights).expect("square weight matrix");
    let (_, assign) = kuhn_munkres(&matrix);
    let sizes = est.class_sizes();
    let mut mapping = vec![None; ke];
    let mut matched = 0;
    for e in 0..ke {
        let t = assign[e];
        if sizes[e] > 0 && t < kt {
            mapping[e] = Some(t);
            matched += table[e * n + t] as usize;
        }
    }
    Ok(LabelAlignment {
        mapping,
        matched_nodes: matched,
    })
}

/// All-or-nothing rate: every node of an estimated cluster that holds a node
/// from a class other than its matched true class counts as misclassified.
pub fn misclassification_rate(truth: &Partition, est: &Partition) -> Result<f64> {
    let align = align_labels(truth, est)?;
    let mut impure = vec![false; est.num_classes()];
    for (&t, &e) in truth.labels().iter().zip(est.labels()) {
        if align.mapping[e] != Some(t) {
            impure[e] = true;
        }
    }
    let bad = est.labels().iter().filter(|&&e| impure[e]).count();
    Ok(bad as f64 / truth.nodes() as f64)
}

/// Sensitivity and specificity of block support over the strict upper
/// triangle. An entry is signal when it differs from its matrix's
/// background value by more than `tol`; empty denominators give 1.
pub fn support_sensitivity_specificity(
    truth: &DMatrix<f64>,
    est: &DMatrix<f64>,
    background_true: f64,
    background_est: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    same_shape(truth, est)?;
    if !(tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be non-negative, got {tol}")));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for b in 0..truth.ncols() {
        for a in 0..b {
            let t = (truth[(a, b)] - background_true).abs() > tol;
            let e = (est[(a, b)] - background_est).abs() > tol;
            match (t, e) {
                (true, true) => tp += 1,
                (true, false) => fn_ += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
            }
        }
    }
    let rate = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok((rate(tp, tp + fn_), rate(tn, tn + fp)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub normalized_l1: f64,
    pub frobenius: f64,
    pub misclassification: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str =
        "normalized_l1,frobenius,misclassification,sensitivity,specificity";

    pub fn csv_row(&self) -> String {
        use crate::io::fmt_f64;
        [
            self.normalized_l1,
            self.frobenius,
            self.misclassification,
            self.sensitivity,
            self.specificity,
        ]
        .map(fmt_f64)
        .join(",")
    }
}

/// Full metric suite for an estimate `(partition, rho)` against `truth`.
/// Both `Lambda` matrices exclude the ridge and use the truth's entry map;
/// each background is the map applied to that side's `rho_0`.
pub fn evaluate(truth: &GroundTruth, est_p: &Partition, est_rho: &RhoParams, tol: f64) -> Result<MetricReport> {
    let lt = truth.lambda_matrix()?;
    let le = build_dense(est_p, est_rho, 0.0, truth.v, truth.map)?;
    let (sensitivity, specificity) = support_sensitivity_specificity(
        &lt,
        &le,
        truth.map.strength(truth.rho.rho0),
        truth.map.strength(est_rho.rho0),
        tol,
    )?;
    Ok(MetricReport {
        normalized_l1: normalized_l1_error(&lt, &le)?,
        frobenius: frobenius_error(&lt, &le)?,
        misclassification: misclassification_rate(&truth.partition, est_p)?,
        sensitivity,
        specificity,
    })
}
