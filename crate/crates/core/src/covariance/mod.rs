//! Structured edge covariance `Sigma = Lambda(omega, rho) + lambda I`.
//!
//! `Lambda[a][b]` is `f(rho_k)` when both edges `a` and `b` have all four
//! endpoints in class `k`, and `f(rho_0)` otherwise, where `f` is the
//! [`EntryMap`] (`exp(-rho)` by default).
//!
//! Two numerical backends evaluate `log det Sigma` and `tr(H Sigma^-1)`:
//! [`dense_oracle`] factors the full `E x E` matrix, and
//! [`StructuredCov`] works in the span of the block indicator vectors,
//! which reduces every solve to a core system of at most `K + 1` unknowns.

mod partition;
mod structured;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::edges::NodeCount;
use crate::error::{Error, Result};

pub use partition::{Partition, RhoParams};
pub use structured::{PdCheck, StructuredCov};

/// Map from a correlation parameter to a covariance entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryMap {
    /// Entry is `exp(-rho)`.
    #[default]
    Exponential,
    /// Entry is `rho` itself. Cross-class entries with `rho_0 = 0` are exact zeros.
    Identity,
}

impl EntryMap {
    #[inline]
    pub fn strength(self, rho: f64) -> f64 {
        match self {
            EntryMap::Exponential => (-rho).exp(),
            EntryMap::Identity => rho,
        }
    }

    /// Inverse of [`EntryMap::strength`]. Exponential requires `strength > 0`.
    pub fn rho_for_strength(self, strength: f64) -> f64 {
        match self {
            EntryMap::Exponential => -strength.ln(),
            EntryMap::Identity => strength,
        }
    }
}

impl std::str::FromStr for EntryMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Ok(EntryMap::Exponential),
            "identity" | "id" => Ok(EntryMap::Identity),
            other => Err(Error::InvalidArgument(format!(
                "unknown entry map `{other}` (expected exponential or identity)"
            ))),
        }
    }
}

impl std::fmt::Display for EntryMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EntryMap::Exponential => f.write_str("exponential"),
            EntryMap::Identity => f.write_str("identity"),
        }
    }
}

/// Sample second-moment matrix `H = R^T R / S` with cached reductions.
#[derive(Debug, Clone)]
pub struct SampleCov {
    h: DMatrix<f64>,
    s: usize,
    trace: f64,
    row_sums: Vec<f64>,
    total: f64,
}

impl SampleCov {
    pub fn new(h: DMatrix<f64>, s: usize) -> Result<Self> {
        if !h.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "H must be square, got {}x{}",
                h.nrows(),
                h.ncols()
            )));
        }
        if s == 0 {
            return Err(Error::InvalidArgument("subject count must be positive".into()));
        }
        let e = h.nrows();
        for a in 0..e {
            for b in a + 1..e {
                let (x, y) = (h[(a, b)], h[(b, a)]);
                if (x - y).abs() > 1e-12 * (1.0 + x.abs().max(y.abs())) {
                    return Err(Error::InvalidArgument(format!(
                        "H is not symmetric at ({a}, {b}): {x} vs {y}"
                    )));
                }
            }
        }
        let trace = h.trace();
        let row_sums: Vec<f64> = (0..e).map(|a| h.column(a).sum()).collect();
        let total = row_sums.iter().sum();
        Ok(Self {
            h,
            s,
            trace,
            row_sums,
            total,
        })
    }

    /// `H = R^T R / S`, mirrored from the upper triangle so it is exactly symmetric.
    pub fn from_data(r: &DMatrix<f64>) -> Result<Self> {
        let s = r.nrows();
        if s == 0 {
            return Err(Error::InvalidArgument("data matrix has no rows".into()));
        }
        let mut h = r.tr_mul(r);
        let e = h.nrows();
        let inv = 1.0 / s as f64;
        for b in 0..e {
            for a in 0..=b {
                let x = h[(a, b)] * inv;
                h[(a, b)] = x;
                h[(b, a)] = x;
            }
        }
        Self::new(h, s)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn subjects(&self) -> usize {
        self.s
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub(crate) fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    pub(crate) fn total(&self) -> f64 {
        self.total
    }
}

pub(crate) fn validate_inputs(p: &Partition, r: &RhoParams, lambda: f64, v: NodeCount) -> Result<()> {
    if p.nodes() != v.get() {
        return Err(Error::DimensionMismatch(format!(
            "partition has {} labels but V = {}",
            p.nodes(),
            v.get()
        )));
    }
    if r.num_classes() != p.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "rho has {} class components but the partition allows {} classes",
            r.num_classes(),
            p.num_classes()
        )));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "ridge lambda must be finite and non-negative, got {lambda}"
        )));
    }
    if !r.is_finite() {
        return Err(Error::InvalidArgument("rho components must be finite".into()));
    }
    Ok(())
}

/// Entrywise construction of `Sigma` by the four-vertex rule.
pub fn build_dense(
    p: &Partition,
    r: &RhoParams,
    lambda: f64,
    v: NodeCount,
    map: EntryMap,
) -> Result<DMatrix<f64>> {
    validate_inputs(p, r, lambda, v)?;
    let n = v.get();
    let labels = p.labels();
    let mut pairs = Vec::with_capacity(v.edges());
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((i, j));
        }
    }
    let e = pairs.len();
    let cross = map.strength(r.rho0);
    let within: Vec<f64> = r.rho.iter().map(|&x| map.strength(x)).collect();
    let mut sigma = DMatrix::zeros(e, e);
    for (a, &(i, j)) in pairs.iter().enumerate() {
        for (b, &(i2, j2)) in pairs.iter().enumerate() {
            let k = labels[i];
            let same = labels[j] == k && labels[i2] == k && labels[j2] == k;
            let mut x = if same { within[k] } else { cross };
            if a == b {
                x += lambda;
            }
            sigma[(a, b)] = x;
        }
    }
    Ok(sigma)
}

pub fn build_structured(
    p: &Partition,
    r: &RhoParams,
    lambda: f64,
    v: NodeCount,
    map: EntryMap,
) -> Result<StructuredCov> {
    StructuredCov::new(p.clone(), r.clone(), lambda, v, map)
}

/// Cholesky-based `(log det Sigma, tr(H Sigma^-1))` on the full dense matrix.
pub fn dense_oracle(sigma: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<(f64, f64)> {
    if !sigma.is_square() || sigma.shape() != h.shape() {
        return Err(Error::DimensionMismatch(format!(
            "Sigma is {:?} but H is {:?}",
            sigma.shape(),
            h.shape()
        )));
    }
    let chol = nalgebra::Cholesky::new(sigma.clone()).ok_or_else(|| {
        Error::NotPositiveDefinite("dense Cholesky factorization failed".into())
    })?;
    let l = chol.l_dirty();
    let mut logdet = 0.0;
    for i in 0..sigma.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite(format!("pivot {i} is {d}")));
        }
        logdet += d.ln();
    }
    let inv = chol.inverse();
    let trace = inv.component_mul(h).sum();
    Ok((2.0 * logdet, trace))
}

/// [`dense_oracle`] applied to the materialized structured covariance.
pub fn dense_oracle_structured(sc: &StructuredCov, h: &SampleCov) -> Result<(f64, f64)> {
    dense_oracle(&sc.materialize(), h.matrix())
}

#[cfg(test)]
mod tests;
