//! Gaussian log-likelihood of the edge features under `N(0, Sigma)`.

use nalgebra::DMatrix;

use crate::covariance::{EntryMap, Partition, RhoParams, SampleCov, StructuredCov};
use crate::edges::NodeCount;
use crate::error::{Error, Result};

fn ln_2pi() -> f64 {
    (2.0 * std::f64::consts::PI).ln()
}

/// Per-subject edge features `R` (S x E) with the derived `H = R^T R / S`.
#[derive(Debug, Clone)]
pub struct EdgeData {
    r: DMatrix<f64>,
    rows: Vec<f64>,
    norms: Vec<f64>,
    totals: Vec<f64>,
    h: SampleCov,
    v: NodeCount,
}

impl EdgeData {
    pub fn new(r: DMatrix<f64>) -> Result<Self> {
        let v = NodeCount::from_edge_count(r.ncols())?;
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("edge features must be finite".into()));
        }
        let h = SampleCov::from_data(&r)?;
        let (s, e) = r.shape();
        let mut rows = Vec::with_capacity(s * e);
        for i in 0..s {
            rows.extend(r.row(i).iter());
        }
        let norms = rows.chunks(e).map(|x| x.iter().map(|a| a * a).sum()).collect();
        let totals = rows.chunks(e).map(|x| x.iter().sum()).collect();
        Ok(Self {
            r,
            rows,
            norms,
            totals,
            h,
            v,
        })
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn h(&self) -> &SampleCov {
        &self.h
    }

    pub fn subjects(&self) -> usize {
        self.r.nrows()
    }

    pub fn edges(&self) -> usize {
        self.r.ncols()
    }

    pub fn nodes(&self) -> NodeCount {
        self.v
    }

    /// Row `s` as a contiguous slice.
    pub fn row(&self, s: usize) -> &[f64] {
        let e = self.edges();
        &self.rows[s * e..(s + 1) * e]
    }
}

/// Natural-log likelihood including the `2 pi` constant.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogLik(pub f64);

impl LogLik {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `-(S E / 2) log 2pi - (S / 2) log det Sigma - (S / 2) tr(H Sigma^-1)`.
pub fn loglik(h: &SampleCov, sc: &StructuredCov) -> Result<LogLik> {
    let (logdet, trace) = sc.logdet_and_trace(h)?;
    let s = h.subjects() as f64;
    let e = h.dim() as f64;
    Ok(LogLik(-0.5 * s * (e * ln_2pi() + logdet + trace)))
}

/// Multivariate normal log-density of one subject row.
pub fn loglik_subject(row: &[f64], sc: &StructuredCov) -> Result<f64> {
    let quad = sc.quad_form(row)?;
    let logdet = sc.logdet()?;
    Ok(-0.5 * (row.len() as f64 * ln_2pi() + logdet + quad))
}

/// Log-densities of every subject under one covariance.
pub fn subject_logliks(data: &EdgeData, sc: &StructuredCov) -> Result<Vec<f64>> {
    if sc.dim() != data.edges() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} edges, Sigma is {}x{}",
            data.edges(),
            sc.dim(),
            sc.dim()
        )));
    }
    let core = sc.core().map_err(Error::NotPositiveDefinite)?;
    let constant = data.edges() as f64 * ln_2pi() + core.logdet;
    Ok((0..data.subjects())
        .map(|s| {
            let quad = sc.quad_form_with_core(&core, data.row(s), data.norms[s], data.totals[s]);
            -0.5 * (constant + quad)
        })
        .collect())
}

/// Evaluates the likelihood of a fixed data set at many `(partition, rho)`
/// points, mapping non-positive-definite covariances to `-inf`.
#[derive(Debug, Clone, Copy)]
pub struct Evaluator<'a> {
    data: &'a EdgeData,
    lambda: f64,
    map: EntryMap,
}

impl<'a> Evaluator<'a> {
    pub fn new(data: &'a EdgeData, lambda: f64, map: EntryMap) -> Self {
        Self { data, lambda, map }
    }

    pub fn data(&self) -> &'a EdgeData {
        self.data
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn map(&self) -> EntryMap {
        self.map
    }

    pub fn structured(&self, p: &Partition, r: &RhoParams) -> Result<StructuredCov> {
        StructuredCov::new(p.clone(), r.clone(), self.lambda, self.data.nodes(), self.map)
    }

    /// Log-likelihood, or `-inf` when `Sigma` is not positive definite.
    pub fn eval(&self, p: &Partition, r: &RhoParams) -> f64 {
        match self.structured(p, r).and_then(|sc| loglik(self.data.h(), &sc)) {
            Ok(LogLik(x)) if x.is_finite() => x,
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn subject_logliks(&self, p: &Partition, r: &RhoParams) -> Result<Vec<f64>> {
        subject_logliks(self.data, &self.structured(p, r)?)
    }
}
