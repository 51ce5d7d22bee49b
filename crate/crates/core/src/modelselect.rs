//! WAIC from retained draws and the scan over class budgets `K`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::EdgeData;
use crate::sampler::{run_chain, ChainTrace, MHConfig, PosteriorSummary};

/// Log-densities `log p(R^s | theta^(t))`, draws x subjects, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseLogLik {
    draws: usize,
    subjects: usize,
    values: Vec<f64>,
}

impl PointwiseLogLik {
    pub fn from_row_major(draws: usize, subjects: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != draws * subjects {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {draws} draws x {subjects} subjects",
                values.len()
            )));
        }
        Ok(Self {
            draws,
            subjects,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let subjects = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != subjects) {
            return Err(Error::DimensionMismatch("ragged pointwise rows".into()));
        }
        Self::from_row_major(rows.len(), subjects, rows.concat())
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn subjects(&self) -> usize {
        self.subjects
    }

    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.values[t * self.subjects + s]
    }
}

/// `WAIC = -2 sum_s lppd_s + 2 sum_s Var_t(log p(R^s | theta^(t)))`.
pub fn waic(pw: &PointwiseLogLik) -> Result<f64> {
    let t = pw.draws();
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "WAIC needs at least 2 retained draws, got {t}"
        )));
    }
    if pw.values.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("pointwise log-densities must be finite".into()));
    }
    let mut lppd = 0.0;
    let mut penalty = 0.0;
    let mut col = vec![0.0; t];
    for s in 0..pw.subjects() {
        for (i, x) in col.iter_mut().enumerate() {
            *x = pw.get(i, s);
        }
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = col.iter().map(|x| (x - max).exp()).sum();
        lppd += max + (sum_exp / t as f64).ln();
        let mean = col.iter().sum::<f64>() / t as f64;
        penalty += col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (t - 1) as f64;
    }
    Ok(-2.0 * lppd + 2.0 * penalty)
}

/// Rule deciding whether a chain is reported as converged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRule {
    /// Reject when the two halves of the retained log-likelihood trace
    /// differ by more than this many pooled standard errors.
    pub split_z: f64,
    /// Reject when the label block or the rho block accepted nothing.
    pub require_acceptance: bool,
    /// Reject when WAIC is missing or non-negative, i.e. when `ln(-WAIC)`
    /// cannot be reported. Chains stuck with merged classes land here: they
    /// look stationary but the unexplained edge variance is charged at
    /// `1/lambda`.
    #[serde(default = "yes")]
    pub require_negative_waic: bool,
}

fn yes() -> bool {
    true
}

impl Default for ConvergenceRule {
    fn default() -> Self {
        Self {
            split_z: 3.0,
            require_acceptance: true,
            require_negative_waic: true,
        }
    }
}

/// Effective sample size from Geyer's initial positive sequence.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..n - lag {
            s += (x[i] - mean) * (x[i + lag] - mean);
        }
        s / n as f64 / c0
    };
    let mut tau = -1.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = acf(2 * m) + acf(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        m += 1;
    }
    (n as f64 / tau.max(1e-12)).clamp(1.0, n as f64)
}

/// Split-half comparison of a trace. Returns the z-score of the difference
/// in means, `0` for a constant trace and `inf` when the halves differ but
/// neither varies.
pub fn split_half_z(x: &[f64]) -> f64 {
    let half = x.len() / 2;
    if half < 2 {
        return 0.0;
    }
    let (a, b) = (&x[..half], &x[x.len() - half..]);
    let stats = |y: &[f64]| {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (y.len() - 1) as f64;
        (m, var / effective_sample_size(y))
    };
    let (ma, va) = stats(a);
    let (mb, vb) = stats(b);
    let diff = (ma - mb).abs();
    let se = (va + vb).sqrt();
    if diff == 0.0 {
        0.0
    } else if se == 0.0 {
        f64::INFINITY
    } else {
        diff / se
    }
}

/// Applies `rule` to a finished chain whose WAIC (if computed) is `waic`.
/// Returns `(converged, reason)`.
pub fn assess_convergence(
    trace: &ChainTrace,
    summary: &PosteriorSummary,
    waic: Option<f64>,
    rule: &ConvergenceRule,
) -> (bool, String) {
    if rule.require_acceptance {
        if summary.acceptance.labels == 0.0 {
            return (false, "label block never accepted".into());
        }
        if summary.acceptance.rho == 0.0 {
            return (false, "rho block never accepted".into());
        }
    }
    let ll: Vec<f64> = trace.retained().iter().map(|r| r.loglik).collect();
    let z = split_half_z(&ll);
    if z > rule.split_z {
        return (false, format!("split-half loglik z = {z:.2} exceeds {}", rule.split_z));
    }
    if rule.require_negative_waic {
        match waic {
            None => return (false, format!("split-half loglik z = {z:.2}; WAIC unavailable")),
            Some(w) if !(w < 0.0) => {
                return (false, format!("split-half loglik z = {z:.2}; WAIC = {w:.6e} is not negative"))
            }
            Some(_) => {}
        }
    }
    (true, format!("split-half loglik z = {z:.2}"))
}

/// One row of the K scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KScanRow {
    pub k: usize,
    pub feasible: bool,
    pub waic: Option<f64>,
    /// `ln(-WAIC)`, only defined when `WAIC < 0`.
    pub log_neg_waic: Option<f64>,
    pub k_hat: Option<usize>,
    pub converged: bool,
    pub note: String,
}

/// A scan row together with its chain when one was run.
#[derive(Debug, Clone)]
pub struct KScanOutcome {
    pub row: KScanRow,
    pub chain: Option<(ChainTrace, PosteriorSummary)>,
}

/// Runs one chain per `K` (seed of chain `i` is `base.seed + i`), bounded by
/// `threads` workers, and returns the rows sorted by `K`.
pub fn k_scan(
    data: &EdgeData,
    ks: &[usize],
    base: &MHConfig,
    rule: &ConvergenceRule,
    threads: Option<usize>,
) -> Result<Vec<KScanOutcome>> {
    let mut jobs: Vec<(usize, usize)> = ks.iter().copied().enumerate().collect();
    jobs.sort_by_key(|&(i, k)| (k, i));
    jobs.dedup_by_key(|j| j.1);
    let run = |&(index, k): &(usize, usize)| scan_one(data, k, index, base, rule);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(|| jobs.par_iter().map(run).collect()))
}

fn scan_one(data: &EdgeData, k: usize, index: usize, base: &MHConfig, rule: &ConvergenceRule) -> KScanOutcome {
    let cfg = MHConfig {
        k,
        seed: base.seed.wrapping_add(index as u64),
        record_pointwise: true,
        ..base.clone()
    };
    let failed = |feasible: bool, note: String| KScanOutcome {
        row: KScanRow {
            k,
            feasible,
            waic: None,
            log_neg_waic: None,
            k_hat: None,
            converged: false,
            note,
        },
        chain: None,
    };
    if let Err(e) = cfg.validate(data.nodes()) {
        let feasible = !matches!(e, Error::Infeasible(_));
        return failed(feasible, e.to_string());
    }
    let (trace, summary) = match run_chain(data, &cfg) {
        Ok(x) => x,
        Err(e) => return failed(true, e.to_string()),
    };
    let w = trace
        .pointwise
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("pointwise log-densities were not recorded".into()))
        .and_then(waic);
    let (waic_value, waic_err) = match w {
        Ok(x) => (Some(x), None),
        Err(e) => (None, Some(e)),
    };
    let (converged, mut note) = assess_convergence(&trace, &summary, waic_value, rule);
    if let Some(e) = waic_err {
        note = format!("{note}; {e}");
    }
    KScanOutcome {
        row: KScanRow {
            k,
            feasible: true,
            waic: waic_value,
            log_neg_waic: waic_value.filter(|w| *w < 0.0).map(|w| (-w).ln()),
            k_hat: Some(summary.k_hat),
            converged: converged && waic_value.is_some(),
            note,
        },
        chain: Some((trace, summary)),
    }
}

/// The feasible, converged row with the smallest WAIC.
pub fn recommended_k(rows: &[KScanRow]) -> Option<usize> {
    rows.iter()
        .filter(|r| r.feasible && r.converged)
        .filter_map(|r| r.waic.map(|w| (w, r.k)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k)
}

/// CSV with columns `K,WAIC,log_neg_WAIC,K_hat,converged`.
pub fn scan_to_csv(rows: &[KScanRow]) -> String {
    let mut out = String::from("K,WAIC,log_neg_WAIC,K_hat,converged\n");
    let opt = |x: Option<f64>| x.map(crate::io::fmt_f64).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.k,
            opt(r.waic),
            opt(r.log_neg_waic),
            r.k_hat.map(|k| k.to_string()).unwrap_or_default(),
            r.converged
        ));
    }
    out
}
