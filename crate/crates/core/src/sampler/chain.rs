use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    accept_label, accept_rho, init_partition_with, init_rho, propose_label, propose_rho,
    rho_update_order, ChainState, MHConfig, RhoPrior,
};
use crate::covariance::{Partition, RhoParams};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::likelihood::{EdgeData, Evaluator};
use crate::modelselect::PointwiseLogLik;

/// One sweep of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub labels: Vec<usize>,
    pub rho: Vec<f64>,
    pub loglik: f64,
    /// One flag per node; a proposal of the current label counts as accepted.
    pub label_accepted: Vec<bool>,
    /// One entry per rho component; `None` when the class was empty and its
    /// parameter frozen.
    pub rho_accepted: Vec<Option<bool>>,
}

#[derive(Debug, Clone)]
pub struct ChainTrace {
    pub records: Vec<IterationRecord>,
    pub burn_in: usize,
    pub k: usize,
    /// Retained draws x subjects, empty when pointwise recording is off.
    pub pointwise: Option<PointwiseLogLik>,
}

impl ChainTrace {
    pub fn retained(&self) -> &[IterationRecord] {
        &self.records[self.burn_in.min(self.records.len())..]
    }

    /// CSV with one row per iteration: iteration, loglik, rho_0..rho_K,
    /// 1-based labels joined by dashes, and acceptance counts.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loglik");
        for c in 0..=self.k {
            out.push_str(&format!(",rho{c}"));
        }
        out.push_str(",labels,label_accepts,rho_accepts,rho_attempts\n");
        for r in &self.records {
            out.push_str(&format!("{},{:.16e}", r.iteration, r.loglik));
            for x in &r.rho {
                out.push_str(&format!(",{x:.16e}"));
            }
            let labels: Vec<String> = r.labels.iter().map(|c| (c + 1).to_string()).collect();
            let rho_acc = r.rho_accepted.iter().filter(|a| **a == Some(true)).count();
            let rho_try = r.rho_accepted.iter().filter(|a| a.is_some()).count();
            out.push_str(&format!(
                ",{},{},{},{}\n",
                labels.join("-"),
                r.label_accepted.iter().filter(|a| **a).count(),
                rho_acc,
                rho_try
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    /// Label block, self-proposals included.
    pub labels: f64,
    /// Fraction of node updates that changed the label.
    pub label_moves: f64,
    /// Rho block over all attempted component updates.
    pub rho: f64,
    /// Per component; `None` if the component was never updated.
    pub rho_components: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub map_partition: Partition,
    pub map_iteration: usize,
    pub map_loglik: f64,
    pub k_hat: usize,
    /// Posterior mean of `(rho_0, rho_1, ..., rho_K)` over retained draws.
    pub rho_hat: Vec<f64>,
    /// Classes empty at the MAP draw; their `rho_hat` is a frozen value.
    pub vanished: Vec<bool>,
    pub acceptance: AcceptanceRates,
}

impl PosteriorSummary {
    pub fn rho_params(&self) -> RhoParams {
        RhoParams::new(self.rho_hat[0], self.rho_hat[1..].to_vec())
    }
}

/// Runs a chain from a random start drawn with the configured seed.
pub fn run_chain(data: &EdgeData, cfg: &MHConfig) -> Result<(ChainTrace, PosteriorSummary)> {
    run_chain_from(data, cfg, None)
}

/// Runs a chain, optionally from a given `(partition, rho)` start.
pub fn run_chain_from(
    data: &EdgeData,
    cfg: &MHConfig,
    start: Option<(Partition, RhoParams)>,
) -> Result<(ChainTrace, PosteriorSummary)> {
    let v = data.nodes();
    cfg.validate(v)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (partition, rho) = match start {
        Some((p, r)) => {
            if p.nodes() != v.get() || p.num_classes() != cfg.k || r.num_classes() != cfg.k {
                return Err(Error::DimensionMismatch(format!(
                    "start state has {} nodes and K = {}, expected V = {} and K = {}",
                    p.nodes(),
                    p.num_classes(),
                    v.get(),
                    cfg.k
                )));
            }
            (p, r)
        }
        None => random_start(data, cfg, &mut rng)?,
    };
    let rho = match cfg.fixed_rho0 {
        Some(x) => RhoParams::new(x, rho.rho),
        None => rho,
    };
    let ev = Evaluator::new(data, cfg.lambda, cfg.map);
    let mut state = ChainState::new(partition, rho, &ev);
    if !state.loglik.is_finite() {
        return Err(Error::NotPositiveDefinite(format!(
            "starting state has log-likelihood {}; choose other initial rho values",
            state.loglik
        )));
    }
    let prior = RhoPrior {
        mean: cfg.prior_mean,
        sd: cfg.prior_sd,
    };
    let n = v.get();
    let mut records = Vec::with_capacity(cfg.iters);
    let mut pointwise: Vec<f64> = Vec::new();
    let mut last_row: Option<Vec<f64>> = None;

    for t in 0..cfg.iters {
        let mut changed = false;
        let mut label_accepted = Vec::with_capacity(n);
        for i in 0..n {
            let before = state.partition.label(i);
            let (proposed, _) = propose_label(&state, i, &mut rng);
            let ok = accept_label(&mut state, &ev, i, proposed, &mut rng);
            changed |= ok && proposed != before;
            label_accepted.push(ok);
        }
        let mut rho_accepted = vec![None; cfg.k + 1];
        for c in rho_update_order(&state.partition) {
            if c == 0 && cfg.fixed_rho0.is_some() {
                continue;
            }
            let proposed = propose_rho(&state, c, cfg.step_sd, &mut rng);
            let ok = accept_rho(&mut state, &ev, c, proposed, prior, &mut rng);
            changed |= ok;
            rho_accepted[c] = Some(ok);
        }
        state.iteration = t + 1;

        if cfg!(debug_assertions) && (t + 1) % 100 == 0 {
            let fresh = ev.eval(&state.partition, &state.rho);
            debug_assert!(
                (fresh - state.loglik).abs() <= 1e-9 * fresh.abs().max(1.0),
                "cached loglik {} drifted from fresh {} at iteration {}",
                state.loglik,
                fresh,
                t + 1
            );
        }

        if t >= cfg.burn_in && cfg.record_pointwise {
            if changed || last_row.is_none() {
                last_row = Some(ev.subject_logliks(&state.partition, &state.rho)?);
            }
            pointwise.extend_from_slice(last_row.as_ref().expect("row computed above"));
        }

        records.push(IterationRecord {
            iteration: t + 1,
            labels: state.partition.labels().to_vec(),
            rho: state.rho.components(),
            loglik: state.loglik,
            label_accepted,
            rho_accepted,
        });
    }

    let pointwise = if cfg.record_pointwise {
        Some(PointwiseLogLik::from_row_major(
            cfg.iters - cfg.burn_in,
            data.subjects(),
            pointwise,
        )?)
    } else {
        None
    };
    let trace = ChainTrace {
        records,
        burn_in: cfg.burn_in,
        k: cfg.k,
        pointwise,
    };
    let summary = summarize(&trace)?;
    Ok((trace, summary))
}

/// Attempts at drawing a starting point with a positive-definite `Sigma`.
pub const MAX_START_ATTEMPTS: usize = 1000;

/// Random partition, then rho draws repeated until `Sigma` is positive
/// definite. Under the exponential map a draw with `rho_0 < rho_k` can make
/// the cross-class entries exceed a within-class entry.
fn random_start(data: &EdgeData, cfg: &MHConfig, rng: &mut ChaCha8Rng) -> Result<(Partition, RhoParams)> {
    let p = init_partition_with(data.nodes(), cfg.k, cfg.init, rng)?;
    let ev = Evaluator::new(data, cfg.lambda, cfg.map);
    for _ in 0..MAX_START_ATTEMPTS {
        let mut r = init_rho(cfg.k, cfg.rho_init_range, rng)?;
        if let Some(x) = cfg.fixed_rho0 {
            r.rho0 = x;
        }
        if ev.eval(&p, &r).is_finite() {
            return Ok((p, r));
        }
    }
    Err(Error::NotPositiveDefinite(format!(
        "no positive-definite start among {MAX_START_ATTEMPTS} rho draws from [{}, {}]",
        cfg.rho_init_range.0, cfg.rho_init_range.1
    )))
}

/// MAP partition, posterior mean of rho and acceptance rates over the
/// retained draws.
pub fn summarize(trace: &ChainTrace) -> Result<PosteriorSummary> {
    if trace.burn_in >= trace.records.len() {
        return Err(Error::InvalidArgument(format!(
            "burn_in ({}) leaves no retained draws out of {}",
            trace.burn_in,
            trace.records.len()
        )));
    }
    let kept = trace.retained();
    let mut best = &kept[0];
    for r in kept {
        if r.loglik > best.loglik {
            best = r;
        }
    }
    let map_partition = Partition::new(best.labels.clone(), trace.k)?;
    let sizes = map_partition.class_sizes();
    // Averaging offsets from the first draw keeps a constant trace exact.
    let t = kept.len() as f64;
    let first = &kept[0].rho;
    let mut offsets = vec![0.0; trace.k + 1];
    for r in kept {
        for ((acc, x), x0) in offsets.iter_mut().zip(&r.rho).zip(first) {
            *acc += x - x0;
        }
    }
    let rho_hat: Vec<f64> = first.iter().zip(&offsets).map(|(x0, d)| x0 + d / t).collect();

    let mut label_acc = 0usize;
    let mut label_total = 0usize;
    let mut moves = 0usize;
    let mut move_total = 0usize;
    let mut comp_acc = vec![0usize; trace.k + 1];
    let mut comp_try = vec![0usize; trace.k + 1];
    let mut prev = if trace.burn_in > 0 {
        Some(&trace.records[trace.burn_in - 1].labels)
    } else {
        None
    };
    for r in kept {
        label_acc += r.label_accepted.iter().filter(|a| **a).count();
        label_total += r.label_accepted.len();
        if let Some(p) = prev {
            let changed = p.iter().zip(&r.labels).filter(|(a, b)| a != b).count();
            moves += changed;
            move_total += r.labels.len();
        }
        prev = Some(&r.labels);
        for (c, a) in r.rho_accepted.iter().enumerate() {
            if let Some(ok) = a {
                comp_try[c] += 1;
                comp_acc[c] += usize::from(*ok);
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let acceptance = AcceptanceRates {
        labels: ratio(label_acc, label_total),
        label_moves: ratio(moves, move_total),
        rho: ratio(comp_acc.iter().sum(), comp_try.iter().sum()),
        rho_components: comp_acc
            .iter()
            .zip(&comp_try)
            .map(|(&a, &b)| (b > 0).then(|| ratio(a, b)))
            .collect(),
    };
    Ok(PosteriorSummary {
        k_hat: map_partition.occupied(),
        vanished: sizes.iter().map(|&s| s == 0).collect(),
        map_partition,
        map_iteration: best.iteration,
        map_loglik: best.loglik,
        rho_hat,
        acceptance,
    })
}
