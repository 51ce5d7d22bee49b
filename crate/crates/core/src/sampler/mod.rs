//! Block-wise Metropolis-Hastings over node labels and correlation
//! parameters.
//!
//! Labels are proposed from a Chinese-restaurant draw with zero
//! concentration: node `i` copies the label of a uniformly chosen other
//! node, so class `k` is proposed with probability `m_{-ik} / (V - 1)` and a
//! class that empties can never be proposed again. Because that proposal
//! coincides with the conditional prior of the label, the acceptance ratio
//! is the plain likelihood ratio. Correlation parameters use a symmetric
//! Gaussian random walk with a Normal prior on every component.

mod chain;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::{EntryMap, Partition, RhoParams};
use crate::edges::NodeCount;
use crate::error::{Error, Result};
use crate::likelihood::Evaluator;

pub use chain::{
    run_chain, run_chain_from, summarize, AcceptanceRates, ChainTrace, IterationRecord,
    PosteriorSummary,
};

/// How the starting partition is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitPolicy {
    /// Every class gets at least three nodes; requires `3K <= V`.
    #[default]
    Strict,
    /// Round-robin over a shuffled node order, so class sizes differ by at
    /// most one and are at least two; requires `2K <= V`. Lets a chain start
    /// with more classes than the strict rule admits.
    Relaxed,
}

impl InitPolicy {
    pub fn min_class_size(self) -> usize {
        match self {
            InitPolicy::Strict => 3,
            InitPolicy::Relaxed => 2,
        }
    }
}

impl std::str::FromStr for InitPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "strict" => Ok(InitPolicy::Strict),
            "relaxed" => Ok(InitPolicy::Relaxed),
            other => Err(Error::InvalidArgument(format!(
                "unknown init policy `{other}` (expected strict or relaxed)"
            ))),
        }
    }
}

/// Sampler settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MHConfig {
    pub k: usize,
    pub iters: usize,
    pub burn_in: usize,
    pub lambda: f64,
    pub prior_mean: f64,
    pub prior_sd: f64,
    pub step_sd: f64,
    pub rho_init_range: (f64, f64),
    pub seed: u64,
    pub map: EntryMap,
    pub init: InitPolicy,
    /// Keep per-subject log-densities of retained draws (needed for WAIC).
    pub record_pointwise: bool,
    /// Hold `rho_0` at this value instead of sampling it.
    #[serde(default)]
    pub fixed_rho0: Option<f64>,
}

impl Default for MHConfig {
    fn default() -> Self {
        Self {
            k: 3,
            iters: 2500,
            burn_in: 500,
            lambda: 0.01,
            prior_mean: 0.25,
            prior_sd: 0.01,
            step_sd: 0.01,
            rho_init_range: (0.0, 0.5),
            seed: 0,
            map: EntryMap::Exponential,
            init: InitPolicy::Strict,
            record_pointwise: true,
            fixed_rho0: None,
        }
    }
}

impl MHConfig {
    pub fn validate(&self, v: NodeCount) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        if self.iters <= self.burn_in {
            return bad(format!(
                "iters ({}) must exceed burn_in ({})",
                self.iters, self.burn_in
            ));
        }
        if !(self.step_sd > 0.0 && self.step_sd.is_finite()) {
            return bad(format!("step_sd must be positive, got {}", self.step_sd));
        }
        if !(self.prior_sd > 0.0 && self.prior_sd.is_finite()) {
            return bad(format!("prior_sd must be positive, got {}", self.prior_sd));
        }
        if !self.prior_mean.is_finite() {
            return bad("prior_mean must be finite".into());
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return bad(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if self.fixed_rho0.is_some_and(|x| !x.is_finite()) {
            return bad("fixed rho_0 must be finite".into());
        }
        check_range(self.rho_init_range)?;
        check_feasible(v, self.k, self.init)
    }
}

fn check_range((lo, hi): (f64, f64)) -> Result<()> {
    if !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(Error::InvalidArgument(format!(
            "rho init range [{lo}, {hi}] is empty or not finite"
        )));
    }
    Ok(())
}

fn check_feasible(v: NodeCount, k: usize, policy: InitPolicy) -> Result<()> {
    let min = policy.min_class_size();
    if k == 0 || min * k > v.get() {
        return Err(Error::Infeasible(format!(
            "K = {k} classes of at least {min} nodes need {} nodes but V = {} \
             (every initial class must hold at least {min} nodes)",
            min * k,
            v.get()
        )));
    }
    Ok(())
}

/// Current chain position with its cached log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub partition: Partition,
    pub rho: RhoParams,
    pub loglik: f64,
    pub iteration: usize,
}

impl ChainState {
    pub fn new(partition: Partition, rho: RhoParams, ev: &Evaluator<'_>) -> Self {
        let loglik = ev.eval(&partition, &rho);
        Self {
            partition,
            rho,
            loglik,
            iteration: 0,
        }
    }
}

/// Random partition with exactly `k` classes of at least three nodes each:
/// three nodes are dealt to every class, the rest get uniform labels.
pub fn init_partition<R: Rng + ?Sized>(v: NodeCount, k: usize, rng: &mut R) -> Result<Partition> {
    init_partition_with(v, k, InitPolicy::Strict, rng)
}

pub fn init_partition_with<R: Rng + ?Sized>(
    v: NodeCount,
    k: usize,
    policy: InitPolicy,
    rng: &mut R,
) -> Result<Partition> {
    check_feasible(v, k, policy)?;
    let n = v.get();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut labels = vec![0; n];
    match policy {
        InitPolicy::Strict => {
            for (pos, &node) in order.iter().enumerate() {
                labels[node] = if pos < 3 * k { pos / 3 } else { rng.random_range(0..k) };
            }
        }
        InitPolicy::Relaxed => {
            for (pos, &node) in order.iter().enumerate() {
                labels[node] = pos % k;
            }
        }
    }
    Partition::new(labels, k)
}

/// `K + 1` independent uniform draws from `range`.
pub fn init_rho<R: Rng + ?Sized>(k: usize, range: (f64, f64), rng: &mut R) -> Result<RhoParams> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    check_range(range)?;
    let (lo, hi) = range;
    let mut draw = || if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let rho0 = draw();
    let rho = (0..k).map(|_| draw()).collect();
    Ok(RhoParams::new(rho0, rho))
}

/// Label proposal for node `i` and its probability `m_{-ik} / (V - 1)`.
pub fn propose_label<R: Rng + ?Sized>(state: &ChainState, i: usize, rng: &mut R) -> (usize, f64) {
    let p = &state.partition;
    let n = p.nodes();
    debug_assert!(n >= 2 && i < n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    let proposed = p.label(j);
    let others = p
        .labels()
        .iter()
        .enumerate()
        .filter(|&(node, &c)| node != i && c == proposed)
        .count();
    (proposed, others as f64 / (n - 1) as f64)
}

/// Probabilities of every class under [`propose_label`] for node `i`.
pub fn label_proposal_probs(p: &Partition, i: usize) -> Vec<f64> {
    let n = p.nodes();
    let mut probs = vec![0.0; p.num_classes()];
    for (node, &c) in p.labels().iter().enumerate() {
        if node != i {
            probs[c] += 1.0;
        }
    }
    probs.iter_mut().for_each(|x| *x /= (n - 1) as f64);
    probs
}

/// Metropolis test `min(1, exp(log_ratio)) > u` with `u ~ U[0, 1)`.
pub(crate) fn mh_test<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    let alpha = if log_ratio.is_nan() { 0.0 } else { log_ratio.exp().min(1.0) };
    alpha > u
}

/// Accept or reject moving node `i` to `proposed`. Returns whether the move
/// was accepted; on rejection the state is untouched.
pub fn accept_label<R: Rng + ?Sized>(
    state: &mut ChainState,
    ev: &Evaluator<'_>,
    i: usize,
    proposed: usize,
    rng: &mut R,
) -> bool {
    if state.partition.label(i) == proposed {
        return true;
    }
    let mut candidate = state.partition.clone();
    candidate.set_label(i, proposed);
    let ll = ev.eval(&candidate, &state.rho);
    if mh_test(ll - state.loglik, rng) {
        state.partition = candidate;
        state.loglik = ll;
        true
    } else {
        false
    }
}

/// Random-walk proposal `rho_c + step_sd * N(0, 1)` for component `c`
/// (0 is `rho_0`, `k + 1` is class `k`).
pub fn propose_rho<R: Rng + ?Sized>(state: &ChainState, component: usize, step_sd: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    state.rho.component(component) + step_sd * z
}

/// Normal prior on one correlation parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoPrior {
    pub mean: f64,
    pub sd: f64,
}

impl RhoPrior {
    /// Log-density up to the shared normalising constant.
    pub fn log_density(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        -0.5 * z * z
    }
}

/// Log acceptance ratio of `rho_c -> proposed`, with the candidate
/// parameters and their log-likelihood.
pub fn rho_log_ratio(
    state: &ChainState,
    ev: &Evaluator<'_>,
    component: usize,
    proposed: f64,
    prior: RhoPrior,
) -> (f64, RhoParams, f64) {
    let current = state.rho.component(component);
    let mut candidate = state.rho.clone();
    candidate.set_component(component, proposed);
    let ll = ev.eval(&state.partition, &candidate);
    let log_ratio = (ll - state.loglik) + (prior.log_density(proposed) - prior.log_density(current));
    (log_ratio, candidate, ll)
}

/// Accept or reject `rho_c -> proposed` under likelihood times prior.
pub fn accept_rho<R: Rng + ?Sized>(
    state: &mut ChainState,
    ev: &Evaluator<'_>,
    component: usize,
    proposed: f64,
    prior: RhoPrior,
    rng: &mut R,
) -> bool {
    if proposed == state.rho.component(component) {
        return true;
    }
    let (log_ratio, candidate, ll) = rho_log_ratio(state, ev, component, proposed, prior);
    if mh_test(log_ratio, rng) {
        state.rho = candidate;
        state.loglik = ll;
        true
    } else {
        false
    }
}

/// Order of the `rho` updates within a sweep: `rho_0`, then every nonempty
/// class ordered by its lowest-numbered node. Ordering by node rather than
/// class id keeps the chain equivariant under class relabeling.
pub(crate) fn rho_update_order(p: &Partition) -> Vec<usize> {
    let mut first = vec![usize::MAX; p.num_classes()];
    for (node, &c) in p.labels().iter().enumerate() {
        first[c] = first[c].min(node);
    }
    let mut classes: Vec<(usize, usize)> = first
        .iter()
        .enumerate()
        .filter(|(_, &f)| f != usize::MAX)
        .map(|(c, &f)| (f, c))
        .collect();
    classes.sort_unstable();
    std::iter::once(0).chain(classes.into_iter().map(|(_, c)| c + 1)).collect()
}

#[cfg(test)]
mod tests;
