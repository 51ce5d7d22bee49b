//! End-to-end commands: data generation, inference, K scans, evaluation and
//! figure reports, each writing into an output directory.

pub mod cli;
pub mod features;
pub mod figures;
pub mod kmeans;

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::Partition;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, MetricReport};
use crate::io::{numbered_header, read_json, read_matrix_csv, write_atomic, write_json, write_matrix_csv};
use crate::likelihood::EdgeData;
use crate::modelselect::{
    assess_convergence, k_scan, recommended_k, scan_to_csv, waic, ConvergenceRule, KScanRow,
};
use crate::sampler::{run_chain_from, ChainTrace, MHConfig, PosteriorSummary};
use crate::simgen::{generate, make_ground_truth, GroundTruth, TruthSpec};

use features::{edge_features, read_feature_table, standardize};
use figures::{trace_ppm, write_heatmap, Scale};
use kmeans::kmeans_init;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where the subject data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    /// `S x E` edge matrix with a header row.
    EdgeMatrix { path: PathBuf },
    /// `S x V` region table; standardized, then turned into outer products.
    Features { path: PathBuf },
}

impl InputSpec {
    pub fn path(&self) -> &Path {
        match self {
            InputSpec::EdgeMatrix { path } | InputSpec::Features { path } => path,
        }
    }
}

/// How the chain is started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartPolicy {
    /// K-means on the node correlation matrix for feature input, random otherwise.
    #[default]
    Auto,
    /// Random labels under the init policy and uniform rho draws.
    Random,
    /// K-means start; feature input only.
    Kmeans,
}

impl std::str::FromStr for StartPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(StartPolicy::Auto),
            "random" => Ok(StartPolicy::Random),
            "kmeans" => Ok(StartPolicy::Kmeans),
            other => Err(Error::InvalidArgument(format!(
                "unknown start `{other}` (expected auto, random or kmeans)"
            ))),
        }
    }
}

/// Everything an `infer` or `scan-k` run depends on. Echoed into the output
/// directory as `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: InputSpec,
    pub out_dir: PathBuf,
    pub chain: MHConfig,
    pub start: StartPolicy,
    pub convergence: ConvergenceRule,
    /// Inclusive K range for scans.
    pub k_range: Option<(usize, usize)>,
    pub threads: Option<usize>,
}

impl RunConfig {
    /// Checks settings that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if let Some((lo, hi)) = self.k_range {
            if lo == 0 || lo > hi {
                return Err(Error::InvalidArgument(format!("bad K range {lo}..={hi}")));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        if self.start == StartPolicy::Kmeans && matches!(self.input, InputSpec::EdgeMatrix { .. }) {
            return Err(Error::InvalidArgument(
                "a k-means start needs region features (--input-features)".into(),
            ));
        }
        if !(self.convergence.split_z > 0.0) {
            return Err(Error::InvalidArgument("split-half threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Data ready for the sampler.
#[derive(Debug, Clone)]
pub struct LoadedInput {
    pub data: EdgeData,
    /// Region names when the input was a feature table.
    pub names: Option<Vec<String>>,
    /// Correlation matrix of the standardized regions (feature input only).
    pub node_corr: Option<DMatrix<f64>>,
    pub dropped_rows: usize,
}

pub fn load_input(input: &InputSpec) -> Result<LoadedInput> {
    match input {
        InputSpec::EdgeMatrix { path } => {
            let r = read_matrix_csv(path)?;
            let data = EdgeData::new(r).map_err(|e| Error::Schema {
                path: path.clone(),
                message: e.to_string(),
            })?;
            Ok(LoadedInput {
                data,
                names: None,
                node_corr: None,
                dropped_rows: 0,
            })
        }
        InputSpec::Features { path } => {
            let ingested = read_feature_table(path)?;
            let z = standardize(&ingested.table)?;
            let node_corr = z.correlation()?;
            Ok(LoadedInput {
                data: edge_features(&z)?,
                names: Some(z.names().to_vec()),
                node_corr: Some(node_corr),
                dropped_rows: ingested.dropped_rows,
            })
        }
    }
}

/// Files written by [`run_generate`].
pub const R_FILE: &str = "R.csv";
pub const H_FILE: &str = "H.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Draws a data set from `spec` and writes `R.csv`, `H.csv` and `truth.json`.
pub fn run_generate(spec: &TruthSpec, subjects: usize, seed: u64, out: &Path) -> Result<(GroundTruth, EdgeData)> {
    let gt = make_ground_truth(spec)?;
    let data = generate(&gt, subjects, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let e = data.edges();
    write_matrix_csv(&out.join(R_FILE), data.r(), &numbered_header("e", e))?;
    write_matrix_csv(&out.join(H_FILE), data.h().matrix(), &numbered_header("e", e))?;
    write_json(&out.join(TRUTH_FILE), &gt)?;
    Ok((gt, data))
}

/// Posterior summary plus model-selection diagnostics of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferResult {
    #[serde(flatten)]
    pub summary: PosteriorSummary,
    pub waic: Option<f64>,
    /// `ln(-WAIC)`, absent when WAIC is not negative.
    pub log_neg_waic: Option<f64>,
    pub converged: bool,
    pub convergence_note: String,
    /// Fitted entry strengths `f(rho_hat)`, background first.
    pub strengths: Vec<f64>,
    pub region_names: Option<Vec<String>>,
    pub dropped_rows: usize,
}

fn chain_start(
    cfg: &RunConfig,
    input: &LoadedInput,
    k: usize,
) -> Result<Option<(Partition, crate::covariance::RhoParams)>> {
    let use_kmeans = match cfg.start {
        StartPolicy::Random => false,
        StartPolicy::Kmeans => true,
        StartPolicy::Auto => input.node_corr.is_some(),
    };
    if !use_kmeans {
        return Ok(None);
    }
    let corr = input.node_corr.as_ref().ok_or_else(|| {
        Error::InvalidArgument("a k-means start needs region features (--input-features)".into())
    })?;
    let start = kmeans_init(corr, k, cfg.chain.map, &mut ChaCha8Rng::seed_from_u64(cfg.chain.seed))?;
    Ok(Some((start.partition, start.rho)))
}

fn finish_chain(
    trace: &ChainTrace,
    summary: PosteriorSummary,
    rule: &ConvergenceRule,
    input: &LoadedInput,
    map: crate::covariance::EntryMap,
) -> InferResult {
    let w = trace.pointwise.as_ref().and_then(|p| waic(p).ok());
    let (converged, note) = assess_convergence(trace, &summary, w, rule);
    let strengths = summary.rho_hat.iter().map(|&r| map.strength(r)).collect();
    InferResult {
        summary,
        waic: w,
        log_neg_waic: w.filter(|x| *x < 0.0).map(|x| (-x).ln()),
        converged,
        convergence_note: note,
        strengths,
        region_names: input.names.clone(),
        dropped_rows: input.dropped_rows,
    }
}

fn write_chain_outputs(dir: &Path, trace: &ChainTrace, result: &InferResult) -> Result<()> {
    trace.write_csv(&dir.join(TRACE_FILE))?;
    write_json(&dir.join(SUMMARY_FILE), result)?;
    let labels = result.summary.map_partition.to_one_based();
    let mut csv = String::from("node,name,label\n");
    for (i, l) in labels.iter().enumerate() {
        let name = result
            .region_names
            .as_ref()
            .map(|n| n[i].clone())
            .unwrap_or_else(|| format!("node{}", i + 1));
        csv.push_str(&format!("{},{},{}\n", i + 1, name, l));
    }
    write_atomic(&dir.join("labels.csv"), csv.as_bytes())
}

/// Runs one chain and writes trace, summary, labels and the echoed config.
pub fn run_infer(cfg: &RunConfig) -> Result<InferResult> {
    cfg.validate()?;
    let input = load_input(&cfg.input)?;
    cfg.chain.validate(input.data.nodes())?;
    let start = chain_start(cfg, &input, cfg.chain.k)?;
    let (trace, summary) = run_chain_from(&input.data, &cfg.chain, start)?;
    let result = finish_chain(&trace, summary, &cfg.convergence, &input, cfg.chain.map);
    write_json(&cfg.out_dir.join(CONFIG_FILE), cfg)?;
    write_chain_outputs(&cfg.out_dir, &trace, &result)?;
    Ok(result)
}

/// Outcome of a K scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub rows: Vec<KScanRow>,
    pub recommended_k: Option<usize>,
    /// The convergence flag is a proxy: split-half log-likelihood test,
    /// nonzero acceptance and a negative WAIC.
    pub convergence_rule: ConvergenceRule,
}

/// Scans `k_range`, one chain per K, writing each chain under `k<K>/` and
/// the table to `scan.csv`.
pub fn run_scan(cfg: &RunConfig) -> Result<ScanResult> {
    cfg.validate()?;
    let (lo, hi) = cfg
        .k_range
        .ok_or_else(|| Error::InvalidArgument("scan-k needs --k-min and --k-max".into()))?;
    let input = load_input(&cfg.input)?;
    let ks: Vec<usize> = (lo..=hi).collect();
    let outcomes = if matches!(cfg.start, StartPolicy::Random)
        || (cfg.start == StartPolicy::Auto && input.node_corr.is_none())
    {
        k_scan(&input.data, &ks, &cfg.chain, &cfg.convergence, cfg.threads)?
    } else {
        scan_from_kmeans(cfg, &input, &ks)?
    };
    write_json(&cfg.out_dir.join(CONFIG_FILE), cfg)?;
    let mut rows = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        if let Some((trace, summary)) = o.chain {
            let mut result = finish_chain(&trace, summary, &cfg.convergence, &input, cfg.chain.map);
            result.converged = o.row.converged;
            result.convergence_note = o.row.note.clone();
            write_chain_outputs(&cfg.out_dir.join(format!("k{}", o.row.k)), &trace, &result)?;
        }
        rows.push(o.row);
    }
    write_atomic(&cfg.out_dir.join("scan.csv"), scan_to_csv(&rows).as_bytes())?;
    let result = ScanResult {
        recommended_k: recommended_k(&rows),
        rows,
        convergence_rule: cfg.convergence,
    };
    write_json(&cfg.out_dir.join("scan.json"), &result)?;
    Ok(result)
}

/// K scan where every chain starts from its own K-means start. Seeds follow
/// the same `seed + index` rule as the random-start scan.
fn scan_from_kmeans(
    cfg: &RunConfig,
    input: &LoadedInput,
    ks: &[usize],
) -> Result<Vec<crate::modelselect::KScanOutcome>> {
    use crate::modelselect::KScanOutcome;
    use rayon::prelude::*;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    let one = |(index, &k): (usize, &usize)| -> KScanOutcome {
        let chain = MHConfig {
            k,
            seed: cfg.chain.seed.wrapping_add(index as u64),
            record_pointwise: true,
            ..cfg.chain.clone()
        };
        let sub = RunConfig {
            chain: chain.clone(),
            ..cfg.clone()
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
        let run = chain
            .validate(input.data.nodes())
            .and_then(|_| chain_start(&sub, input, k))
            .and_then(|start| run_chain_from(&input.data, &chain, start));
        match run {
            Err(e) => failed(!matches!(e, Error::Infeasible(_)), e.to_string()),
            Ok((trace, summary)) => {
                let r = finish_chain(&trace, summary.clone(), &cfg.convergence, input, chain.map);
                KScanOutcome {
                    row: KScanRow {
                        k,
                        feasible: true,
                        waic: r.waic,
                        log_neg_waic: r.log_neg_waic,
                        k_hat: Some(summary.k_hat),
                        converged: r.converged,
                        note: r.convergence_note,
                    },
                    chain: Some((trace, summary)),
                }
            }
        }
    };
    Ok(pool.install(|| ks.par_iter().enumerate().map(one).collect()))
}

/// Scores the summary in `estimate` against `truth` and writes
/// `metrics.json` and `metrics.csv` into `out`.
pub fn run_evaluate(truth: &Path, estimate: &Path, tol: f64, out: &Path) -> Result<MetricReport> {
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(Error::InvalidArgument(format!("--tol must be finite and non-negative, got {tol}")));
    }
    let gt: GroundTruth = read_json(truth)?;
    let est: InferResult = read_json(estimate)?;
    let p = &est.summary.map_partition;
    if p.nodes() != gt.v.get() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {} nodes, truth has {}",
            p.nodes(),
            gt.v.get()
        )));
    }
    let report = evaluate(&gt, p, &est.summary.rho_params(), tol)?;
    write_json(&out.join("metrics.json"), &report)?;
    let csv = format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row());
    write_atomic(&out.join("metrics.csv"), csv.as_bytes())?;
    Ok(report)
}

/// Files produced by [`run_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub images: Vec<PathBuf>,
    pub tables: Vec<PathBuf>,
}

/// Draws the heatmaps and the log-likelihood trace of a result directory.
///
/// Images: estimated co-membership of nodes, `Lambda_hat`, and with a truth
/// file also `Lambda` and `Lambda - Lambda_hat`; the trace is drawn from
/// `trace.csv`.
pub fn run_report(result_dir: &Path, truth: Option<&Path>, out: &Path) -> Result<ReportFiles> {
    let est: InferResult = read_json(&result_dir.join(SUMMARY_FILE))?;
    let p = &est.summary.map_partition;
    let v = p.nodes();
    let map = match truth {
        Some(t) => Some(read_json::<GroundTruth>(t)?),
        None => None,
    };
    let entry_map = match &map {
        Some(gt) => gt.map,
        None => read_json::<RunConfig>(&result_dir.join(CONFIG_FILE))
            .map(|c| c.chain.map)
            .unwrap_or_default(),
    };
    let mut images = Vec::new();
    let mut tables = Vec::new();
    let mut push = |stem: &str| {
        images.push(out.join(format!("{stem}.ppm")));
        tables.push(out.join(format!("{stem}.csv")));
    };

    let co = DMatrix::from_fn(v, v, |i, j| if p.label(i) == p.label(j) { 1.0 } else { 0.0 });
    write_heatmap(out, "topology", &co, Scale::Sequential)?;
    push("topology");
    let nodes = crate::edges::NodeCount::new(v)?;
    let est_lambda = crate::covariance::build_dense(p, &est.summary.rho_params(), 0.0, nodes, entry_map)?;
    write_heatmap(out, "lambda_hat", &est_lambda, Scale::Sequential)?;
    push("lambda_hat");
    if let Some(gt) = &map {
        let true_lambda = gt.lambda_matrix()?;
        if true_lambda.shape() != est_lambda.shape() {
            return Err(Error::DimensionMismatch("truth and estimate differ in size".into()));
        }
        write_heatmap(out, "lambda_true", &true_lambda, Scale::Sequential)?;
        push("lambda_true");
        write_heatmap(out, "lambda_diff", &(&true_lambda - &est_lambda), Scale::Diverging)?;
        push("lambda_diff");
    }

    let trace_path = result_dir.join(TRACE_FILE);
    let table = crate::io::read_csv_table_columns(&trace_path, &["iteration", "loglik"])?;
    let burn_in = read_json::<RunConfig>(&result_dir.join(CONFIG_FILE))
        .map(|c| c.chain.burn_in)
        .ok();
    let loglik: Vec<f64> = table.iter().map(|r| r[1]).collect();
    write_atomic(&out.join("trace_loglik.ppm"), &trace_ppm(&loglik, burn_in, 800, 300))?;
    let mut csv = String::from("iteration,loglik\n");
    for r in &table {
        csv.push_str(&format!("{},{}\n", r[0], crate::io::fmt_f64(r[1])));
    }
    write_atomic(&out.join("trace_loglik.csv"), csv.as_bytes())?;
    images.push(out.join("trace_loglik.ppm"));
    tables.push(out.join("trace_loglik.csv"));
    Ok(ReportFiles { images, tables })
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    /// Arguments after the program name, enough to rerun the command.
    pub argv: Vec<String>,
    pub inputs: Vec<PathBuf>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub wall_time_seconds: f64,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }
}
