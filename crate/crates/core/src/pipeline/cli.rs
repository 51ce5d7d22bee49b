//! Command-line front end. Every command writes `manifest.json` into its
//! output directory; failures print one JSON line on stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::covariance::EntryMap;
use crate::error::{Error, Result};
use crate::modelselect::ConvergenceRule;
use crate::sampler::{InitPolicy, MHConfig};
use crate::simgen::{Arrangement, TruthSpec};

use super::features::PlantedBlocks;
use super::{
    run_evaluate, run_generate, run_infer, run_report, run_scan, InputSpec, Manifest, RunConfig,
    StartPolicy, SUMMARY_FILE, TOOL_VERSION,
};

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "EDGENET_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "edgenet", version, about = "Latent node partitions from edge-level connectivity data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate subjects from a block-structured edge covariance.
    Generate(GenerateArgs),
    /// Run one Metropolis-Hastings chain.
    Infer(InferArgs),
    /// Run one chain per K and compare them by WAIC.
    ScanK(ScanArgs),
    /// Score an estimate against a ground truth.
    Evaluate(EvaluateArgs),
    /// Draw heatmaps and the log-likelihood trace of a result directory.
    Report(ReportArgs),
    /// Write a synthetic region table with planted blocks.
    SynthFeatures(SynthArgs),
}

#[derive(Debug, Args, Serialize)]
struct GenerateArgs {
    #[arg(long)]
    nodes: usize,
    /// Group sizes, e.g. 3,3,4.
    #[arg(long, value_delimiter = ',', required = true)]
    groups: Vec<usize>,
    /// Within-group parameters, one per group.
    #[arg(long, value_delimiter = ',', required = true)]
    rho: Vec<f64>,
    /// Between-group parameter; 2.0 for the exponential map and 0 for identity.
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[arg(long, default_value = "exponential")]
    map: EntryMap,
    /// clustered or scattered.
    #[arg(long, default_value = "clustered")]
    arrangement: String,
    /// Shuffle seed for scattered layouts without a reference vector.
    #[arg(long, default_value_t = 0)]
    layout_seed: u64,
    #[arg(long, default_value_t = 632)]
    subjects: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[group(id = "input", required = true, multiple = false)]
struct InputArgs {
    /// Subject-by-edge matrix (CSV with header).
    #[arg(long, group = "input")]
    input_r: Option<PathBuf>,
    /// Subject-by-region table (CSV with header); standardized before use.
    #[arg(long, group = "input")]
    input_features: Option<PathBuf>,
}

impl InputArgs {
    fn spec(&self) -> InputSpec {
        match (&self.input_r, &self.input_features) {
            (Some(path), _) => InputSpec::EdgeMatrix { path: path.clone() },
            (None, Some(path)) => InputSpec::Features { path: path.clone() },
            (None, None) => unreachable!("clap enforces one input"),
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct ChainArgs {
    #[arg(long, default_value_t = 2500)]
    iters: usize,
    #[arg(long, default_value_t = 500)]
    burn_in: usize,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[arg(long, default_value_t = 0.25)]
    prior_mean: f64,
    #[arg(long, default_value_t = 0.01)]
    prior_sd: f64,
    #[arg(long, default_value_t = 0.01)]
    step_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "exponential")]
    map: EntryMap,
    /// strict (classes of at least 3) or relaxed (at least 2).
    #[arg(long, default_value = "strict")]
    init: InitPolicy,
    /// Hold rho_0 at this value instead of sampling it.
    #[arg(long, allow_hyphen_values = true)]
    fixed_rho0: Option<f64>,
    /// auto, random or kmeans.
    #[arg(long, default_value = "auto")]
    start: StartPolicy,
    #[arg(long, default_value_t = 0.0)]
    rho_init_min: f64,
    #[arg(long, default_value_t = 0.5)]
    rho_init_max: f64,
    /// Split-half z threshold of the convergence flag.
    #[arg(long, default_value_t = 3.0)]
    split_z: f64,
}

impl ChainArgs {
    fn config(&self, k: usize) -> MHConfig {
        MHConfig {
            k,
            iters: self.iters,
            burn_in: self.burn_in,
            lambda: self.lambda,
            prior_mean: self.prior_mean,
            prior_sd: self.prior_sd,
            step_sd: self.step_sd,
            rho_init_range: (self.rho_init_min, self.rho_init_max),
            seed: self.seed,
            map: self.map,
            init: self.init,
            record_pointwise: true,
            fixed_rho0: self.fixed_rho0,
        }
    }

    fn rule(&self, require_negative_waic: bool) -> ConvergenceRule {
        ConvergenceRule {
            split_z: self.split_z,
            require_negative_waic,
            ..ConvergenceRule::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct InferArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    k: usize,
    #[command(flatten)]
    chain: ChainArgs,
    /// Also flag the chain as non-converged when its WAIC is not negative.
    #[arg(long)]
    require_negative_waic: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ScanArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    k_min: usize,
    #[arg(long)]
    k_max: usize,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    chain: ChainArgs,
    /// Keep rows with a non-negative WAIC eligible (by default they are
    /// reported as non-converged, since ln(-WAIC) is undefined for them).
    #[arg(long)]
    allow_nonnegative_waic: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    /// truth.json written by `generate`.
    #[arg(long)]
    truth: PathBuf,
    /// summary.json written by `infer`, or its directory.
    #[arg(long)]
    estimate: PathBuf,
    /// Entries with absolute value above this count as support.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Defaults to `evaluation/` next to the estimate.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    /// Directory written by `infer`.
    #[arg(long)]
    result: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Defaults to `<result>/figures`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 632)]
    subjects: usize,
    #[arg(long, default_value_t = 0.85)]
    within: f64,
    #[arg(long, default_value_t = 0.15)]
    between: f64,
    #[arg(long, default_value_t = 20250101)]
    seed: u64,
    /// Output CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_out(command: &str) -> PathBuf {
    let root = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("edgenet-out"));
    root.join(command)
}

fn parse_arrangement(s: &str, seed: u64) -> Result<Arrangement> {
    match s.to_ascii_lowercase().as_str() {
        "clustered" => Ok(Arrangement::Clustered),
        "scattered" => Ok(Arrangement::Scattered { seed }),
        other => Err(Error::InvalidArgument(format!(
            "unknown arrangement `{other}` (expected clustered or scattered)"
        ))),
    }
}

struct Done {
    out_dir: PathBuf,
    inputs: Vec<PathBuf>,
    config: serde_json::Value,
    seed: Option<u64>,
    message: String,
}

fn to_value<T: Serialize>(x: &T) -> serde_json::Value {
    serde_json::to_value(x).unwrap_or(serde_json::Value::Null)
}

fn generate_cmd(a: GenerateArgs) -> Result<Done> {
    if a.groups.iter().sum::<usize>() != a.nodes {
        return Err(Error::InvalidArgument(format!(
            "group sizes {:?} sum to {}, not --nodes {}",
            a.groups,
            a.groups.iter().sum::<usize>(),
            a.nodes
        )));
    }
    let rho0 = a.rho0.unwrap_or(match a.map {
        EntryMap::Exponential => 2.0,
        EntryMap::Identity => 0.0,
    });
    let spec = TruthSpec {
        sizes: a.groups.clone(),
        rho: a.rho.clone(),
        rho0,
        lambda: a.lambda,
        map: a.map,
        arrangement: parse_arrangement(&a.arrangement, a.layout_seed)?,
    };
    let out = a.out.clone().unwrap_or_else(|| default_out("generate"));
    let (_, data) = run_generate(&spec, a.subjects, a.seed, &out)?;
    Ok(Done {
        message: format!(
            "wrote {} subjects x {} edges to {}",
            data.subjects(),
            data.edges(),
            out.display()
        ),
        out_dir: out,
        inputs: vec![],
        config: serde_json::json!({ "args": to_value(&a), "truth_spec": to_value(&spec) }),
        seed: Some(a.seed),
    })
}

fn infer_cmd(a: InferArgs) -> Result<Done> {
    let out = a.out.clone().unwrap_or_else(|| default_out("infer"));
    let cfg = RunConfig {
        input: a.input.spec(),
        out_dir: out.clone(),
        chain: a.chain.config(a.k),
        start: a.chain.start,
        convergence: a.chain.rule(a.require_negative_waic),
        k_range: None,
        threads: None,
    };
    let r = run_infer(&cfg)?;
    let waic = r.waic.map(|w| format!("{w:.6e}")).unwrap_or_else(|| "n/a".into());
    Ok(Done {
        message: format!(
            "K_hat = {}, converged = {}, WAIC = {waic}, dropped rows = {}, results in {}",
            r.summary.k_hat,
            r.converged,
            r.dropped_rows,
            out.display()
        ),
        out_dir: out,
        inputs: vec![cfg.input.path().to_path_buf()],
        config: to_value(&cfg),
        seed: Some(cfg.chain.seed),
    })
}

fn scan_cmd(a: ScanArgs) -> Result<Done> {
    let out = a.out.clone().unwrap_or_else(|| default_out("scan-k"));
    let cfg = RunConfig {
        input: a.input.spec(),
        out_dir: out.clone(),
        chain: a.chain.config(a.k_min),
        start: a.chain.start,
        convergence: a.chain.rule(!a.allow_nonnegative_waic),
        k_range: Some((a.k_min, a.k_max)),
        threads: a.threads,
    };
    let r = run_scan(&cfg)?;
    let mut message = String::from("K  WAIC  log(-WAIC)  K_hat  converged\n");
    for row in &r.rows {
        let w = row.waic.map(|w| format!("{w:.6e}")).unwrap_or_else(|| "-".into());
        let l = row.log_neg_waic.map(|w| format!("{w:.7}")).unwrap_or_else(|| "-".into());
        let kh = row.k_hat.map(|k| k.to_string()).unwrap_or_else(|| "-".into());
        message.push_str(&format!("{}  {w}  {l}  {kh}  {}\n", row.k, row.converged));
    }
    match r.recommended_k {
        Some(k) => message.push_str(&format!("recommended K = {k}; results in {}", out.display())),
        None => message.push_str(&format!("no converged K; results in {}", out.display())),
    }
    Ok(Done {
        message,
        out_dir: out,
        inputs: vec![cfg.input.path().to_path_buf()],
        config: to_value(&cfg),
        seed: Some(cfg.chain.seed),
    })
}

fn summary_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(SUMMARY_FILE)
    } else {
        p.to_path_buf()
    }
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<Done> {
    let estimate = summary_path(&a.estimate);
    let out = a.out.clone().unwrap_or_else(|| {
        estimate
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
            .join("evaluation")
    });
    let m = run_evaluate(&a.truth, &estimate, a.tol, &out)?;
    Ok(Done {
        message: serde_json::to_string(&m).unwrap_or_default(),
        out_dir: out,
        inputs: vec![a.truth.clone(), estimate],
        config: to_value(&a),
        seed: None,
    })
}

fn report_cmd(a: ReportArgs) -> Result<Done> {
    let out = a.out.clone().unwrap_or_else(|| a.result.join("figures"));
    let files = run_report(&a.result, a.truth.as_deref(), &out)?;
    let mut inputs = vec![a.result.clone()];
    inputs.extend(a.truth.clone());
    Ok(Done {
        message: format!("wrote {} images to {}", files.images.len(), out.display()),
        out_dir: out,
        inputs,
        config: to_value(&a),
        seed: None,
    })
}

fn synth_cmd(a: SynthArgs) -> Result<Done> {
    let file = a.out.clone().unwrap_or_else(|| default_out("synth-features").join("features.csv"));
    let spec = PlantedBlocks {
        subjects: a.subjects,
        within: a.within,
        between: a.between,
        ..PlantedBlocks::cortical_20()
    };
    let table = spec.sample(&mut ChaCha8Rng::seed_from_u64(a.seed))?;
    table.write_csv(&file)?;
    let dir = file
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(Done {
        message: format!("wrote {} x {} synthetic table to {}", table.subjects(), table.regions(), file.display()),
        out_dir: dir,
        inputs: vec![],
        config: to_value(&a),
        seed: Some(a.seed),
    })
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

/// Runs the CLI on `argv` (program name first) and returns the exit code:
/// 0 on success, 1 for a failed command and 2 for a usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let kind = match e.kind() {
                ErrorKind::UnknownArgument => "unknown_argument",
                ErrorKind::MissingRequiredArgument => "missing_argument",
                ErrorKind::InvalidValue | ErrorKind::ValueValidation => "invalid_value",
                ErrorKind::InvalidSubcommand => "unknown_command",
                ErrorKind::ArgumentConflict => "argument_conflict",
                _ => "usage",
            };
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", error_line(kind, first));
            return 2;
        }
    };
    let started = Instant::now();
    let (name, result) = match cli.command {
        Command::Generate(a) => ("generate", generate_cmd(a)),
        Command::Infer(a) => ("infer", infer_cmd(a)),
        Command::ScanK(a) => ("scan-k", scan_cmd(a)),
        Command::Evaluate(a) => ("evaluate", evaluate_cmd(a)),
        Command::Report(a) => ("report", report_cmd(a)),
        Command::SynthFeatures(a) => ("synth-features", synth_cmd(a)),
    };
    let done = result.and_then(|d| {
        Manifest {
            command: name.into(),
            tool_version: TOOL_VERSION.into(),
            argv: argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(),
            inputs: d.inputs.clone(),
            config: d.config.clone(),
            seed: d.seed,
            wall_time_seconds: started.elapsed().as_secs_f64(),
        }
        .write(&d.out_dir)?;
        Ok(d)
    });
    match done {
        Ok(d) => {
            println!("{}", d.message);
            0
        }
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            1
        }
    }
}
