//! Command-line front end: loads configs, runs scenario packs and writes
//! result tables.

pub mod pack;
pub mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use edgesim::arch::{validate, ArchConfig};
use edgesim::calibrate::{calibrate, Grid, Setup, Targets};
use edgesim::pipeline::{balance_length, compare_homo_hetero, pipeline_simulate, SimOptions};
use edgesim::pruning::{kurtosis, pruned_ffn_eval, FfnWeights, LayerRatios, PruneParams};
use edgesim::trace::{ActivationTrace, TraceRecipe};
use edgesim::workload::{Activation, ModelConfig, Scenario};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::pack::{check_scenarios, ScenarioPack};
use crate::report::{rows, summarize, write_atomic, write_rows, ScenarioResult, ScenarioSummary};

/// Prints a line to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

pub const EXIT_INVALID: u8 = 2;
pub const EXIT_OVERFLOW: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "edgesim", version, about = "Heterogeneous edge MLLM accelerator simulator")]
pub struct Cli {
    /// Directory holding the default arch, model, scenario and trace files.
    #[arg(long, global = true, env = "EDGESIM_CONFIG_DIR", default_value = "configs")]
    pub config_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the explicit scenarios of a pack.
    Run(RunArgs),
    /// Simulate every scenario and sweep grid of a pack concurrently.
    Sweep(RunArgs),
    /// Write a synthetic activation trace.
    GenTrace(GenTraceArgs),
    /// Check configs without simulating.
    Validate(ConfigArgs),
    /// Fit DMA overhead, throttle interval and coprocessor sizes.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub arch: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub configs: ConfigArgs,
    /// Seed for trace generation and the FFN weights used to derive prune ratios.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TraceFormat {
    Text,
    Binary,
}

#[derive(Debug, Args)]
pub struct GenTraceArgs {
    /// Recipe to start from; defaults to `traces/synthetic.toml`.
    #[arg(long)]
    pub recipe: Option<PathBuf>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_ffn: Option<usize>,
    #[arg(long)]
    pub tokens: Option<usize>,
    /// Comma-separated per-layer kurtosis targets.
    #[arg(long, value_delimiter = ',')]
    pub schedule: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to binary for `.bin` paths and text otherwise.
    #[arg(long, value_enum)]
    pub format: Option<TraceFormat>,
    /// Also run the pruning evaluation and print per-layer prune ratios.
    #[arg(long)]
    pub eval: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub arch: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Grid of candidate values; defaults to `calibration/grid.toml`.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value = "calibration")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Invalid(String),
    Overflow(String),
    Other(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => EXIT_INVALID,
            Failure::Overflow(_) => EXIT_OVERFLOW,
            Failure::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Invalid(m) => write!(f, "{m}"),
            Failure::Overflow(m) => write!(f, "simulation overflow: {m}"),
            Failure::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<edgesim::Error> for Failure {
    fn from(e: edgesim::Error) -> Self {
        use edgesim::Error as E;
        match e {
            E::Overflow(_) => Failure::Overflow(e.to_string()),
            E::InvalidConfig(_) | E::Parse(_) | E::RatioOutOfRange(_) | E::InvalidDimension(_) | E::TraceFormat(_) => {
                Failure::Invalid(e.to_string())
            }
            other => Failure::Other(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn read_config(path: &Path, what: &str) -> Outcome<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("cannot read {what} {}: {e}", path.display())))
}

fn resolve(given: &Option<PathBuf>, dir: &Path, default: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| dir.join(default))
}

fn load_arch(path: &Path) -> Outcome<(ArchConfig, String)> {
    let text = read_config(path, "arch config")?;
    let arch = ArchConfig::from_toml_str(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    let report = validate(&arch);
    if !report.is_ok() {
        return Err(Failure::Invalid(format!("{}:\n{report}", path.display())));
    }
    Ok((arch, text))
}

fn load_model(path: &Path) -> Outcome<(ModelConfig, String)> {
    let text = read_config(path, "model config")?;
    let model = ModelConfig::from_toml_str(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    model
        .validate()
        .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    Ok((model, text))
}

fn load_pack(path: &Path) -> Outcome<(ScenarioPack, String)> {
    let text = read_config(path, "scenario pack")?;
    let pack = ScenarioPack::from_toml_str(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    Ok((pack, text))
}

/// Hex SHA-256 over every input file and the seed.
pub fn manifest_hash(parts: &[(&str, &[u8])], seed: u64) -> String {
    let mut h = Sha256::new();
    for (label, bytes) in parts {
        h.update(label.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    h.update(b"seed\0");
    h.update(seed.to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Source of per-layer prune ratios referenced by a pack.
struct TraceSource {
    path: PathBuf,
    bytes: Vec<u8>,
    recipe: Option<TraceRecipe>,
}

impl TraceSource {
    fn load(path: PathBuf) -> Outcome<Self> {
        let bytes =
            std::fs::read(&path).map_err(|e| Failure::Invalid(format!("cannot read trace {}: {e}", path.display())))?;
        let recipe = if path.extension().is_some_and(|e| e == "toml") {
            let text = String::from_utf8_lossy(&bytes);
            let r =
                TraceRecipe::from_toml_str(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
            if r.kurtosis_schedule.len() != r.layers {
                return Err(Failure::Invalid(format!(
                    "{}: kurtosis schedule has {} entries for {} layers",
                    path.display(),
                    r.kurtosis_schedule.len(),
                    r.layers
                )));
            }
            Some(r)
        } else {
            None
        };
        Ok(Self { path, bytes, recipe })
    }

    fn default_seed(&self) -> u64 {
        self.recipe.as_ref().map_or(0, |r| r.seed)
    }

    /// Mean realized prune ratios per layer on the trace.
    fn ratios(&self, seed: u64) -> Outcome<LayerRatios> {
        let (trace, cores) = match &self.recipe {
            Some(r) => {
                let recipe = TraceRecipe { seed, ..r.clone() };
                (recipe.generate()?, r.cores)
            }
            None => (ActivationTrace::load(&self.path)?, PruneParams::default().cores),
        };
        let weights = FfnWeights::random_stack(trace.layers, trace.d_model, trace.d_ffn, Activation::Silu, seed);
        let params = PruneParams {
            cores,
            ..PruneParams::default()
        };
        let report = pruned_ffn_eval(&trace, &weights, &params)?;
        Ok(LayerRatios {
            vx: report.vx_ratios(),
            vd: None,
        })
    }
}

fn thread_pool(jobs: usize) -> anyhow::Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building worker pool")
}

fn simulate(
    model: &ModelConfig,
    arch: &ArchConfig,
    scen: &Scenario,
    opts: &SimOptions,
    compare: bool,
) -> Outcome<ScenarioResult> {
    let (plan, comparison) = if compare {
        let cmp = compare_homo_hetero(model, arch, scen, opts)?;
        (cmp.plan.clone(), Some(cmp))
    } else {
        (pipeline_simulate(model, arch, scen, opts)?, None)
    };
    let balance = match balance_length(model, arch, scen, opts) {
        Ok(b) => Some(b),
        Err(edgesim::Error::DegenerateDecode) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(ScenarioResult {
        plan,
        comparison,
        balance,
    })
}

fn run_pack(cli: &Cli, args: &RunArgs, with_sweeps: bool) -> Outcome<()> {
    let dir = &cli.config_dir;
    let arch_path = resolve(&args.configs.arch, dir, "arch/default.toml");
    let model_path = resolve(&args.configs.model, dir, "models/sphinx-tiny.toml");
    let pack_path = resolve(&args.configs.scenario, dir, "scenarios/compare.toml");
    let (arch, arch_text) = load_arch(&arch_path)?;
    let (model, model_text) = load_model(&model_path)?;
    let (pack, pack_text) = load_pack(&pack_path)?;
    let trace = pack.trace_path(&pack_path).map(TraceSource::load).transpose()?;
    let scenarios = pack.scenarios(with_sweeps);
    let problems = check_scenarios(&scenarios);
    if !problems.is_empty() {
        return Err(Failure::Invalid(format!(
            "{}:\n  {}",
            pack_path.display(),
            problems.join("\n  ")
        )));
    }
    if !with_sweeps && !pack.sweep.is_empty() {
        eprintln!(
            "warning: {} sweep grid(s) ignored by `run`; use `sweep`",
            pack.sweep.len()
        );
    }
    if scenarios.is_empty() {
        eprintln!("warning: {} lists no scenarios; nothing written", pack_path.display());
        return Ok(());
    }
    let seed = args
        .seed
        .unwrap_or_else(|| trace.as_ref().map_or(0, TraceSource::default_seed));
    let mut parts: Vec<(&str, &[u8])> = vec![
        ("arch", arch_text.as_bytes()),
        ("model", model_text.as_bytes()),
        ("scenario", pack_text.as_bytes()),
    ];
    if let Some(t) = &trace {
        parts.push(("trace", &t.bytes));
    }
    let hash = manifest_hash(&parts, seed);

    let needs_trace = scenarios.iter().any(|s| s.pruning_enabled && s.prune_ratio.is_none());
    let trace_ratios = match (&trace, needs_trace) {
        (Some(t), true) => Some(t.ratios(seed)?),
        _ => None,
    };
    let opts = SimOptions {
        ratio_set: pack
            .ratio_set
            .clone()
            .unwrap_or_else(|| SimOptions::default().ratio_set),
        trace_ratios,
    };

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let pool = thread_pool(if with_sweeps { args.jobs } else { 1 })?;
    let summaries: Vec<ScenarioSummary> = pool.install(|| {
        scenarios
            .par_iter()
            .map(|scen| -> Outcome<ScenarioSummary> {
                let result = simulate(&model, &arch, scen, &opts, pack.compare)?;
                let mut buf = Vec::new();
                write_rows(&mut buf, &rows(&result, arch.clock_hz, &hash)).context("formatting results")?;
                let path = args.out.join(format!("{}.csv", scen.id));
                write_atomic(&path, &buf).with_context(|| format!("writing {}", path.display()))?;
                Ok(summarize(&result, scen.input_tokens))
            })
            .collect::<Outcome<Vec<_>>>()
    })?;

    if with_sweeps {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for s in &summaries {
            writer.serialize(s).context("formatting sweep table")?;
        }
        let buf = writer
            .into_inner()
            .map_err(|e| anyhow::anyhow!("formatting sweep table: {e}"))?;
        write_atomic(&args.out.join("sweep.csv"), &buf).context("writing sweep.csv")?;
    }
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let summary = serde_json::json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "timestamp_unix_s": timestamp,
        "manifest": {
            "arch": arch_path,
            "model": model_path,
            "scenario": pack_path,
            "trace": trace.as_ref().map(|t| &t.path),
            "seed": seed,
            "out": args.out,
        },
        "manifest_hash": hash,
        "scenarios": summaries,
    });
    let text = serde_json::to_vec_pretty(&summary).context("formatting summary")?;
    write_atomic(&args.out.join("summary.json"), &text).context("writing summary.json")?;
    for s in &summaries {
        say!(
            "{}: ratio {} latency {:.3} ms throughput {:.1} tok/s",
            s.scenario_id,
            s.bw_ratio,
            s.latency_ms,
            s.throughput_tokens_per_s
        );
    }
    Ok(())
}

fn gen_trace(cli: &Cli, args: &GenTraceArgs) -> Outcome<()> {
    let recipe_path = resolve(&args.recipe, &cli.config_dir, "traces/synthetic.toml");
    let mut recipe = if args.recipe.is_some() || recipe_path.exists() {
        let text = read_config(&recipe_path, "trace recipe")?;
        TraceRecipe::from_toml_str(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", recipe_path.display())))?
    } else {
        TraceRecipe::shipped()
    };
    if let Some(v) = args.layers {
        recipe.layers = v;
    }
    if let Some(v) = args.d_model {
        recipe.d_model = v;
    }
    if let Some(v) = args.d_ffn {
        recipe.d_ffn = v;
    }
    if let Some(v) = args.tokens {
        recipe.tokens = v;
    }
    if let Some(v) = &args.schedule {
        recipe.kurtosis_schedule = v.clone();
    }
    if let Some(v) = args.seed {
        recipe.seed = v;
    }
    let trace = recipe.generate()?;
    let binary = match args.format {
        Some(f) => f == TraceFormat::Binary,
        None => args.out.extension().is_some_and(|e| e == "bin"),
    };
    let mut buf = Vec::new();
    if binary {
        trace.write_binary(&mut buf)?;
    } else {
        trace.write_text(&mut buf)?;
    }
    write_atomic(&args.out, &buf).with_context(|| format!("writing {}", args.out.display()))?;

    let ratios = if args.eval {
        let weights = FfnWeights::random_stack(trace.layers, trace.d_model, trace.d_ffn, Activation::Silu, recipe.seed);
        let params = PruneParams {
            cores: recipe.cores,
            ..PruneParams::default()
        };
        Some(pruned_ffn_eval(&trace, &weights, &params)?.vx_ratios())
    } else {
        None
    };
    say!(
        "layer target_kurtosis measured_kurtosis{}",
        if args.eval { " prune_ratio" } else { "" }
    );
    for layer in 0..trace.layers {
        let mut sum = 0.0;
        for t in 0..trace.tokens {
            let v: Vec<f64> = trace.vx(t, layer).iter().map(|&x| f64::from(x)).collect();
            sum += kurtosis(&v)?;
        }
        let measured = sum / trace.tokens as f64;
        let target = recipe.kurtosis_schedule[layer];
        match &ratios {
            Some(r) => say!("{layer} {target:.3} {measured:.3} {:.4}", r[layer]),
            None => say!("{layer} {target:.3} {measured:.3}"),
        }
    }
    Ok(())
}

fn validate_configs(cli: &Cli, args: &ConfigArgs) -> Outcome<()> {
    let dir = &cli.config_dir;
    let arch_path = resolve(&args.arch, dir, "arch/default.toml");
    let model_path = resolve(&args.model, dir, "models/sphinx-tiny.toml");
    let pack_path = resolve(&args.scenario, dir, "scenarios/compare.toml");
    let mut problems = Vec::new();
    let mut note = |r: Outcome<()>| {
        if let Err(e) = r {
            problems.push(e.to_string());
        }
    };
    note(load_arch(&arch_path).map(|_| ()));
    note(load_model(&model_path).map(|_| ()));
    note(load_pack(&pack_path).and_then(|(pack, _)| {
        if let Some(t) = pack.trace_path(&pack_path) {
            TraceSource::load(t)?;
        }
        let issues = check_scenarios(&pack.scenarios(true));
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Failure::Invalid(format!(
                "{}:\n  {}",
                pack_path.display(),
                issues.join("\n  ")
            )))
        }
    }));
    if problems.is_empty() {
        say!(
            "ok: {}, {}, {}",
            arch_path.display(),
            model_path.display(),
            pack_path.display()
        );
        Ok(())
    } else {
        Err(Failure::Invalid(problems.join("\n")))
    }
}

/// One calibration candidate as a flat table row.
#[derive(serde::Serialize)]
struct CandidateRow {
    dma_overhead_bytes: f64,
    cim_cols: u32,
    cim_depth: u32,
    sa_dim: u32,
    throttle_interval_cycles: u64,
    gemm_cc_over_mc: f64,
    gemv_mc_over_cc: f64,
    hetero_over_homo_cc: f64,
    hetero_over_homo_mc: f64,
    l_e: u64,
    latency_cut: f64,
    throughput_gain: f64,
    batch_throughput_gain: f64,
    batch_latency_overhead: f64,
    score: f64,
    misses: String,
}

fn run_calibrate(cli: &Cli, args: &CalibrateArgs) -> Outcome<()> {
    let dir = &cli.config_dir;
    let arch_path = resolve(&args.arch, dir, "arch/default.toml");
    let (base, _) = load_arch(&arch_path)?;
    let mut setup = Setup::default();
    if let Some(p) = &args.model {
        setup.model = load_model(p)?.0;
    }
    let grid_path = resolve(&args.grid, dir, "calibration/grid.toml");
    let grid = if args.grid.is_some() || grid_path.exists() {
        let text = read_config(&grid_path, "calibration grid")?;
        toml::from_str::<Grid>(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", grid_path.display())))?
    } else {
        Grid::default()
    };
    let cal = thread_pool(args.jobs)?.install(|| calibrate(&base, &setup, &grid, &Targets::default()))?;

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    for c in &cal.candidates {
        let (cols, depth) = match c.arch.mc_cluster.coproc {
            edgesim::arch::Coproc::Cim(cim) => (cim.cols, cim.depth),
            _ => (0, 0),
        };
        let sa_dim = match c.arch.cc_cluster.coproc {
            edgesim::arch::Coproc::Systolic(sa) => sa.rows,
            _ => 0,
        };
        let m = &c.metrics;
        writer
            .serialize(CandidateRow {
                dma_overhead_bytes: c.arch.dma_overhead_bytes,
                cim_cols: cols,
                cim_depth: depth,
                sa_dim,
                throttle_interval_cycles: c.arch.throttle_interval_cycles,
                gemm_cc_over_mc: m.gemm_cc_over_mc,
                gemv_mc_over_cc: m.gemv_mc_over_cc,
                hetero_over_homo_cc: m.hetero_over_homo_cc,
                hetero_over_homo_mc: m.hetero_over_homo_mc,
                l_e: m.l_e,
                latency_cut: m.latency_cut,
                throughput_gain: m.throughput_gain,
                batch_throughput_gain: m.batch_throughput_gain,
                batch_latency_overhead: m.batch_latency_overhead,
                score: c.score,
                misses: c.misses.join("; "),
            })
            .context("formatting calibration table")?;
    }
    let buf = writer
        .into_inner()
        .map_err(|e| anyhow::anyhow!("formatting calibration table: {e}"))?;
    write_atomic(&args.out.join("candidates.csv"), &buf).context("writing candidates.csv")?;
    let arch_text = cal.best.arch.to_toml_string()?;
    write_atomic(&args.out.join("arch.toml"), arch_text.as_bytes()).context("writing arch.toml")?;

    let m = &cal.best.metrics;
    say!(
        "evaluated {} candidates; best score {:.4}",
        cal.candidates.len(),
        cal.best.score
    );
    say!(
        "dma overhead {} B, throttle interval {} cycles",
        cal.best.arch.dma_overhead_bytes,
        cal.best.arch.throttle_interval_cycles
    );
    say!(
        "gemm cc/mc {:.2}, gemv mc/cc {:.2}, hetero/homo-cc {:.2}, hetero/homo-mc {:.2}",
        m.gemm_cc_over_mc,
        m.gemv_mc_over_cc,
        m.hetero_over_homo_cc,
        m.hetero_over_homo_mc
    );
    say!(
        "l_e {}, latency cut {:.1}%, throughput x{:.2}, batched throughput x{:.2} at +{:.1}% latency",
        m.l_e,
        100.0 * m.latency_cut,
        m.throughput_gain,
        m.batch_throughput_gain,
        100.0 * m.batch_latency_overhead
    );
    if !cal.best.misses.is_empty() {
        eprintln!("warning: best candidate misses {}", cal.best.misses.join(", "));
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Outcome<()> {
    match &cli.command {
        Command::Run(a) => run_pack(cli, a, false),
        Command::Sweep(a) => run_pack(cli, a, true),
        Command::GenTrace(a) => gen_trace(cli, a),
        Command::Validate(a) => validate_configs(cli, a),
        Command::Calibrate(a) => run_calibrate(cli, a),
    }
}

pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
