use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use spectest::constraints::{EdgeSet, HypothesisModel};
use spectest::divergence::DiscrepancyKind;
use spectest::io::{flat_json, fmt_sig, ingest_csv, summaries_to_csv, write_output, RunManifest};
use spectest::simlab::{null_summary, size_adjusted_power, McConfig, McSummary, VarOneProcess, DEFAULT_BURN_IN};
use spectest::spectra::{cvll_select, default_cvll_grid, KernelShape};
use spectest::statistics::{run_test, Bandwidth, StatisticForm, StatisticVariant, TestConfig, TestReport};

const EXIT_ERROR: u8 = 1;
const EXIT_FORCED: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "spectest", version, about = "Frequency-domain tests of structure in multivariate time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Test a hypothesis on a CSV sample.
    Test(TestArgs),
    /// Null-distribution summaries on the trivariate VAR(1) design.
    SimulateNull(SimulateNullArgs),
    /// Size-adjusted power on the trivariate VAR(1) design.
    SimulatePower(SimulatePowerArgs),
    /// Cross-validated bandwidth selection.
    Cvll(CvllArgs),
    /// Print the kernel constants Cu, Du, Bu.
    KernelConstants(KernelArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Hypothesis {
    Independence,
    Separable,
    Graphical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "independence")]
    hypothesis: Hypothesis,
    /// Edges of the graphical hypothesis as 1-based pairs, e.g. 1-2,2-3.
    #[arg(long)]
    edges: Option<String>,
}

#[derive(Debug, Args)]
struct StatArgs {
    /// Discrepancy: kl, j, chernoff or chernoff:<alpha>.
    #[arg(long, default_value = "kl")]
    kind: String,
    #[arg(long)]
    chernoff_alpha: Option<f64>,
    #[arg(long, value_enum, default_value = "flat")]
    kernel: KernelArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KernelArg {
    Flat,
    RaisedCosine,
}

impl From<KernelArg> for KernelShape {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Flat => KernelShape::Flat,
            KernelArg::RaisedCosine => KernelShape::RaisedCosine,
        }
    }
}

#[derive(Debug, Args)]
struct BandwidthArgs {
    /// Even smoothing bandwidth.
    #[arg(long, conflicts_with = "cvll")]
    m: Option<usize>,
    /// Select the bandwidth by cross-validated log-likelihood.
    #[arg(long)]
    cvll: bool,
}

#[derive(Debug, Args)]
struct TestArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// full, quadratic or block.
    #[arg(long, default_value = "full")]
    stat: String,
    #[command(flatten)]
    stat_args: StatArgs,
    #[command(flatten)]
    bandwidth: BandwidthArgs,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Recorded in the report; the test itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_demean: bool,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long)]
    n: usize,
    #[command(flatten)]
    bandwidth: BandwidthArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated statistics.
    #[arg(long, default_value = "full,quadratic,block")]
    stat: String,
    #[command(flatten)]
    stat_args: StatArgs,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to SPECTEST_THREADS or all cores.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    no_demean: bool,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Args)]
struct SimulateNullArgs {
    /// Coupling of the VAR(1) design.
    #[arg(long, default_value_t = 0.0)]
    phi: f64,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Debug, Args)]
struct SimulatePowerArgs {
    #[arg(long, default_value_t = 0.0)]
    phi0: f64,
    #[arg(long)]
    phi1: f64,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Debug, Args)]
struct CvllArgs {
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated even bandwidths; defaults to the built-in grid.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    no_demean: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KernelArgs {
    #[arg(long, value_enum, default_value = "flat")]
    kernel: KernelArg,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<spectest::Error> for Failure {
    fn from(e: spectest::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            eprintln!("{}", Cli::command().render_help());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match dispatch(cli.command) {
        Ok(forced) if forced => ExitCode::from(EXIT_FORCED),
        Ok(_) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            eprintln!("{}", Cli::command().render_help());
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

/// Returns whether a rejection was forced by a non-PD restricted estimate.
fn dispatch(command: Command) -> Result<bool, Failure> {
    match command {
        Command::Test(args) => cmd_test(args),
        Command::SimulateNull(args) => cmd_simulate_null(args).map(|_| false),
        Command::SimulatePower(args) => cmd_simulate_power(args).map(|_| false),
        Command::Cvll(args) => cmd_cvll(args).map(|_| false),
        Command::KernelConstants(args) => {
            let k = KernelShape::from(args.kernel).constants();
            println!("Cu={} Du={} Bu={}", fmt_sig(k.cu), fmt_sig(k.du), fmt_sig(k.bu));
            Ok(false)
        }
    }
}

fn check_edges(args: &ModelArgs) -> Result<(), Failure> {
    match (args.hypothesis, &args.edges) {
        (Hypothesis::Graphical, None) => Err(Failure::Usage("--hypothesis graphical needs --edges".into())),
        (Hypothesis::Independence | Hypothesis::Separable, Some(_)) => {
            Err(Failure::Usage("--edges only applies to --hypothesis graphical".into()))
        }
        _ => Ok(()),
    }
}

fn model_from(args: &ModelArgs, r: usize) -> Result<HypothesisModel, Failure> {
    check_edges(args)?;
    match (args.hypothesis, &args.edges) {
        (Hypothesis::Graphical, Some(e)) => Ok(HypothesisModel::graphical(EdgeSet::parse(e, r)?)?),
        (Hypothesis::Separable, _) => Ok(HypothesisModel::Separable),
        _ => Ok(HypothesisModel::Independence),
    }
}

fn kind_from(args: &StatArgs) -> Result<DiscrepancyKind, Failure> {
    let kind: DiscrepancyKind = args.kind.parse().map_err(|e: spectest::Error| Failure::Usage(e.to_string()))?;
    match (kind, args.chernoff_alpha) {
        (DiscrepancyKind::Chernoff { .. }, Some(a)) => {
            DiscrepancyKind::chernoff(a).map_err(|e| Failure::Usage(e.to_string()))
        }
        (_, Some(_)) => Err(Failure::Usage("--chernoff-alpha needs --kind chernoff".into())),
        (k, None) => Ok(k),
    }
}

fn variants_from(stat: &str, kind: DiscrepancyKind) -> Result<Vec<StatisticVariant>, Failure> {
    stat.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            StatisticForm::parse(s)
                .map(|form| StatisticVariant::new(form, kind))
                .map_err(|e| Failure::Usage(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()
        .and_then(|v| if v.is_empty() { Err(Failure::Usage("no statistic given".into())) } else { Ok(v) })
}

fn bandwidth_from(args: &BandwidthArgs) -> Result<Bandwidth, Failure> {
    match (args.m, args.cvll) {
        (Some(m), false) if m % 2 == 0 => Ok(Bandwidth::Fixed(m)),
        (Some(m), false) => Err(Failure::Usage(format!("--m must be even, got {m}"))),
        (None, true) => Ok(Bandwidth::Cvll(None)),
        _ => Err(Failure::Usage("give exactly one of --m or --cvll".into())),
    }
}

fn bandwidth_json(b: &Bandwidth) -> Value {
    match b {
        Bandwidth::Fixed(m) => json!(m),
        Bandwidth::Cvll(_) => json!("cvll"),
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn cmd_test(args: TestArgs) -> Result<bool, Failure> {
    let kind = kind_from(&args.stat_args)?;
    let form = StatisticForm::parse(&args.stat).map_err(|e| Failure::Usage(e.to_string()))?;
    let variant = StatisticVariant::new(form, kind);
    let bandwidth = bandwidth_from(&args.bandwidth)?;
    check_edges(&args.model)?;
    let bytes = read_input(&args.input)?;
    let sample = ingest_csv(&args.input, !args.no_demean)?;
    let model = model_from(&args.model, sample.r())?;
    let config = TestConfig {
        model,
        kernel: args.stat_args.kernel.into(),
        bandwidth: bandwidth.clone(),
        alpha_level: args.alpha,
    };
    let report = run_test(&sample, &config, &variant)?;
    let resolved = json!({
        "input": args.input.display().to_string(),
        "hypothesis": report.hypothesis,
        "edges": args.model.edges,
        "statistic": report.statistic,
        "kernel": report.kernel,
        "bandwidth": bandwidth_json(&bandwidth),
        "alpha_level": args.alpha,
        "demean": !args.no_demean,
    });
    let manifest = RunManifest::new("test", args.seed, resolved, Some(&bytes));
    let text = match args.format {
        Format::Json => flat_json(
            &report,
            &[
                ("seed", json!(args.seed)),
                ("input", json!(args.input.display().to_string())),
                ("edges", json!(args.model.edges)),
                ("demean", json!(!args.no_demean)),
                ("input_hash", json!(manifest.input_hash)),
                ("content_hash", json!(manifest.content_hash)),
            ],
        )?,
        Format::Csv => report_csv(&report),
    };
    write_output(&text, args.output.as_deref())?;
    eprintln!("{}", report.summary_line());
    Ok(report.forced_reject)
}

fn report_csv(r: &TestReport) -> String {
    let header = "hypothesis,statistic,kernel,bandwidth_selection,n,r,m,raw,eta_hat,sigma2_hat,curvature,standardized,critical_value,p_value,reject,alpha_level,nonpd_count,forced_reject";
    let row = [
        r.hypothesis.clone(),
        r.statistic.clone(),
        r.kernel.clone(),
        r.bandwidth_selection.clone(),
        r.n.to_string(),
        r.r.to_string(),
        r.m.to_string(),
        fmt_sig(r.raw),
        fmt_sig(r.eta_hat),
        fmt_sig(r.sigma2_hat),
        fmt_sig(r.curvature),
        fmt_sig(r.standardized),
        fmt_sig(r.critical_value),
        fmt_sig(r.p_value),
        r.reject.to_string(),
        fmt_sig(r.alpha_level),
        r.nonpd_count.to_string(),
        r.forced_reject.to_string(),
    ];
    format!("{header}\n{}\n", row.join(","))
}

fn threads_from(arg: Option<usize>) -> Result<Option<usize>, Failure> {
    if arg.is_some() {
        return Ok(arg);
    }
    match std::env::var("SPECTEST_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("SPECTEST_THREADS must be a positive integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn mc_config(sim: &SimArgs, phi: f64) -> Result<McConfig, Failure> {
    let r = 3;
    let mut cfg = McConfig::new(
        VarOneProcess::trivariate_design(phi)?,
        sim.n,
        bandwidth_from(&sim.bandwidth)?,
        model_from(&sim.model, r)?,
    );
    cfg.kernel = sim.stat_args.kernel.into();
    cfg.variants = variants_from(&sim.stat, kind_from(&sim.stat_args)?)?;
    cfg.replications = sim.reps;
    cfg.seed = sim.seed;
    cfg.burn_in = sim.burn_in;
    cfg.alpha_level = sim.alpha;
    cfg.threads = threads_from(sim.threads)?;
    cfg.demean = !sim.no_demean;
    Ok(cfg)
}

fn sim_json(sim: &SimArgs, cfg: &McConfig, phis: Value) -> Value {
    json!({
        "n": sim.n,
        "bandwidth": bandwidth_json(&cfg.bandwidth),
        "hypothesis": cfg.model.name(),
        "edges": sim.model.edges,
        "statistics": cfg.variants.iter().map(StatisticVariant::label).collect::<Vec<_>>(),
        "kernel": cfg.kernel.name(),
        "replications": sim.reps,
        "burn_in": sim.burn_in,
        "alpha_level": sim.alpha,
        "demean": cfg.demean,
        "phi": phis,
    })
}

fn emit_table(rows: &[McSummary], rate: &str, manifest: RunManifest, sim: &SimArgs) -> Result<(), Failure> {
    let text = match sim.format {
        Format::Csv => summaries_to_csv(rows, rate)?,
        Format::Json => serde_json::to_string_pretty(&json!({ "manifest": manifest, "rows": rows }))
            .map_err(|e| Failure::Runtime(e.to_string()))?,
    };
    write_output(&text, sim.output.as_deref())?;
    if sim.format == Format::Csv {
        if let Some(path) = &sim.output {
            let manifest_path = path.with_extension("manifest.json");
            let doc = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Runtime(e.to_string()))?;
            write_output(&doc, Some(&manifest_path))?;
        }
    }
    Ok(())
}

fn cmd_simulate_null(args: SimulateNullArgs) -> Result<(), Failure> {
    let cfg = mc_config(&args.sim, args.phi)?;
    let rows = null_summary(&cfg)?;
    let manifest = RunManifest::new("simulate-null", cfg.seed, sim_json(&args.sim, &cfg, json!(args.phi)), None);
    emit_table(&rows, "size", manifest, &args.sim)?;
    let sizes: Vec<String> = rows.iter().map(|r| format!("{} {}", r.stat, fmt_sig(r.rate))).collect();
    eprintln!("{} replications, n = {}, m = {}: size {}", cfg.replications, cfg.n, rows[0].m, sizes.join(", "));
    Ok(())
}

fn cmd_simulate_power(args: SimulatePowerArgs) -> Result<(), Failure> {
    let null = mc_config(&args.sim, args.phi0)?;
    let alt = mc_config(&args.sim, args.phi1)?;
    let rows = size_adjusted_power(&null, &alt)?;
    let manifest = RunManifest::new(
        "simulate-power",
        alt.seed,
        sim_json(&args.sim, &alt, json!({ "null": args.phi0, "alternative": args.phi1 })),
        None,
    );
    emit_table(&rows, "power", manifest, &args.sim)?;
    let powers: Vec<String> = rows.iter().map(|r| format!("{} {}", r.stat, fmt_sig(r.rate))).collect();
    eprintln!(
        "{} replications, n = {}, m = {}, phi {} vs {}: power {}",
        alt.replications,
        alt.n,
        rows[0].m,
        args.phi0,
        args.phi1,
        powers.join(", ")
    );
    Ok(())
}

fn cmd_cvll(args: CvllArgs) -> Result<(), Failure> {
    let sample = ingest_csv(&args.input, !args.no_demean)?;
    let grid = match &args.grid {
        Some(g) => g
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| Failure::Usage(format!("bad grid value '{s}'"))))
            .collect::<Result<Vec<_>, _>>()?,
        None => default_cvll_grid(sample.n(), sample.r()),
    };
    let sel = cvll_select(&sample, &grid)?;
    let doc = json!({
        "input": args.input.display().to_string(),
        "n": sample.n(),
        "r": sample.r(),
        "m": sel.m,
        "grid": sel.grid,
        "scores": sel.scores.iter().map(|s| if s.is_finite() { json!(s) } else { Value::Null }).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_output(&text, args.output.as_deref())?;
    eprintln!("CVLL selects m = {} over {} candidates", sel.m, sel.grid.len());
    Ok(())
}
