use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lambdapack::executor::WorkerConfig;
use lambdapack::harness::bench::{bench_analysis, enumerate_edges};
use lambdapack::harness::{self, metrics, Backend, FaultPlan, RunConfig, ServiceMode, Workload};
use lambdapack::sim::{simulate_dag, simulate_held_queue, SimConfig};
use lambdapack::store::LatencyConfig;
use lambdapack_core::lang::{enumerate_nodes, validate_ssa, ValidationError};
use lambdapack_core::policy::{Ratio, ScalingPolicy};
use lambdapack_core::{parse_program, programs, Analyzer, Binding, NodeRef, Program, Writer};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_ABORT: u8 = 2;
const EXIT_USAGE: u8 = 3;

/// Marks an error as the caller's fault.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Parser)]
#[command(
    name = "lambdapack",
    version,
    about = "Run and analyze tiled linear algebra programs on a stateless worker pool"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a program end to end.
    Run(RunArgs),
    /// Children, parents, readers or writer of a single node or tile.
    Analyze(AnalyzeArgs),
    /// Print every node and edge by full enumeration.
    EnumerateDag(ProgramArgs),
    /// Time implicit analysis against full enumeration across grid sizes (CSV).
    BenchAnalysis(BenchArgs),
    /// Parse a program and check that every tile is written at most once.
    Validate(ProgramArgs),
    /// Simulate autoscaling over a sweep of scaling factors (CSV).
    Simulate(SimArgs),
}

#[derive(Args, Clone)]
struct ProgramArgs {
    /// Program source file.
    #[arg(long, conflicts_with = "builtin")]
    program: Option<PathBuf>,
    /// Shipped program: cholesky, tsqr or gemm.
    #[arg(long)]
    builtin: Option<String>,
    /// Parameter binding, repeatable.
    #[arg(long = "param", value_name = "K=V")]
    params: Vec<String>,
    /// Grid size; sets `N`.
    #[arg(long)]
    grid: Option<i64>,
}

impl ProgramArgs {
    fn overrides(&self) -> Result<Binding> {
        let mut b = Binding::new();
        for kv in &self.params {
            let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--param expects K=V, got `{kv}`")))?;
            let v: i64 = v.trim().parse().map_err(|_| usage(format!("--param {k}: `{v}` is not an integer")))?;
            b.insert(k.trim(), v);
        }
        if let Some(g) = self.grid {
            b.insert("N", g);
        }
        Ok(b)
    }

    fn load(&self) -> Result<(Program, Binding)> {
        let program = match (&self.program, &self.builtin) {
            (Some(path), _) => {
                let src = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                parse_program(&src).map_err(|e| anyhow!("{}:{e}", path.display()))?
            }
            (None, Some(name)) => programs::by_name(name).ok_or_else(|| usage(format!("unknown builtin `{name}`")))?,
            (None, None) => return Err(usage("one of --program or --builtin is required")),
        };
        let params = program.bind_params(&self.overrides()?).map_err(|e| usage(e.to_string()))?;
        Ok((program, params))
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Mem,
    Fs,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ServicesKind {
    Local,
    Tcp,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    program: ProgramArgs,
    /// Tile edge length in scalars (rows per leaf for tsqr).
    #[arg(long, default_value_t = 64)]
    block: usize,
    /// Cholesky matrix size; defaults to grid × block.
    #[arg(long)]
    size: Option<usize>,
    /// TSQR leaf count; same as --grid.
    #[arg(long)]
    leaves: Option<usize>,
    /// TSQR column count.
    #[arg(long, default_value_t = 16)]
    cols: usize,
    #[arg(long, value_enum, default_value = "mem")]
    backend: BackendKind,
    /// Root directory for the fs backend.
    #[arg(long)]
    root: Option<PathBuf>,
    /// Fixed pool size.
    #[arg(long, conflicts_with = "autoscale")]
    workers: Option<usize>,
    /// Autoscaling policy, e.g. `sf=0.5,period=1,startup=2,max=64`.
    #[arg(long)]
    autoscale: Option<String>,
    /// Tasks in flight per worker.
    #[arg(long, default_value_t = 1)]
    pipeline: usize,
    /// Lease length in seconds.
    #[arg(long, default_value = "10", value_parser = parse_secs)]
    lease: Duration,
    #[arg(long, default_value = "300", value_parser = parse_secs)]
    runtime_limit: Duration,
    #[arg(long, default_value = "10", value_parser = parse_secs)]
    idle_timeout: Duration,
    #[arg(long, default_value = "0.05", value_parser = parse_secs)]
    poll: Duration,
    /// Simulated extra compute time per task.
    #[arg(long, default_value = "0", value_parser = parse_secs)]
    compute_padding: Duration,
    /// Simulated object store latency per operation.
    #[arg(long, default_value = "0", value_parser = parse_secs)]
    store_latency: Duration,
    /// Fault plan, e.g. `kill:0.8@50%,dup:all`.
    #[arg(long, default_value = "")]
    fault: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Exit with status 1 if the numerical check fails.
    #[arg(long)]
    check: bool,
    /// Directory for CSV metrics.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Queue and state store in this process or behind a localhost TCP server.
    #[arg(long, value_enum, default_value = "local")]
    services: ServicesKind,
    #[arg(long, default_value = "run")]
    run_id: String,
    /// Abort the run after this many seconds.
    #[arg(long, default_value = "3600", value_parser = parse_secs)]
    timeout: Duration,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    program: ProgramArgs,
    /// Node as `line:var=val,...`.
    #[arg(long)]
    node: Option<String>,
    /// Tile as `M[i,j,...]`.
    #[arg(long, conflicts_with = "node")]
    tile: Option<String>,
    #[arg(long)]
    children: bool,
    #[arg(long)]
    parents: bool,
    #[arg(long)]
    readers: bool,
    #[arg(long)]
    writer: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "cholesky")]
    builtin: String,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
    grids: Vec<i64>,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    program: ProgramArgs,
    /// Scaling factors to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1/16,1/4,1/3,1/2,1")]
    sf: Vec<Ratio>,
    #[arg(long, default_value = "1", value_parser = parse_secs)]
    period: Duration,
    #[arg(long, default_value = "10", value_parser = parse_secs)]
    startup: Duration,
    #[arg(long, default_value = "1", value_parser = parse_secs)]
    task_time: Duration,
    #[arg(long, default_value = "10", value_parser = parse_secs)]
    idle_timeout: Duration,
    #[arg(long, default_value_t = 1)]
    pipeline: usize,
    #[arg(long, default_value_t = 1024)]
    max_workers: usize,
    /// Hold the queue at this depth instead of running the program.
    #[arg(long)]
    hold: Option<usize>,
    /// Simulated duration of a held-queue run.
    #[arg(long, default_value = "60", value_parser = parse_secs)]
    duration: Duration,
    /// Also print the worker-count timeline of each run.
    #[arg(long)]
    timeline: bool,
}

/// Seconds as a number, or a duration with units (`250ms`).
fn parse_secs(s: &str) -> Result<Duration, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(Duration::from_secs_f64(v)),
        Ok(_) => Err(format!("`{s}` is not a valid duration")),
        Err(_) => humantime::parse_duration(s).map_err(|e| e.to_string()),
    }
}

fn parse_autoscale(spec: &str) -> Result<ScalingPolicy> {
    let mut p = ScalingPolicy { startup_latency: Duration::ZERO, ..ScalingPolicy::default() };
    for kv in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--autoscale expects K=V, got `{kv}`")))?;
        match k {
            "sf" => p.sf = v.parse().map_err(|e| usage(format!("sf: {e}")))?,
            "period" => p.period = parse_secs(v).map_err(usage)?,
            "startup" => p.startup_latency = parse_secs(v).map_err(usage)?,
            "max" => p.max_workers = v.parse().map_err(|_| usage(format!("max: `{v}` is not an integer")))?,
            _ => return Err(usage(format!("unknown --autoscale key `{k}`"))),
        }
    }
    Ok(p)
}

fn workload(a: &RunArgs) -> Result<Workload> {
    let ov = a.program.overrides()?;
    let block = a.block;
    let pick = |name: &str, default: usize| -> Result<usize> {
        match ov.get(name) {
            Some(v) if v > 0 => Ok(v as usize),
            Some(v) => Err(usage(format!("{name} must be positive, got {v}"))),
            None => Ok(default),
        }
    };
    let w = match (&a.program.program, a.program.builtin.as_deref()) {
        (Some(_), _) => {
            let (program, params) = a.program.load()?;
            Workload::Custom { program, params, block }
        }
        (None, Some("cholesky")) => {
            let grid = pick("N", 4)?;
            Workload::Cholesky { size: a.size.unwrap_or(grid * block), block }
        }
        (None, Some("tsqr")) => {
            let leaves = a.leaves.map_or_else(|| pick("N", 8), Ok)?;
            Workload::Tsqr { rows: leaves * block, cols: a.cols, leaves }
        }
        (None, Some("gemm")) => {
            let grid = pick("N", 2)?;
            Workload::Gemm { grid, inner: pick("K", grid)?, block }
        }
        (None, Some(other)) => return Err(usage(format!("unknown builtin `{other}`"))),
        (None, None) => return Err(usage("one of --program or --builtin is required")),
    };
    w.validate().map_err(|e| usage(e.to_string()))?;
    Ok(w)
}

fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::new(workload(&a)?);
    cfg.run_id = a.run_id.clone();
    cfg.backend = match a.backend {
        BackendKind::Mem => Backend::Memory,
        BackendKind::Fs => Backend::Fs(a.root.clone().ok_or_else(|| usage("--backend fs needs --root DIR"))?),
    };
    cfg.latency = LatencyConfig { per_op: a.store_latency, bytes_per_sec: None };
    cfg.services = match a.services {
        ServicesKind::Local => ServiceMode::InProcess,
        ServicesKind::Tcp => ServiceMode::LocalServer,
    };
    if a.pipeline == 0 {
        return Err(usage("--pipeline must be at least 1"));
    }
    if a.lease.is_zero() {
        return Err(usage("--lease must be positive"));
    }
    cfg.worker = WorkerConfig {
        pipeline_width: a.pipeline,
        runtime_limit: a.runtime_limit,
        idle_timeout: a.idle_timeout,
        poll_interval: a.poll,
        compute_padding: a.compute_padding,
        ..WorkerConfig::with_lease(a.lease)
    };
    match &a.autoscale {
        Some(spec) => {
            cfg.policy = parse_autoscale(spec)?;
            cfg.fixed_workers = None;
        }
        None => cfg.fixed_workers = Some(a.workers.unwrap_or(4)),
    }
    cfg.faults = a.fault.parse::<FaultPlan>().map_err(|e| usage(e.to_string()))?;
    cfg.seed = a.seed;
    cfg.metrics_dir = a.metrics.clone();
    cfg.timeout = a.timeout;

    let report = harness::run(&cfg)?;
    let mut out = io::stdout().lock();
    for (k, v) in metrics::summary(&report) {
        writeln!(out, "{k}={v}")?;
    }
    if let Some(reason) = &report.aborted {
        eprintln!("run aborted: {reason}");
        if let Some(lines) = &report.snapshot {
            for l in lines.iter().take(20) {
                eprintln!("  {l}");
            }
            if lines.len() > 20 {
                eprintln!("  ... {} more", lines.len() - 20);
            }
        }
        return Ok(ExitCode::from(EXIT_ABORT));
    }
    if a.check && report.check.as_ref().is_some_and(|c| !c.passed()) {
        return Ok(ExitCode::from(EXIT_CHECK_FAILED));
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_tile(s: &str) -> Result<(String, Vec<i64>)> {
    let bad = || usage(format!("tile must look like M[i,j], got `{s}`"));
    let (name, rest) = s.trim().split_once('[').ok_or_else(bad)?;
    let inner = rest.strip_suffix(']').ok_or_else(bad)?;
    let idx = inner.split(',').map(|v| v.trim().parse::<i64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
    Ok((name.trim().to_string(), idx))
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<ExitCode> {
    let (program, params) = a.program.load()?;
    let analyzer = Analyzer::new(&program, &params)?;
    let mut lines: Vec<String> = match (&a.node, &a.tile) {
        (Some(node), None) => {
            let node: NodeRef = node.parse().map_err(|e| usage(format!("{e}")))?;
            let nodes = match (a.children, a.parents) {
                (true, false) => analyzer.children_of(&node)?,
                (false, true) => analyzer.parents_of(&node)?,
                _ => return Err(usage("--node needs exactly one of --children or --parents")),
            };
            nodes.iter().map(ToString::to_string).collect()
        }
        (None, Some(tile)) => {
            let (m, idx) = parse_tile(tile)?;
            match (a.readers, a.writer) {
                (true, false) => analyzer.find_readers(&m, &idx)?.iter().map(ToString::to_string).collect(),
                (false, true) => vec![match analyzer.find_writer(&m, &idx)? {
                    Writer::Node(n) => n.to_string(),
                    Writer::InitialInput => "input".into(),
                }],
                _ => return Err(usage("--tile needs exactly one of --readers or --writer")),
            }
        }
        _ => return Err(usage("one of --node or --tile is required")),
    };
    lines.sort();
    let mut out = io::stdout().lock();
    for l in lines {
        writeln!(out, "{l}")?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_enumerate(a: ProgramArgs) -> Result<ExitCode> {
    let (program, params) = a.load()?;
    let nodes = enumerate_nodes(&program, &params)?;
    let edges = enumerate_edges(&program, &params)?;
    let mut out = io::stdout().lock();
    writeln!(out, "# {} nodes, {} edges", nodes.len(), edges.len())?;
    let mut sorted = nodes;
    sorted.sort();
    for n in sorted {
        writeln!(out, "node {n}")?;
    }
    for (from, to) in edges {
        writeln!(out, "edge {from} -> {to}")?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(a: BenchArgs) -> Result<ExitCode> {
    let base = programs::by_name(&a.builtin).ok_or_else(|| usage(format!("unknown builtin `{}`", a.builtin)))?;
    let gen = |g: i64| {
        let p = base.clone().with_params(&[("N", g)]);
        if base.param("K").is_some() {
            p.with_params(&[("K", g)])
        } else {
            p
        }
    };
    let rows = bench_analysis(gen, &a.grids, a.samples, a.reps, a.seed)?;
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(a: ProgramArgs) -> Result<ExitCode> {
    let (program, params) = match a.load() {
        Ok(v) => v,
        Err(e) if e.is::<Usage>() => return Err(e),
        Err(e) => {
            println!("invalid: {e:#}");
            return Ok(ExitCode::from(EXIT_CHECK_FAILED));
        }
    };
    match validate_ssa(&program, &params) {
        Ok(()) => {
            let n = enumerate_nodes(&program, &params)?.len();
            println!("ok: program `{}`, {n} nodes, {} bytes serialized", program.name, program.to_bytes().len());
            Ok(ExitCode::SUCCESS)
        }
        Err(ValidationError::Violations(v)) => {
            for violation in &v {
                println!("{violation}");
            }
            println!("invalid: {} tile(s) written more than once", v.len());
            Ok(ExitCode::from(EXIT_CHECK_FAILED))
        }
        Err(e) => {
            println!("invalid: {e}");
            Ok(ExitCode::from(EXIT_CHECK_FAILED))
        }
    }
}

fn cmd_simulate(a: SimArgs) -> Result<ExitCode> {
    let mut out = io::stdout().lock();
    writeln!(out, "sf,worker_seconds,completion_time_s,tasks,peak_workers,complete")?;
    let mut timelines = Vec::new();
    let dag = match a.hold {
        Some(_) => None,
        None => {
            let (program, params) = a.program.load()?;
            let analyzer = Analyzer::new(&program, &params)?;
            let (roots, total) = harness::root_nodes(&analyzer)?;
            Some((analyzer, roots, total))
        }
    };
    for sf in &a.sf {
        let policy = ScalingPolicy {
            sf: *sf,
            pipeline_width: a.pipeline,
            period: a.period,
            startup_latency: a.startup,
            max_workers: a.max_workers,
        };
        let cfg = SimConfig { idle_timeout: a.idle_timeout, ..SimConfig::new(policy, a.task_time) };
        let r = match (&dag, a.hold) {
            (_, Some(depth)) => simulate_held_queue(depth, a.duration, &cfg),
            (Some((analyzer, roots, total)), None) => simulate_dag(analyzer, roots, *total, &cfg)?,
            (None, None) => bail!("no workload to simulate"),
        };
        writeln!(
            out,
            "{sf},{:.3},{:.3},{},{},{}",
            r.worker_seconds,
            r.completion_time.as_secs_f64(),
            r.tasks_executed,
            r.peak_workers,
            r.complete
        )?;
        timelines.push((*sf, r.timeline));
    }
    if a.timeline {
        writeln!(out)?;
        writeln!(out, "sf,t,pending,running,booting")?;
        for (sf, tl) in timelines {
            for s in tl {
                writeln!(out, "{sf},{:.3},{},{},{}", s.t.as_secs_f64(), s.pending, s.running, s.booting)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::EnumerateDag(a) => cmd_enumerate(a),
        Cmd::BenchAnalysis(a) => cmd_bench(a),
        Cmd::Validate(a) => cmd_validate(a),
        Cmd::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ABORT)
        }
    }
}
