//! Acceptance suite. One line per criterion, `PASS` or `FAIL`, then a
//! nonzero exit if anything failed.

use std::collections::{BTreeSet, HashMap};
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use lambdapack::clock::{Clock, SystemClock};
use lambdapack::control::{MemQueue, MemStateStore, TaskQueue};
use lambdapack::executor::{worker_loop, Cut, EventLog, NoFaults, Phase, Services, WorkerConfig, WorkerControl};
use lambdapack::harness::bench::bench_analysis;
use lambdapack::harness::{run, CrashEvent, FaultPlan, KillEvent, RunConfig, RunReport, Trigger, Workload};
use lambdapack::sim::{simulate_dag, simulate_held_queue, SimConfig};
use lambdapack::store::{LatencyConfig, MemoryStore, ObjectStore, TileKey};
use lambdapack_core::lang::{enumerate_accesses, enumerate_nodes};
use lambdapack_core::policy::{desired_launches, Ratio, ScalingPolicy};
use lambdapack_core::programs::{gen_cholesky, gen_gemm, gen_tsqr};
use lambdapack_core::{Analyzer, Binding, NodeRef, Program};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances and bounds.
const ANALYSIS_BUDGET: Duration = Duration::from_secs(10);
const NUMERIC_BUDGET: Duration = Duration::from_secs(30);
const CHOLESKY_TOL: f64 = 1e-10;
const TSQR_TOL: f64 = 1e-10;
const GEMM_TOL: f64 = 1e-12;
const EQUILIBRIUM_SLACK: usize = 1;
const EQUILIBRIUM_PERIODS: u32 = 5;
const FAULT_SEEDS: u64 = 20;
const REDELIVERY_LEASE: Duration = Duration::from_millis(200);
const REDELIVERY_POLL: Duration = Duration::from_millis(50);
const REDELIVERY_SLACK: Duration = Duration::from_millis(100);
const CRASH_TRIALS: usize = 20;
const CHILDREN_GROWTH_MAX: f64 = 2.0;
const ENUMERATION_GROWTH_MIN: f64 = 8.0;
const PIPELINE_SPEEDUP_MIN: f64 = 1.8;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bound(p: &Program) -> Binding {
    p.bind_params(&Binding::new()).expect("shipped programs bind")
}

/// Every edge, by matching each read against the unique writer of that tile.
fn brute_force_edges(p: &Program) -> BTreeSet<(NodeRef, NodeRef)> {
    let accesses = enumerate_accesses(p, &bound(p)).expect("enumerable");
    let mut writer = HashMap::new();
    for a in &accesses {
        for t in &a.writes {
            assert!(writer.insert(t.clone(), a.node.clone()).is_none(), "tile {t} written twice");
        }
    }
    let mut edges = BTreeSet::new();
    for a in &accesses {
        for t in &a.reads {
            if let Some(w) = writer.get(t) {
                edges.insert((w.clone(), a.node.clone()));
            }
        }
    }
    edges
}

fn implicit_edges(p: &Program) -> Result<BTreeSet<(NodeRef, NodeRef)>, String> {
    let params = bound(p);
    let a = Analyzer::new(p, &params).map_err(|e| e.to_string())?;
    let mut down = BTreeSet::new();
    let mut up = BTreeSet::new();
    for n in enumerate_nodes(p, &params).map_err(|e| e.to_string())? {
        for c in a.children_of(&n).map_err(|e| e.to_string())? {
            down.insert((n.clone(), c));
        }
        for q in a.parents_of(&n).map_err(|e| e.to_string())? {
            up.insert((q, n.clone()));
        }
    }
    ensure(down == up, || format!("{}: children and parents disagree", p.name))?;
    Ok(down)
}

fn dependency_analysis() -> Outcome {
    let t = Instant::now();
    let mut cases: Vec<(String, Program)> = Vec::new();
    for b in [2, 3, 4, 8] {
        cases.push((format!("cholesky N={b}"), gen_cholesky(b)));
    }
    for n in [2, 4, 8, 16] {
        cases.push((format!("tsqr N={n}"), gen_tsqr(n)));
    }
    for b in [2, 4] {
        cases.push((format!("gemm N=K={b}"), gen_gemm(b, b)));
    }
    let mut total = 0;
    for (name, p) in &cases {
        let want = brute_force_edges(p);
        let got = implicit_edges(p)?;
        if got != want {
            let missing: Vec<_> = want.difference(&got).take(3).collect();
            let extra: Vec<_> = got.difference(&want).take(3).collect();
            return Err(format!("{name}: missing {missing:?}, extra {extra:?}"));
        }
        total += want.len();
    }
    let elapsed = t.elapsed();
    ensure(elapsed < ANALYSIS_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{} programs, {total} edges identical in {elapsed:.2?}", cases.len()))
}

fn node(line: usize, vars: &[(&str, i64)]) -> NodeRef {
    NodeRef::new(line, vars.iter().copied().collect())
}

fn worked_examples() -> Outcome {
    let chol = gen_cholesky(4);
    let a = Analyzer::new(&chol, &bound(&chol)).map_err(|e| e.to_string())?;
    let chol_child = node(0, &[("i", 1)]);
    let got = a.find_readers("S", &[1, 1, 1]).map_err(|e| e.to_string())?;
    ensure(got == [chol_child.clone()], || format!("readers of S[1,1,1]: {got:?}"))?;

    let tsqr = gen_tsqr(8);
    let a = Analyzer::new(&tsqr, &bound(&tsqr)).map_err(|e| e.to_string())?;
    let got = a.find_readers("R", &[6, 1]).map_err(|e| e.to_string())?;
    let want = node(1, &[("i", 4), ("level", 1)]);
    ensure(got == [want.clone()], || format!("readers of R[6,1]: {got:?}"))?;
    let rejected = node(1, &[("i", 6), ("level", 1)]);
    ensure(!got.contains(&rejected), || "i=6 candidate accepted".into())?;
    Ok(format!("S[1,1,1] -> {{{chol_child}}}, R[6,1] -> {{{want}}}"))
}

fn quick(workload: Workload) -> RunConfig {
    let mut cfg = RunConfig::new(workload);
    cfg.worker = WorkerConfig::with_lease(Duration::from_secs(5));
    cfg.worker.poll_interval = Duration::from_millis(2);
    cfg.policy.period = Duration::from_millis(20);
    cfg.timeout = Duration::from_secs(60);
    cfg
}

fn checked_error(w: Workload) -> Result<f64, String> {
    let r = run(&quick(w.clone())).map_err(|e| e.to_string())?;
    ensure(r.complete, || format!("{}: aborted: {:?}", w.name(), r.aborted))?;
    let c = r.check.ok_or_else(|| format!("{}: no check", w.name()))?;
    Ok(c.error)
}

fn numerical_oracles() -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for block in [256, 128, 64, 37] {
        let e = checked_error(Workload::Cholesky { size: 256, block })?;
        ensure(e <= CHOLESKY_TOL, || format!("cholesky block {block}: {e:e}"))?;
        worst = worst.max(e);
    }
    let e = checked_error(Workload::Tsqr { rows: 512, cols: 16, leaves: 8 })?;
    ensure(e <= TSQR_TOL, || format!("tsqr: {e:e}"))?;
    let g = checked_error(Workload::Gemm { grid: 4, inner: 4, block: 16 })?;
    ensure(g <= GEMM_TOL, || format!("gemm: {g:e}"))?;
    let elapsed = t.elapsed();
    ensure(elapsed < NUMERIC_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("cholesky worst {worst:.1e}, tsqr {e:.1e}, gemm {g:.1e} in {elapsed:.2?}"))
}

fn autoscaling_formula() -> Outcome {
    let policy = ScalingPolicy { sf: Ratio::HALF, pipeline_width: 1, ..ScalingPolicy::default() };
    let n = desired_launches(100, 40, 0, &policy);
    ensure(n == 10, || format!("desired_launches(100, 40, 0) = {n}"))?;

    let policy = ScalingPolicy {
        sf: Ratio::HALF,
        period: Duration::from_secs(1),
        startup_latency: Duration::from_secs(2),
        ..ScalingPolicy::default()
    };
    let cfg = SimConfig::new(policy.clone(), Duration::from_secs(1));
    let r = simulate_held_queue(40, Duration::from_secs(20), &cfg);
    let settle = policy.period * EQUILIBRIUM_PERIODS;
    let late: Vec<_> = r.timeline.iter().filter(|s| s.t >= settle).collect();
    ensure(!late.is_empty(), || "no samples after settling".into())?;
    for s in late {
        ensure(s.running.abs_diff(20) <= EQUILIBRIUM_SLACK, || format!("{} running at {:?}", s.running, s.t))?;
    }
    Ok(format!("launches 10; 20±{EQUILIBRIUM_SLACK} running from {settle:?} on"))
}

fn fault_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::new(Workload::Cholesky { size: 16, block: 4 });
    cfg.seed = seed;
    cfg.fixed_workers = Some(5);
    cfg.policy.startup_latency = Duration::from_millis(100);
    cfg.policy.period = Duration::from_millis(50);
    cfg.worker = WorkerConfig::with_lease(Duration::from_millis(200));
    cfg.worker.poll_interval = Duration::from_millis(5);
    cfg.worker.compute_padding = Duration::from_millis(20);
    cfg.timeout = Duration::from_secs(60);
    cfg
}

fn run_ok(cfg: &RunConfig) -> Result<RunReport, String> {
    let r = run(cfg).map_err(|e| e.to_string())?;
    ensure(r.complete, || format!("seed {}: aborted: {:?}", cfg.seed, r.aborted))?;
    Ok(r)
}

fn fault_tolerance() -> Outcome {
    let outcomes: Vec<Result<Duration, String>> = thread::scope(|s| {
        let handles: Vec<_> = (0..FAULT_SEEDS)
            .map(|seed| {
                s.spawn(move || {
                    let base = run_ok(&fault_config(seed))?;
                    let mut cfg = fault_config(seed);
                    cfg.faults.kills.push(KillEvent { fraction: 0.8, at: Trigger::Progress(0.5) });
                    let r = run_ok(&cfg)?;
                    ensure(r.output_bytes() == base.output_bytes(), || format!("seed {seed}: output differs"))?;
                    let k = r.kills.first().ok_or_else(|| format!("seed {seed}: kill never fired"))?;
                    ensure(k.killed.len() == 4, || format!("seed {seed}: killed {}", k.killed.len()))?;
                    let limit = cfg.policy.startup_latency + cfg.policy.period;
                    let restored = k.restored_after.ok_or_else(|| format!("seed {seed}: pool never restored"))?;
                    ensure(restored <= limit, || format!("seed {seed}: restored after {restored:?} > {limit:?}"))?;
                    Ok(restored)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("no panic")).collect()
    });
    let mut slowest = Duration::ZERO;
    for o in outcomes {
        slowest = slowest.max(o?);
    }
    Ok(format!("{FAULT_SEEDS} seeds bit-identical, slowest restore {slowest:.2?}"))
}

/// A stalled worker holding the only root: how soon does another worker read it?
fn stalled_redelivery() -> Result<Duration, String> {
    let w = Workload::Cholesky { size: 8, block: 4 };
    let p = w.program();
    let params = w.params().map_err(|e| e.to_string())?;
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let store = Arc::new(MemoryStore::new());
    for (t, tile) in w.stage(0).map_err(|e| e.to_string())?.inputs {
        store.put_tile(&TileKey::of("s", &t), &tile).map_err(|e| e.to_string())?;
    }
    let queue = Arc::new(MemQueue::new("s", clock.clone()));
    let services = Services {
        run_id: "s".into(),
        analyzer: Arc::new(Analyzer::new(&p, &params).map_err(|e| e.to_string())?),
        store,
        queue: queue.clone(),
        state: Arc::new(MemStateStore::new()),
        clock,
        events: Arc::new(EventLog::new()),
        faults: Arc::new(NoFaults),
    };
    let root = node(0, &[("i", 0)]);
    queue.enqueue(root.clone()).map_err(|e| e.to_string())?;
    let mut cfg = WorkerConfig::with_lease(REDELIVERY_LEASE);
    cfg.poll_interval = REDELIVERY_POLL;
    cfg.idle_timeout = Duration::from_millis(300);
    let stalled = WorkerControl::new();
    stalled.stall_next(Duration::from_secs(1));
    let healthy = WorkerControl::new();
    thread::scope(|s| {
        s.spawn(|| worker_loop(0, &cfg, &services, &stalled));
        thread::sleep(Duration::from_millis(20));
        s.spawn(|| worker_loop(1, &cfg, &services, &healthy));
    });
    let reads: Vec<_> =
        services.events.snapshot().into_iter().filter(|e| e.phase == Phase::Read && e.node == root).collect();
    let first = reads.iter().find(|e| e.worker == 0).ok_or("stalled worker never read the root")?;
    let second = reads.iter().find(|e| e.worker == 1).ok_or("root was never redelivered")?;
    Ok(second.t_start.saturating_sub(first.t_start))
}

fn lease_and_duplicates() -> Outcome {
    let gap = stalled_redelivery()?;
    let limit = REDELIVERY_LEASE + REDELIVERY_POLL + REDELIVERY_SLACK;
    ensure(gap <= limit, || format!("redelivered after {gap:?} > {limit:?}"))?;

    let base = run_ok(&fault_config(7))?;
    let mut cfg = fault_config(7);
    cfg.faults = "dup:all".parse::<FaultPlan>().map_err(|e| e.to_string())?;
    let r = run_ok(&cfg)?;
    ensure(r.output_bytes() == base.output_bytes(), || "duplicated run output differs".into())?;
    ensure(r.state.done == r.node_count, || format!("{} done of {}", r.state.done, r.node_count))?;
    let mut finals: HashMap<&NodeRef, usize> = HashMap::new();
    for e in r.events.iter().filter(|e| e.phase == Phase::Finalize) {
        *finals.entry(&e.node).or_default() += 1;
    }
    ensure(finals.len() == r.node_count, || format!("{} of {} nodes finalized", finals.len(), r.node_count))?;
    Ok(format!(
        "redelivered after {gap:.0?}; dup:all identical, {} nodes done once, {} duplicate completions absorbed",
        r.node_count, r.state.duplicate_completions
    ))
}

fn crash_matrix() -> Outcome {
    let base = run_ok(&crash_config(0, None))?;
    let expected = base.output_bytes();
    let nodes = base.node_count;
    for cut in Cut::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(cut as u64);
        let nths: Vec<usize> = (0..CRASH_TRIALS).map(|_| rng.random_range(1..=nodes)).collect();
        let results: Vec<Result<(), String>> = thread::scope(|s| {
            let handles: Vec<_> = nths
                .iter()
                .map(|&nth| {
                    let expected = &expected;
                    s.spawn(move || {
                        let r = run_ok(&crash_config(0, Some(CrashEvent { cut, nth })))?;
                        ensure(&r.output_bytes() == expected, || format!("{} @{nth}: output differs", cut.name()))?;
                        ensure(r.crashes_fired == 1, || format!("{} @{nth}: {} crashes", cut.name(), r.crashes_fired))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("no panic")).collect()
        });
        results.into_iter().collect::<Result<Vec<()>, String>>()?;
    }
    Ok(format!("{} cuts x {CRASH_TRIALS} trials, all complete and identical", Cut::ALL.len()))
}

fn crash_config(seed: u64, crash: Option<CrashEvent>) -> RunConfig {
    let mut cfg = RunConfig::new(Workload::Cholesky { size: 16, block: 4 });
    cfg.seed = seed;
    cfg.fixed_workers = Some(3);
    cfg.policy.period = Duration::from_millis(20);
    cfg.worker = WorkerConfig::with_lease(Duration::from_millis(200));
    cfg.worker.poll_interval = Duration::from_millis(5);
    cfg.timeout = Duration::from_secs(60);
    cfg.faults.crashes.extend(crash);
    cfg
}

fn blank_params(p: &Program) -> Vec<u8> {
    let mut bytes = p.to_bytes();
    for r in p.param_value_ranges() {
        bytes[r].fill(0);
    }
    bytes
}

fn program_size_and_analysis() -> Outcome {
    let reference = blank_params(&gen_cholesky(4));
    for b in [8, 16, 32] {
        ensure(blank_params(&gen_cholesky(b)) == reference, || format!("N={b} bytes differ beyond the parameters"))?;
    }
    let rows = bench_analysis(gen_cholesky, &[4, 16, 32], 50, 20, 1).map_err(|e| e.to_string())?;
    let (b4, b16, b32) = (&rows[0], &rows[1], &rows[2]);
    let children = b32.children_median_s / b4.children_median_s;
    let enumeration = b16.enumerate_s / b4.enumerate_s;
    ensure(children <= CHILDREN_GROWTH_MAX, || format!("children_of grew {children:.2}x"))?;
    ensure(enumeration >= ENUMERATION_GROWTH_MIN, || format!("enumeration grew only {enumeration:.1}x"))?;
    Ok(format!(
        "{} bytes for all N; children_of N=32/N=4 {children:.2}x, enumeration N=16/N=4 {enumeration:.0}x",
        reference.len()
    ))
}

fn pipelined_throughput(width: usize) -> Result<f64, String> {
    let step = Duration::from_millis(5);
    let mut cfg = RunConfig::new(Workload::Cholesky { size: 32, block: 4 });
    cfg.fixed_workers = Some(1);
    cfg.worker = WorkerConfig::with_lease(Duration::from_secs(5));
    cfg.worker.poll_interval = Duration::from_millis(1);
    cfg.worker.pipeline_width = width;
    cfg.worker.compute_padding = step;
    cfg.latency = LatencyConfig { per_op: step, bytes_per_sec: None };
    cfg.timeout = Duration::from_secs(60);
    let r = run_ok(&cfg)?;
    let first = r.events.iter().map(|e| e.t_start).min().unwrap_or_default();
    let last = r.events.iter().map(|e| e.t_end).max().unwrap_or_default();
    Ok(r.tasks_executed() as f64 / (last - first).as_secs_f64())
}

fn pipelining() -> Outcome {
    let narrow = pipelined_throughput(1)?;
    let wide = pipelined_throughput(3)?;
    let speedup = wide / narrow;
    ensure(speedup >= PIPELINE_SPEEDUP_MIN, || format!("width 3 is {speedup:.2}x width 1"))?;
    Ok(format!("{narrow:.0} -> {wide:.0} tasks/s, {speedup:.2}x"))
}

fn scaling_sweep() -> Outcome {
    let p = gen_cholesky(16);
    let params = bound(&p);
    let a = Analyzer::new(&p, &params).map_err(|e| e.to_string())?;
    let nodes = enumerate_nodes(&p, &params).map_err(|e| e.to_string())?;
    let mut roots = Vec::new();
    for n in &nodes {
        if a.parents_of(n).map_err(|e| e.to_string())?.is_empty() {
            roots.push(n.clone());
        }
    }
    // Increasing 1/sf.
    let sfs = [Ratio::ONE, Ratio::HALF, Ratio::new(1, 4), Ratio::new(1, 16)];
    let mut rows = Vec::new();
    for sf in sfs {
        let policy = ScalingPolicy {
            sf,
            period: Duration::from_secs(1),
            startup_latency: Duration::from_secs(10),
            ..ScalingPolicy::default()
        };
        let r = simulate_dag(&a, &roots, nodes.len(), &SimConfig::new(policy, Duration::from_secs(1)))
            .map_err(|e| e.to_string())?;
        ensure(r.complete, || format!("sf={sf} did not complete"))?;
        rows.push((sf, r.worker_seconds, r.completion_time));
    }
    for w in rows.windows(2) {
        let ((sf0, ws0, t0), (sf1, ws1, t1)) = (w[0], w[1]);
        ensure(ws1 <= ws0, || format!("worker-seconds rose from sf={sf0} ({ws0}) to sf={sf1} ({ws1})"))?;
        ensure(t1 >= t0, || format!("completion fell from sf={sf0} ({t0:?}) to sf={sf1} ({t1:?})"))?;
    }
    let desc: Vec<String> =
        rows.iter().map(|(sf, ws, t)| format!("sf={sf}: {ws:.0} ws/{:.0}s", t.as_secs_f64())).collect();
    Ok(desc.join(", "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("dependency analysis matches enumeration", dependency_analysis),
        ("worked reader examples", worked_examples),
        ("numerical oracles", numerical_oracles),
        ("autoscaling formula and equilibrium", autoscaling_formula),
        ("kill 80% at half progress", fault_tolerance),
        ("lease redelivery and duplicate delivery", lease_and_duplicates),
        ("crash at every cut point", crash_matrix),
        ("constant program size, data-independent analysis", program_size_and_analysis),
        ("pipelining throughput", pipelining),
        ("scaling factor trade-off", scaling_sweep),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
