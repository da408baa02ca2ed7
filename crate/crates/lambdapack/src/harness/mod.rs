//! End-to-end runs: stage inputs, seed roots, supervise the pool, assemble, check.

pub mod bench;
pub mod faults;
pub mod metrics;
pub mod workload;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use lambdapack_core::analysis::AnalysisError;
use lambdapack_core::lang::{enumerate_nodes, output_tiles, EnumError};
use lambdapack_core::policy::ScalingPolicy;
use lambdapack_core::{Analyzer, NodeRef, Tile, TileRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use faults::{CrashEvent, CrashHook, DuplicatingQueue, FaultPlan, KillEvent, Trigger};
pub use workload::{CheckResult, Reference, Workload, WorkloadError};

use crate::clock::{Clock, SystemClock};
use crate::control::remote::{serve, RemoteClient};
use crate::control::{MemQueue, MemStateStore, QueueError, StateError, StateStats, StateStore, TaskQueue};
use crate::executor::{EventLog, Phase, Services, TaskEvent, WorkerConfig};
use crate::provisioner::{
    worker_seconds, Provisioner, ServicesFactory, Sizing, ThreadPool, TimelineSample, WorkerPool, WorkerRecord,
};
use crate::store::{FsStore, LatencyConfig, LatencyStore, MemoryStore, ObjectStore, StoreError, StoreStats, TileKey};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backend {
    Memory,
    Fs(PathBuf),
}

/// Where the queue and state store live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceMode {
    InProcess,
    /// A TCP server on localhost; every worker holds its own connection.
    LocalServer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run_id: String,
    pub workload: Workload,
    pub backend: Backend,
    pub latency: LatencyConfig,
    pub services: ServiceMode,
    pub worker: WorkerConfig,
    /// Autoscaling parameters; `period`, `startup_latency` and `max_workers` also apply to a fixed pool.
    pub policy: ScalingPolicy,
    /// A fixed pool size instead of autoscaling.
    pub fixed_workers: Option<usize>,
    pub faults: FaultPlan,
    pub seed: u64,
    pub metrics_dir: Option<PathBuf>,
    /// The run aborts after this long.
    pub timeout: Duration,
    /// Supervisor polling interval.
    pub tick: Duration,
}

impl RunConfig {
    pub fn new(workload: Workload) -> Self {
        Self {
            run_id: "run".into(),
            workload,
            backend: Backend::Memory,
            latency: LatencyConfig::default(),
            services: ServiceMode::InProcess,
            worker: WorkerConfig::default(),
            policy: ScalingPolicy { startup_latency: Duration::ZERO, ..ScalingPolicy::default() },
            fixed_workers: Some(4),
            faults: FaultPlan::default(),
            seed: 0,
            metrics_dir: None,
            timeout: Duration::from_secs(3600),
            tick: Duration::from_millis(5),
        }
    }

    pub fn sizing(&self) -> Sizing {
        match self.fixed_workers {
            Some(n) => Sizing::Fixed(n),
            None => {
                Sizing::Autoscale(ScalingPolicy { pipeline_width: self.worker.pipeline_width, ..self.policy.clone() })
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Enumeration(#[from] EnumError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// A kill event as it played out.
#[derive(Debug, Clone, PartialEq)]
pub struct KillRecord {
    pub at: Duration,
    pub killed: Vec<usize>,
    pub prior_running: usize,
    /// Time until the running count was back to `prior_running`.
    pub restored_after: Option<Duration>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub run_id: String,
    pub workload: String,
    pub node_count: usize,
    pub complete: bool,
    pub completion_time: Duration,
    pub output: Option<Tile>,
    pub check: Option<CheckResult>,
    pub events: Vec<TaskEvent>,
    pub workers: Vec<WorkerRecord>,
    pub timeline: Vec<TimelineSample>,
    pub state: StateStats,
    pub store: StoreStats,
    pub kills: Vec<KillRecord>,
    pub crashes_fired: usize,
    pub aborted: Option<String>,
    /// State-store dump, taken when the run aborted.
    pub snapshot: Option<Vec<String>>,
}

impl RunReport {
    pub fn worker_seconds(&self) -> f64 {
        worker_seconds(&self.workers)
    }

    /// Time spent in compute phases, summed over tasks.
    pub fn core_seconds(&self) -> f64 {
        self.events
            .iter()
            .filter(|e| e.phase == Phase::Compute)
            .map(|e| e.t_end.saturating_sub(e.t_start).as_secs_f64())
            .sum()
    }

    /// Task executions that reached the end, duplicates included.
    pub fn tasks_executed(&self) -> usize {
        self.events.iter().filter(|e| e.phase == Phase::Finalize).count()
    }

    pub fn output_bytes(&self) -> Option<Vec<u8>> {
        self.output.as_ref().map(Tile::encode)
    }
}

/// Nodes with no parents, found by enumerating the iteration space.
pub fn root_nodes(analyzer: &Analyzer) -> Result<(Vec<NodeRef>, usize), RunError> {
    let nodes = enumerate_nodes(analyzer.program(), analyzer.params())?;
    let mut roots = Vec::new();
    for n in &nodes {
        if analyzer.parents_of(n)?.is_empty() {
            roots.push(n.clone());
        }
    }
    Ok((roots, nodes.len()))
}

pub fn run(cfg: &RunConfig) -> Result<RunReport, RunError> {
    let program = cfg.workload.program();
    let params = cfg.workload.params()?;
    let analyzer = Arc::new(Analyzer::new(&program, &params)?);
    let (roots, node_count) = root_nodes(&analyzer)?;
    let outputs = output_tiles(&program, &params)?;
    let staged = cfg.workload.stage(cfg.seed)?;

    let base: Arc<dyn ObjectStore> = match &cfg.backend {
        Backend::Memory => Arc::new(MemoryStore::new()),
        Backend::Fs(root) => Arc::new(FsStore::new(root)?),
    };
    for (t, tile) in &staged.inputs {
        base.put_tile(&TileKey::of(&cfg.run_id, t), tile)?;
    }
    let staged_stats = base.stats();
    let worker_store: Arc<dyn ObjectStore> = if cfg.latency == LatencyConfig::default() {
        base.clone()
    } else {
        Arc::new(LatencyStore::new(base.clone(), cfg.latency))
    };

    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let mem_queue = MemQueue::new(&cfg.run_id, clock.clone());
    let queue: Arc<dyn TaskQueue> =
        if cfg.faults.duplicate_all { Arc::new(DuplicatingQueue::new(mem_queue)) } else { Arc::new(mem_queue) };
    let state = Arc::new(MemStateStore::new());
    let server = match cfg.services {
        ServiceMode::InProcess => None,
        ServiceMode::LocalServer => Some(serve("127.0.0.1:0", queue.clone(), state.clone())?),
    };
    let events = Arc::new(EventLog::new());
    let crash = Arc::new(CrashHook::new(&cfg.faults.crashes));

    let base_services = Services {
        run_id: cfg.run_id.clone(),
        analyzer,
        store: worker_store,
        queue: queue.clone(),
        state: state.clone(),
        clock: clock.clone(),
        events: events.clone(),
        faults: crash.clone(),
    };
    let addr = server.as_ref().map(|s| s.addr());
    let factory: ServicesFactory = Arc::new(move |_| match addr {
        None => base_services.clone(),
        Some(addr) => {
            let client = Arc::new(RemoteClient::connect(addr).expect("local service server is reachable"));
            Services { queue: client.clone(), state: client, ..base_services.clone() }
        }
    });

    for r in &roots {
        queue.enqueue(r.clone())?;
    }
    state.mark_enqueued(&roots)?;

    let mut pool =
        ThreadPool::new(factory, clock.clone(), cfg.worker.clone(), cfg.policy.startup_latency, cfg.policy.max_workers);
    let mut prov = Provisioner::new(cfg.sizing(), cfg.policy.period);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pending_kills = cfg.faults.kills.clone();
    let mut pending_stalls = cfg.faults.stalls.clone();
    let mut kills: Vec<KillRecord> = Vec::new();
    let mut remaining = outputs;
    let mut aborted = None;
    let completion_time;

    loop {
        let now = clock.now();
        remaining.retain(|t| !base.exists(&TileKey::of(&cfg.run_id, t)));
        if remaining.is_empty() {
            completion_time = now;
            break;
        }
        if let Some(reason) = state.failure()? {
            aborted = Some(reason);
            completion_time = now;
            break;
        }
        if now >= cfg.timeout {
            aborted = Some(format!("run did not complete within {:?}", cfg.timeout));
            completion_time = now;
            break;
        }

        let progress = state.stats()?.done as f64 / node_count.max(1) as f64;
        let mut killed_now = false;
        pending_kills.retain(|k| {
            let due = match k.at {
                Trigger::Progress(p) => progress >= p,
                Trigger::Time(t) => now >= t,
            };
            if due {
                let prior_running = pool.counts(now).0;
                let killed = pool.kill_fraction(k.fraction, &mut rng);
                kills.push(KillRecord { at: now, killed, prior_running, restored_after: None });
                killed_now = true;
            }
            !due
        });
        let running = pool.counts(now).0;
        for k in kills.iter_mut().filter(|k| k.restored_after.is_none()) {
            if running >= k.prior_running && !killed_now {
                k.restored_after = Some(now - k.at);
            }
        }
        pending_stalls.retain(|&(w, d)| !pool.stall(w, d));

        if killed_now || prov.due(now) {
            prov.control_step(now, queue.as_ref(), &mut pool)?;
        }
        clock.sleep(cfg.tick);
    }

    let workers = pool.shutdown();
    queue.close();
    drop(server);

    let store_stats = base.stats().since(&staged_stats);
    let complete = aborted.is_none();
    let (output, check) = if complete {
        let get = |t: &TileRef| base.get_tile(&TileKey::of(&cfg.run_id, t)).map_err(|e| e.to_string());
        let output = cfg.workload.assemble(get)?;
        let check = match &output {
            Some(o) => cfg.workload.check(&staged.reference, o)?,
            None => None,
        };
        (output, check)
    } else {
        (None, None)
    };
    let snapshot = if complete { None } else { Some(state.snapshot()?) };

    let report = RunReport {
        run_id: cfg.run_id.clone(),
        workload: cfg.workload.name().into(),
        node_count,
        complete,
        completion_time,
        output,
        check,
        events: events.snapshot(),
        workers,
        timeline: prov.timeline,
        state: state.stats()?,
        store: store_stats,
        kills,
        crashes_fired: crash.fired(),
        aborted,
        snapshot,
    };
    if let Some(dir) = &cfg.metrics_dir {
        metrics::write_all(dir, &report)?;
    }
    Ok(report)
}
