//! The stateless worker.
//!
//! A task runs read, compute, write, record, enqueue, delete in that order.
//! Deleting last means a crash after any prefix leaves the message in the
//! queue, and the redelivered copy redoes the work idempotently.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use lambdapack_core::analysis::AnalysisError;
use lambdapack_core::policy::{should_self_terminate, Lifetime};
use lambdapack_core::{Analyzer, NodeRef, Tile};
use parking_lot::Mutex;

use crate::clock::Clock;
use crate::control::{DeleteOutcome, QueueError, Receipt, StateError, StateStore, TaskMessage, TaskQueue};
use crate::store::{ObjectStore, StoreError, TileKey};

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerConfig {
    pub lease: Duration,
    pub renew_interval: Duration,
    pub pipeline_width: usize,
    pub runtime_limit: Duration,
    pub poll_interval: Duration,
    pub idle_timeout: Duration,
    /// Extra time spent in the compute phase, standing in for heavier kernels.
    pub compute_padding: Duration,
    /// Deliveries of a task with a missing input before the run is aborted.
    pub max_deliveries: u32,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        Self::with_lease(Duration::from_secs(10))
    }
}

impl WorkerConfig {
    /// Defaults with the given lease and `renew_interval = lease / 3`.
    pub fn with_lease(lease: Duration) -> Self {
        Self {
            lease,
            renew_interval: lease / 3,
            pipeline_width: 1,
            runtime_limit: Duration::from_secs(300),
            poll_interval: Duration::from_millis(50),
            idle_timeout: Duration::from_secs(10),
            compute_padding: Duration::ZERO,
            max_deliveries: 10,
        }
    }

    pub fn lifetime(&self) -> Lifetime {
        Lifetime { runtime_limit: self.runtime_limit, idle_timeout: self.idle_timeout }
    }

    /// Renewals allowed per lease; beyond this the lease is left to lapse.
    pub fn max_renewals(&self) -> u64 {
        (self.runtime_limit.as_nanos() / self.lease.as_nanos().max(1)) as u64
    }
}

/// The five ordered steps of a task after which a crash can be injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cut {
    AfterRead,
    AfterCompute,
    AfterWrite,
    AfterRecord,
    AfterEnqueue,
}

impl Cut {
    pub const ALL: [Cut; 5] = [Cut::AfterRead, Cut::AfterCompute, Cut::AfterWrite, Cut::AfterRecord, Cut::AfterEnqueue];

    pub fn name(self) -> &'static str {
        match self {
            Cut::AfterRead => "after-read",
            Cut::AfterCompute => "after-compute",
            Cut::AfterWrite => "after-write",
            Cut::AfterRecord => "after-record",
            Cut::AfterEnqueue => "after-enqueue",
        }
    }

    pub fn from_name(s: &str) -> Option<Cut> {
        Cut::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Decides whether a worker dies at a cut point.
pub trait FaultHook: Send + Sync {
    fn crash_at(&self, worker: usize, node: &NodeRef, cut: Cut) -> bool;
}

pub struct NoFaults;

impl FaultHook for NoFaults {
    fn crash_at(&self, _: usize, _: &NodeRef, _: Cut) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Read,
    Compute,
    Write,
    Finalize,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Read => "read",
            Phase::Compute => "compute",
            Phase::Write => "write",
            Phase::Finalize => "finalize",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskEvent {
    pub run_id: String,
    pub worker: usize,
    pub node: NodeRef,
    pub phase: Phase,
    pub t_start: Duration,
    pub t_end: Duration,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub flops: u64,
}

/// Collects task events from all workers.
#[derive(Debug, Default)]
pub struct EventLog {
    events: Mutex<Vec<TaskEvent>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, e: TaskEvent) {
        self.events.lock().push(e);
    }

    pub fn snapshot(&self) -> Vec<TaskEvent> {
        self.events.lock().clone()
    }
}

/// Everything a worker talks to. Workers share nothing else.
#[derive(Clone)]
pub struct Services {
    pub run_id: String,
    pub analyzer: Arc<Analyzer>,
    pub store: Arc<dyn ObjectStore>,
    pub queue: Arc<dyn TaskQueue>,
    pub state: Arc<dyn StateStore>,
    pub clock: Arc<dyn Clock>,
    pub events: Arc<EventLog>,
    pub faults: Arc<dyn FaultHook>,
}

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("worker crashed {}", .0.name())]
    Crashed(Cut),
    #[error("worker was killed")]
    Killed,
    #[error("input {0} is not in the store yet")]
    MissingInput(TileKey),
    #[error("task {node} failed: {reason}")]
    Failed { node: NodeRef, reason: String },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Queue(#[from] QueueError),
}

impl TaskError {
    /// Errors after which the worker process is gone.
    pub fn is_death(&self) -> bool {
        matches!(self, TaskError::Crashed(_) | TaskError::Killed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskReport {
    pub node: NodeRef,
    pub enqueued: Vec<NodeRef>,
    pub delete: DeleteOutcome,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub flops: u64,
}

/// External controls on a worker: kill, pause, graceful stop.
#[derive(Debug, Default)]
pub struct WorkerControl {
    killed: AtomicBool,
    stop: AtomicBool,
    stall_next: Mutex<Option<Duration>>,
    /// Clock time until which the worker is frozen, in nanoseconds; 0 when not stalled.
    stalled_until: AtomicU64,
}

impl WorkerControl {
    pub fn new() -> Self {
        Self::default()
    }

    /// Abrupt death: no further steps, renewals or cleanup.
    pub fn kill(&self) {
        self.killed.store(true, Ordering::SeqCst);
    }

    pub fn is_killed(&self) -> bool {
        self.killed.load(Ordering::SeqCst)
    }

    /// Finish in-flight tasks and exit.
    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    pub fn is_stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    /// Freezes the next compute phase for `d`, renewals included.
    pub fn stall_next(&self, d: Duration) {
        *self.stall_next.lock() = Some(d);
    }

    fn is_stalled(&self, now: Duration) -> bool {
        now.as_nanos() < self.stalled_until.load(Ordering::SeqCst) as u128
    }
}

/// Per-task context handed to [`execute_task`].
pub struct TaskContext<'a> {
    pub worker: usize,
    pub services: &'a Services,
    pub config: &'a WorkerConfig,
    pub control: &'a WorkerControl,
    /// Serializes compute phases of one worker's pipelined tasks.
    pub compute_token: &'a Mutex<()>,
}

impl TaskContext<'_> {
    fn step(&self, node: &NodeRef, cut: Cut) -> Result<(), TaskError> {
        if self.control.is_killed() {
            return Err(TaskError::Killed);
        }
        if self.services.faults.crash_at(self.worker, node, cut) {
            self.control.kill();
            return Err(TaskError::Crashed(cut));
        }
        Ok(())
    }

    fn event(&self, node: &NodeRef, phase: Phase, t_start: Duration, counters: (u64, u64, u64)) {
        let s = self.services;
        s.events.push(TaskEvent {
            run_id: s.run_id.clone(),
            worker: self.worker,
            node: node.clone(),
            phase,
            t_start,
            t_end: s.clock.now(),
            bytes_read: counters.0,
            bytes_written: counters.1,
            flops: counters.2,
        });
    }
}

/// Children of `node` paired with their parent counts.
pub fn children_with_totals(a: &Analyzer, node: &NodeRef) -> Result<Vec<(NodeRef, usize)>, AnalysisError> {
    a.children_of(node)?
        .into_iter()
        .map(|c| {
            let total = a.parents_of(&c)?.len();
            Ok((c, total))
        })
        .collect()
}

fn fail(s: &Services, node: &NodeRef, reason: String) -> TaskError {
    let _ = s.state.fail(&format!("{node}: {reason}"));
    TaskError::Failed { node: node.clone(), reason }
}

/// Runs one delivered task to completion.
pub fn execute_task(ctx: &TaskContext<'_>, msg: &TaskMessage, receipt: &Receipt) -> Result<TaskReport, TaskError> {
    let s = ctx.services;
    let node = &msg.node;
    let kernel = s.analyzer.kernel(node.line).ok_or(AnalysisError::UnknownLine(node.line))?;

    let t = s.clock.now();
    let mut inputs = Vec::new();
    let mut bytes_read = 0;
    for tile in s.analyzer.node_inputs(node)? {
        let key = TileKey::of(&s.run_id, &tile);
        match s.store.get_tile(&key) {
            Ok(t) => {
                bytes_read += t.encoded_len() as u64;
                inputs.push(t);
            }
            Err(StoreError::Missing(key)) => {
                if msg.delivery_count >= ctx.config.max_deliveries {
                    return Err(fail(
                        s,
                        node,
                        format!("input {key} still missing after {} deliveries", msg.delivery_count),
                    ));
                }
                return Err(TaskError::MissingInput(key));
            }
            Err(e) => return Err(e.into()),
        }
    }
    ctx.event(node, Phase::Read, t, (bytes_read, 0, 0));
    ctx.step(node, Cut::AfterRead)?;

    let t = s.clock.now();
    let refs: Vec<&Tile> = inputs.iter().collect();
    let shapes: Vec<(usize, usize)> = inputs.iter().map(Tile::shape).collect();
    let flops = kernel.flops(&shapes);
    let out = {
        let _token = ctx.compute_token.lock();
        let out = kernel.apply(&refs).map_err(|e| fail(s, node, e.to_string()))?;
        if !ctx.config.compute_padding.is_zero() {
            s.clock.sleep(ctx.config.compute_padding);
        }
        if let Some(d) = ctx.control.stall_next.lock().take() {
            let until = s.clock.now() + d;
            ctx.control.stalled_until.store(until.as_nanos() as u64, Ordering::SeqCst);
            s.clock.sleep(d);
            ctx.control.stalled_until.store(0, Ordering::SeqCst);
        }
        out
    };
    ctx.event(node, Phase::Compute, t, (0, 0, flops));
    ctx.step(node, Cut::AfterCompute)?;

    let t = s.clock.now();
    let mut bytes_written = 0;
    for tile in s.analyzer.node_outputs(node)? {
        s.store.put_tile(&TileKey::of(&s.run_id, &tile), &out)?;
        bytes_written += out.encoded_len() as u64;
    }
    ctx.event(node, Phase::Write, t, (0, bytes_written, 0));
    ctx.step(node, Cut::AfterWrite)?;

    let t = s.clock.now();
    let children = children_with_totals(&s.analyzer, node)?;
    let mut ready = s.state.record_completion(node, &children)?;
    ctx.step(node, Cut::AfterRecord)?;

    // A redelivered task may follow a crash between record and enqueue, in
    // which case record returned nothing; republish whatever is ready.
    if msg.delivery_count > 1 {
        let names: Vec<NodeRef> = children.iter().map(|(c, _)| c.clone()).collect();
        ready.extend(s.state.ready_not_done(&names)?);
        ready.sort();
        ready.dedup();
    }
    for c in &ready {
        s.queue.enqueue(c.clone())?;
    }
    s.state.mark_enqueued(&ready)?;
    ctx.step(node, Cut::AfterEnqueue)?;

    let delete = s.queue.delete(receipt)?;
    ctx.event(node, Phase::Finalize, t, (0, 0, 0));
    Ok(TaskReport { node: node.clone(), enqueued: ready, delete, bytes_read, bytes_written, flops })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitReason {
    Idle,
    RuntimeLimit,
    Stopped,
    Killed,
    QueueClosed,
    RunFailed,
}

impl ExitReason {
    pub fn name(self) -> &'static str {
        match self {
            ExitReason::Idle => "idle",
            ExitReason::RuntimeLimit => "runtime-limit",
            ExitReason::Stopped => "stopped",
            ExitReason::Killed => "killed",
            ExitReason::QueueClosed => "queue-closed",
            ExitReason::RunFailed => "run-failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerExit {
    pub worker: usize,
    pub reason: ExitReason,
    pub started: Duration,
    pub ended: Duration,
    pub tasks_completed: usize,
    pub tasks_abandoned: usize,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub flops: u64,
}

struct Held {
    receipt: Receipt,
    renewals: u64,
}

struct Shared {
    held: Mutex<HashMap<u64, Held>>,
    last_activity: Mutex<Duration>,
    durations: Mutex<Vec<Duration>>,
    exit: Mutex<Option<ExitReason>>,
    totals: Mutex<(usize, usize, u64, u64, u64)>,
}

impl Shared {
    fn set_exit(&self, r: ExitReason) {
        self.exit.lock().get_or_insert(r);
    }

    /// Twice the 95th percentile of observed task durations.
    fn headroom(&self) -> Duration {
        let mut d = self.durations.lock().clone();
        if d.is_empty() {
            return Duration::ZERO;
        }
        d.sort();
        let idx = ((d.len() as f64 * 0.95).ceil() as usize).clamp(1, d.len()) - 1;
        d[idx] * 2
    }
}

fn slot_loop(ctx: TaskContext<'_>, shared: &Shared, started: Duration) {
    let s = ctx.services;
    let cfg = ctx.config;
    loop {
        if ctx.control.is_killed() {
            shared.set_exit(ExitReason::Killed);
            return;
        }
        if ctx.control.is_stopped() {
            shared.set_exit(ExitReason::Stopped);
            return;
        }
        if shared.exit.lock().is_some() {
            // A sibling slot decided to wind down.
            return;
        }
        if matches!(s.state.failure(), Ok(Some(_))) {
            shared.set_exit(ExitReason::RunFailed);
            return;
        }
        let now = s.clock.now();
        let idle = if shared.held.lock().is_empty() {
            now.saturating_sub(*shared.last_activity.lock())
        } else {
            Duration::ZERO
        };
        if should_self_terminate(&cfg.lifetime(), now - started, idle, shared.headroom()) {
            let reason = if now - started + shared.headroom() >= cfg.runtime_limit {
                ExitReason::RuntimeLimit
            } else {
                ExitReason::Idle
            };
            shared.set_exit(reason);
            return;
        }
        match s.queue.receive(cfg.lease) {
            Ok(Some((msg, receipt))) => {
                let t0 = s.clock.now();
                *shared.last_activity.lock() = t0;
                shared.held.lock().insert(msg.id, Held { receipt, renewals: 0 });
                let result = execute_task(&ctx, &msg, &receipt);
                shared.held.lock().remove(&msg.id);
                let t1 = s.clock.now();
                *shared.last_activity.lock() = t1;
                match result {
                    Ok(r) => {
                        shared.durations.lock().push(t1 - t0);
                        let mut t = shared.totals.lock();
                        t.0 += 1;
                        t.2 += r.bytes_read;
                        t.3 += r.bytes_written;
                        t.4 += r.flops;
                    }
                    Err(e) if e.is_death() => {
                        shared.set_exit(ExitReason::Killed);
                        return;
                    }
                    Err(TaskError::Failed { .. }) => {
                        shared.set_exit(ExitReason::RunFailed);
                        return;
                    }
                    // Anything else: walk away and let the lease lapse.
                    Err(_) => shared.totals.lock().1 += 1,
                }
            }
            Ok(None) => s.clock.sleep(cfg.poll_interval),
            Err(QueueError::Closed) => {
                shared.set_exit(ExitReason::QueueClosed);
                return;
            }
            Err(_) => s.clock.sleep(cfg.poll_interval),
        }
    }
}

fn renew_loop(s: &Services, cfg: &WorkerConfig, control: &WorkerControl, shared: &Shared, done: &AtomicBool) {
    let cap = cfg.max_renewals();
    while !done.load(Ordering::SeqCst) && !control.is_killed() {
        s.clock.sleep(cfg.renew_interval.min(Duration::from_millis(20)).max(Duration::from_micros(100)));
        let now = s.clock.now();
        if control.is_killed() || control.is_stalled(now) {
            continue;
        }
        let mut held = shared.held.lock();
        for h in held.values_mut() {
            if h.renewals >= cap || h.receipt.expiry.saturating_sub(now) > cfg.lease - cfg.renew_interval {
                continue;
            }
            if let Ok(r) = s.queue.renew(&h.receipt, cfg.lease) {
                h.receipt = r;
                h.renewals += 1;
            }
        }
    }
}

/// Runs a worker until it exits: idle, near its runtime limit, stopped,
/// killed, or the run failed. Blocks the calling thread.
pub fn worker_loop(worker: usize, cfg: &WorkerConfig, services: &Services, control: &WorkerControl) -> WorkerExit {
    assert!(cfg.pipeline_width >= 1, "pipeline width must be at least 1");
    assert!(cfg.renew_interval < cfg.lease, "renew interval must be shorter than the lease");
    let started = services.clock.now();
    let shared = Shared {
        held: Mutex::new(HashMap::new()),
        last_activity: Mutex::new(started),
        durations: Mutex::new(Vec::new()),
        exit: Mutex::new(None),
        totals: Mutex::new((0, 0, 0, 0, 0)),
    };
    let token = Mutex::new(());
    let done = AtomicBool::new(false);
    std::thread::scope(|scope| {
        let renewer = scope.spawn(|| renew_loop(services, cfg, control, &shared, &done));
        let slots: Vec<_> = (0..cfg.pipeline_width)
            .map(|_| {
                let ctx = TaskContext { worker, services, config: cfg, control, compute_token: &token };
                let shared = &shared;
                scope.spawn(move || slot_loop(ctx, shared, started))
            })
            .collect();
        for s in slots {
            s.join().expect("worker slot panicked");
        }
        done.store(true, Ordering::SeqCst);
        renewer.join().expect("renewal thread panicked");
    });
    let t = *shared.totals.lock();
    let reason = shared.exit.lock().unwrap_or(ExitReason::Stopped);
    WorkerExit {
        worker,
        reason,
        started,
        ended: services.clock.now(),
        tasks_completed: t.0,
        tasks_abandoned: t.1,
        bytes_read: t.2,
        bytes_written: t.3,
        flops: t.4,
    }
}
