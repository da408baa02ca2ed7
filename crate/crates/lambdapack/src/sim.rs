//! Time-stepped simulation of the provisioner and a worker fleet.
//!
//! Runs the real queue, state store and dependency analysis against a
//! manual clock. Tasks take a fixed time and touch no data, so scaling
//! behaviour can be studied over hours of simulated time in milliseconds.

use std::sync::Arc;
use std::time::Duration;

use lambdapack_core::analysis::AnalysisError;
use lambdapack_core::policy::ScalingPolicy;
use lambdapack_core::{Analyzer, NodeRef};

use crate::clock::{Clock, ManualClock};
use crate::control::{MemQueue, MemStateStore, Receipt, StateStore, TaskMessage, TaskQueue};
use crate::executor::children_with_totals;
use crate::provisioner::{Provisioner, Sizing, TimelineSample, WorkerPool};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub policy: ScalingPolicy,
    pub task_time: Duration,
    pub idle_timeout: Duration,
    pub tick: Duration,
    pub max_time: Duration,
}

impl SimConfig {
    pub fn new(policy: ScalingPolicy, task_time: Duration) -> Self {
        Self {
            policy,
            task_time,
            idle_timeout: Duration::from_secs(10),
            tick: Duration::from_millis(100),
            max_time: Duration::from_secs(24 * 3600),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub complete: bool,
    /// Time the last task finished, or the end of simulation.
    pub completion_time: Duration,
    /// Sum of worker lifetimes, booting included, cut off at completion.
    pub worker_seconds: f64,
    pub tasks_executed: usize,
    pub peak_workers: usize,
    pub timeline: Vec<TimelineSample>,
}

struct SimWorker {
    launched: Duration,
    ready_at: Duration,
    exited: Option<Duration>,
    slots: Vec<Option<(TaskMessage, Receipt, Duration)>>,
    last_busy: Duration,
}

struct SimPool {
    workers: Vec<SimWorker>,
    startup: Duration,
    width: usize,
    max_workers: usize,
}

impl SimPool {
    fn alive(&self) -> impl Iterator<Item = &SimWorker> {
        self.workers.iter().filter(|w| w.exited.is_none())
    }
}

impl WorkerPool for SimPool {
    fn counts(&mut self, now: Duration) -> (usize, usize) {
        let booting = self.alive().filter(|w| now < w.ready_at).count();
        (self.alive().count() - booting, booting)
    }

    fn launch(&mut self, n: usize, now: Duration) -> usize {
        let n = n.min(self.max_workers.saturating_sub(self.alive().count()));
        for _ in 0..n {
            self.workers.push(SimWorker {
                launched: now,
                ready_at: now + self.startup,
                exited: None,
                slots: vec![None; self.width],
                last_busy: now + self.startup,
            });
        }
        n
    }
}

/// What happens when a simulated task finishes.
trait Workload {
    /// Returns the nodes to enqueue.
    fn complete(&mut self, node: &NodeRef) -> Vec<NodeRef>;
    fn done(&self) -> bool;
    /// Called once per tick after workers act.
    fn refill(&mut self, _queue: &dyn TaskQueue) {}
}

fn run(cfg: &SimConfig, roots: &[NodeRef], work: &mut dyn Workload) -> SimReport {
    let clock = ManualClock::new();
    let queue = MemQueue::new("sim", Arc::new(clock.clone()));
    // No worker in the simulation dies, so leases never need to lapse.
    let lease = cfg.max_time * 2;
    for r in roots {
        queue.enqueue(r.clone()).expect("open queue");
    }
    let mut prov = Provisioner::new(Sizing::Autoscale(cfg.policy.clone()), cfg.policy.period);
    let mut pool = SimPool {
        workers: Vec::new(),
        startup: cfg.policy.startup_latency,
        width: cfg.policy.pipeline_width,
        max_workers: cfg.policy.max_workers,
    };
    let mut tasks = 0;
    let mut peak = 0;
    let mut completion = None;
    work.refill(&queue);
    while clock.now() <= cfg.max_time {
        let now = clock.now();
        for w in pool.workers.iter_mut().filter(|w| w.exited.is_none() && now >= w.ready_at) {
            for slot in w.slots.iter_mut() {
                if let Some((msg, receipt, finish)) = slot.take() {
                    if finish <= now {
                        for c in work.complete(&msg.node) {
                            queue.enqueue(c).expect("open queue");
                        }
                        queue.delete(&receipt).expect("live lease");
                        tasks += 1;
                        w.last_busy = now;
                    } else {
                        *slot = Some((msg, receipt, finish));
                    }
                }
            }
        }
        if work.done() {
            completion = Some(now);
            break;
        }
        for w in pool.workers.iter_mut().filter(|w| w.exited.is_none() && now >= w.ready_at) {
            for slot in w.slots.iter_mut().filter(|s| s.is_none()) {
                if let Some((msg, receipt)) = queue.receive(lease).expect("open queue") {
                    *slot = Some((msg, receipt, now + cfg.task_time));
                    w.last_busy = now;
                }
            }
            if w.slots.iter().all(Option::is_none) && now - w.last_busy >= cfg.idle_timeout {
                w.exited = Some(now);
            }
        }
        work.refill(&queue);
        if prov.due(now) {
            prov.control_step(now, &queue, &mut pool).expect("open queue");
        }
        peak = peak.max(pool.alive().count());
        clock.advance(cfg.tick);
    }
    let end = completion.unwrap_or_else(|| clock.now());
    let worker_seconds =
        pool.workers.iter().map(|w| (w.exited.unwrap_or(end).min(end).saturating_sub(w.launched)).as_secs_f64()).sum();
    SimReport {
        complete: completion.is_some(),
        completion_time: end,
        worker_seconds,
        tasks_executed: tasks,
        peak_workers: peak,
        timeline: prov.timeline,
    }
}

struct DagWorkload<'a> {
    analyzer: &'a Analyzer,
    state: MemStateStore,
    total: usize,
    error: Option<AnalysisError>,
}

impl Workload for DagWorkload<'_> {
    fn complete(&mut self, node: &NodeRef) -> Vec<NodeRef> {
        match children_with_totals(self.analyzer, node) {
            Ok(children) => self.state.record_completion(node, &children).expect("in-memory state"),
            Err(e) => {
                self.error.get_or_insert(e);
                Vec::new()
            }
        }
    }

    fn done(&self) -> bool {
        self.error.is_some() || self.state.stats().expect("in-memory state").done >= self.total
    }
}

/// Executes a program's DAG, seeded with `roots`, under autoscaling.
pub fn simulate_dag(
    analyzer: &Analyzer,
    roots: &[NodeRef],
    total_nodes: usize,
    cfg: &SimConfig,
) -> Result<SimReport, AnalysisError> {
    let mut w = DagWorkload { analyzer, state: MemStateStore::new(), total: total_nodes, error: None };
    let report = run(cfg, roots, &mut w);
    match w.error {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

struct HeldQueue {
    depth: usize,
    next: i64,
}

impl Workload for HeldQueue {
    fn complete(&mut self, _: &NodeRef) -> Vec<NodeRef> {
        Vec::new()
    }

    fn done(&self) -> bool {
        false
    }

    fn refill(&mut self, queue: &dyn TaskQueue) {
        let pending = queue.depth().expect("open queue").pending;
        for _ in pending..self.depth {
            queue.enqueue(NodeRef::new(0, [("i", self.next)].into_iter().collect())).expect("open queue");
            self.next += 1;
        }
    }
}

/// Keeps `depth` tasks pending for `duration` of simulated time.
pub fn simulate_held_queue(depth: usize, duration: Duration, cfg: &SimConfig) -> SimReport {
    let cfg = SimConfig { max_time: duration, ..cfg.clone() };
    run(&cfg, &[], &mut HeldQueue { depth, next: 0 })
}
