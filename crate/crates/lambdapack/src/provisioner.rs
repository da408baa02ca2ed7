//! Queue-driven worker provisioning.
//!
//! The provisioner only launches. Workers leave on their own through the
//! idle timeout or the runtime limit.

use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use lambdapack_core::policy::{desired_launches, ScalingPolicy};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::clock::Clock;
use crate::control::{QueueError, TaskQueue};
use crate::executor::{worker_loop, ExitReason, Services, WorkerConfig, WorkerControl, WorkerExit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimelineSample {
    pub t: Duration,
    pub pending: usize,
    pub running: usize,
    pub booting: usize,
}

/// Something that can start workers and report how many are alive.
pub trait WorkerPool {
    /// `(running, booting)` at `now`.
    fn counts(&mut self, now: Duration) -> (usize, usize);
    /// Starts up to `n` workers; returns how many were started.
    fn launch(&mut self, n: usize, now: Duration) -> usize;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sizing {
    /// Keep this many workers alive, replacing any that exit.
    Fixed(usize),
    Autoscale(ScalingPolicy),
}

#[derive(Debug, Clone)]
pub struct Provisioner {
    pub sizing: Sizing,
    pub period: Duration,
    pub timeline: Vec<TimelineSample>,
    last_step: Option<Duration>,
}

impl Provisioner {
    pub fn new(sizing: Sizing, period: Duration) -> Self {
        Self { sizing, period, timeline: Vec::new(), last_step: None }
    }

    pub fn launches_for(&self, pending: usize, running: usize, booting: usize) -> usize {
        match &self.sizing {
            Sizing::Fixed(n) => n.saturating_sub(running + booting),
            Sizing::Autoscale(p) => desired_launches(pending, running, booting, p),
        }
    }

    /// True once a period has passed since the last control step.
    pub fn due(&self, now: Duration) -> bool {
        self.last_step.is_none_or(|t| now >= t + self.period)
    }

    /// Samples the queue, launches workers, and appends a timeline sample.
    pub fn control_step(
        &mut self,
        now: Duration,
        queue: &dyn TaskQueue,
        pool: &mut dyn WorkerPool,
    ) -> Result<usize, QueueError> {
        self.last_step = Some(now);
        let pending = queue.depth()?.pending;
        let (running, booting) = pool.counts(now);
        self.timeline.push(TimelineSample { t: now, pending, running, booting });
        let want = self.launches_for(pending, running, booting);
        Ok(if want > 0 { pool.launch(want, now) } else { 0 })
    }
}

/// A worker's full life as seen by the pool.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerRecord {
    pub id: usize,
    pub launched: Duration,
    /// `None` when the worker died before it finished booting.
    pub exit: Option<WorkerExit>,
    pub ended: Duration,
}

struct PoolWorker {
    id: usize,
    launched: Duration,
    control: Arc<WorkerControl>,
    handle: JoinHandle<Option<WorkerExit>>,
}

/// Builds the services a newly launched worker talks to.
pub type ServicesFactory = Arc<dyn Fn(usize) -> Services + Send + Sync>;

/// Workers as OS threads. Each sleeps through `startup_latency` before it
/// starts polling.
pub struct ThreadPool {
    factory: ServicesFactory,
    clock: Arc<dyn Clock>,
    config: WorkerConfig,
    startup_latency: Duration,
    max_workers: usize,
    live: Vec<PoolWorker>,
    finished: Vec<WorkerRecord>,
    next_id: usize,
}

impl ThreadPool {
    pub fn new(
        factory: ServicesFactory,
        clock: Arc<dyn Clock>,
        config: WorkerConfig,
        startup_latency: Duration,
        max_workers: usize,
    ) -> Self {
        Self {
            factory,
            clock,
            config,
            startup_latency,
            max_workers,
            live: Vec::new(),
            finished: Vec::new(),
            next_id: 0,
        }
    }

    fn reap(&mut self) {
        let (done, live): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.live).into_iter().partition(|w| w.handle.is_finished());
        self.live = live;
        for w in done {
            self.finish(w);
        }
    }

    fn finish(&mut self, w: PoolWorker) {
        let exit = w.handle.join().expect("worker thread panicked");
        let ended = exit.as_ref().map_or_else(|| self.clock.now(), |e| e.ended);
        self.finished.push(WorkerRecord { id: w.id, launched: w.launched, exit, ended });
    }

    pub fn alive(&mut self) -> Vec<usize> {
        self.reap();
        self.live.iter().filter(|w| !w.control.is_killed()).map(|w| w.id).collect()
    }

    /// Kills `round(fraction × alive)` workers chosen by `rng`; returns their ids.
    pub fn kill_fraction(&mut self, fraction: f64, rng: &mut impl Rng) -> Vec<usize> {
        let mut ids = self.alive();
        let n = (fraction.clamp(0.0, 1.0) * ids.len() as f64).round() as usize;
        ids.shuffle(rng);
        ids.truncate(n);
        for w in &self.live {
            if ids.contains(&w.id) {
                w.control.kill();
            }
        }
        ids.sort_unstable();
        ids
    }

    /// Freezes the next compute phase of worker `id`.
    pub fn stall(&self, id: usize, d: Duration) -> bool {
        self.live.iter().find(|w| w.id == id).map(|w| w.control.stall_next(d)).is_some()
    }

    pub fn launched(&self) -> usize {
        self.next_id
    }

    /// Stops every worker, waits for them, and returns all records sorted by id.
    pub fn shutdown(mut self) -> Vec<WorkerRecord> {
        for w in &self.live {
            w.control.stop();
        }
        for w in std::mem::take(&mut self.live) {
            self.finish(w);
        }
        self.finished.sort_by_key(|r| r.id);
        self.finished
    }
}

impl WorkerPool for ThreadPool {
    fn counts(&mut self, now: Duration) -> (usize, usize) {
        self.reap();
        let alive = self.live.iter().filter(|w| !w.control.is_killed());
        let booting = alive.clone().filter(|w| now < w.launched + self.startup_latency).count();
        (alive.count() - booting, booting)
    }

    fn launch(&mut self, n: usize, now: Duration) -> usize {
        self.reap();
        let n = n.min(self.max_workers.saturating_sub(self.live.len()));
        for _ in 0..n {
            let id = self.next_id;
            self.next_id += 1;
            let control = Arc::new(WorkerControl::new());
            let services = (self.factory)(id);
            let config = self.config.clone();
            let boot = self.startup_latency;
            let c = control.clone();
            let handle = std::thread::Builder::new()
                .name(format!("worker-{id}"))
                .spawn(move || {
                    let start = services.clock.now();
                    while services.clock.now() < start + boot {
                        if c.is_killed() || c.is_stopped() {
                            return None;
                        }
                        services.clock.sleep(Duration::from_millis(2).min(boot));
                    }
                    Some(worker_loop(id, &config, &services, &c))
                })
                .expect("spawn worker thread");
            self.live.push(PoolWorker { id, launched: now, control, handle });
        }
        n
    }
}

/// Seconds each worker existed, booting included.
pub fn worker_seconds(records: &[WorkerRecord]) -> f64 {
    records.iter().map(|r| r.ended.saturating_sub(r.launched).as_secs_f64()).sum()
}

pub fn killed_count(records: &[WorkerRecord]) -> usize {
    records.iter().filter(|r| r.exit.as_ref().is_none_or(|e| e.reason == ExitReason::Killed)).count()
}
