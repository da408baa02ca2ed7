//! Fault plans: worker kills, forced duplicate delivery, stalls, crashes at cut points.
//!
//! Plans are written as comma-separated events:
//!
//! - `kill:F@P%` kills fraction `F` of live workers once `P` percent of nodes are done
//! - `kill:F@T` does the same at run time `T` (`500ms`, `2s`)
//! - `dup:all` enqueues every task twice
//! - `stall:W:T` freezes worker `W` for `T` during its next compute phase
//! - `crash:CUT@K` kills the worker that reaches cut point `CUT` for the `K`th time

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use lambdapack_core::NodeRef;

use crate::control::{DeleteOutcome, QueueDepth, QueueError, Receipt, TaskMessage, TaskQueue};
use crate::executor::{Cut, FaultHook};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trigger {
    /// Fraction of DAG nodes completed, in `[0, 1]`.
    Progress(f64),
    Time(Duration),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KillEvent {
    pub fraction: f64,
    pub at: Trigger,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrashEvent {
    pub cut: Cut,
    /// 1-based count of arrivals at `cut` across all workers.
    pub nth: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaultPlan {
    pub kills: Vec<KillEvent>,
    pub duplicate_all: bool,
    pub stalls: Vec<(usize, Duration)>,
    pub crashes: Vec<CrashEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad fault spec `{spec}`: {reason}")]
pub struct FaultParseError {
    pub spec: String,
    pub reason: String,
}

fn bad(spec: &str, reason: impl Into<String>) -> FaultParseError {
    FaultParseError { spec: spec.into(), reason: reason.into() }
}

fn parse_duration(s: &str) -> Result<Duration, String> {
    humantime::parse_duration(s).map_err(|e| e.to_string())
}

impl FromStr for FaultPlan {
    type Err = FaultParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut plan = FaultPlan::default();
        for ev in s.split(',').map(str::trim).filter(|e| !e.is_empty()) {
            let (kind, rest) = ev.split_once(':').ok_or_else(|| bad(ev, "expected KIND:ARGS"))?;
            match kind {
                "kill" => {
                    let (frac, at) = rest.split_once('@').ok_or_else(|| bad(ev, "expected kill:F@WHEN"))?;
                    let fraction: f64 = frac.parse().map_err(|_| bad(ev, "fraction is not a number"))?;
                    if !(0.0..=1.0).contains(&fraction) {
                        return Err(bad(ev, "fraction must lie in [0, 1]"));
                    }
                    let at = match at.strip_suffix('%') {
                        Some(p) => {
                            let p: f64 = p.parse().map_err(|_| bad(ev, "percentage is not a number"))?;
                            if !(0.0..=100.0).contains(&p) {
                                return Err(bad(ev, "percentage must lie in [0, 100]"));
                            }
                            Trigger::Progress(p / 100.0)
                        }
                        None => Trigger::Time(parse_duration(at).map_err(|e| bad(ev, e))?),
                    };
                    plan.kills.push(KillEvent { fraction, at });
                }
                "dup" if rest == "all" => plan.duplicate_all = true,
                "stall" => {
                    let (w, d) = rest.split_once(':').ok_or_else(|| bad(ev, "expected stall:WORKER:DURATION"))?;
                    let w = w.parse().map_err(|_| bad(ev, "worker id is not an integer"))?;
                    plan.stalls.push((w, parse_duration(d).map_err(|e| bad(ev, e))?));
                }
                "crash" => {
                    let (cut, nth) = rest.split_once('@').ok_or_else(|| bad(ev, "expected crash:CUT@K"))?;
                    let cut = Cut::from_name(cut).ok_or_else(|| bad(ev, "unknown cut point"))?;
                    let nth =
                        nth.parse().ok().filter(|&k| k >= 1).ok_or_else(|| bad(ev, "K must be a positive integer"))?;
                    plan.crashes.push(CrashEvent { cut, nth });
                }
                _ => return Err(bad(ev, "unknown fault kind")),
            }
        }
        Ok(plan)
    }
}

impl fmt::Display for FaultPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        for k in &self.kills {
            parts.push(match k.at {
                Trigger::Progress(p) => format!("kill:{}@{}%", k.fraction, p * 100.0),
                Trigger::Time(t) => format!("kill:{}@{}", k.fraction, humantime::format_duration(t)),
            });
        }
        if self.duplicate_all {
            parts.push("dup:all".into());
        }
        for (w, d) in &self.stalls {
            parts.push(format!("stall:{w}:{}", humantime::format_duration(*d)));
        }
        for c in &self.crashes {
            parts.push(format!("crash:{}@{}", c.cut.name(), c.nth));
        }
        f.write_str(&parts.join(","))
    }
}

/// Fires each [`CrashEvent`] once.
#[derive(Debug)]
pub struct CrashHook {
    events: Vec<(CrashEvent, AtomicUsize)>,
}

impl CrashHook {
    pub fn new(events: &[CrashEvent]) -> Self {
        Self { events: events.iter().map(|e| (*e, AtomicUsize::new(0))).collect() }
    }

    /// Crashes injected so far.
    pub fn fired(&self) -> usize {
        self.events.iter().filter(|(e, n)| n.load(Ordering::SeqCst) >= e.nth).count()
    }
}

impl FaultHook for CrashHook {
    fn crash_at(&self, _: usize, _: &NodeRef, cut: Cut) -> bool {
        self.events.iter().filter(|(e, _)| e.cut == cut).any(|(e, n)| n.fetch_add(1, Ordering::SeqCst) + 1 == e.nth)
    }
}

/// Delivers every enqueued task twice, as two independent messages.
pub struct DuplicatingQueue<Q> {
    inner: Q,
}

impl<Q: TaskQueue> DuplicatingQueue<Q> {
    pub fn new(inner: Q) -> Self {
        Self { inner }
    }
}

impl<Q: TaskQueue> TaskQueue for DuplicatingQueue<Q> {
    fn enqueue(&self, node: NodeRef) -> Result<(), QueueError> {
        self.inner.enqueue(node.clone())?;
        self.inner.enqueue(node)
    }
    fn receive(&self, visibility: Duration) -> Result<Option<(TaskMessage, Receipt)>, QueueError> {
        self.inner.receive(visibility)
    }
    fn renew(&self, r: &Receipt, extension: Duration) -> Result<Receipt, QueueError> {
        self.inner.renew(r, extension)
    }
    fn delete(&self, r: &Receipt) -> Result<DeleteOutcome, QueueError> {
        self.inner.delete(r)
    }
    fn depth(&self) -> Result<QueueDepth, QueueError> {
        self.inner.depth()
    }
    fn close(&self) {
        self.inner.close()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::clock::ManualClock;
    use crate::control::MemQueue;

    #[test]
    fn parses_and_prints() {
        let p: FaultPlan = "kill:0.8@50%, dup:all,stall:2:300ms,crash:after-write@7,kill:0.5@2s".parse().unwrap();
        assert_eq!(p.kills[0], KillEvent { fraction: 0.8, at: Trigger::Progress(0.5) });
        assert_eq!(p.kills[1].at, Trigger::Time(Duration::from_secs(2)));
        assert!(p.duplicate_all);
        assert_eq!(p.stalls, [(2, Duration::from_millis(300))]);
        assert_eq!(p.crashes, [CrashEvent { cut: Cut::AfterWrite, nth: 7 }]);
        assert_eq!(p.to_string().parse::<FaultPlan>().unwrap(), p);
        assert_eq!("".parse::<FaultPlan>().unwrap(), FaultPlan::default());
    }

    #[test]
    fn rejects_nonsense() {
        for s in [
            "kill:1.5@50%",
            "kill:0.5",
            "kill:0.5@150%",
            "dup:some",
            "stall:x:1s",
            "crash:later@1",
            "crash:after-read@0",
            "boom",
        ] {
            assert!(s.parse::<FaultPlan>().is_err(), "{s}");
        }
    }

    #[test]
    fn crash_fires_once_on_nth_arrival() {
        let h = CrashHook::new(&[CrashEvent { cut: Cut::AfterRecord, nth: 2 }]);
        let n = NodeRef::new(0, Default::default());
        assert!(!h.crash_at(0, &n, Cut::AfterRead));
        assert!(!h.crash_at(0, &n, Cut::AfterRecord));
        assert!(h.crash_at(1, &n, Cut::AfterRecord));
        assert!(!h.crash_at(1, &n, Cut::AfterRecord));
        assert_eq!(h.fired(), 1);
    }

    #[test]
    fn duplicating_queue_doubles() {
        let q = DuplicatingQueue::new(MemQueue::new("d", Arc::new(ManualClock::new())));
        q.enqueue(NodeRef::new(0, Default::default())).unwrap();
        assert_eq!(q.depth().unwrap().pending, 2);
    }
}
