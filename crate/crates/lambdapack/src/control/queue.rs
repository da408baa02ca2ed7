use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use lambdapack_core::NodeRef;
use parking_lot::Mutex;

use crate::clock::Clock;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskMessage {
    pub id: u64,
    pub node: NodeRef,
    pub run_id: String,
    pub enqueue_time: Duration,
    /// Number of times this message has been received, including this one.
    pub delivery_count: u32,
    /// Unused by the FIFO queue; kept for experiments with priorities.
    pub priority: i32,
}

/// Lease on a received message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Receipt {
    pub msg_id: u64,
    pub token: u64,
    pub expiry: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeleteOutcome {
    Deleted,
    AlreadyDeleted,
    /// The lease expired; another receiver may own the message now.
    Stale,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueueDepth {
    /// Messages not yet deleted.
    pub pending: usize,
    pub visible: usize,
    pub in_flight: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueueError {
    #[error("queue is closed")]
    Closed,
    #[error("lease expired")]
    Expired,
    #[error("queue unavailable: {0}")]
    Unavailable(String),
}

/// At-least-once queue with visibility-timeout leases.
pub trait TaskQueue: Send + Sync {
    fn enqueue(&self, node: NodeRef) -> Result<(), QueueError>;
    /// Takes the oldest visible message and hides it for `visibility`.
    fn receive(&self, visibility: Duration) -> Result<Option<(TaskMessage, Receipt)>, QueueError>;
    fn renew(&self, r: &Receipt, extension: Duration) -> Result<Receipt, QueueError>;
    fn delete(&self, r: &Receipt) -> Result<DeleteOutcome, QueueError>;
    fn depth(&self) -> Result<QueueDepth, QueueError>;
    fn close(&self);
}

struct Entry {
    msg: TaskMessage,
    visible_at: Duration,
    token: u64,
}

struct Inner {
    next_id: u64,
    next_token: u64,
    entries: BTreeMap<u64, Entry>,
    closed: bool,
}

pub struct MemQueue {
    run_id: String,
    clock: Arc<dyn Clock>,
    inner: Mutex<Inner>,
}

impl MemQueue {
    pub fn new(run_id: &str, clock: Arc<dyn Clock>) -> Self {
        Self {
            run_id: run_id.into(),
            clock,
            inner: Mutex::new(Inner { next_id: 0, next_token: 1, entries: BTreeMap::new(), closed: false }),
        }
    }
}

impl TaskQueue for MemQueue {
    fn enqueue(&self, node: NodeRef) -> Result<(), QueueError> {
        let now = self.clock.now();
        let mut q = self.inner.lock();
        if q.closed {
            return Err(QueueError::Closed);
        }
        let id = q.next_id;
        q.next_id += 1;
        let msg =
            TaskMessage { id, node, run_id: self.run_id.clone(), enqueue_time: now, delivery_count: 0, priority: 0 };
        q.entries.insert(id, Entry { msg, visible_at: now, token: 0 });
        Ok(())
    }

    fn receive(&self, visibility: Duration) -> Result<Option<(TaskMessage, Receipt)>, QueueError> {
        assert!(!visibility.is_zero(), "visibility timeout must be positive");
        let now = self.clock.now();
        let mut q = self.inner.lock();
        let token = q.next_token;
        let Some(e) = q.entries.values_mut().find(|e| e.visible_at <= now) else {
            return Ok(None);
        };
        e.visible_at = now + visibility;
        e.token = token;
        e.msg.delivery_count += 1;
        let out = (e.msg.clone(), Receipt { msg_id: e.msg.id, token, expiry: e.visible_at });
        q.next_token += 1;
        Ok(Some(out))
    }

    fn renew(&self, r: &Receipt, extension: Duration) -> Result<Receipt, QueueError> {
        let now = self.clock.now();
        let mut q = self.inner.lock();
        match q.entries.get_mut(&r.msg_id) {
            Some(e) if e.token == r.token && now < e.visible_at => {
                e.visible_at = now + extension;
                Ok(Receipt { expiry: e.visible_at, ..*r })
            }
            _ => Err(QueueError::Expired),
        }
    }

    fn delete(&self, r: &Receipt) -> Result<DeleteOutcome, QueueError> {
        let now = self.clock.now();
        let mut q = self.inner.lock();
        match q.entries.get(&r.msg_id) {
            None if r.msg_id < q.next_id => Ok(DeleteOutcome::AlreadyDeleted),
            Some(e) if e.token == r.token && now < e.visible_at => {
                q.entries.remove(&r.msg_id);
                Ok(DeleteOutcome::Deleted)
            }
            _ => Ok(DeleteOutcome::Stale),
        }
    }

    fn depth(&self) -> Result<QueueDepth, QueueError> {
        let now = self.clock.now();
        let q = self.inner.lock();
        let visible = q.entries.values().filter(|e| e.visible_at <= now).count();
        Ok(QueueDepth { pending: q.entries.len(), visible, in_flight: q.entries.len() - visible })
    }

    fn close(&self) {
        self.inner.lock().closed = true;
    }
}

impl<Q: TaskQueue + ?Sized> TaskQueue for Arc<Q> {
    fn enqueue(&self, node: NodeRef) -> Result<(), QueueError> {
        (**self).enqueue(node)
    }
    fn receive(&self, visibility: Duration) -> Result<Option<(TaskMessage, Receipt)>, QueueError> {
        (**self).receive(visibility)
    }
    fn renew(&self, r: &Receipt, extension: Duration) -> Result<Receipt, QueueError> {
        (**self).renew(r, extension)
    }
    fn delete(&self, r: &Receipt) -> Result<DeleteOutcome, QueueError> {
        (**self).delete(r)
    }
    fn depth(&self) -> Result<QueueDepth, QueueError> {
        (**self).depth()
    }
    fn close(&self) {
        (**self).close()
    }
}
