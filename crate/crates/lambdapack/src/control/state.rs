use std::collections::{BTreeSet, HashMap};
use std::hash::{BuildHasher, RandomState};
use std::sync::atomic::{AtomicUsize, Ordering};

use lambdapack_core::NodeRef;
use parking_lot::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeStatus {
    Unseen,
    Enqueued,
    Done,
}

impl NodeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeStatus::Unseen => "unseen",
            NodeStatus::Enqueued => "enqueued",
            NodeStatus::Done => "done",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StateError {
    #[error("state store unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StateStats {
    /// Nodes marked done.
    pub done: usize,
    /// Completions reported for nodes already done.
    pub duplicate_completions: usize,
    /// Children reported ready by some completion.
    pub ready_events: usize,
}

/// Atomic per-node readiness tracking.
pub trait StateStore: Send + Sync {
    /// Marks `node` done and credits it to each child, given with its total
    /// parent count. Returns the children that became ready through this
    /// call. A repeated completion of the same node returns nothing.
    fn record_completion(&self, node: &NodeRef, children: &[(NodeRef, usize)]) -> Result<Vec<NodeRef>, StateError>;
    /// The subset of `nodes` whose parents are all done but which are not done themselves.
    fn ready_not_done(&self, nodes: &[NodeRef]) -> Result<Vec<NodeRef>, StateError>;
    fn mark_enqueued(&self, nodes: &[NodeRef]) -> Result<(), StateError>;
    fn status(&self, node: &NodeRef) -> Result<NodeStatus, StateError>;
    fn stats(&self) -> Result<StateStats, StateError>;
    /// Records a fatal error; the first reason wins.
    fn fail(&self, reason: &str) -> Result<(), StateError>;
    fn failure(&self) -> Result<Option<String>, StateError>;
    /// One line per known node, `line:binding status completed/total`, sorted.
    fn snapshot(&self) -> Result<Vec<String>, StateError>;
}

#[derive(Debug, Default)]
struct NodeState {
    status: Option<NodeStatus>,
    parents_done: BTreeSet<NodeRef>,
    total_parents: Option<usize>,
}

impl NodeState {
    fn status(&self) -> NodeStatus {
        self.status.unwrap_or(NodeStatus::Unseen)
    }

    fn ready(&self) -> bool {
        self.total_parents.is_some_and(|t| self.parents_done.len() >= t)
    }
}

const SHARDS: usize = 16;

pub struct MemStateStore {
    shards: Vec<Mutex<HashMap<NodeRef, NodeState>>>,
    hasher: RandomState,
    done: AtomicUsize,
    duplicates: AtomicUsize,
    ready_events: AtomicUsize,
    failure: Mutex<Option<String>>,
}

impl Default for MemStateStore {
    fn default() -> Self {
        Self::new()
    }
}

impl MemStateStore {
    pub fn new() -> Self {
        Self {
            shards: (0..SHARDS).map(|_| Mutex::new(HashMap::new())).collect(),
            hasher: RandomState::new(),
            done: AtomicUsize::new(0),
            duplicates: AtomicUsize::new(0),
            ready_events: AtomicUsize::new(0),
            failure: Mutex::new(None),
        }
    }

    fn shard(&self, n: &NodeRef) -> &Mutex<HashMap<NodeRef, NodeState>> {
        &self.shards[self.hasher.hash_one(n) as usize % SHARDS]
    }
}

impl StateStore for MemStateStore {
    fn record_completion(&self, node: &NodeRef, children: &[(NodeRef, usize)]) -> Result<Vec<NodeRef>, StateError> {
        {
            let mut shard = self.shard(node).lock();
            let st = shard.entry(node.clone()).or_default();
            if st.status() == NodeStatus::Done {
                self.duplicates.fetch_add(1, Ordering::Relaxed);
                return Ok(Vec::new());
            }
            st.status = Some(NodeStatus::Done);
            self.done.fetch_add(1, Ordering::Relaxed);
        }
        let mut ready = Vec::new();
        for (child, total) in children {
            let mut shard = self.shard(child).lock();
            let st = shard.entry(child.clone()).or_default();
            let total = *st.total_parents.get_or_insert(*total);
            if st.parents_done.insert(node.clone()) && st.parents_done.len() == total {
                ready.push(child.clone());
                self.ready_events.fetch_add(1, Ordering::Relaxed);
            }
        }
        Ok(ready)
    }

    fn ready_not_done(&self, nodes: &[NodeRef]) -> Result<Vec<NodeRef>, StateError> {
        Ok(nodes
            .iter()
            .filter(|n| {
                let shard = self.shard(n).lock();
                shard.get(*n).is_some_and(|st| st.ready() && st.status() != NodeStatus::Done)
            })
            .cloned()
            .collect())
    }

    fn mark_enqueued(&self, nodes: &[NodeRef]) -> Result<(), StateError> {
        for n in nodes {
            let mut shard = self.shard(n).lock();
            let st = shard.entry(n.clone()).or_default();
            if st.status() == NodeStatus::Unseen {
                st.status = Some(NodeStatus::Enqueued);
            }
        }
        Ok(())
    }

    fn status(&self, node: &NodeRef) -> Result<NodeStatus, StateError> {
        Ok(self.shard(node).lock().get(node).map_or(NodeStatus::Unseen, NodeState::status))
    }

    fn stats(&self) -> Result<StateStats, StateError> {
        Ok(StateStats {
            done: self.done.load(Ordering::Relaxed),
            duplicate_completions: self.duplicates.load(Ordering::Relaxed),
            ready_events: self.ready_events.load(Ordering::Relaxed),
        })
    }

    fn fail(&self, reason: &str) -> Result<(), StateError> {
        self.failure.lock().get_or_insert_with(|| reason.to_string());
        Ok(())
    }

    fn failure(&self) -> Result<Option<String>, StateError> {
        Ok(self.failure.lock().clone())
    }

    fn snapshot(&self) -> Result<Vec<String>, StateError> {
        let mut rows: Vec<(NodeRef, String)> = Vec::new();
        for shard in &self.shards {
            for (n, st) in shard.lock().iter() {
                let total = st.total_parents.map_or_else(|| "0".to_string(), |t| t.to_string());
                rows.push((n.clone(), format!("{n} {} {}/{total}", st.status().as_str(), st.parents_done.len())));
            }
        }
        rows.sort();
        Ok(rows.into_iter().map(|(_, s)| s).collect())
    }
}

impl<S: StateStore + ?Sized> StateStore for std::sync::Arc<S> {
    fn record_completion(&self, node: &NodeRef, children: &[(NodeRef, usize)]) -> Result<Vec<NodeRef>, StateError> {
        (**self).record_completion(node, children)
    }
    fn ready_not_done(&self, nodes: &[NodeRef]) -> Result<Vec<NodeRef>, StateError> {
        (**self).ready_not_done(nodes)
    }
    fn mark_enqueued(&self, nodes: &[NodeRef]) -> Result<(), StateError> {
        (**self).mark_enqueued(nodes)
    }
    fn status(&self, node: &NodeRef) -> Result<NodeStatus, StateError> {
        (**self).status(node)
    }
    fn stats(&self) -> Result<StateStats, StateError> {
        (**self).stats()
    }
    fn fail(&self, reason: &str) -> Result<(), StateError> {
        (**self).fail(reason)
    }
    fn failure(&self) -> Result<Option<String>, StateError> {
        (**self).failure()
    }
    fn snapshot(&self) -> Result<Vec<String>, StateError> {
        (**self).snapshot()
    }
}
