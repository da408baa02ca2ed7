//! Coordination services: the leased task queue and the readiness state
//! store, each with an in-process backend and a TCP client for a shared
//! local server.

mod queue;
pub mod remote;
mod state;

pub use queue::{DeleteOutcome, MemQueue, QueueDepth, QueueError, Receipt, TaskMessage, TaskQueue};
pub use state::{MemStateStore, NodeStatus, StateError, StateStats, StateStore};

use lambdapack_core::TileRef;

use crate::store::{ObjectStore, TileKey};

/// True once every output tile exists in the store.
pub fn is_run_complete(store: &dyn ObjectStore, run_id: &str, outputs: &[TileRef]) -> bool {
    outputs.iter().all(|t| store.exists(&TileKey::of(run_id, t)))
}
