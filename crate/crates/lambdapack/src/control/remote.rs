//! Queue and state store served over TCP, one JSON object per line.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use lambdapack_core::NodeRef;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{
    DeleteOutcome, NodeStatus, QueueDepth, QueueError, Receipt, StateError, StateStats, StateStore, TaskMessage,
    TaskQueue,
};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct WireReceipt {
    msg_id: u64,
    token: u64,
    expiry_us: u64,
}

impl From<Receipt> for WireReceipt {
    fn from(r: Receipt) -> Self {
        Self { msg_id: r.msg_id, token: r.token, expiry_us: r.expiry.as_micros() as u64 }
    }
}

impl From<WireReceipt> for Receipt {
    fn from(r: WireReceipt) -> Self {
        Self { msg_id: r.msg_id, token: r.token, expiry: Duration::from_micros(r.expiry_us) }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WireMessage {
    id: u64,
    node: String,
    run_id: String,
    enqueue_time_us: u64,
    delivery_count: u32,
    priority: i32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Request {
    Enqueue { node: String },
    Receive { visibility_us: u64 },
    Renew { receipt: WireReceipt, extension_us: u64 },
    Delete { receipt: WireReceipt },
    Depth,
    Close,
    Record { node: String, children: Vec<(String, usize)> },
    ReadyNotDone { nodes: Vec<String> },
    MarkEnqueued { nodes: Vec<String> },
    Status { node: String },
    Stats,
    Fail { reason: String },
    Failure,
    Snapshot,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Response {
    Ok,
    Error { message: String, expired: bool, closed: bool },
    Message { msg: Option<(WireMessage, WireReceipt)> },
    Receipt { receipt: WireReceipt },
    Deleted { outcome: String },
    Depth { pending: usize, visible: usize, in_flight: usize },
    Nodes { nodes: Vec<String> },
    Status { status: String },
    Stats { done: usize, duplicate_completions: usize, ready_events: usize },
    Failure { reason: Option<String> },
    Lines { lines: Vec<String> },
}

fn parse_node(s: &str) -> Result<NodeRef, String> {
    s.parse().map_err(|e: lambdapack_core::lang::NodeParseError| e.to_string())
}

fn parse_nodes(v: &[String]) -> Result<Vec<NodeRef>, String> {
    v.iter().map(|s| parse_node(s)).collect()
}

fn strings(v: &[NodeRef]) -> Vec<String> {
    v.iter().map(ToString::to_string).collect()
}

fn queue_err(e: QueueError) -> Response {
    Response::Error { message: e.to_string(), expired: e == QueueError::Expired, closed: e == QueueError::Closed }
}

fn plain_err(message: String) -> Response {
    Response::Error { message, expired: false, closed: false }
}

fn handle(req: Request, queue: &dyn TaskQueue, state: &dyn StateStore) -> Response {
    let q = |r: Result<Response, QueueError>| r.unwrap_or_else(queue_err);
    let s = |r: Result<Response, StateError>| r.unwrap_or_else(|e| plain_err(e.to_string()));
    let parsed = |r: Result<Response, String>| r.unwrap_or_else(plain_err);
    match req {
        Request::Enqueue { node } => parsed(parse_node(&node).map(|n| q(queue.enqueue(n).map(|_| Response::Ok)))),
        Request::Receive { visibility_us } => {
            q(queue.receive(Duration::from_micros(visibility_us)).map(|m| Response::Message {
                msg: m.map(|(m, r)| {
                    (
                        WireMessage {
                            id: m.id,
                            node: m.node.to_string(),
                            run_id: m.run_id,
                            enqueue_time_us: m.enqueue_time.as_micros() as u64,
                            delivery_count: m.delivery_count,
                            priority: m.priority,
                        },
                        r.into(),
                    )
                }),
            }))
        }
        Request::Renew { receipt, extension_us } => q(queue
            .renew(&receipt.into(), Duration::from_micros(extension_us))
            .map(|r| Response::Receipt { receipt: r.into() })),
        Request::Delete { receipt } => q(queue.delete(&receipt.into()).map(|o| Response::Deleted {
            outcome: match o {
                DeleteOutcome::Deleted => "deleted",
                DeleteOutcome::AlreadyDeleted => "already_deleted",
                DeleteOutcome::Stale => "stale",
            }
            .into(),
        })),
        Request::Depth => {
            q(queue.depth().map(|d| Response::Depth { pending: d.pending, visible: d.visible, in_flight: d.in_flight }))
        }
        Request::Close => {
            queue.close();
            Response::Ok
        }
        Request::Record { node, children } => parsed((|| {
            let node = parse_node(&node)?;
            let children =
                children.iter().map(|(c, t)| Ok((parse_node(c)?, *t))).collect::<Result<Vec<_>, String>>()?;
            Ok(s(state.record_completion(&node, &children).map(|r| Response::Nodes { nodes: strings(&r) })))
        })()),
        Request::ReadyNotDone { nodes } => parsed(
            parse_nodes(&nodes).map(|n| s(state.ready_not_done(&n).map(|r| Response::Nodes { nodes: strings(&r) }))),
        ),
        Request::MarkEnqueued { nodes } => {
            parsed(parse_nodes(&nodes).map(|n| s(state.mark_enqueued(&n).map(|_| Response::Ok))))
        }
        Request::Status { node } => parsed(
            parse_node(&node).map(|n| s(state.status(&n).map(|st| Response::Status { status: st.as_str().into() }))),
        ),
        Request::Stats => s(state.stats().map(|st| Response::Stats {
            done: st.done,
            duplicate_completions: st.duplicate_completions,
            ready_events: st.ready_events,
        })),
        Request::Fail { reason } => s(state.fail(&reason).map(|_| Response::Ok)),
        Request::Failure => s(state.failure().map(|reason| Response::Failure { reason })),
        Request::Snapshot => s(state.snapshot().map(|lines| Response::Lines { lines })),
    }
}

fn serve_conn(stream: TcpStream, queue: Arc<dyn TaskQueue>, state: Arc<dyn StateStore>) -> io::Result<()> {
    let mut out = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        let resp = match serde_json::from_str::<Request>(&line) {
            Ok(req) => handle(req, queue.as_ref(), state.as_ref()),
            Err(e) => plain_err(format!("bad request: {e}")),
        };
        let mut bytes = serde_json::to_vec(&resp).expect("response serializes");
        bytes.push(b'\n');
        out.write_all(&bytes)?;
    }
    Ok(())
}

/// A running server; dropping it stops accepting new connections.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl Server {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

/// Serves `queue` and `state` on `addr` (use port 0 for any free port).
pub fn serve(addr: impl ToSocketAddrs, queue: Arc<dyn TaskQueue>, state: Arc<dyn StateStore>) -> io::Result<Server> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let accept = std::thread::spawn(move || {
        for conn in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(conn) = conn else { continue };
            let _ = conn.set_nodelay(true);
            let (q, s) = (queue.clone(), state.clone());
            std::thread::spawn(move || {
                let _ = serve_conn(conn, q, s);
            });
        }
    });
    Ok(Server { addr, stop, accept: Some(accept) })
}

/// Client for a [`serve`]d queue and state store. One connection, used
/// under a lock; open one client per worker for concurrency.
pub struct RemoteClient {
    conn: Mutex<(BufReader<TcpStream>, TcpStream)>,
}

impl RemoteClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self { conn: Mutex::new((reader, stream)) })
    }

    fn call(&self, req: &Request) -> Result<Response, String> {
        let mut conn = self.conn.lock();
        let mut bytes = serde_json::to_vec(req).map_err(|e| e.to_string())?;
        bytes.push(b'\n');
        conn.1.write_all(&bytes).map_err(|e| e.to_string())?;
        let mut line = String::new();
        if conn.0.read_line(&mut line).map_err(|e| e.to_string())? == 0 {
            return Err("connection closed".into());
        }
        serde_json::from_str(&line).map_err(|e| e.to_string())
    }

    fn queue_call(&self, req: &Request) -> Result<Response, QueueError> {
        match self.call(req) {
            Ok(Response::Error { expired: true, .. }) => Err(QueueError::Expired),
            Ok(Response::Error { closed: true, .. }) => Err(QueueError::Closed),
            Ok(Response::Error { message, .. }) => Err(QueueError::Unavailable(message)),
            Ok(r) => Ok(r),
            Err(e) => Err(QueueError::Unavailable(e)),
        }
    }

    fn state_call(&self, req: &Request) -> Result<Response, StateError> {
        match self.call(req) {
            Ok(Response::Error { message, .. }) => Err(StateError::Unavailable(message)),
            Ok(r) => Ok(r),
            Err(e) => Err(StateError::Unavailable(e)),
        }
    }
}

fn unexpected<E>(wrap: impl Fn(String) -> E, r: Response) -> E {
    wrap(format!("unexpected response {r:?}"))
}

fn nodes_of(v: Vec<String>) -> Result<Vec<NodeRef>, StateError> {
    parse_nodes(&v).map_err(StateError::Unavailable)
}

impl TaskQueue for RemoteClient {
    fn enqueue(&self, node: NodeRef) -> Result<(), QueueError> {
        self.queue_call(&Request::Enqueue { node: node.to_string() }).map(|_| ())
    }

    fn receive(&self, visibility: Duration) -> Result<Option<(TaskMessage, Receipt)>, QueueError> {
        match self.queue_call(&Request::Receive { visibility_us: visibility.as_micros() as u64 })? {
            Response::Message { msg: None } => Ok(None),
            Response::Message { msg: Some((m, r)) } => Ok(Some((
                TaskMessage {
                    id: m.id,
                    node: parse_node(&m.node).map_err(QueueError::Unavailable)?,
                    run_id: m.run_id,
                    enqueue_time: Duration::from_micros(m.enqueue_time_us),
                    delivery_count: m.delivery_count,
                    priority: m.priority,
                },
                r.into(),
            ))),
            r => Err(unexpected(QueueError::Unavailable, r)),
        }
    }

    fn renew(&self, r: &Receipt, extension: Duration) -> Result<Receipt, QueueError> {
        let req = Request::Renew { receipt: (*r).into(), extension_us: extension.as_micros() as u64 };
        match self.queue_call(&req)? {
            Response::Receipt { receipt } => Ok(receipt.into()),
            r => Err(unexpected(QueueError::Unavailable, r)),
        }
    }

    fn delete(&self, r: &Receipt) -> Result<DeleteOutcome, QueueError> {
        match self.queue_call(&Request::Delete { receipt: (*r).into() })? {
            Response::Deleted { outcome } => Ok(match outcome.as_str() {
                "deleted" => DeleteOutcome::Deleted,
                "already_deleted" => DeleteOutcome::AlreadyDeleted,
                _ => DeleteOutcome::Stale,
            }),
            r => Err(unexpected(QueueError::Unavailable, r)),
        }
    }

    fn depth(&self) -> Result<QueueDepth, QueueError> {
        match self.queue_call(&Request::Depth)? {
            Response::Depth { pending, visible, in_flight } => Ok(QueueDepth { pending, visible, in_flight }),
            r => Err(unexpected(QueueError::Unavailable, r)),
        }
    }

    fn close(&self) {
        let _ = self.queue_call(&Request::Close);
    }
}

impl StateStore for RemoteClient {
    fn record_completion(&self, node: &NodeRef, children: &[(NodeRef, usize)]) -> Result<Vec<NodeRef>, StateError> {
        let req = Request::Record {
            node: node.to_string(),
            children: children.iter().map(|(c, t)| (c.to_string(), *t)).collect(),
        };
        match self.state_call(&req)? {
            Response::Nodes { nodes } => nodes_of(nodes),
            r => Err(unexpected(StateError::Unavailable, r)),
        }
    }

    fn ready_not_done(&self, nodes: &[NodeRef]) -> Result<Vec<NodeRef>, StateError> {
        match self.state_call(&Request::ReadyNotDone { nodes: strings(nodes) })? {
            Response::Nodes { nodes } => nodes_of(nodes),
            r => Err(unexpected(StateError::Unavailable, r)),
        }
    }

    fn mark_enqueued(&self, nodes: &[NodeRef]) -> Result<(), StateError> {
        self.state_call(&Request::MarkEnqueued { nodes: strings(nodes) }).map(|_| ())
    }

    fn status(&self, node: &NodeRef) -> Result<NodeStatus, StateError> {
        match self.state_call(&Request::Status { node: node.to_string() })? {
            Response::Status { status } => Ok(match status.as_str() {
                "done" => NodeStatus::Done,
                "enqueued" => NodeStatus::Enqueued,
                _ => NodeStatus::Unseen,
            }),
            r => Err(unexpected(StateError::Unavailable, r)),
        }
    }

    fn stats(&self) -> Result<StateStats, StateError> {
        match self.state_call(&Request::Stats)? {
            Response::Stats { done, duplicate_completions, ready_events } => {
                Ok(StateStats { done, duplicate_completions, ready_events })
            }
            r => Err(unexpected(StateError::Unavailable, r)),
        }
    }

    fn fail(&self, reason: &str) -> Result<(), StateError> {
        self.state_call(&Request::Fail { reason: reason.into() }).map(|_| ())
    }

    fn failure(&self) -> Result<Option<String>, StateError> {
        match self.state_call(&Request::Failure)? {
            Response::Failure { reason } => Ok(reason),
            r => Err(unexpected(StateError::Unavailable, r)),
        }
    }

    fn snapshot(&self) -> Result<Vec<String>, StateError> {
        match self.state_call(&Request::Snapshot)? {
            Response::Lines { lines } => Ok(lines),
            r => Err(unexpected(StateError::Unavailable, r)),
        }
    }
}
