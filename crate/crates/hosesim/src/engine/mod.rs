//! Discrete-event simulation core.
//!
//! Events execute in strictly nondecreasing (time, schedule order): ties
//! at one instant resolve by who was scheduled first. Together with the
//! ordered containers used everywhere else this makes whole runs
//! reproducible byte for byte.

pub mod sim;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;

use thiserror::Error;

use crate::aodv::{Rerr, Rrep, Rreq};
use crate::metrics::MetricsError;
use crate::policy::PolicyError;
use crate::time::{SimDuration, SimTime};
use crate::topology::{LinkKey, NodeId, TopologyError};

pub use sim::{FailureEvent, FlowSpec, RunResult, SimConfig, Simulation};

pub type PacketId = u64;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("cannot schedule an event at {at} ns, the clock is already at {now} ns")]
    SchedulePast { at: SimTime, now: SimTime },
    #[error("invalid simulation setup: {0}")]
    InvalidSetup(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PacketBody {
    Data,
    RouteRequest(Rreq),
    RouteReply(Rrep),
    RouteError(Rerr),
}

impl PacketBody {
    pub fn kind(&self) -> &'static str {
        match self {
            PacketBody::Data => "data",
            PacketBody::RouteRequest(_) => "rreq",
            PacketBody::RouteReply(_) => "rrep",
            PacketBody::RouteError(_) => "rerr",
        }
    }

    pub fn is_control(&self) -> bool {
        !matches!(self, PacketBody::Data)
    }
}

/// How a data packet finds its way to the destination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RouteMode {
    /// Fixed hop list; `next` indexes the hop currently traveled toward.
    Pinned { hops: Arc<[NodeId]>, next: usize },
    /// Each node consults its discovered route table.
    Discovered,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub id: PacketId,
    pub src: NodeId,
    pub dst: NodeId,
    pub size_bytes: u32,
    pub created_at: SimTime,
    pub body: PacketBody,
    /// Index into the flow list; None for routing traffic.
    pub flow: Option<usize>,
    /// Metrics bucket, set when the packet is committed to a path.
    pub path_label: Option<Arc<str>>,
    pub route: RouteMode,
}

#[derive(Debug, Clone)]
pub enum EventKind {
    /// Flow `flow` creates its `n`-th packet.
    TrafficTick { flow: usize, n: u64 },
    /// A packet finished serializing onto the wire at `from`.
    TransmitComplete {
        from: NodeId,
        to: NodeId,
        packet_id: PacketId,
        kind: &'static str,
        size_bytes: u32,
        flow: Option<usize>,
        path_label: Option<Arc<str>>,
        epoch: u64,
    },
    /// A packet reaches `to` after crossing the link from `from`.
    PacketArrival { from: NodeId, to: NodeId, packet: Packet, epoch: u64 },
    LinkDown { link: LinkKey },
    LinkUp { link: LinkKey },
    MetricsSample,
    End,
}

#[derive(Debug, Clone)]
pub struct Event {
    pub time: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

struct HeapEntry {
    key: Reverse<(SimTime, u64)>,
    event: Event,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

/// Time-ordered event queue. Popping advances the clock; scheduling in
/// the past is an error rather than a silent reordering.
pub struct EventQueue {
    heap: BinaryHeap<HeapEntry>,
    now: SimTime,
    next_seq: u64,
}

impl Default for EventQueue {
    fn default() -> Self {
        EventQueue::new()
    }
}

impl EventQueue {
    pub fn new() -> EventQueue {
        EventQueue { heap: BinaryHeap::new(), now: SimTime::ZERO, next_seq: 0 }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, at: SimTime, kind: EventKind) -> Result<(), EngineError> {
        if at < self.now {
            return Err(EngineError::SchedulePast { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(HeapEntry { key: Reverse((at, seq)), event: Event { time: at, seq, kind } });
        Ok(())
    }

    /// Next event in (time, schedule) order; advances the clock to it.
    pub fn pop(&mut self) -> Option<Event> {
        let entry = self.heap.pop()?;
        debug_assert!(entry.event.time >= self.now, "event queue went backwards");
        self.now = entry.event.time;
        Some(entry.event)
    }

    /// Like `pop`, but refuses events after `horizon`; if none remain at
    /// or before it, the clock still advances to the horizon.
    pub fn pop_through(&mut self, horizon: SimTime) -> Option<Event> {
        match self.heap.peek() {
            Some(entry) if entry.event.time <= horizon => self.pop(),
            _ => {
                self.now = self.now.max(horizon);
                None
            }
        }
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.event.time)
    }
}

/// Time to clock a packet onto a link: floor(bits * 1e9 / bandwidth) ns.
/// Exact in integer arithmetic; no floating point involved.
pub fn serialization_delay(size_bytes: u32, bandwidth_bps: u64) -> SimDuration {
    debug_assert!(bandwidth_bps > 0);
    let bits = size_bytes as u128 * 8;
    SimDuration::from_nanos((bits * 1_000_000_000 / bandwidth_bps as u128) as u64)
}

/// Per-packet radio energy model: a fixed overhead per packet handled
/// plus a per-byte cost, on both the sending and the receiving side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    pub tx_j_per_byte: f64,
    pub rx_j_per_byte: f64,
    pub overhead_j: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel { tx_j_per_byte: 50e-9, rx_j_per_byte: 50e-9, overhead_j: 20e-6 }
    }
}

impl EnergyModel {
    pub fn tx_cost(&self, size_bytes: u32) -> f64 {
        self.overhead_j + size_bytes as f64 * self.tx_j_per_byte
    }

    pub fn rx_cost(&self, size_bytes: u32) -> f64 {
        self.overhead_j + size_bytes as f64 * self.rx_j_per_byte
    }
}

/// Wire sizes of the routing messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlSizes {
    pub rreq_bytes: u32,
    pub rrep_bytes: u32,
    pub rerr_base_bytes: u32,
    pub rerr_per_dest_bytes: u32,
}

impl Default for ControlSizes {
    fn default() -> Self {
        ControlSizes { rreq_bytes: 24, rrep_bytes: 20, rerr_base_bytes: 12, rerr_per_dest_bytes: 8 }
    }
}

impl ControlSizes {
    pub fn rerr_bytes(&self, unreachable_count: usize) -> u32 {
        self.rerr_base_bytes + self.rerr_per_dest_bytes * unreachable_count as u32
    }
}
