//! On-demand route discovery over broadcast floods.
//!
//! Nodes hold no routes until traffic needs one. A source floods a route
//! request carrying the freshest destination sequence number it knows.
//! An intermediate node may answer from its own table only when its entry
//! is *strictly* fresher than what the request already knows; otherwise
//! it relays the flood. The destination itself always answers, with a
//! sequence number above anything previously issued. Replies travel hop
//! by hop along the reverse routes the flood installed, and every node a
//! reply passes through records which neighbor routes through it (its
//! precursor), so a later link break can be reported upstream.
//!
//! Table invariant: an entry's sequence number never decreases, and an
//! update at an unchanged sequence number is accepted only if it shortens
//! the route or revives an invalidated entry. Along any chain of next
//! hops toward a destination, (sequence, -hops) is non-decreasing, which
//! keeps forwarding loop-free.
//!
//! This module is pure protocol state: it decides, the caller transmits.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::time::{SimDuration, SimTime};
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy)]
pub struct AodvConfig {
    /// How long an installed route stays valid without being used.
    pub route_lifetime: SimDuration,
    /// Remembered (origin, request id) pairs for duplicate suppression.
    pub seen_cache_capacity: usize,
    /// Packets a node will hold while discovering a route.
    pub pending_capacity: usize,
    /// How long to wait for a reply before flooding a new request.
    pub discovery_retry: SimDuration,
}

impl Default for AodvConfig {
    fn default() -> Self {
        AodvConfig {
            route_lifetime: SimDuration::from_secs(10),
            seen_cache_capacity: 128,
            pending_capacity: 64,
            discovery_retry: SimDuration::from_secs(1),
        }
    }
}

/// Route request, flooded toward the destination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rreq {
    pub origin: NodeId,
    /// Origin's sequence number at flood time; receivers install it on
    /// their reverse route back to the origin.
    pub origin_seq: u64,
    /// Per-origin flood identifier for duplicate suppression.
    pub rreq_id: u64,
    pub dest: NodeId,
    /// Freshest sequence number the origin knows for `dest`, 0 if none.
    pub dest_seq_known: u64,
    /// Hops the *receiver* of this copy is away from the origin.
    pub hop_count: u32,
}

/// Route reply, unicast back toward the request's origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rrep {
    pub origin: NodeId,
    pub dest: NodeId,
    pub dest_seq: u64,
    /// Hops the *receiver* of this copy is away from the destination.
    pub hop_count: u32,
    pub lifetime: SimDuration,
}

/// Route error: destinations no longer reachable through the sender,
/// with the sequence numbers at which they became unreachable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rerr {
    pub unreachable: Vec<(NodeId, u64)>,
}

#[derive(Debug, Clone)]
pub struct RouteEntry {
    pub next_hop: NodeId,
    pub hop_count: u32,
    pub dest_seq: u64,
    pub expires_at: SimTime,
    pub active: bool,
    /// Neighbors that forward through this node to reach the destination.
    pub precursors: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscardReason {
    Duplicate,
    Stale,
    NoReverseRoute,
    Malformed,
}

/// What to do with a received route request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RreqAction {
    /// Unicast this reply to the node the request came from.
    Reply(Rrep),
    /// Rebroadcast to all neighbors except the one it came from.
    Relay(Rreq),
    Discard(DiscardReason),
}

/// What to do with a received route reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RrepAction {
    /// This node originated the request; buffered traffic may flow.
    Deliver,
    Forward { rrep: Rrep, next_hop: NodeId },
    Discard(DiscardReason),
}

/// A route error to unicast to each listed neighbor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteErrorNotice {
    pub recipients: BTreeSet<NodeId>,
    pub rerr: Rerr,
}

/// Per-node protocol state. `P` is whatever the caller parks while a
/// route is being discovered.
#[derive(Debug)]
pub struct NodeProtocolState<P> {
    id: NodeId,
    config: AodvConfig,
    own_seq: u64,
    next_rreq_id: u64,
    table: BTreeMap<NodeId, RouteEntry>,
    seen: VecDeque<(NodeId, u64)>,
    seen_set: BTreeSet<(NodeId, u64)>,
    pending: VecDeque<(NodeId, P)>,
    /// Destination -> earliest time a new flood may be sent for it.
    discovery: BTreeMap<NodeId, SimTime>,
}

impl<P> NodeProtocolState<P> {
    pub fn new(id: NodeId, config: AodvConfig) -> Self {
        NodeProtocolState {
            id,
            config,
            own_seq: 0,
            next_rreq_id: 0,
            table: BTreeMap::new(),
            seen: VecDeque::new(),
            seen_set: BTreeSet::new(),
            pending: VecDeque::new(),
            discovery: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn own_seq(&self) -> u64 {
        self.own_seq
    }

    pub fn route(&self, dest: NodeId) -> Option<&RouteEntry> {
        self.table.get(&dest)
    }

    /// Next hop toward `dest` if an unexpired active route exists.
    /// Using a route refreshes its lifetime.
    pub fn lookup_route(&mut self, dest: NodeId, now: SimTime) -> Option<NodeId> {
        let lifetime = self.config.route_lifetime;
        let entry = self.table.get_mut(&dest)?;
        if entry.active && entry.expires_at > now {
            entry.expires_at = now + lifetime;
            Some(entry.next_hop)
        } else {
            None
        }
    }

    /// Starts (or retries) a route discovery. Returns the request to
    /// flood, or None while an earlier flood for `dest` is still within
    /// its retry window.
    pub fn begin_discovery(&mut self, dest: NodeId, now: SimTime) -> Option<Rreq> {
        debug_assert_ne!(dest, self.id, "no discovery for self");
        if let Some(&retry_at) = self.discovery.get(&dest) {
            if now < retry_at {
                return None;
            }
        }
        self.discovery.insert(dest, now + self.config.discovery_retry);
        self.own_seq += 1;
        self.next_rreq_id += 1;
        let rreq = Rreq {
            origin: self.id,
            origin_seq: self.own_seq,
            rreq_id: self.next_rreq_id,
            dest,
            dest_seq_known: self.table.get(&dest).map(|e| e.dest_seq).unwrap_or(0),
            hop_count: 1,
        };
        // Remember the own flood so returning copies are dropped.
        self.note_seen(self.id, self.next_rreq_id);
        Some(rreq)
    }

    /// Forgets the discovery window for `dest`, e.g. once a reply landed.
    pub fn end_discovery(&mut self, dest: NodeId) {
        self.discovery.remove(&dest);
    }

    pub fn discovery_in_progress(&self, dest: NodeId, now: SimTime) -> bool {
        self.discovery.get(&dest).is_some_and(|&retry_at| now < retry_at)
    }

    /// Parks an item until a route to `dest` shows up. Returns the
    /// oldest parked item when the buffer overflows.
    pub fn buffer_pending(&mut self, dest: NodeId, item: P) -> Option<(NodeId, P)> {
        self.pending.push_back((dest, item));
        if self.pending.len() > self.config.pending_capacity {
            self.pending.pop_front()
        } else {
            None
        }
    }

    /// Removes and returns everything parked for `dest`, oldest first.
    pub fn take_pending(&mut self, dest: NodeId) -> Vec<P> {
        let mut taken = Vec::new();
        let mut kept = VecDeque::with_capacity(self.pending.len());
        while let Some((d, item)) = self.pending.pop_front() {
            if d == dest {
                taken.push(item);
            } else {
                kept.push_back((d, item));
            }
        }
        self.pending = kept;
        taken
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn process_rreq(&mut self, rreq: &Rreq, from: NodeId, now: SimTime) -> RreqAction {
        if rreq.origin == rreq.dest || rreq.hop_count == 0 {
            return RreqAction::Discard(DiscardReason::Malformed);
        }
        if rreq.origin == self.id || !self.note_seen(rreq.origin, rreq.rreq_id) {
            return RreqAction::Discard(DiscardReason::Duplicate);
        }
        // The flood's trail back to the origin becomes the reverse route
        // the reply will ride on.
        self.install_route(
            rreq.origin,
            from,
            rreq.hop_count,
            rreq.origin_seq,
            now + self.config.route_lifetime,
        );
        if self.id == rreq.dest {
            // Answer above both our counter and whatever the origin knew,
            // so the reply supersedes any stale or invalidated entry.
            self.own_seq = self.own_seq.max(rreq.dest_seq_known) + 1;
            return RreqAction::Reply(Rrep {
                origin: rreq.origin,
                dest: self.id,
                dest_seq: self.own_seq,
                hop_count: 1,
                lifetime: self.config.route_lifetime,
            });
        }
        if let Some(entry) = self.table.get_mut(&rreq.dest) {
            // Strictly fresher knowledge than the request carries lets an
            // intermediate node answer; merely as-fresh does not.
            if entry.active && entry.expires_at > now && entry.dest_seq > rreq.dest_seq_known {
                entry.precursors.insert(from);
                return RreqAction::Reply(Rrep {
                    origin: rreq.origin,
                    dest: rreq.dest,
                    dest_seq: entry.dest_seq,
                    hop_count: entry.hop_count + 1,
                    lifetime: entry.expires_at.since(now),
                });
            }
        }
        RreqAction::Relay(Rreq { hop_count: rreq.hop_count + 1, ..rreq.clone() })
    }

    pub fn process_rrep(&mut self, rrep: &Rrep, from: NodeId, now: SimTime) -> RrepAction {
        if rrep.origin == rrep.dest || rrep.hop_count == 0 {
            return RrepAction::Discard(DiscardReason::Malformed);
        }
        let installed = self.install_route(
            rrep.dest,
            from,
            rrep.hop_count,
            rrep.dest_seq,
            now + rrep.lifetime,
        );
        if !installed {
            return RrepAction::Discard(DiscardReason::Stale);
        }
        if self.id == rrep.origin {
            self.end_discovery(rrep.dest);
            return RrepAction::Deliver;
        }
        let lifetime = self.config.route_lifetime;
        let Some(reverse) = self.table.get_mut(&rrep.origin) else {
            return RrepAction::Discard(DiscardReason::NoReverseRoute);
        };
        if !reverse.active || reverse.expires_at <= now {
            return RrepAction::Discard(DiscardReason::NoReverseRoute);
        }
        reverse.expires_at = now + lifetime;
        let next_hop = reverse.next_hop;
        // The upstream node will forward data through us; remember it so
        // a break on our forward link can be reported to it.
        self.table
            .get_mut(&rrep.dest)
            .expect("just installed")
            .precursors
            .insert(next_hop);
        RrepAction::Forward {
            rrep: Rrep { hop_count: rrep.hop_count + 1, ..rrep.clone() },
            next_hop,
        }
    }

    /// Invalidates every active route whose next hop is the lost
    /// neighbor. Each invalidated destination's sequence number is
    /// bumped so the dead route cannot be re-learned at its old
    /// freshness. Returns the error to send to affected precursors.
    pub fn handle_link_break(
        &mut self,
        neighbor: NodeId,
        _now: SimTime,
    ) -> Option<RouteErrorNotice> {
        let mut unreachable = Vec::new();
        let mut recipients = BTreeSet::new();
        for (&dest, entry) in self.table.iter_mut() {
            if entry.active && entry.next_hop == neighbor {
                entry.active = false;
                entry.dest_seq += 1;
                unreachable.push((dest, entry.dest_seq));
                recipients.append(&mut entry.precursors);
            }
        }
        recipients.remove(&neighbor);
        if unreachable.is_empty() {
            None
        } else {
            Some(RouteErrorNotice { recipients, rerr: Rerr { unreachable } })
        }
    }

    /// Applies a route error from a neighbor: invalidates matching
    /// routes that go through the sender and are not fresher than the
    /// reported loss. Returns the error to propagate further upstream.
    pub fn process_rerr(
        &mut self,
        rerr: &Rerr,
        from: NodeId,
        _now: SimTime,
    ) -> Option<RouteErrorNotice> {
        let mut unreachable = Vec::new();
        let mut recipients = BTreeSet::new();
        for &(dest, seq) in &rerr.unreachable {
            if let Some(entry) = self.table.get_mut(&dest) {
                if entry.active && entry.next_hop == from && seq >= entry.dest_seq {
                    entry.active = false;
                    entry.dest_seq = seq;
                    unreachable.push((dest, seq));
                    recipients.append(&mut entry.precursors);
                }
            }
        }
        if unreachable.is_empty() {
            None
        } else {
            Some(RouteErrorNotice { recipients, rerr: Rerr { unreachable } })
        }
    }

    /// True if the pair was not in the cache (and is now). Oldest pairs
    /// fall out once the cache is full.
    fn note_seen(&mut self, origin: NodeId, rreq_id: u64) -> bool {
        if !self.seen_set.insert((origin, rreq_id)) {
            return false;
        }
        self.seen.push_back((origin, rreq_id));
        if self.seen.len() > self.config.seen_cache_capacity {
            let oldest = self.seen.pop_front().unwrap();
            self.seen_set.remove(&oldest);
        }
        true
    }

    /// Accepts strictly fresher routes, equal-freshness improvements
    /// (fewer hops), and revivals of invalidated entries. The stored
    /// sequence number never decreases.
    fn install_route(
        &mut self,
        dest: NodeId,
        next_hop: NodeId,
        hop_count: u32,
        dest_seq: u64,
        expires_at: SimTime,
    ) -> bool {
        if dest == self.id {
            return false;
        }
        match self.table.get_mut(&dest) {
            None => {
                self.table.insert(
                    dest,
                    RouteEntry {
                        next_hop,
                        hop_count,
                        dest_seq,
                        expires_at,
                        active: true,
                        precursors: BTreeSet::new(),
                    },
                );
                true
            }
            Some(entry) => {
                let fresher = dest_seq > entry.dest_seq
                    || (dest_seq == entry.dest_seq
                        && (hop_count < entry.hop_count || !entry.active));
                if fresher {
                    entry.next_hop = next_hop;
                    entry.hop_count = hop_count;
                    entry.dest_seq = dest_seq;
                    entry.expires_at = expires_at;
                    entry.active = true;
                    true
                } else {
                    false
                }
            }
        }
    }
}
