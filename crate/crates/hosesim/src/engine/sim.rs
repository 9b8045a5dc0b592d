//! The simulation proper: traffic generation, store-and-forward links,
//! route discovery wiring, failure injection, and metrics sampling.
//!
//! Each link direction is a FIFO lane with finite depth and a
//! `busy_until` horizon; serialization delay queues behind earlier
//! packets, propagation delay is added after. A link failure resets both
//! lanes and bumps the link's epoch; events stamped with an older epoch
//! are void when they fire, which is how in-flight packets die with the
//! link instead of teleporting across it.
//!
//! Data packets traverse either a pinned hop list (provisioned paths,
//! chosen per send by the configured selection strategy) or hop-by-hop
//! discovered routes. Both kinds gate on route discovery at the source:
//! until the destination answers a route request, packets wait in the
//! origin's pending buffer.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::aodv::{AodvConfig, NodeProtocolState, RouteErrorNotice, RreqAction, RrepAction, Rreq};
use crate::metrics::Collector;
use crate::metrics::MetricsReport;
use crate::policy::{PathPolicy, PathTable};
use crate::time::{SimDuration, SimTime};
use crate::topology::{LinkKey, LinkState, NodeId, Topology};

use super::{
    serialization_delay, ControlSizes, EnergyModel, EngineError, Event, EventKind, EventQueue,
    Packet, PacketBody, PacketId, RouteMode,
};

/// Constant-rate traffic source. Packets are created every `interval`
/// from `start` until `stop` (exclusive) or until `count` packets exist.
#[derive(Debug, Clone)]
pub struct FlowSpec {
    pub name: String,
    pub src: NodeId,
    pub dst: NodeId,
    pub packet_size_bytes: u32,
    pub interval: SimDuration,
    pub start: SimTime,
    pub stop: SimTime,
    pub count: Option<u64>,
    /// Bandwidth the flow asks the path selector for. The offered rate
    /// (packet size over interval) may deliberately exceed it.
    pub demand_bps: u64,
    /// Label of a provisioned path to use unconditionally, or None to
    /// let the selection strategy decide per send.
    pub pinned_path: Option<String>,
}

/// Scheduled link state change.
#[derive(Debug, Clone, Copy)]
pub struct FailureEvent {
    pub link: LinkKey,
    pub at: SimTime,
    pub up: bool,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub duration: SimDuration,
    pub sample_interval: SimDuration,
    pub energy: EnergyModel,
    pub control_sizes: ControlSizes,
    pub aodv: AodvConfig,
    /// Record a per-event trace (tab-separated, one line per event).
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            duration: SimDuration::from_secs(10),
            sample_interval: SimDuration::from_millis(500),
            energy: EnergyModel::default(),
            control_sizes: ControlSizes::default(),
            aodv: AodvConfig::default(),
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Lane {
    busy_until: SimTime,
    queued: u32,
}

#[derive(Debug, Clone, Copy, Default)]
struct LinkRuntime {
    epoch: u64,
    /// Lane 0 carries smaller-id -> larger-id traffic, lane 1 the reverse.
    lanes: [Lane; 2],
}

impl LinkRuntime {
    fn lane_mut(&mut self, from: NodeId, key: LinkKey) -> &mut Lane {
        let (a, _) = key.endpoints();
        &mut self.lanes[usize::from(from != a)]
    }
}

/// Everything one run produces.
#[derive(Debug)]
pub struct RunResult {
    pub report: MetricsReport,
    pub trace: Option<String>,
}

pub struct Simulation {
    topo: Topology,
    cfg: SimConfig,
    queue: EventQueue,
    flows: Vec<FlowSpec>,
    links: BTreeMap<LinkKey, LinkRuntime>,
    agents: BTreeMap<NodeId, NodeProtocolState<Packet>>,
    tables: BTreeMap<(NodeId, NodeId), PathTable>,
    /// Which provisioned paths cross each link, for failure bookkeeping.
    candidate_links: BTreeMap<LinkKey, Vec<((NodeId, NodeId), String)>>,
    policy: Box<dyn PathPolicy>,
    metrics: Collector,
    /// Bits serialized per link since the last sample.
    window_bits: BTreeMap<LinkKey, u128>,
    primary_flow: Option<usize>,
    next_packet_id: PacketId,
    trace_out: Option<String>,
    ended: bool,
    ran: bool,
}

impl Simulation {
    pub fn new(
        topo: Topology,
        cfg: SimConfig,
        flows: Vec<FlowSpec>,
        failures: Vec<FailureEvent>,
        tables: BTreeMap<(NodeId, NodeId), PathTable>,
        policy: Box<dyn PathPolicy>,
    ) -> Result<Simulation, EngineError> {
        if cfg.duration == SimDuration::ZERO {
            return Err(EngineError::InvalidSetup("duration must be positive".into()));
        }
        if cfg.sample_interval == SimDuration::ZERO {
            return Err(EngineError::InvalidSetup("sample interval must be positive".into()));
        }
        let sample_count = cfg.duration.as_nanos() / cfg.sample_interval.as_nanos();
        if sample_count > 1_000_000 {
            return Err(EngineError::InvalidSetup(format!(
                "{sample_count} samples is unreasonable; raise the sample interval"
            )));
        }

        let mut names = std::collections::BTreeSet::new();
        for f in &flows {
            if !names.insert(f.name.clone()) {
                return Err(EngineError::InvalidSetup(format!("duplicate flow name {:?}", f.name)));
            }
            if f.src == f.dst {
                return Err(EngineError::InvalidSetup(format!(
                    "flow {:?} sends to itself",
                    f.name
                )));
            }
            topo.node(f.src)?;
            topo.node(f.dst)?;
            if f.interval == SimDuration::ZERO {
                return Err(EngineError::InvalidSetup(format!(
                    "flow {:?} has a zero interval",
                    f.name
                )));
            }
            if f.packet_size_bytes == 0 {
                return Err(EngineError::InvalidSetup(format!(
                    "flow {:?} has empty packets",
                    f.name
                )));
            }
            if let Some(label) = &f.pinned_path {
                let table = tables.get(&(f.src, f.dst)).ok_or_else(|| {
                    EngineError::InvalidSetup(format!(
                        "flow {:?} pins {label:?} but its pair has no provisioned paths",
                        f.name
                    ))
                })?;
                if table.get(label).is_none() {
                    return Err(EngineError::InvalidSetup(format!(
                        "flow {:?} pins unknown path {label:?}",
                        f.name
                    )));
                }
            }
        }

        let mut candidate_links: BTreeMap<LinkKey, Vec<((NodeId, NodeId), String)>> =
            BTreeMap::new();
        for (&(src, dst), table) in &tables {
            for cand in table.candidates() {
                if cand.path.src() != Some(src) || cand.path.dst() != Some(dst) {
                    return Err(EngineError::InvalidSetup(format!(
                        "path {:?} does not run between its table's endpoints",
                        cand.path.label
                    )));
                }
                if !topo.validate_path(&cand.path) {
                    return Err(EngineError::InvalidSetup(format!(
                        "path {:?} is not a valid up path in the topology",
                        cand.path.label
                    )));
                }
                for link in cand.path.links() {
                    candidate_links
                        .entry(link)
                        .or_default()
                        .push(((src, dst), cand.path.label.clone()));
                }
            }
        }
        for failure in &failures {
            let (a, b) = failure.link.endpoints();
            if topo.link(failure.link).is_none() {
                return Err(EngineError::InvalidSetup(format!(
                    "failure on unknown link {}-{}",
                    topo.label(a),
                    topo.label(b)
                )));
            }
        }

        let primary_flow = flows
            .iter()
            .position(|f| f.pinned_path.is_none())
            .or(if flows.is_empty() { None } else { Some(0) });
        let mut metrics = Collector::new(
            flows.iter().map(|f| f.name.clone()).collect(),
            primary_flow.map(|i| flows[i].name.clone()),
        );
        for table in tables.values() {
            for cand in table.candidates() {
                metrics.declare_path(&cand.path.label);
            }
        }
        if flows
            .iter()
            .any(|f| f.pinned_path.is_none() && !tables.contains_key(&(f.src, f.dst)))
        {
            metrics.declare_path("aodv");
        }

        let agents = topo
            .nodes()
            .iter()
            .map(|n| (n.id, NodeProtocolState::new(n.id, cfg.aodv)))
            .collect();
        let links = topo.links().map(|l| (l.key, LinkRuntime::default())).collect();

        let mut queue = EventQueue::new();
        // Sample seqs come before the end marker's, so a sample landing
        // exactly on the final instant still runs.
        for k in 1..=sample_count {
            let at = SimTime::from_nanos(k * cfg.sample_interval.as_nanos());
            queue.schedule(at, EventKind::MetricsSample)?;
        }
        let end = SimTime::ZERO + cfg.duration;
        queue.schedule(end, EventKind::End)?;
        for (i, f) in flows.iter().enumerate() {
            if f.count == Some(0) || f.start >= f.stop || f.start >= end {
                continue;
            }
            queue.schedule(f.start, EventKind::TrafficTick { flow: i, n: 0 })?;
        }
        for failure in &failures {
            if failure.at >= end {
                continue;
            }
            let kind = if failure.up {
                EventKind::LinkUp { link: failure.link }
            } else {
                EventKind::LinkDown { link: failure.link }
            };
            queue.schedule(failure.at, kind)?;
        }

        Ok(Simulation {
            topo,
            queue,
            flows,
            links,
            agents,
            tables,
            candidate_links,
            policy,
            metrics,
            window_bits: BTreeMap::new(),
            primary_flow,
            next_packet_id: 0,
            trace_out: cfg.trace.then(String::new),
            cfg,
            ended: false,
            ran: false,
        })
    }

    /// Runs to the end marker. Call once.
    pub fn run(&mut self) -> Result<RunResult, EngineError> {
        if self.ran {
            return Err(EngineError::InvalidSetup("simulation already ran".into()));
        }
        self.ran = true;
        while let Some(event) = self.queue.pop() {
            self.dispatch(event)?;
            if self.ended {
                break;
            }
        }
        if !self.ended {
            return Err(EngineError::Invariant("event queue drained before the end marker".into()));
        }
        let report = self.metrics.finalize()?;
        Ok(RunResult { report, trace: self.trace_out.take() })
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn agent(&self, node: NodeId) -> Option<&NodeProtocolState<Packet>> {
        self.agents.get(&node)
    }

    pub fn path_table(&self, src: NodeId, dst: NodeId) -> Option<&PathTable> {
        self.tables.get(&(src, dst))
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    fn dispatch(&mut self, event: Event) -> Result<(), EngineError> {
        match event.kind {
            EventKind::TrafficTick { flow, n } => self.on_tick(flow, n),
            EventKind::TransmitComplete {
                from,
                to,
                packet_id,
                kind,
                size_bytes,
                flow,
                path_label,
                epoch,
            } => self.on_transmit_complete(from, to, packet_id, kind, size_bytes, flow, path_label, epoch),
            EventKind::PacketArrival { from, to, packet, epoch } => {
                self.on_arrival(from, to, packet, epoch)
            }
            EventKind::LinkDown { link } => self.on_link_state(link, false),
            EventKind::LinkUp { link } => self.on_link_state(link, true),
            EventKind::MetricsSample => self.on_sample(),
            EventKind::End => {
                self.ended = true;
                self.trace_line("end", None, None, String::new());
                Ok(())
            }
        }
    }

    fn on_tick(&mut self, flow_idx: usize, n: u64) -> Result<(), EngineError> {
        let now = self.queue.now();
        let f = self.flows[flow_idx].clone();
        let next = now + f.interval;
        if f.count.map_or(true, |c| n + 1 < c) && next < f.stop {
            self.queue.schedule(next, EventKind::TrafficTick { flow: flow_idx, n: n + 1 })?;
        }

        let id = self.alloc_packet_id();
        let packet = Packet {
            id,
            src: f.src,
            dst: f.dst,
            size_bytes: f.packet_size_bytes,
            created_at: now,
            body: PacketBody::Data,
            flow: Some(flow_idx),
            path_label: None,
            route: RouteMode::Discovered,
        };
        self.metrics.record_send(id, flow_idx);
        self.trace_line("flow_tick", Some(f.src), Some(id), format!("flow={} n={n}", f.name));

        if let Some(label) = &f.pinned_path {
            let cand = self.tables[&(f.src, f.dst)].get(label).expect("validated");
            let hops: Arc<[NodeId]> = cand.path.hops.as_slice().into();
            let first_hop = hops[1];
            let packet = Packet {
                path_label: Some(Arc::from(label.as_str())),
                route: RouteMode::Pinned { hops, next: 1 },
                ..packet
            };
            self.metrics.record_path_commit(label);
            return self.transmit(f.src, first_hop, packet);
        }
        let have_route = self
            .agents
            .get_mut(&f.src)
            .expect("validated")
            .lookup_route(f.dst, now)
            .is_some();
        if have_route {
            self.dispatch_data_from_source(packet)
        } else {
            self.discover_and_buffer(packet)
        }
    }

    /// Puts a source-side data packet onto a concrete route: a selected
    /// provisioned path when the pair has one, the discovered next hop
    /// otherwise.
    fn dispatch_data_from_source(&mut self, mut packet: Packet) -> Result<(), EngineError> {
        let now = self.queue.now();
        let (src, dst) = (packet.src, packet.dst);
        if self.tables.contains_key(&(src, dst)) {
            let demand = packet.flow.map(|i| self.flows[i].demand_bps).unwrap_or(0);
            let table = self.tables.get_mut(&(src, dst)).unwrap();
            let choice = table
                .select_path(&*self.policy, demand)
                .map(|c| (c.path.label.clone(), Arc::<[NodeId]>::from(c.path.hops.as_slice())));
            match choice {
                Some((label, hops)) => {
                    packet.path_label = Some(Arc::from(label.as_str()));
                    packet.route = RouteMode::Pinned { hops: hops.clone(), next: 1 };
                    self.metrics.record_path_commit(&label);
                    self.transmit(src, hops[1], packet)
                }
                None => self.drop_data(src, packet, "no_feasible_path"),
            }
        } else {
            match self.agents.get_mut(&src).expect("validated").lookup_route(dst, now) {
                Some(next_hop) => {
                    packet.path_label = Some(Arc::from("aodv"));
                    self.metrics.record_path_commit("aodv");
                    self.transmit(src, next_hop, packet)
                }
                None => self.drop_data(src, packet, "no_route"),
            }
        }
    }

    /// No route yet: park the packet and (re)start discovery when the
    /// retry window allows.
    fn discover_and_buffer(&mut self, packet: Packet) -> Result<(), EngineError> {
        let now = self.queue.now();
        let (src, dst) = (packet.src, packet.dst);
        let id = packet.id;
        let agent = self.agents.get_mut(&src).expect("validated");
        let rreq = agent.begin_discovery(dst, now);
        let evicted = agent.buffer_pending(dst, packet);
        self.trace_line(
            "packet_buffered",
            Some(src),
            Some(id),
            format!("dest={}", self.topo.label(dst)),
        );
        if let Some((_, old)) = evicted {
            self.drop_data(src, old, "pending_overflow")?;
        }
        if let Some(rreq) = rreq {
            self.trace_line(
                "discovery_started",
                Some(src),
                None,
                format!("dest={} rreq_id={}", self.topo.label(dst), rreq.rreq_id),
            );
            self.flood_rreq(src, rreq, None)?;
        }
        Ok(())
    }

    /// Sends one copy of the request to every neighbor except `exclude`.
    fn flood_rreq(
        &mut self,
        origin: NodeId,
        rreq: Rreq,
        exclude: Option<NodeId>,
    ) -> Result<(), EngineError> {
        let neighbors: Vec<NodeId> = self
            .topo
            .neighbors(origin)?
            .iter()
            .copied()
            .filter(|&n| Some(n) != exclude)
            .collect();
        for nb in neighbors {
            let packet = self.make_control(
                origin,
                rreq.dest,
                PacketBody::RouteRequest(rreq.clone()),
                self.cfg.control_sizes.rreq_bytes,
            );
            self.transmit(origin, nb, packet)?;
        }
        Ok(())
    }

    fn make_control(&mut self, src: NodeId, dst: NodeId, body: PacketBody, size: u32) -> Packet {
        Packet {
            id: self.alloc_packet_id(),
            src,
            dst,
            size_bytes: size,
            created_at: self.queue.now(),
            body,
            flow: None,
            path_label: None,
            route: RouteMode::Discovered,
        }
    }

    /// Queues a packet onto the (from, to) lane. Packets hitting a down
    /// link or a full lane are dropped here.
    fn transmit(&mut self, from: NodeId, to: NodeId, packet: Packet) -> Result<(), EngineError> {
        let now = self.queue.now();
        let key = LinkKey::new(from, to);
        let link = self.topo.link(key).ok_or_else(|| {
            EngineError::Invariant(format!(
                "transmit over nonexistent link {}-{}",
                self.topo.label(from),
                self.topo.label(to)
            ))
        })?;
        let (bandwidth, prop, capacity, up) =
            (link.bandwidth_bps, link.prop_delay, link.queue_capacity, link.state == LinkState::Up);
        if packet.body.is_control() {
            self.metrics.note_control_sent();
        }
        if !up {
            self.trace_line(
                "transmit_blocked",
                Some(from),
                Some(packet.id),
                format!("to={} reason=link_down", self.topo.label(to)),
            );
            self.fail_packet(from, packet, "link_down")?;
            // A sender notices its dead link the moment it tries to use it.
            self.notify_link_break(from, to)?;
            return Ok(());
        }
        let runtime = self.links.get_mut(&key).expect("runtime for every link");
        let lane = runtime.lane_mut(from, key);
        if lane.queued >= capacity {
            self.trace_line(
                "transmit_blocked",
                Some(from),
                Some(packet.id),
                format!("to={} reason=queue_full", self.topo.label(to)),
            );
            self.fail_packet(from, packet, "queue_full")?;
            return Ok(());
        }
        lane.queued += 1;
        let start = lane.busy_until.max(now);
        let done = start + serialization_delay(packet.size_bytes, bandwidth);
        lane.busy_until = done;
        let epoch = runtime.epoch;
        self.queue.schedule(
            done,
            EventKind::TransmitComplete {
                from,
                to,
                packet_id: packet.id,
                kind: packet.body.kind(),
                size_bytes: packet.size_bytes,
                flow: packet.flow,
                path_label: packet.path_label.clone(),
                epoch,
            },
        )?;
        self.queue.schedule(done + prop, EventKind::PacketArrival { from, to, packet, epoch })?;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn on_transmit_complete(
        &mut self,
        from: NodeId,
        to: NodeId,
        packet_id: PacketId,
        kind: &'static str,
        size_bytes: u32,
        flow: Option<usize>,
        path_label: Option<Arc<str>>,
        epoch: u64,
    ) -> Result<(), EngineError> {
        let key = LinkKey::new(from, to);
        let runtime = self.links.get_mut(&key).expect("runtime for every link");
        if runtime.epoch != epoch {
            // The link failed while this packet was being clocked out.
            self.trace_line(
                "transmit_voided",
                Some(from),
                Some(packet_id),
                format!("to={} kind={kind}", self.topo.label(to)),
            );
            return Ok(());
        }
        let lane = runtime.lane_mut(from, key);
        debug_assert!(lane.queued > 0);
        lane.queued -= 1;
        *self.window_bits.entry(key).or_default() += size_bytes as u128 * 8;
        self.metrics.add_energy(self.cfg.energy.tx_cost(size_bytes), path_label.as_deref(), flow);
        self.trace_line(
            "transmit_complete",
            Some(from),
            Some(packet_id),
            format!("to={} kind={kind} bytes={size_bytes}", self.topo.label(to)),
        );
        Ok(())
    }

    fn on_arrival(
        &mut self,
        from: NodeId,
        to: NodeId,
        packet: Packet,
        epoch: u64,
    ) -> Result<(), EngineError> {
        let key = LinkKey::new(from, to);
        let up = self.topo.link(key).is_some_and(|l| l.state == LinkState::Up);
        let current_epoch = self.links[&key].epoch;
        if epoch != current_epoch || !up {
            self.trace_line(
                "packet_lost",
                Some(to),
                Some(packet.id),
                format!(
                    "from={} kind={} bytes={} reason=link_failure",
                    self.topo.label(from),
                    packet.body.kind(),
                    packet.size_bytes
                ),
            );
            return self.fail_packet(to, packet, "link_failure");
        }
        self.metrics.add_energy(
            self.cfg.energy.rx_cost(packet.size_bytes),
            packet.path_label.as_deref(),
            packet.flow,
        );
        match packet.body.clone() {
            PacketBody::Data => self.on_data_arrival(from, to, packet),
            PacketBody::RouteRequest(rreq) => self.on_rreq_arrival(from, to, packet, rreq),
            PacketBody::RouteReply(rrep) => self.on_rrep_arrival(from, to, packet, rrep),
            PacketBody::RouteError(rerr) => self.on_rerr_arrival(from, to, packet, rerr),
        }
    }

    fn arrival_line(&mut self, from: NodeId, to: NodeId, packet: &Packet, outcome: String) {
        self.trace_line(
            "packet_arrival",
            Some(to),
            Some(packet.id),
            format!(
                "from={} kind={} bytes={} {outcome}",
                self.topo.label(from),
                packet.body.kind(),
                packet.size_bytes
            ),
        );
    }

    fn on_data_arrival(
        &mut self,
        from: NodeId,
        to: NodeId,
        mut packet: Packet,
    ) -> Result<(), EngineError> {
        let now = self.queue.now();
        if to == packet.dst {
            let delay = now.since(packet.created_at);
            let flow_idx = packet.flow.expect("data packets belong to a flow");
            let label = packet.path_label.clone().expect("delivered data was committed");
            let flow_name = self.flows[flow_idx].name.clone();
            self.metrics.record_receive(packet.id, flow_idx, &label, delay)?;
            self.arrival_line(
                from,
                to,
                &packet,
                format!(
                    "outcome=delivered flow={flow_name} path={label} delay_ns={}",
                    delay.as_nanos()
                ),
            );
            return Ok(());
        }
        match &mut packet.route {
            RouteMode::Pinned { hops, next } => {
                debug_assert_eq!(hops[*next], to, "pinned packet strayed off its path");
                *next += 1;
                let next_hop = hops[*next];
                self.arrival_line(
                    from,
                    to,
                    &packet,
                    format!("outcome=forwarded next={}", self.topo.label(next_hop)),
                );
                self.transmit(to, next_hop, packet)
            }
            RouteMode::Discovered => {
                let dst = packet.dst;
                match self.agents.get_mut(&to).expect("agent per node").lookup_route(dst, now) {
                    Some(next_hop) => {
                        self.arrival_line(
                            from,
                            to,
                            &packet,
                            format!("outcome=forwarded next={}", self.topo.label(next_hop)),
                        );
                        self.transmit(to, next_hop, packet)
                    }
                    None => {
                        self.arrival_line(from, to, &packet, "outcome=no_route".into());
                        self.drop_data(to, packet, "no_route")
                    }
                }
            }
        }
    }

    fn on_rreq_arrival(
        &mut self,
        from: NodeId,
        to: NodeId,
        packet: Packet,
        rreq: Rreq,
    ) -> Result<(), EngineError> {
        let now = self.queue.now();
        let action = self.agents.get_mut(&to).expect("agent per node").process_rreq(&rreq, from, now);
        match action {
            RreqAction::Reply(rrep) => {
                self.arrival_line(from, to, &packet, "outcome=answered".into());
                let reply = self.make_control(
                    to,
                    rreq.origin,
                    PacketBody::RouteReply(rrep),
                    self.cfg.control_sizes.rrep_bytes,
                );
                self.transmit(to, from, reply)
            }
            RreqAction::Relay(relayed) => {
                self.arrival_line(from, to, &packet, "outcome=relayed".into());
                self.flood_rreq(to, relayed, Some(from))
            }
            RreqAction::Discard(reason) => {
                self.arrival_line(from, to, &packet, format!("outcome=discarded reason={reason:?}"));
                Ok(())
            }
        }
    }

    fn on_rrep_arrival(
        &mut self,
        from: NodeId,
        to: NodeId,
        packet: Packet,
        rrep: crate::aodv::Rrep,
    ) -> Result<(), EngineError> {
        let now = self.queue.now();
        let action = self.agents.get_mut(&to).expect("agent per node").process_rrep(&rrep, from, now);
        match action {
            RrepAction::Deliver => {
                self.arrival_line(
                    from,
                    to,
                    &packet,
                    format!("outcome=route_installed dest={}", self.topo.label(rrep.dest)),
                );
                let parked =
                    self.agents.get_mut(&to).expect("agent per node").take_pending(rrep.dest);
                for data in parked {
                    self.dispatch_data_from_source(data)?;
                }
                Ok(())
            }
            RrepAction::Forward { rrep: forwarded, next_hop } => {
                self.arrival_line(
                    from,
                    to,
                    &packet,
                    format!("outcome=forwarded next={}", self.topo.label(next_hop)),
                );
                let reply = self.make_control(
                    to,
                    forwarded.origin,
                    PacketBody::RouteReply(forwarded),
                    self.cfg.control_sizes.rrep_bytes,
                );
                self.transmit(to, next_hop, reply)
            }
            RrepAction::Discard(reason) => {
                self.arrival_line(from, to, &packet, format!("outcome=discarded reason={reason:?}"));
                Ok(())
            }
        }
    }

    fn on_rerr_arrival(
        &mut self,
        from: NodeId,
        to: NodeId,
        packet: Packet,
        rerr: crate::aodv::Rerr,
    ) -> Result<(), EngineError> {
        let now = self.queue.now();
        let notice = self.agents.get_mut(&to).expect("agent per node").process_rerr(&rerr, from, now);
        match notice {
            Some(notice) => {
                self.arrival_line(from, to, &packet, "outcome=routes_invalidated".into());
                self.send_rerrs(to, notice)
            }
            None => {
                self.arrival_line(from, to, &packet, "outcome=ignored".into());
                Ok(())
            }
        }
    }

    /// A node learned that `lost_neighbor` is unreachable over their
    /// shared link; report broken routes upstream.
    fn notify_link_break(&mut self, node: NodeId, lost_neighbor: NodeId) -> Result<(), EngineError> {
        let now = self.queue.now();
        let notice = self
            .agents
            .get_mut(&node)
            .expect("agent per node")
            .handle_link_break(lost_neighbor, now);
        if let Some(notice) = notice {
            self.send_rerrs(node, notice)?;
        }
        Ok(())
    }

    fn send_rerrs(&mut self, node: NodeId, notice: RouteErrorNotice) -> Result<(), EngineError> {
        let size = self.cfg.control_sizes.rerr_bytes(notice.rerr.unreachable.len());
        for &recipient in &notice.recipients {
            // Precursors are former neighbors; their link may itself be
            // gone, in which case transmit counts the loss.
            if self.topo.link(LinkKey::new(node, recipient)).is_none() {
                continue;
            }
            let packet = self.make_control(
                node,
                recipient,
                PacketBody::RouteError(notice.rerr.clone()),
                size,
            );
            self.transmit(node, recipient, packet)?;
        }
        Ok(())
    }

    fn on_link_state(&mut self, key: LinkKey, up: bool) -> Result<(), EngineError> {
        let (a, b) = key.endpoints();
        let is_up = self
            .topo
            .link(key)
            .ok_or_else(|| EngineError::Invariant("state change on unknown link".into()))?
            .state
            == LinkState::Up;
        let name = if up { "link_up" } else { "link_down" };
        let link_label = format!("link={}-{}", self.topo.label(a), self.topo.label(b));
        if is_up == up {
            self.trace_line(name, None, None, format!("{link_label} noop"));
            return Ok(());
        }
        self.topo.set_link_state(key, if up { LinkState::Up } else { LinkState::Down })?;
        let now = self.queue.now();
        let runtime = self.links.get_mut(&key).expect("runtime for every link");
        runtime.epoch += 1;
        runtime.lanes = [Lane { busy_until: now, queued: 0 }; 2];
        self.trace_line(name, None, None, link_label);

        let affected = self.candidate_links.get(&key).cloned().unwrap_or_default();
        if up {
            for (pair, label) in affected {
                let alive = {
                    let table = &self.tables[&pair];
                    let cand = table.get(&label).expect("indexed");
                    self.topo.validate_path(&cand.path)
                };
                if alive {
                    self.tables.get_mut(&pair).unwrap().mark_alive(&label)?;
                }
            }
        } else {
            for (pair, label) in affected {
                self.tables.get_mut(&pair).unwrap().mark_failed(&label)?;
            }
            self.notify_link_break(a, b)?;
            self.notify_link_break(b, a)?;
        }
        Ok(())
    }

    fn on_sample(&mut self) -> Result<(), EngineError> {
        let now = self.queue.now();
        // Bandwidth is measured over the primary flow's selected path;
        // with no provisioned paths the whole network counts.
        let selected_links: Option<Vec<LinkKey>> = self.primary_flow.and_then(|i| {
            let f = &self.flows[i];
            self.tables.get(&(f.src, f.dst)).map(|t| {
                t.selected().map(|c| c.path.links().collect()).unwrap_or_default()
            })
        });
        let bits: u128 = match &selected_links {
            Some(links) => links.iter().map(|k| self.window_bits.get(k).copied().unwrap_or(0)).sum(),
            None => self.window_bits.values().sum(),
        };
        let bps = bits as f64 * 1e9 / self.cfg.sample_interval.as_nanos() as f64;
        self.metrics.push_bandwidth(now, bps);
        self.window_bits.clear();
        self.metrics.sample(now)?;
        self.trace_line("metrics_sample", None, None, format!("bandwidth_bps={bps}"));
        Ok(())
    }

    fn fail_packet(
        &mut self,
        node: NodeId,
        packet: Packet,
        reason: &'static str,
    ) -> Result<(), EngineError> {
        if packet.body.is_control() {
            self.metrics.note_control_dropped();
            self.trace_line(
                "control_dropped",
                Some(node),
                Some(packet.id),
                format!("kind={} reason={reason}", packet.body.kind()),
            );
            Ok(())
        } else {
            self.drop_data(node, packet, reason)
        }
    }

    fn drop_data(
        &mut self,
        node: NodeId,
        packet: Packet,
        reason: &'static str,
    ) -> Result<(), EngineError> {
        debug_assert!(!packet.body.is_control());
        let flow_idx = packet.flow.expect("data packets belong to a flow");
        self.metrics.record_drop(packet.id, flow_idx, packet.path_label.as_deref())?;
        self.trace_line(
            "packet_dropped",
            Some(node),
            Some(packet.id),
            format!("reason={reason}"),
        );
        Ok(())
    }

    fn alloc_packet_id(&mut self) -> PacketId {
        let id = self.next_packet_id;
        self.next_packet_id += 1;
        id
    }

    fn trace_line(
        &mut self,
        event: &str,
        node: Option<NodeId>,
        packet: Option<PacketId>,
        detail: String,
    ) {
        let Some(out) = &mut self.trace_out else { return };
        let time = self.queue.now().as_nanos();
        out.push_str(&time.to_string());
        out.push('\t');
        out.push_str(event);
        out.push('\t');
        match node {
            Some(n) => out.push_str(self.topo.label(n)),
            None => out.push('-'),
        }
        out.push('\t');
        match packet {
            Some(id) => out.push_str(&id.to_string()),
            None => out.push('-'),
        }
        out.push('\t');
        out.push_str(&detail);
        out.push('\n');
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{CandidatePath, MinBandwidth};
    use crate::topology::{Link, Node, PathSpec};

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }

    /// Chain topology n0 - n1 - .. with uniform link parameters.
    fn chain(count: u32, bandwidth: u64, prop_ns: u64, cap: u32) -> Topology {
        let nodes = (0..count)
            .map(|i| Node {
                id: n(i),
                label: format!("n{i}"),
                position: (i as f64, 0.0),
                tx_range: 1.5,
            })
            .collect();
        let links = (1..count)
            .map(|i| Link {
                key: LinkKey::new(n(i - 1), n(i)),
                bandwidth_bps: bandwidth,
                prop_delay: SimDuration::from_nanos(prop_ns),
                state: LinkState::Up,
                queue_capacity: cap,
            })
            .collect();
        Topology::new(nodes, links).unwrap()
    }

    fn cfg(duration_ms: u64) -> SimConfig {
        SimConfig {
            duration: SimDuration::from_millis(duration_ms),
            sample_interval: SimDuration::from_millis(duration_ms.max(2) / 2),
            trace: true,
            ..SimConfig::default()
        }
    }

    fn flow(src: u32, dst: u32, interval_ns: u64, count: u64) -> FlowSpec {
        FlowSpec {
            name: "f".into(),
            src: n(src),
            dst: n(dst),
            packet_size_bytes: 512,
            interval: SimDuration::from_nanos(interval_ns),
            start: SimTime::ZERO,
            stop: SimTime::from_nanos(u64::MAX),
            count: Some(count),
            demand_bps: 1,
            pinned_path: None,
        }
    }

    fn pin(mut f: FlowSpec, label: &str) -> FlowSpec {
        f.pinned_path = Some(label.into());
        f
    }

    fn table_for(label: &str, hops: &[u32], bw: u64) -> ((NodeId, NodeId), PathTable) {
        let hops: Vec<NodeId> = hops.iter().map(|&i| n(i)).collect();
        let pair = (hops[0], *hops.last().unwrap());
        let cand = CandidatePath {
            path: PathSpec::new(label, hops),
            allocated_bw_bps: bw,
            alive: true,
        };
        (pair, PathTable::new(vec![cand]).unwrap())
    }

    fn sim(
        topo: Topology,
        cfg: SimConfig,
        flows: Vec<FlowSpec>,
        failures: Vec<FailureEvent>,
        tables: BTreeMap<(NodeId, NodeId), PathTable>,
    ) -> Simulation {
        Simulation::new(topo, cfg, flows, failures, tables, Box::new(MinBandwidth)).unwrap()
    }

    #[test]
    fn single_packet_delivery_time_is_serialization_plus_propagation() {
        let topo = chain(2, 1_800_000, 0, 50);
        let tables = BTreeMap::from([table_for("direct", &[0, 1], 1_800_000)]);
        let mut s = sim(topo, cfg(100), vec![pin(flow(0, 1, 1_000_000, 1), "direct")], vec![], tables);
        let out = s.run().unwrap();
        assert_eq!(out.report.global.sent, 1);
        assert_eq!(out.report.global.received, 1);
        assert_eq!(out.report.global.dropped, 0);
        // 512 bytes at 1.8 Mb/s, no propagation: exactly 2275555 ns.
        assert_eq!(out.report.global.mean_delay_s, 2_275_555.0 / 1e9);
        assert!(out.trace.unwrap().contains("delay_ns=2275555"));
    }

    #[test]
    fn second_packet_queues_behind_the_first() {
        let topo = chain(2, 1_800_000, 7_000, 50);
        let tables = BTreeMap::from([table_for("direct", &[0, 1], 1_800_000)]);
        // Two packets one nanosecond apart share the lane.
        let mut s = sim(topo, cfg(100), vec![pin(flow(0, 1, 1, 2), "direct")], vec![], tables);
        let out = s.run().unwrap();
        assert_eq!(out.report.global.received, 2);
        let d1 = 2_275_555 + 7_000;
        let d2 = 2 * 2_275_555 + 7_000 - 1;
        assert_eq!(out.report.global.mean_delay_s, (d1 + d2) as f64 / 2.0 / 1e9);
    }

    #[test]
    fn full_lanes_drop_the_overflow() {
        let topo = chain(2, 1_800_000, 0, 2);
        let tables = BTreeMap::from([table_for("direct", &[0, 1], 1_800_000)]);
        let mut s = sim(topo, cfg(100), vec![pin(flow(0, 1, 1, 5), "direct")], vec![], tables);
        let out = s.run().unwrap();
        assert_eq!(out.report.global.received, 2);
        assert_eq!(out.report.global.dropped, 3);
        assert_eq!(out.report.per_flow["f"].pdr_percent, 40.0);
    }

    #[test]
    fn discovery_buffers_then_delivers_and_installs_shortest_routes() {
        let topo = chain(3, 2_000_000, 1_000_000, 50);
        let mut s = sim(topo, cfg(1000), vec![flow(0, 2, 10_000_000, 3)], vec![], BTreeMap::new());
        let out = s.run().unwrap();
        assert_eq!(out.report.global.received, 3);
        assert_eq!(out.report.per_path["aodv"].received, 3);
        assert!(out.report.control.sent > 0);
        assert_eq!(out.report.control.dropped, 0);
        // Two hops from n0 to n2, one from n1.
        let route = s.agent(n(0)).unwrap().route(n(2)).unwrap();
        assert_eq!((route.hop_count, route.next_hop), (2, n(1)));
        let route = s.agent(n(1)).unwrap().route(n(2)).unwrap();
        assert_eq!((route.hop_count, route.next_hop), (1, n(2)));
        // The first packet waited out the discovery round trip; later
        // ones found the route installed.
        let trace = out.trace.unwrap();
        let delays: Vec<u64> = trace
            .lines()
            .filter(|l| l.contains("outcome=delivered"))
            .map(|l| {
                l.split("delay_ns=").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap()
            })
            .collect();
        assert_eq!(delays.len(), 3);
        assert!(delays[0] > delays[1]);
        assert_eq!(delays[1], delays[2]);
    }

    #[test]
    fn provisioned_pair_fails_over_to_the_next_path() {
        // Diamond: 0-1-3 and 0-2-3.
        let nodes = (0..4)
            .map(|i| Node { id: n(i), label: format!("n{i}"), position: (0.0, 0.0), tx_range: 1.0 })
            .collect();
        let mk = |a: u32, b: u32| Link {
            key: LinkKey::new(n(a), n(b)),
            bandwidth_bps: 2_000_000,
            prop_delay: SimDuration::from_millis(1),
            state: LinkState::Up,
            queue_capacity: 50,
        };
        let topo = Topology::new(nodes, vec![mk(0, 1), mk(1, 3), mk(0, 2), mk(2, 3)]).unwrap();
        let table = PathTable::new(vec![
            CandidatePath {
                path: PathSpec::new("wide", vec![n(0), n(1), n(3)]),
                allocated_bw_bps: 2_000_000,
                alive: true,
            },
            CandidatePath {
                path: PathSpec::new("thin", vec![n(0), n(2), n(3)]),
                allocated_bw_bps: 1_000_000,
                alive: true,
            },
        ])
        .unwrap();
        let tables = BTreeMap::from([((n(0), n(3)), table)]);
        let failures = vec![FailureEvent {
            link: LinkKey::new(n(0), n(2)),
            at: SimTime::from_nanos(1_000_000_000),
            up: false,
        }];
        let mut f = flow(0, 3, 50_000_000, 40);
        f.demand_bps = 500_000;
        let mut s = sim(topo, cfg(2000), vec![f], failures, tables);
        let out = s.run().unwrap();

        // Before the failure the smaller allocation wins; afterwards the
        // only live path is the wide one.
        let thin = out.report.flow_path_received.get(&("f".into(), "thin".into())).copied();
        let wide = out.report.flow_path_received.get(&("f".into(), "wide".into())).copied();
        assert!(thin.unwrap_or(0) > 0, "no traffic on the initially selected path");
        assert!(wide.unwrap_or(0) > 0, "no traffic after failover");
        let table = s.path_table(n(0), n(3)).unwrap();
        assert_eq!(table.selected_label(), Some("wide"));
        assert!(!table.get("thin").unwrap().alive);
        assert_eq!(out.report.global.sent, 40);
        // Nothing silently vanished: everything is delivered, dropped, or
        // parked in a buffer at the end.
        let g = &out.report.global;
        assert_eq!(g.sent, g.received + g.dropped + out.report.in_flight_at_end);
    }

    #[test]
    fn link_failure_kills_packets_in_flight() {
        let topo = chain(2, 2_000_000, 10_000_000, 50);
        let tables = BTreeMap::from([table_for("direct", &[0, 1], 2_000_000)]);
        // Serialization ends at 2.048 ms, arrival would be at 12.048 ms;
        // the link dies at 5 ms with the packet on the wire.
        let failures = vec![FailureEvent {
            link: LinkKey::new(n(0), n(1)),
            at: SimTime::from_nanos(5_000_000),
            up: false,
        }];
        let mut s = sim(topo, cfg(100), vec![pin(flow(0, 1, 1_000_000, 1), "direct")], failures, tables);
        let out = s.run().unwrap();
        assert_eq!(out.report.global.received, 0);
        assert_eq!(out.report.global.dropped, 1);
        let trace = out.trace.unwrap();
        assert!(trace.contains("packet_lost"));
        assert!(trace.contains("link_down"));
        // Energy: the transmit finished (tx billed), the receive never
        // happened (no rx billed).
        let e = EnergyModel::default();
        assert_eq!(out.report.global.energy_j, e.tx_cost(512));
    }

    #[test]
    fn failure_events_are_idempotent_and_reversible() {
        let topo = chain(2, 2_000_000, 0, 50);
        let tables = BTreeMap::from([table_for("direct", &[0, 1], 2_000_000)]);
        let key = LinkKey::new(n(0), n(1));
        let at = |ms: u64| SimTime::from_nanos(ms * 1_000_000);
        let failures = vec![
            FailureEvent { link: key, at: at(10), up: false },
            FailureEvent { link: key, at: at(11), up: false },
            FailureEvent { link: key, at: at(20), up: true },
            FailureEvent { link: key, at: at(21), up: true },
        ];
        // One packet while down (dropped), one after restore (delivered).
        let mut f1 = flow(0, 1, 1_000_000, 1);
        f1.name = "down".into();
        f1.start = at(15);
        f1.stop = SimTime::from_nanos(u64::MAX);
        let mut f2 = f1.clone();
        f2.name = "up".into();
        f2.start = at(30);
        let mut s = sim(
            topo,
            cfg(100),
            vec![pin(f1, "direct"), pin(f2, "direct")],
            failures,
            tables,
        );
        let out = s.run().unwrap();
        assert_eq!(out.report.per_flow["down"].dropped, 1);
        assert_eq!(out.report.per_flow["up"].received, 1);
        let trace = out.trace.unwrap();
        assert_eq!(trace.matches("link_down\t-\t-\tlink=n0-n1 noop").count(), 1);
        assert_eq!(trace.matches("link_up\t-\t-\tlink=n0-n1 noop").count(), 1);
        let table = s.path_table(n(0), n(1)).unwrap();
        assert!(table.get("direct").unwrap().alive);
    }

    #[test]
    fn identical_setups_produce_identical_runs() {
        let build = || {
            let topo = chain(4, 2_000_000, 1_000_000, 5);
            let failures = vec![FailureEvent {
                link: LinkKey::new(n(1), n(2)),
                at: SimTime::from_nanos(400_000_000),
                up: false,
            }];
            sim(topo, cfg(1000), vec![flow(0, 3, 3_000_000, 100)], failures, BTreeMap::new())
        };
        let (mut a, mut b) = (build(), build());
        let out_a = a.run().unwrap();
        let out_b = b.run().unwrap();
        assert_eq!(out_a.trace, out_b.trace);
        assert_eq!(out_a.report, out_b.report);
    }

    #[test]
    fn energy_for_a_clean_two_hop_delivery_is_exact() {
        let topo = chain(3, 2_000_000, 0, 50);
        let tables = BTreeMap::from([table_for("p", &[0, 1, 2], 2_000_000)]);
        let mut s = sim(topo, cfg(100), vec![pin(flow(0, 2, 1_000_000, 1), "p")], vec![], tables);
        let out = s.run().unwrap();
        let e = EnergyModel::default();
        // Two transmissions and two receptions, no control traffic.
        assert_eq!(out.report.global.energy_j, 2.0 * e.tx_cost(512) + 2.0 * e.rx_cost(512));
        assert_eq!(out.report.control.sent, 0);
        assert_eq!(out.report.per_path["p"].energy_j, out.report.global.energy_j);
    }

    #[test]
    fn setup_validation_rejects_inconsistencies() {
        let topo = chain(2, 1_000_000, 0, 50);
        let tables = BTreeMap::from([table_for("direct", &[0, 1], 1_000_000)]);
        // Pinned label that no table defines.
        let bad = pin(flow(0, 1, 1_000, 1), "ghost");
        assert!(Simulation::new(
            chain(2, 1_000_000, 0, 50),
            cfg(10),
            vec![bad],
            vec![],
            tables,
            Box::new(MinBandwidth),
        )
        .is_err());
        // Flow to itself.
        assert!(Simulation::new(
            chain(2, 1_000_000, 0, 50),
            cfg(10),
            vec![flow(0, 0, 1_000, 1)],
            vec![],
            BTreeMap::new(),
            Box::new(MinBandwidth),
        )
        .is_err());
        // Failure on a link that does not exist.
        assert!(Simulation::new(
            topo,
            cfg(10),
            vec![],
            vec![FailureEvent { link: LinkKey::new(n(0), n(9)), at: SimTime::ZERO, up: false }],
            BTreeMap::new(),
            Box::new(MinBandwidth),
        )
        .is_err());
    }

    #[test]
    fn sample_grid_is_complete_even_at_the_final_instant() {
        let topo = chain(2, 1_000_000, 0, 50);
        let mut s = sim(topo, cfg(100), vec![], vec![], BTreeMap::new());
        let out = s.run().unwrap();
        // 100 ms duration, 50 ms sampling: samples at 50 and 100 ms.
        assert_eq!(out.report.global.series.len(), 2);
        assert_eq!(out.report.global.series[1].t.as_nanos(), 100_000_000);
        assert_eq!(out.report.bandwidth_series.len(), 2);
    }
}
