//! Network model: nodes, directed links, hierarchical routing and
//! store-and-forward transmission over per-link FIFO queues.
//!
//! Transfers are whole messages (no packetization). A link is busy for the
//! serialization time of each message; propagation overlaps with the next
//! message's serialization.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::SimTime;
use crate::metrics::LedgerBucket;

/// Serialization delay of `size_bytes` over a link of `bandwidth_bps`.
pub fn transmission_time(size_bytes: u64, bandwidth_bps: f64) -> f64 {
    assert!(bandwidth_bps > 0.0, "bandwidth must be positive");
    size_bytes as f64 * 8.0 / bandwidth_bps
}

pub fn mbps(v: f64) -> f64 {
    v * 1e6
}

pub fn gbps(v: f64) -> f64 {
    v * 1e9
}

pub fn kb(v: f64) -> u64 {
    (v * 1000.0).round() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeId {
    Terminal(usize),
    Edge(usize),
    Cloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Terminal,
    EdgeServer,
    Cloud,
}

impl NodeId {
    pub fn kind(self) -> NodeKind {
        match self {
            NodeId::Terminal(_) => NodeKind::Terminal,
            NodeId::Edge(_) => NodeKind::EdgeServer,
            NodeId::Cloud => NodeKind::Cloud,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Terminal(i) => write!(f, "t{i}"),
            NodeId::Edge(i) => write!(f, "e{i}"),
            NodeId::Cloud => write!(f, "cloud"),
        }
    }
}

pub type LinkId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    Uplink,
    Downlink,
    FiberUp,
    FiberDown,
    Peer,
}

impl LinkKind {
    pub fn is_wireless(self) -> bool {
        matches!(self, LinkKind::Uplink | LinkKind::Downlink | LinkKind::Peer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub from: NodeId,
    pub to: NodeId,
    pub bandwidth_bps: f64,
    pub propagation_s: f64,
    pub kind: LinkKind,
}

/// Link rates and propagation delays used to build a [`Topology`].
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyParams {
    pub terminals: usize,
    pub edges: usize,
    pub uplink_bps: f64,
    pub downlink_bps: f64,
    pub fiber_bps: f64,
    pub wireless_prop_s: f64,
    pub fiber_prop_s: f64,
    /// Device-to-device bandwidth; `None` disables peer links.
    pub p2p_bps: Option<f64>,
}

/// Static link graph. Every terminal has a dedicated uplink and downlink to
/// every edge; only the one toward its current edge is used.
#[derive(Debug, Clone)]
pub struct Topology {
    params: TopologyParams,
    links: Vec<LinkSpec>,
    index: HashMap<(NodeId, NodeId), LinkId>,
}

impl Topology {
    pub fn new(params: TopologyParams) -> Self {
        let mut links = Vec::new();
        for t in 0..params.terminals {
            for e in 0..params.edges {
                links.push(LinkSpec {
                    from: NodeId::Terminal(t),
                    to: NodeId::Edge(e),
                    bandwidth_bps: params.uplink_bps,
                    propagation_s: params.wireless_prop_s,
                    kind: LinkKind::Uplink,
                });
                links.push(LinkSpec {
                    from: NodeId::Edge(e),
                    to: NodeId::Terminal(t),
                    bandwidth_bps: params.downlink_bps,
                    propagation_s: params.wireless_prop_s,
                    kind: LinkKind::Downlink,
                });
            }
        }
        for e in 0..params.edges {
            links.push(LinkSpec {
                from: NodeId::Edge(e),
                to: NodeId::Cloud,
                bandwidth_bps: params.fiber_bps,
                propagation_s: params.fiber_prop_s,
                kind: LinkKind::FiberUp,
            });
            links.push(LinkSpec {
                from: NodeId::Cloud,
                to: NodeId::Edge(e),
                bandwidth_bps: params.fiber_bps,
                propagation_s: params.fiber_prop_s,
                kind: LinkKind::FiberDown,
            });
        }
        if let Some(bps) = params.p2p_bps {
            for a in 0..params.terminals {
                for b in 0..params.terminals {
                    if a != b {
                        links.push(LinkSpec {
                            from: NodeId::Terminal(a),
                            to: NodeId::Terminal(b),
                            bandwidth_bps: bps,
                            propagation_s: params.wireless_prop_s,
                            kind: LinkKind::Peer,
                        });
                    }
                }
            }
        }
        let index = links
            .iter()
            .enumerate()
            .map(|(i, l)| ((l.from, l.to), i))
            .collect();
        Self {
            params,
            links,
            index,
        }
    }

    pub fn params(&self) -> &TopologyParams {
        &self.params
    }

    pub fn terminals(&self) -> usize {
        self.params.terminals
    }

    pub fn edges(&self) -> usize {
        self.params.edges
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &LinkSpec {
        &self.links[id]
    }

    pub fn p2p_enabled(&self) -> bool {
        self.params.p2p_bps.is_some()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        match node {
            NodeId::Terminal(t) => t < self.params.terminals,
            NodeId::Edge(e) => e < self.params.edges,
            NodeId::Cloud => true,
        }
    }

    pub fn link_between(&self, from: NodeId, to: NodeId) -> Option<LinkId> {
        self.index.get(&(from, to)).copied()
    }

    /// Wireless links attached to `terminal` (both directions, every edge).
    pub fn wireless_links_of(&self, terminal: usize) -> Vec<LinkId> {
        let t = NodeId::Terminal(terminal);
        self.links
            .iter()
            .enumerate()
            .filter(|(_, l)| {
                matches!(l.kind, LinkKind::Uplink | LinkKind::Downlink)
                    && (l.from == t || l.to == t)
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Idle-network latency of a route: sum of serialization plus propagation.
    pub fn idle_latency(&self, route: &[LinkId], size_bytes: u64) -> f64 {
        route
            .iter()
            .map(|&l| {
                let spec = &self.links[l];
                transmission_time(size_bytes, spec.bandwidth_bps) + spec.propagation_s
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingHandover {
    pub target: usize,
    pub started: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Association {
    pub edge: Option<usize>,
    pub handover: Option<PendingHandover>,
}

/// Terminal → current edge, plus in-handover markers.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMap {
    entries: Vec<Association>,
}

impl AssociationMap {
    /// Round-robin initial placement: terminal `i` joins edge `i % edges`.
    pub fn round_robin(terminals: usize, edges: usize) -> Self {
        assert!(edges > 0, "need at least one edge");
        Self {
            entries: (0..terminals)
                .map(|t| Association {
                    edge: Some(t % edges),
                    handover: None,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn edge_of(&self, terminal: usize) -> Option<usize> {
        self.entries[terminal].edge
    }

    pub fn get(&self, terminal: usize) -> &Association {
        &self.entries[terminal]
    }

    pub fn set_edge(&mut self, terminal: usize, edge: usize) {
        self.entries[terminal].edge = Some(edge);
    }

    pub fn detach(&mut self, terminal: usize) {
        self.entries[terminal].edge = None;
    }

    pub fn begin_handover(&mut self, terminal: usize, target: usize, started: SimTime) {
        self.entries[terminal].handover = Some(PendingHandover { target, started });
    }

    pub fn retarget(&mut self, terminal: usize, target: usize) {
        if let Some(h) = self.entries[terminal].handover.as_mut() {
            h.target = target;
        }
    }

    pub fn finish_handover(&mut self, terminal: usize) -> Option<PendingHandover> {
        let pending = self.entries[terminal].handover.take();
        if let Some(h) = pending {
            self.entries[terminal].edge = Some(h.target);
        }
        pending
    }

    pub fn in_handover(&self, terminal: usize) -> bool {
        self.entries[terminal].handover.is_some()
    }

    /// Edge the terminal is, or is about to be, attached to.
    pub fn effective_edge(&self, terminal: usize) -> Option<usize> {
        let a = &self.entries[terminal];
        a.handover.map(|h| h.target).or(a.edge)
    }

    pub fn members_of(&self, edge: usize) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&t| self.entries[t].edge == Some(edge))
            .collect()
    }

    /// Closest terminal (by index distance, lower index on ties) that has an edge.
    pub fn nearest_associated(&self, terminal: usize) -> Option<usize> {
        (0..self.entries.len())
            .filter(|&t| t != terminal && self.entries[t].edge.is_some())
            .min_by_key(|&t| (t.abs_diff(terminal), t))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RouteError {
    #[error("source equals destination ({0})")]
    SameEndpoint(NodeId),
    #[error("no route from {src} to {dst}")]
    Unroutable { src: NodeId, dst: NodeId },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

/// Hierarchical route from `src` to `dst` under the current associations.
///
/// Terminals reach everything through their current edge; edges reach each
/// other through the cloud. Terminal-to-terminal traffic uses the direct peer
/// link when device-to-device links exist. A terminal without an edge falls
/// back to its nearest associated neighbor when peer links exist.
pub fn route(
    topo: &Topology,
    assoc: &AssociationMap,
    src: NodeId,
    dst: NodeId,
) -> Result<Vec<LinkId>, RouteError> {
    if src == dst {
        return Err(RouteError::SameEndpoint(src));
    }
    for n in [src, dst] {
        if !topo.contains(n) {
            return Err(RouteError::UnknownNode(n));
        }
    }
    let mut nodes = vec![src];
    append_path(topo, assoc, src, dst, &mut nodes)?;
    nodes
        .windows(2)
        .map(|w| {
            topo.link_between(w[0], w[1])
                .ok_or(RouteError::Unroutable { src, dst })
        })
        .collect()
}

fn append_path(
    topo: &Topology,
    assoc: &AssociationMap,
    src: NodeId,
    dst: NodeId,
    nodes: &mut Vec<NodeId>,
) -> Result<(), RouteError> {
    let unroutable = RouteError::Unroutable { src, dst };
    match (src, dst) {
        (NodeId::Terminal(a), NodeId::Terminal(b)) => {
            if topo.p2p_enabled() {
                nodes.push(dst);
                return Ok(());
            }
            let ea = assoc.edge_of(a).ok_or(unroutable.clone())?;
            let eb = assoc.edge_of(b).ok_or(unroutable)?;
            nodes.push(NodeId::Edge(ea));
            if ea != eb {
                nodes.push(NodeId::Cloud);
                nodes.push(NodeId::Edge(eb));
            }
            nodes.push(dst);
        }
        (NodeId::Terminal(t), _) => match assoc.edge_of(t) {
            Some(e) => {
                nodes.push(NodeId::Edge(e));
                if NodeId::Edge(e) != dst {
                    append_path(topo, assoc, NodeId::Edge(e), dst, nodes)?;
                }
            }
            None => {
                let peer = topo
                    .p2p_enabled()
                    .then(|| assoc.nearest_associated(t))
                    .flatten()
                    .ok_or(unroutable)?;
                nodes.push(NodeId::Terminal(peer));
                append_path(topo, assoc, NodeId::Terminal(peer), dst, nodes)?;
            }
        },
        (NodeId::Edge(e), NodeId::Terminal(t)) => match assoc.edge_of(t) {
            Some(home) if home == e => nodes.push(dst),
            Some(home) => {
                nodes.push(NodeId::Cloud);
                nodes.push(NodeId::Edge(home));
                nodes.push(dst);
            }
            None => {
                let peer = topo
                    .p2p_enabled()
                    .then(|| assoc.nearest_associated(t))
                    .flatten()
                    .ok_or(unroutable)?;
                append_path(topo, assoc, src, NodeId::Terminal(peer), nodes)?;
                nodes.push(dst);
            }
        },
        (NodeId::Edge(_), NodeId::Edge(_)) => {
            nodes.push(NodeId::Cloud);
            nodes.push(dst);
        }
        (NodeId::Edge(_), NodeId::Cloud) | (NodeId::Cloud, NodeId::Edge(_)) => nodes.push(dst),
        (NodeId::Cloud, NodeId::Terminal(t)) => {
            let home = match assoc.edge_of(t) {
                Some(e) => e,
                None => {
                    let peer = topo
                        .p2p_enabled()
                        .then(|| assoc.nearest_associated(t))
                        .flatten()
                        .ok_or(unroutable)?;
                    assoc.edge_of(peer).expect("nearest_associated has an edge")
                }
            };
            nodes.push(NodeId::Edge(home));
            append_path(topo, assoc, NodeId::Edge(home), dst, nodes)?;
        }
        (NodeId::Cloud, NodeId::Cloud) => unreachable!("checked by caller"),
    }
    Ok(())
}

pub type MessageId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    DemandData,
    ResultData,
    StatusSummary,
    DemandPacket,
    Feedback,
    ModelUpdate,
    HandoverNotice,
    AgentMigration,
    DataForward,
    AnomalyFlag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Plane {
    Data,
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageStatus {
    /// Created but waiting in a sender-side buffer.
    Held,
    InFlight,
    Delivered,
    Aborted,
}

#[derive(Debug, Clone)]
pub struct Message {
    pub id: MessageId,
    pub kind: MessageKind,
    pub plane: Plane,
    pub src: NodeId,
    pub dst: NodeId,
    pub size: u64,
    pub demand_ref: Option<usize>,
    /// Terminal this message concerns (handover notices, migrations, relays).
    pub subject: Option<usize>,
    pub created_at: SimTime,
    pub bucket: LedgerBucket,
    /// Carries the demand's critical path (its data or result).
    pub critical: bool,
    /// Set on the retransmission that replaces an aborted message.
    pub restart_of: Option<MessageId>,
    pub status: MessageStatus,
    /// Node currently holding the message (store-and-forward).
    pub at: NodeId,
    pub route: Vec<LinkId>,
    pub hops_done: usize,
    /// Bumped whenever the message is pulled off a link; stale hop events are ignored.
    pub generation: u32,
    pub hop: Option<HopSlot>,
    /// Serialization start on the first hop.
    pub departed_at: Option<SimTime>,
    pub delivered_at: Option<SimTime>,
}

impl Message {
    pub fn new(
        kind: MessageKind,
        plane: Plane,
        src: NodeId,
        dst: NodeId,
        size: u64,
        created_at: SimTime,
        bucket: LedgerBucket,
    ) -> Self {
        Self {
            id: usize::MAX,
            kind,
            plane,
            src,
            dst,
            size,
            demand_ref: None,
            subject: None,
            created_at,
            bucket,
            critical: false,
            restart_of: None,
            status: MessageStatus::Held,
            at: src,
            route: Vec::new(),
            hops_done: 0,
            generation: 0,
            hop: None,
            departed_at: None,
            delivered_at: None,
        }
    }

    pub fn for_demand(mut self, demand: usize) -> Self {
        self.demand_ref = Some(demand);
        self
    }

    pub fn critical(mut self) -> Self {
        self.critical = true;
        self
    }

    pub fn about(mut self, terminal: usize) -> Self {
        self.subject = Some(terminal);
        self
    }
}

/// Occupancy of one link by one message.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopSlot {
    pub link: LinkId,
    pub enqueued: SimTime,
    pub start: SimTime,
    pub finish: SimTime,
    pub arrival: SimTime,
}

#[derive(Debug, Default, Clone)]
struct LinkState {
    busy_until: f64,
    slots: VecDeque<(MessageId, HopSlot)>,
}

impl LinkState {
    fn prune(&mut self, now: SimTime) {
        while self
            .slots
            .front()
            .is_some_and(|(_, s)| s.finish <= now)
        {
            self.slots.pop_front();
        }
    }
}

/// A message removed from a link before it finished serializing.
#[derive(Debug, Clone, PartialEq)]
pub struct AbortedTransfer {
    pub message: MessageId,
    pub link: LinkId,
    pub wasted_bytes: f64,
    pub slot: HopSlot,
}

/// Result of a hop-completion event.
#[derive(Debug, Clone, PartialEq)]
pub enum HopOutcome {
    /// The event referred to an older generation of the message.
    Stale,
    Delivered,
    /// Next hop queued; arrival scheduled at the given time.
    Forwarded(SimTime),
    Unroutable(RouteError),
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct NetworkStats {
    pub hop_bytes_serialized: u64,
    pub wasted_bytes: f64,
    pub delivered: usize,
    pub aborted: usize,
    pub reroutes: usize,
}

/// Mutable network state: message table and link queues.
#[derive(Debug)]
pub struct Network {
    topo: Topology,
    links: Vec<LinkState>,
    messages: Vec<Message>,
    stats: NetworkStats,
}

impl Network {
    pub fn new(topo: Topology) -> Self {
        let links = vec![LinkState::default(); topo.links().len()];
        Self {
            topo,
            links,
            messages: Vec::new(),
            stats: NetworkStats::default(),
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn stats(&self) -> &NetworkStats {
        &self.stats
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn message(&self, id: MessageId) -> &Message {
        &self.messages[id]
    }

    pub fn message_mut(&mut self, id: MessageId) -> &mut Message {
        &mut self.messages[id]
    }

    /// Registers a message in `Held` state and returns its id.
    pub fn register(&mut self, mut msg: Message) -> MessageId {
        let id = self.messages.len();
        msg.id = id;
        msg.at = msg.src;
        self.messages.push(msg);
        id
    }

    /// Routes a held message from its current node and queues its next hop.
    /// Returns the scheduled arrival at the far end of that hop.
    pub fn launch(
        &mut self,
        id: MessageId,
        assoc: &AssociationMap,
        now: SimTime,
    ) -> Result<SimTime, RouteError> {
        let (at, dst) = {
            let m = &self.messages[id];
            debug_assert!(matches!(m.status, MessageStatus::Held));
            (m.at, m.dst)
        };
        let path = route(&self.topo, assoc, at, dst)?;
        let m = &mut self.messages[id];
        m.route.truncate(m.hops_done);
        m.route.extend(path);
        m.status = MessageStatus::InFlight;
        Ok(self.enqueue_next(id, now))
    }

    fn enqueue_next(&mut self, id: MessageId, now: SimTime) -> SimTime {
        let (link, size) = {
            let m = &self.messages[id];
            (m.route[m.hops_done], m.size)
        };
        let spec = self.topo.link(link);
        let tx = transmission_time(size, spec.bandwidth_bps);
        let prop = spec.propagation_s;
        let state = &mut self.links[link];
        state.prune(now);
        let start = now.secs().max(state.busy_until);
        let finish = start + tx;
        state.busy_until = finish;
        let slot = HopSlot {
            link,
            enqueued: now,
            start: SimTime::from_secs(start),
            finish: SimTime::from_secs(finish),
            arrival: SimTime::from_secs(finish + prop),
        };
        state.slots.push_back((id, slot));
        let m = &mut self.messages[id];
        if m.hops_done == 0 && m.departed_at.is_none() {
            m.departed_at = Some(slot.start);
        }
        m.hop = Some(slot);
        slot.arrival
    }

    /// Completes the current hop of `id` and either delivers the message or
    /// queues the next hop. The remaining route is recomputed from the
    /// current node, so terminals that moved are reached via their new edge.
    pub fn hop_done(
        &mut self,
        id: MessageId,
        generation: u32,
        assoc: &AssociationMap,
        now: SimTime,
    ) -> HopOutcome {
        {
            let m = &self.messages[id];
            if m.generation != generation || m.status != MessageStatus::InFlight {
                return HopOutcome::Stale;
            }
        }
        let slot = self.messages[id].hop.take().expect("in-flight message has a hop");
        debug_assert_eq!(slot.arrival, now);
        let to = self.topo.link(slot.link).to;
        self.stats.hop_bytes_serialized += self.messages[id].size;
        let m = &mut self.messages[id];
        m.hops_done += 1;
        m.at = to;
        if to == m.dst {
            m.status = MessageStatus::Delivered;
            m.delivered_at = Some(now);
            self.stats.delivered += 1;
            return HopOutcome::Delivered;
        }
        let dst = m.dst;
        let fresh = match route(&self.topo, assoc, to, dst) {
            Ok(p) => p,
            Err(e) => return HopOutcome::Unroutable(e),
        };
        let m = &mut self.messages[id];
        if m.route[m.hops_done..] != fresh[..] {
            self.stats.reroutes += 1;
        }
        m.route.truncate(m.hops_done);
        m.route.extend(fresh);
        HopOutcome::Forwarded(self.enqueue_next(id, now))
    }

    /// Marks an in-flight message whose route vanished as aborted.
    pub fn drop_unroutable(&mut self, id: MessageId) {
        let m = &mut self.messages[id];
        m.status = MessageStatus::Aborted;
        m.generation += 1;
        m.hop = None;
        self.stats.aborted += 1;
    }

    /// Removes every message occupying or queued on the wireless links of
    /// `terminal`. Partially serialized bytes are counted as wasted.
    pub fn abort_inflight(&mut self, terminal: usize, now: SimTime) -> Vec<AbortedTransfer> {
        let mut out = Vec::new();
        for link in self.topo.wireless_links_of(terminal) {
            let state = &mut self.links[link];
            state.prune(now);
            let mut remaining = VecDeque::new();
            for (id, slot) in state.slots.drain(..) {
                if slot.finish <= now {
                    remaining.push_back((id, slot));
                    continue;
                }
                let elapsed = (now.secs() - slot.start.secs()).max(0.0);
                let duration = slot.finish.secs() - slot.start.secs();
                let fraction = if duration > 0.0 {
                    (elapsed / duration).min(1.0)
                } else {
                    0.0
                };
                let m = &mut self.messages[id];
                let wasted = m.size as f64 * fraction;
                m.status = MessageStatus::Aborted;
                m.generation += 1;
                m.hop = None;
                self.stats.wasted_bytes += wasted;
                self.stats.aborted += 1;
                out.push(AbortedTransfer {
                    message: id,
                    link,
                    wasted_bytes: wasted,
                    slot,
                });
            }
            state.busy_until = remaining
                .back()
                .map_or(now.secs(), |(_, s)| s.finish.secs().max(now.secs()));
            state.slots = remaining;
        }
        out.sort_by_key(|a| a.message);
        out
    }

    /// Takes back messages queued on `link` that have not started
    /// serializing. They return to `Held` at their current node.
    pub fn pull_back_queued(&mut self, link: LinkId, now: SimTime) -> Vec<MessageId> {
        let state = &mut self.links[link];
        state.prune(now);
        let mut kept = VecDeque::new();
        let mut pulled = Vec::new();
        for (id, slot) in state.slots.drain(..) {
            if slot.start > now {
                pulled.push(id);
            } else {
                kept.push_back((id, slot));
            }
        }
        state.busy_until = kept
            .back()
            .map_or(now.secs(), |(_, s)| s.finish.secs().max(now.secs()));
        state.slots = kept;
        for &id in &pulled {
            let m = &mut self.messages[id];
            m.status = MessageStatus::Held;
            m.generation += 1;
            m.hop = None;
            if m.hops_done == 0 {
                m.departed_at = None;
            }
        }
        pulled
    }

    /// Messages on `link` that are queued or in service at `now`.
    pub fn occupancy(&mut self, link: LinkId, now: SimTime) -> Vec<(MessageId, HopSlot)> {
        let state = &mut self.links[link];
        state.prune(now);
        state.slots.iter().copied().collect()
    }

    pub fn link_busy_until(&self, link: LinkId) -> f64 {
        self.links[link].busy_until
    }
}
