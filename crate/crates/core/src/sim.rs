//! The simulation engine: wires the kernel, network, twins and ledger
//! together and dispatches every event.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::demand::{
    Demand, DemandClass, DemandSource, DemandStatus, FailureReason, Layer, Phase, WorkloadConfig,
};
use crate::dt::{AgentLocation, AgentRegistry, CloudDt, ComputeQueue, DigitalAgent, DtError, EdgeDt, LocalDt, Started};
use crate::kernel::{Event, Kernel, KernelError, RngStream, SimTime, Stream};
use crate::metrics::{
    latency_stats, per_second_series, volatility, AccountingError, DemandRecord, HandoverStats,
    Ledger, LedgerBucket, RunSummary, SignalingBudget,
};
use crate::mobility::{pick_target, HandoverRecord, MoverSelector};
use crate::net::{
    kb, route, AbortedTransfer, AssociationMap, HopOutcome, Message, MessageId, MessageKind, MessageStatus, Network,
    NetworkStats, NodeId, Plane, Topology,
};
use crate::policy::{edge_action, source_action, DeploymentMode, EdgeAction, Payload, SourceAction};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ev {
    /// Next arrival at a terminal. Scripted arrivals carry their class.
    DemandGenerated {
        terminal: usize,
        class: Option<DemandClass>,
    },
    HopDone { msg: MessageId, generation: u32 },
    ComputeDone(NodeId),
    MobilityTick,
    ModelUpdateTick,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Agent(#[from] DtError),
    #[error(transparent)]
    Accounting(#[from] AccountingError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Where demands come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Arrivals {
    Poisson,
    /// Fixed `(time, terminal, class)` arrivals; no random draws.
    Scripted(Vec<(f64, usize, DemandClass)>),
}

/// Multi-layer handover in progress for one terminal.
#[derive(Debug, Clone, Copy)]
struct Transit {
    record: usize,
    from: usize,
    notice: MessageId,
    migration: Option<MessageId>,
}

pub struct Simulation {
    cfg: ScenarioConfig,
    mode: DeploymentMode,
    workload: WorkloadConfig,
    budget: SignalingBudget,
    now: SimTime,
    t_end: SimTime,
    kernel: Kernel<Ev>,
    outbox: Vec<(SimTime, Ev)>,
    net: Network,
    assoc: AssociationMap,
    locals: Vec<LocalDt>,
    edges: Vec<EdgeDt>,
    cloud: CloudDt,
    agents: AgentRegistry,
    arrivals: Arrivals,
    sources: Vec<DemandSource>,
    next_class: Vec<DemandClass>,
    demands: Vec<Demand>,
    critical: Vec<Option<MessageId>>,
    serving: Vec<Option<Layer>>,
    via_edge: Vec<Option<usize>>,
    ledger: Ledger,
    movers: MoverSelector,
    mobility_rng: RngStream,
    handovers: Vec<HandoverRecord>,
    transit: Vec<Option<Transit>>,
    hstats: HandoverStats,
    pool_sweeps: u64,
    aborts: Vec<(SimTime, AbortedTransfer)>,
    trace: Sha256,
}

/// Everything a finished run produced.
#[derive(Debug)]
pub struct RunOutput {
    pub mode: DeploymentMode,
    pub records: Vec<DemandRecord>,
    pub summary: RunSummary,
    pub demands: Vec<Demand>,
    pub messages: Vec<Message>,
    pub handovers: Vec<HandoverRecord>,
    pub ledger: Ledger,
    pub net_stats: NetworkStats,
    /// Exactly-one-pool sweeps performed (one per dispatched event).
    pub pool_sweeps: u64,
    /// Demand messages that left a terminal inside its handover window.
    pub hold_violations: Vec<MessageId>,
    /// Transfers cut by a centralized handover, with the time of the cut.
    pub aborts: Vec<(SimTime, AbortedTransfer)>,
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig, mode: DeploymentMode) -> Result<Self, SimError> {
        Self::with_arrivals(cfg, mode, Arrivals::Poisson)
    }

    pub fn with_arrivals(
        cfg: &ScenarioConfig,
        mode: DeploymentMode,
        arrivals: Arrivals,
    ) -> Result<Self, SimError> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            let text: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
            return Err(SimError::Config(text.join("; ")));
        }
        let topo = Topology::new(cfg.topology());
        let n = cfg.terminals;
        let assoc = AssociationMap::round_robin(n, cfg.edges);
        let locals = (0..n).map(|t| LocalDt::new(t, cfg.terminal_gflops)).collect();
        let mut edges: Vec<EdgeDt> = (0..cfg.edges)
            .map(|e| {
                EdgeDt::new(
                    e,
                    cfg.edge_gflops,
                    cfg.escalation_wait_s,
                    cfg.anomaly_window,
                    cfg.forward_fraction,
                    kb(cfg.agent_state_kb),
                )
            })
            .collect();
        let mut agents = AgentRegistry::default();
        if mode == DeploymentMode::MultiLayer {
            for t in 0..n {
                let home = assoc.edge_of(t).expect("initial association");
                agents.admit(
                    &mut edges[home],
                    DigitalAgent {
                        terminal: t,
                        home,
                        state_bytes: kb(cfg.agent_state_kb),
                    },
                )?;
            }
        }
        let model_period = match mode {
            DeploymentMode::MultiLayer => cfg.model_update_period_s,
            DeploymentMode::Centralized => 0.0,
        };
        let sources = (0..n)
            .map(|t| DemandSource::new(t, RngStream::new(cfg.seed, Stream::Workload(t))))
            .collect();
        let mut sim = Self {
            cfg: cfg.clone(),
            mode,
            workload: cfg.workload(),
            budget: cfg.signaling.clone(),
            now: SimTime::ZERO,
            t_end: SimTime::from_secs(cfg.duration_s),
            kernel: Kernel::new(),
            outbox: Vec::new(),
            net: Network::new(topo),
            assoc,
            locals,
            edges,
            cloud: CloudDt::new(cfg.cloud_gflops, model_period, kb(cfg.model_update_size_kb)),
            agents,
            arrivals,
            sources,
            next_class: vec![Layer::Local; n],
            demands: Vec::new(),
            critical: Vec::new(),
            serving: Vec::new(),
            via_edge: Vec::new(),
            ledger: Ledger::default(),
            movers: MoverSelector::new(
                cfg.mobility(),
                n,
                RngStream::new(cfg.seed, Stream::MoverSelection),
            ),
            mobility_rng: RngStream::new(cfg.seed, Stream::Mobility),
            handovers: Vec::new(),
            transit: vec![None; n],
            hstats: HandoverStats::default(),
            pool_sweeps: 0,
            aborts: Vec::new(),
            trace: Sha256::new(),
        };
        sim.seed_events()?;
        Ok(sim)
    }

    fn seed_events(&mut self) -> Result<(), SimError> {
        let t_end = self.t_end.secs();
        match &self.arrivals {
            Arrivals::Poisson => {
                for t in 0..self.cfg.terminals {
                    let (delta, class) = self.sources[t].next_arrival(&self.workload)?;
                    self.next_class[t] = class;
                    if delta <= t_end {
                        self.kernel.schedule(
                            SimTime::from_secs(delta),
                            Ev::DemandGenerated {
                                terminal: t,
                                class: None,
                            },
                        )?;
                    }
                }
            }
            Arrivals::Scripted(list) => {
                for &(at, terminal, class) in list {
                    if terminal >= self.cfg.terminals {
                        return Err(SimError::Config(format!("scripted terminal {terminal} does not exist")));
                    }
                    self.kernel.schedule(
                        SimTime::from_secs(at),
                        Ev::DemandGenerated {
                            terminal,
                            class: Some(class),
                        },
                    )?;
                }
            }
        }
        let plan = self.cfg.mobility();
        if plan.is_active() {
            for at in plan.tick_times(t_end) {
                self.kernel.schedule(SimTime::from_secs(at), Ev::MobilityTick)?;
            }
        }
        if self.cloud.model_updates_enabled() {
            let period = self.cloud.model_update_period_s;
            let mut k = 1u64;
            while k as f64 * period <= t_end {
                self.kernel
                    .schedule(SimTime::from_secs(k as f64 * period), Ev::ModelUpdateTick)?;
                k += 1;
            }
        }
        Ok(())
    }

    /// Removes a terminal's edge association, e.g. to exercise peer fallback.
    pub fn detach_terminal(&mut self, terminal: usize) {
        self.assoc.detach(terminal);
    }

    pub fn association(&self) -> &AssociationMap {
        &self.assoc
    }

    pub fn run(mut self) -> RunOutput {
        let mut kernel = std::mem::take(&mut self.kernel);
        let t_end = self.t_end;
        let result = kernel.run_until(t_end, |k, ev| self.dispatch(k, ev));
        let failure = result.err().map(|e| e.to_string());
        self.now = if failure.is_some() { kernel.now() } else { t_end };
        let dispatched = kernel.dispatched();
        self.finish(dispatched, failure)
    }

    fn dispatch(&mut self, k: &mut Kernel<Ev>, ev: Event<Ev>) -> Result<(), SimError> {
        self.now = ev.time;
        self.trace.update(ev.time.secs().to_bits().to_le_bytes());
        self.trace.update(ev.seq.to_le_bytes());
        self.trace.update(format!("{:?}", ev.payload).as_bytes());
        match ev.payload {
            Ev::DemandGenerated { terminal, class } => self.on_generated(terminal, class)?,
            Ev::HopDone { msg, generation } => self.on_hop(msg, generation)?,
            Ev::ComputeDone(site) => self.on_compute_done(site)?,
            Ev::MobilityTick => self.on_mobility_tick()?,
            Ev::ModelUpdateTick => self.on_model_update()?,
        }
        for (at, ev) in self.outbox.drain(..) {
            k.schedule(at, ev)?;
        }
        self.sweep()
    }

    fn schedule(&mut self, at: SimTime, ev: Ev) {
        self.outbox.push((at, ev));
    }

    /// Exactly-one-pool and pool/association consistency.
    fn sweep(&mut self) -> Result<(), SimError> {
        self.pool_sweeps += 1;
        if self.mode != DeploymentMode::MultiLayer {
            return Ok(());
        }
        self.agents.check(&self.edges).map_err(SimError::Invariant)?;
        for t in 0..self.cfg.terminals {
            match self.agents.location(t) {
                Some(AgentLocation::Pooled(e)) => {
                    if let Some(a) = self.assoc.edge_of(t) {
                        if a != e {
                            return Err(SimError::Invariant(format!(
                                "agent {t} pooled at edge {e} but terminal associated with edge {a}"
                            )));
                        }
                    }
                }
                Some(AgentLocation::Migrating { .. }) => {
                    if !self.assoc.in_handover(t) {
                        return Err(SimError::Invariant(format!(
                            "agent {t} migrating outside a handover"
                        )));
                    }
                }
                None => {
                    return Err(SimError::Invariant(format!("agent {t} is in no pool")));
                }
            }
            if !self.assoc.in_handover(t) && !self.locals[t].held.is_empty() {
                return Err(SimError::Invariant(format!(
                    "terminal {t} holds messages outside a handover"
                )));
            }
        }
        Ok(())
    }

    // ---- messages -------------------------------------------------------

    fn emit(&mut self, msg: Message) -> Result<MessageId, SimError> {
        self.ledger.record(msg.bucket, msg.size)?;
        if let LedgerBucket::Demand(d) = msg.bucket {
            self.demands[d].signaling_bytes += msg.size;
        }
        let critical = msg.critical.then_some(msg.demand_ref).flatten();
        let id = self.net.register(msg);
        if let Some(d) = critical {
            self.critical[d] = Some(id);
        }
        self.dispatch_message(id);
        Ok(id)
    }

    fn control(&self, kind: MessageKind, src: NodeId, dst: NodeId, body: u64, bucket: LedgerBucket) -> Message {
        Message::new(kind, Plane::Control, src, dst, self.budget.wire(body), self.now, bucket)
    }

    fn data(&self, kind: MessageKind, src: NodeId, dst: NodeId, size: u64) -> Message {
        Message::new(kind, Plane::Data, src, dst, size, self.now, LedgerBucket::DataPlane)
    }

    fn dispatch_message(&mut self, id: MessageId) {
        let m = self.net.message(id);
        if let NodeId::Terminal(t) = m.at {
            if self.mode == DeploymentMode::MultiLayer
                && m.kind != MessageKind::HandoverNotice
                && self.assoc.in_handover(t)
            {
                if let Some(d) = self.critical_demand(id) {
                    self.demands[d].handover_affected = true;
                }
                self.locals[t].held.push_back(id);
                return;
            }
        }
        self.launch(id);
    }

    fn launch(&mut self, id: MessageId) {
        match self.net.launch(id, &self.assoc, self.now) {
            Ok(arrival) => {
                let generation = self.net.message(id).generation;
                self.schedule(arrival, Ev::HopDone { msg: id, generation });
            }
            Err(_) => self.unroutable(id),
        }
    }

    fn unroutable(&mut self, id: MessageId) {
        self.net.drop_unroutable(id);
        if let Some(d) = self.critical_demand(id) {
            self.demands[d].fail(FailureReason::NoRoute);
            self.critical[d] = None;
        }
    }

    /// Demand whose critical path `id` currently carries.
    fn critical_demand(&self, id: MessageId) -> Option<usize> {
        let d = self.net.message(id).demand_ref?;
        (self.critical[d] == Some(id)).then_some(d)
    }

    fn on_hop(&mut self, id: MessageId, generation: u32) -> Result<(), SimError> {
        let slot = self.net.message(id).hop;
        let reroutes = self.net.stats().reroutes;
        let outcome = self.net.hop_done(id, generation, &self.assoc, self.now);
        if outcome == HopOutcome::Stale {
            return Ok(());
        }
        if let (Some(d), Some(slot)) = (self.critical_demand(id), slot) {
            let demand = &mut self.demands[d];
            demand.account(Phase::QueueWait, slot.start);
            demand.account(Phase::Transmission, self.now);
            if self.net.stats().reroutes != reroutes {
                demand.handover_affected = true;
            }
        }
        match outcome {
            HopOutcome::Stale => unreachable!(),
            HopOutcome::Forwarded(arrival) => {
                let generation = self.net.message(id).generation;
                self.schedule(arrival, Ev::HopDone { msg: id, generation });
                Ok(())
            }
            HopOutcome::Unroutable(_) => {
                self.unroutable(id);
                Ok(())
            }
            HopOutcome::Delivered => self.on_delivered(id),
        }
    }

    fn on_delivered(&mut self, id: MessageId) -> Result<(), SimError> {
        let m = self.net.message(id);
        let (kind, src, dst, subject, created) = (m.kind, m.src, m.dst, m.subject, m.created_at);
        match (kind, dst) {
            (MessageKind::DemandData, NodeId::Edge(e)) => {
                if let Some(d) = self.critical_demand(id) {
                    self.edge_serve(e, d)?;
                }
            }
            (MessageKind::DemandData, NodeId::Cloud) => {
                if let Some(d) = self.critical_demand(id) {
                    self.cloud_serve(d);
                }
            }
            (MessageKind::ResultData, NodeId::Terminal(_)) => {
                if let Some(d) = self.critical_demand(id) {
                    let layer = self.serving[d].expect("served demand has a layer");
                    self.demands[d].complete(layer, self.now);
                    self.critical[d] = None;
                }
            }
            (MessageKind::StatusSummary, NodeId::Edge(e)) if self.mode == DeploymentMode::MultiLayer => {
                if let NodeId::Terminal(t) = src {
                    self.edge_status(e, t, self.now.secs() - created.secs())?;
                }
            }
            (MessageKind::HandoverNotice, NodeId::Edge(e)) => {
                self.on_notice(id, e, subject.expect("notice names its terminal"))?;
            }
            (MessageKind::AgentMigration, NodeId::Edge(e)) => {
                self.on_migrated(id, e, subject.expect("migration names its terminal"))?;
            }
            (MessageKind::ModelUpdate, NodeId::Edge(e)) => self.relay_model_update(e)?,
            _ => {}
        }
        Ok(())
    }

    // ---- demands --------------------------------------------------------

    /// Edge an uplink message from `t` should target.
    fn uplink_edge(&self, t: usize) -> Option<usize> {
        self.assoc.effective_edge(t).or_else(|| {
            self.net
                .topology()
                .p2p_enabled()
                .then(|| self.assoc.nearest_associated(t))
                .flatten()
                .and_then(|p| self.assoc.edge_of(p))
        })
    }

    fn on_generated(&mut self, t: usize, scripted: Option<DemandClass>) -> Result<(), SimError> {
        let class = match scripted {
            Some(c) => c,
            None => {
                let class = self.next_class[t];
                let (delta, next) = self.sources[t].next_arrival(&self.workload)?;
                self.next_class[t] = next;
                let at = self.now.after(delta);
                if at <= self.t_end {
                    self.schedule(at, Ev::DemandGenerated { terminal: t, class: None });
                }
                class
            }
        };
        let id = self.demands.len();
        let spec = *self.workload.spec(class);
        self.demands.push(Demand::new(id, t, class, spec, self.now));
        self.ledger.open_demand(id);
        self.critical.push(None);
        self.serving.push(None);
        self.via_edge.push(None);

        let me = NodeId::Terminal(t);
        let b = self.budget.clone();
        match source_action(class, self.mode) {
            SourceAction::SendUp(Payload::Raw) => {
                if route(self.net.topology(), &self.assoc, me, NodeId::Cloud).is_err() {
                    self.demands[id].fail(FailureReason::NoRoute);
                    return Ok(());
                }
                self.serving[id] = Some(Layer::Cloud);
                let bucket = LedgerBucket::Demand(id);
                let raw = self.data(MessageKind::DemandData, me, NodeId::Cloud, spec.raw_bytes);
                self.emit(raw.for_demand(id).critical())?;
                let req = self.control(MessageKind::DemandPacket, me, NodeId::Cloud, b.centralized_request, bucket);
                self.emit(req.for_demand(id))?;
                let status = self.control(MessageKind::StatusSummary, me, NodeId::Cloud, b.centralized_status, bucket);
                self.emit(status.for_demand(id))?;
            }
            SourceAction::ServeLocally => {
                self.serving[id] = Some(Layer::Local);
                let started = self.locals[t]
                    .queue
                    .enqueue(id, spec.compute_gflop, spec.priority, self.now);
                self.started(NodeId::Terminal(t), started);
                let dst = self.uplink_edge(t).map_or(NodeId::Cloud, NodeId::Edge);
                let status = self.control(MessageKind::StatusSummary, me, dst, b.status_summary, LedgerBucket::Demand(id));
                self.emit(status.for_demand(id))?;
            }
            SourceAction::SendUp(Payload::Semantic) => {
                let Some(e) = self.uplink_edge(t) else {
                    self.demands[id].fail(FailureReason::NoRoute);
                    return Ok(());
                };
                let dst = NodeId::Edge(e);
                let bucket = LedgerBucket::Demand(id);
                let data = self.data(MessageKind::DemandData, me, dst, spec.semantic_bytes);
                self.emit(data.for_demand(id).critical())?;
                let packet = self.control(MessageKind::DemandPacket, me, dst, b.demand_packet, bucket);
                self.emit(packet.for_demand(id))?;
                let status = self.control(MessageKind::StatusSummary, me, dst, b.status_summary, bucket);
                self.emit(status.for_demand(id))?;
            }
        }
        Ok(())
    }

    fn queue_mut(&mut self, site: NodeId) -> &mut ComputeQueue {
        match site {
            NodeId::Terminal(t) => &mut self.locals[t].queue,
            NodeId::Edge(e) => &mut self.edges[e].queue,
            NodeId::Cloud => &mut self.cloud.queue,
        }
    }

    /// Books the wait of a job that just entered service and schedules its end.
    fn started(&mut self, site: NodeId, started: Option<Started>) {
        if let Some(s) = started {
            self.demands[s.job.demand].account(Phase::QueueWait, s.start);
            self.schedule(s.finish, Ev::ComputeDone(site));
        }
    }

    fn edge_serve(&mut self, e: usize, d: usize) -> Result<(), SimError> {
        self.critical[d] = None;
        let origin = self.demands[d].origin;
        let agent_ok = match self.agents.location(origin) {
            Some(AgentLocation::Pooled(home)) => home == e || self.assoc.edge_of(origin).is_none(),
            Some(AgentLocation::Migrating { .. }) => true,
            None => false,
        };
        if !agent_ok {
            self.demands[d].fail(FailureReason::Orphaned);
            return Ok(());
        }
        let class = self.demands[d].class();
        let wait = self.edges[e].queue.estimated_wait(self.now);
        match edge_action(class, self.mode, wait, self.edges[e].escalation_wait_s) {
            EdgeAction::ServeHere => {
                self.serving[d] = Some(Layer::Edge);
                self.via_edge[d] = Some(e);
                let spec = self.demands[d].spec;
                let started = self.edges[e]
                    .queue
                    .enqueue(d, spec.compute_gflop, spec.priority, self.now);
                self.started(NodeId::Edge(e), started);
            }
            EdgeAction::Escalate | EdgeAction::Relay => {
                self.serving[d] = Some(Layer::Cloud);
                self.via_edge[d] = Some(e);
                self.cloud.note_from_edge(e);
                let me = NodeId::Edge(e);
                let size = self.demands[d].spec.semantic_bytes;
                let fwd = self.data(MessageKind::DemandData, me, NodeId::Cloud, size);
                self.emit(fwd.for_demand(d).critical())?;
                let ctl = self.control(
                    MessageKind::DemandPacket,
                    me,
                    NodeId::Cloud,
                    self.budget.cloud_forward,
                    LedgerBucket::Demand(d),
                );
                self.emit(ctl.for_demand(d))?;
            }
        }
        Ok(())
    }

    fn cloud_serve(&mut self, d: usize) {
        self.critical[d] = None;
        let spec = self.demands[d].spec;
        let cost = match self.mode {
            DeploymentMode::Centralized => self.cfg.centralized_cost_gflop,
            DeploymentMode::MultiLayer => spec.compute_gflop,
        };
        let started = self.cloud.queue.enqueue(d, cost, spec.priority, self.now);
        self.started(NodeId::Cloud, started);
    }

    fn on_compute_done(&mut self, site: NodeId) -> Result<(), SimError> {
        let now = self.now;
        let (job, next) = self.queue_mut(site).complete(now);
        self.started(site, next);
        let d = job.demand;
        self.demands[d].account(Phase::Compute, now);
        let origin = self.demands[d].origin;
        let to_origin = NodeId::Terminal(origin);
        let bucket = LedgerBucket::Demand(d);
        let b = self.budget.clone();
        match site {
            NodeId::Terminal(t) => {
                self.demands[d].complete(Layer::Local, now);
                let dst = self.uplink_edge(t).map_or(NodeId::Cloud, NodeId::Edge);
                let report = self.control(MessageKind::Feedback, site, dst, b.result_report, bucket);
                self.emit(report.for_demand(d))?;
            }
            NodeId::Edge(_) => {
                let result = self.data(MessageKind::ResultData, site, to_origin, self.demands[d].spec.result_bytes);
                self.emit(result.for_demand(d).critical())?;
                let report = self.control(MessageKind::Feedback, site, to_origin, b.result_report, bucket);
                self.emit(report.for_demand(d))?;
            }
            NodeId::Cloud => {
                let result = self.data(MessageKind::ResultData, site, to_origin, self.demands[d].spec.result_bytes);
                self.emit(result.for_demand(d).critical())?;
                match self.mode {
                    DeploymentMode::Centralized => {
                        let fb = self.control(MessageKind::Feedback, site, to_origin, b.centralized_feedback, bucket);
                        self.emit(fb.for_demand(d))?;
                        let sync = self.control(MessageKind::StatusSummary, site, to_origin, b.centralized_sync, bucket);
                        self.emit(sync.for_demand(d))?;
                    }
                    DeploymentMode::MultiLayer => {
                        let edge = self.via_edge[d].expect("cloud-served demand came through an edge");
                        let ret = self.control(MessageKind::DemandPacket, site, NodeId::Edge(edge), b.cloud_return, bucket);
                        self.emit(ret.for_demand(d))?;
                        let report = self.control(MessageKind::Feedback, site, to_origin, b.result_report, bucket);
                        self.emit(report.for_demand(d))?;
                    }
                }
            }
        }
        Ok(())
    }

    fn edge_status(&mut self, e: usize, t: usize, transit_s: f64) -> Result<(), SimError> {
        let me = NodeId::Edge(e);
        let status = self.budget.status_summary;
        let fwd = self.edges[e].forward_bytes(status);
        if fwd > 0 {
            let m = self.data(MessageKind::DataForward, me, NodeId::Cloud, fwd);
            self.emit(m.about(t))?;
        }
        if self.edges[e].observe(t, transit_s) {
            let flag = self.control(
                MessageKind::AnomalyFlag,
                me,
                NodeId::Cloud,
                self.budget.anomaly_flag,
                LedgerBucket::Maintenance,
            );
            self.emit(flag.about(t))?;
        }
        Ok(())
    }

    // ---- model updates ---------------------------------------------------

    fn on_model_update(&mut self) -> Result<(), SimError> {
        self.cloud.model_waves += 1;
        for e in 0..self.edges.len() {
            let m = Message::new(
                MessageKind::ModelUpdate,
                Plane::Control,
                NodeId::Cloud,
                NodeId::Edge(e),
                self.cloud.model_update_bytes,
                self.now,
                LedgerBucket::ModelUpdate,
            );
            self.emit(m)?;
        }
        Ok(())
    }

    fn relay_model_update(&mut self, e: usize) -> Result<(), SimError> {
        let members: Vec<usize> = self.edges[e].pool.iter().copied().collect();
        for t in members {
            let m = Message::new(
                MessageKind::ModelUpdate,
                Plane::Control,
                NodeId::Edge(e),
                NodeId::Terminal(t),
                self.cloud.model_update_bytes,
                self.now,
                LedgerBucket::ModelUpdate,
            );
            self.emit(m.about(t))?;
        }
        Ok(())
    }

    // ---- mobility --------------------------------------------------------

    fn on_mobility_tick(&mut self) -> Result<(), SimError> {
        let movers = self.movers.next();
        for t in movers {
            self.hstats.reassociations += 1;
            match self.mode {
                DeploymentMode::Centralized => self.handover_centralized(t)?,
                DeploymentMode::MultiLayer => self.handover_multilayer(t)?,
            }
        }
        Ok(())
    }

    fn handover_centralized(&mut self, t: usize) -> Result<(), SimError> {
        let Some(from) = self.assoc.edge_of(t) else {
            return Ok(());
        };
        let to = pick_target(from, self.edges.len(), &mut self.mobility_rng);
        self.assoc.set_edge(t, to);
        let mut record = HandoverRecord::new(t, from, to, self.now);
        record.t_complete = Some(self.now.secs());
        self.hstats.started += 1;
        self.hstats.completed += 1;
        let aborted = self.net.abort_inflight(t, self.now);
        for a in aborted {
            self.aborts.push((self.now, a.clone()));
            record.aborted.push(a.message);
            self.hstats.aborted_transfers += 1;
            if let Some(d) = self.critical_demand(a.message) {
                let demand = &mut self.demands[d];
                if a.slot.start <= self.now {
                    demand.account(Phase::QueueWait, a.slot.start);
                    demand.account(Phase::Transmission, self.now);
                } else {
                    demand.account(Phase::QueueWait, self.now);
                }
                demand.handover_affected = true;
            }
            self.restart(a.message)?;
        }
        self.handovers.push(record);
        Ok(())
    }

    /// Resends an aborted message from the node that currently holds it.
    fn restart(&mut self, old: MessageId) -> Result<MessageId, SimError> {
        let o = self.net.message(old).clone();
        debug_assert_eq!(o.status, MessageStatus::Aborted);
        let bucket = match (o.plane, o.bucket) {
            (Plane::Data, b) => b,
            (Plane::Control, LedgerBucket::ModelUpdate) => LedgerBucket::ModelUpdate,
            (Plane::Control, _) => LedgerBucket::Retransmission,
        };
        let mut m = Message::new(o.kind, o.plane, o.at, o.dst, o.size, self.now, bucket);
        m.demand_ref = o.demand_ref;
        m.subject = o.subject;
        m.critical = o.critical;
        m.restart_of = Some(old);
        let was_critical = o.demand_ref.is_some_and(|d| self.critical[d] == Some(old));
        if o.critical && !was_critical {
            m.critical = false;
        }
        self.hstats.restarts += 1;
        self.emit(m)
    }

    fn handover_multilayer(&mut self, t: usize) -> Result<(), SimError> {
        let Some(heading) = self.assoc.effective_edge(t) else {
            return Ok(());
        };
        let to = pick_target(heading, self.edges.len(), &mut self.mobility_rng);
        match self.transit[t] {
            None => {
                let from = self.assoc.edge_of(t).expect("associated terminal");
                self.assoc.begin_handover(t, to, self.now);
                let record = self.handovers.len();
                self.handovers.push(HandoverRecord::new(t, from, to, self.now));
                self.hstats.started += 1;
                let uplink = self
                    .net
                    .topology()
                    .link_between(NodeId::Terminal(t), NodeId::Edge(from))
                    .expect("uplink exists");
                let pulled = self.net.pull_back_queued(uplink, self.now);
                for id in pulled {
                    if let Some(d) = self.critical_demand(id) {
                        self.demands[d].account(Phase::QueueWait, self.now);
                        self.demands[d].handover_affected = true;
                    }
                    self.locals[t].held.push_back(id);
                }
                let notice = self.control(
                    MessageKind::HandoverNotice,
                    NodeId::Terminal(t),
                    NodeId::Edge(from),
                    self.budget.handover_notice,
                    LedgerBucket::Maintenance,
                );
                let notice = self.emit(notice.about(t))?;
                self.transit[t] = Some(Transit {
                    record,
                    from,
                    notice,
                    migration: None,
                });
            }
            Some(tr) => {
                self.hstats.coalesced += 1;
                self.handovers[tr.record].coalesced = true;
                if tr.migration.is_none() && to == tr.from {
                    // the agent never left: call the handover off
                    self.assoc.retarget(t, to);
                    self.assoc.finish_handover(t);
                    self.handovers[tr.record].to_edge = to;
                    self.handovers[tr.record].cancelled = true;
                    self.hstats.cancelled += 1;
                    self.transit[t] = None;
                    self.close_window(t, tr.record);
                    return Ok(());
                }
                self.assoc.retarget(t, to);
                self.handovers[tr.record].to_edge = to;
                if let Some(mig) = tr.migration {
                    self.net.message_mut(mig).dst = NodeId::Edge(to);
                }
                self.transit[t] = Some(tr);
            }
        }
        Ok(())
    }

    fn on_notice(&mut self, id: MessageId, e: usize, t: usize) -> Result<(), SimError> {
        let Some(mut tr) = self.transit[t] else {
            return Ok(());
        };
        if tr.notice != id {
            return Ok(());
        }
        debug_assert_eq!(tr.from, e);
        let agent = self.agents.evict(&mut self.edges[e], t)?;
        let me = NodeId::Edge(e);
        let pool = self.control(
            MessageKind::HandoverNotice,
            me,
            NodeId::Cloud,
            self.budget.pool_notice,
            LedgerBucket::Maintenance,
        );
        self.emit(pool.about(t))?;
        let target = self.assoc.get(t).handover.expect("in handover").target;
        let migration = Message::new(
            MessageKind::AgentMigration,
            Plane::Data,
            me,
            NodeId::Edge(target),
            agent.state_bytes,
            self.now,
            LedgerBucket::DataPlane,
        )
        .about(t);
        if target == e {
            return Err(SimError::Invariant(format!(
                "handover of terminal {t} targets its origin edge {e}"
            )));
        }
        let mig = self.emit(migration)?;
        tr.migration = Some(mig);
        self.transit[t] = Some(tr);
        Ok(())
    }

    fn on_migrated(&mut self, id: MessageId, e: usize, t: usize) -> Result<(), SimError> {
        let Some(tr) = self.transit[t] else {
            return Err(SimError::Invariant(format!("migration of agent {t} outside a handover")));
        };
        if tr.migration != Some(id) {
            return Err(SimError::Invariant(format!("unexpected migration message {id} for agent {t}")));
        }
        let target = self.assoc.get(t).handover.expect("in handover").target;
        if target != e {
            return Err(SimError::Invariant(format!(
                "migration of agent {t} landed at edge {e}, target is {target}"
            )));
        }
        self.agents.admit(
            &mut self.edges[e],
            DigitalAgent {
                terminal: t,
                home: e,
                state_bytes: kb(self.cfg.agent_state_kb),
            },
        )?;
        let pool = self.control(
            MessageKind::HandoverNotice,
            NodeId::Edge(e),
            NodeId::Cloud,
            self.budget.pool_notice,
            LedgerBucket::Maintenance,
        );
        self.emit(pool.about(t))?;
        self.assoc.finish_handover(t);
        self.transit[t] = None;
        self.hstats.completed += 1;
        self.close_window(t, tr.record);
        Ok(())
    }

    /// Ends the handover window: stamps the record and releases held messages
    /// in FIFO order towards the terminal's (new) edge.
    fn close_window(&mut self, t: usize, record: usize) {
        self.handovers[record].t_complete = Some(self.now.secs());
        let edge = self.assoc.edge_of(t).expect("associated after handover");
        let held: Vec<MessageId> = self.locals[t].held.drain(..).collect();
        self.handovers[record].buffered = held.len();
        self.hstats.buffered_messages += held.len() as u64;
        for id in held {
            if let NodeId::Edge(_) = self.net.message(id).dst {
                self.net.message_mut(id).dst = NodeId::Edge(edge);
            }
            if let Some(d) = self.critical_demand(id) {
                self.demands[d].account(Phase::Buffering, self.now);
            }
            self.launch(id);
        }
    }

    // ---- wrap-up ---------------------------------------------------------

    fn finish(mut self, dispatched: u64, failure: Option<String>) -> RunOutput {
        let records: Vec<DemandRecord> = self.demands.iter().filter_map(DemandRecord::from_demand).collect();
        let duration = self.cfg.duration_s;
        let series = per_second_series(&records, duration);
        let count = |s: DemandStatus| self.demands.iter().filter(|d| d.status == s).count();
        let hold_violations = self.hold_violations();
        let stats = self.net.stats().clone();
        let ledger_totals = self.ledger.totals();
        let anomalies = self.edges.iter().map(|e| e.anomalies).sum();
        let digest = std::mem::take(&mut self.trace).finalize();
        let summary = RunSummary {
            mode: self.mode.as_str().into(),
            seed: self.cfg.seed,
            duration_s: duration,
            generated: self.demands.len(),
            completed: count(DemandStatus::Completed),
            failed: count(DemandStatus::Failed),
            pending_at_end: count(DemandStatus::Pending),
            latency: latency_stats(&records),
            volatility: volatility(&series),
            series,
            served: RunSummary::served_by_layer(&records),
            signaling_per_demand: RunSummary::signaling_by_layer(&records),
            model_update_bytes: ledger_totals.model_update,
            ledger: ledger_totals,
            handovers: self.hstats.clone(),
            wasted_bytes: stats.wasted_bytes,
            messages_delivered: stats.delivered,
            messages_aborted: stats.aborted,
            anomalies,
            events_dispatched: dispatched,
            trace_digest: digest.iter().map(|b| format!("{b:02x}")).collect(),
            failure,
        };
        RunOutput {
            mode: self.mode,
            records,
            summary,
            demands: self.demands,
            messages: self.net.messages().to_vec(),
            handovers: self.handovers,
            ledger: self.ledger,
            net_stats: stats,
            pool_sweeps: self.pool_sweeps,
            hold_violations,
            aborts: std::mem::take(&mut self.aborts),
        }
    }

    /// Demand messages whose first-hop serialization began strictly inside a
    /// handover window of their source terminal.
    fn hold_violations(&self) -> Vec<MessageId> {
        if self.mode != DeploymentMode::MultiLayer {
            return Vec::new();
        }
        let end = self.now.secs();
        let windows: Vec<(usize, f64, f64)> = self
            .handovers
            .iter()
            .map(|h| (h.terminal, h.t_start, h.t_complete.unwrap_or(end)))
            .collect();
        self.net
            .messages()
            .iter()
            .filter(|m| m.demand_ref.is_some())
            .filter(|m| {
                let NodeId::Terminal(t) = m.src else {
                    return false;
                };
                let Some(dep) = m.departed_at else {
                    return false;
                };
                let d = dep.secs();
                windows.iter().any(|&(wt, s, e)| wt == t && s < d && d < e)
            })
            .map(|m| m.id)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> ScenarioConfig {
        ScenarioConfig {
            movers: 0,
            model_update_period_s: 0.0,
            duration_s: 10.0,
            ..ScenarioConfig::default()
        }
    }

    fn single(cfg: &ScenarioConfig, mode: DeploymentMode, class: Layer) -> RunOutput {
        Simulation::with_arrivals(cfg, mode, Arrivals::Scripted(vec![(1.0, 3, class)]))
            .unwrap()
            .run()
    }

    #[test]
    fn local_demand_idle() {
        let out = single(&quiet(), DeploymentMode::MultiLayer, Layer::Local);
        let r = &out.records[0];
        assert_eq!(r.serving_layer, Layer::Local);
        assert!((r.latency_s - 0.1).abs() < 1e-12);
        assert_eq!(r.queue_wait_s, 0.0);
        assert_eq!(r.signaling_bytes, 3500);
    }

    #[test]
    fn edge_demand_idle() {
        let out = single(&quiet(), DeploymentMode::MultiLayer, Layer::Edge);
        let r = &out.records[0];
        assert_eq!(r.serving_layer, Layer::Edge);
        assert!((r.latency_s - 0.338).abs() < 1e-9, "{}", r.latency_s);
        assert_eq!(r.signaling_bytes, 4500);
    }

    #[test]
    fn centralized_always_cloud() {
        for class in Layer::ALL {
            let out = single(&quiet(), DeploymentMode::Centralized, class);
            assert_eq!(out.records[0].serving_layer, Layer::Cloud);
            assert_eq!(out.records[0].signaling_bytes, 15000);
        }
    }

    #[test]
    fn detached_without_peers_fails() {
        let mut sim = Simulation::with_arrivals(
            &quiet(),
            DeploymentMode::MultiLayer,
            Arrivals::Scripted(vec![(1.0, 4, Layer::Edge)]),
        )
        .unwrap();
        sim.detach_terminal(4);
        let out = sim.run();
        assert_eq!(out.demands[0].failure, Some(FailureReason::NoRoute));
    }

    #[test]
    fn detached_with_peers_goes_through_neighbor() {
        let cfg = ScenarioConfig {
            p2p_enabled: true,
            ..quiet()
        };
        let mut sim = Simulation::with_arrivals(
            &cfg,
            DeploymentMode::MultiLayer,
            Arrivals::Scripted(vec![(1.0, 4, Layer::Edge)]),
        )
        .unwrap();
        sim.detach_terminal(4);
        let out = sim.run();
        assert_eq!(out.demands[0].status, DemandStatus::Completed);
        let data = out
            .messages
            .iter()
            .find(|m| m.kind == MessageKind::DemandData)
            .unwrap();
        assert_eq!(data.dst, NodeId::Edge(1));
        assert_eq!(data.route.len(), 2);
    }

    #[test]
    fn handover_generated_demand_is_buffered() {
        let cfg = ScenarioConfig {
            movers: 10,
            duration_s: 3.0,
            model_update_period_s: 0.0,
            ..ScenarioConfig::default()
        };
        let out = Simulation::with_arrivals(
            &cfg,
            DeploymentMode::MultiLayer,
            Arrivals::Scripted(vec![(1.001, 0, Layer::Edge), (1.001, 1, Layer::Local)]),
        )
        .unwrap()
        .run();
        assert!(out.hold_violations.is_empty());
        let h = out.handovers.iter().find(|h| h.terminal == 0 && h.t_start == 1.0).unwrap();
        let edge = &out.records[0];
        assert!(edge.handover_affected);
        assert!((edge.buffering_s - (h.t_complete.unwrap() - 1.001)).abs() < 1e-12);
        let local = &out.records[1];
        assert!((local.latency_s - 0.1).abs() < 1e-12);
        assert_eq!(local.buffering_s, 0.0);
    }
}
