//! Digital-twin node state machines: single-server compute queues, the
//! terminal-side local twin, edge twins with agent pools and anomaly
//! windows, and the cloud twin.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::demand::Priority;
use crate::kernel::SimTime;
use crate::net::MessageId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discipline {
    Fifo,
    /// Non-preemptive; equal priorities are served in arrival order.
    Priority,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub demand: usize,
    pub cost_gflop: f64,
    pub priority: Priority,
    pub arrival: SimTime,
    seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Started {
    pub job: Job,
    pub start: SimTime,
    pub finish: SimTime,
}

/// Single-server, non-preemptive compute queue.
#[derive(Debug, Clone)]
pub struct ComputeQueue {
    capacity_gflops: f64,
    discipline: Discipline,
    pending: Vec<Job>,
    in_service: Option<Started>,
    next_seq: u64,
    admitted: u64,
    served: u64,
}

impl ComputeQueue {
    pub fn new(capacity_gflops: f64, discipline: Discipline) -> Self {
        assert!(capacity_gflops > 0.0, "compute capacity must be positive");
        Self {
            capacity_gflops,
            discipline,
            pending: Vec::new(),
            in_service: None,
            next_seq: 0,
            admitted: 0,
            served: 0,
        }
    }

    pub fn capacity(&self) -> f64 {
        self.capacity_gflops
    }

    pub fn service_time(&self, cost_gflop: f64) -> f64 {
        cost_gflop / self.capacity_gflops
    }

    pub fn is_idle(&self) -> bool {
        self.in_service.is_none()
    }

    pub fn in_service(&self) -> Option<&Started> {
        self.in_service.as_ref()
    }

    pub fn pending(&self) -> &[Job] {
        &self.pending
    }

    pub fn admitted(&self) -> u64 {
        self.admitted
    }

    pub fn served(&self) -> u64 {
        self.served
    }

    /// Jobs admitted but not yet finished (queued plus in service).
    pub fn backlog(&self) -> u64 {
        self.admitted - self.served
    }

    /// Time a job arriving now would wait before starting service.
    pub fn estimated_wait(&self, now: SimTime) -> f64 {
        let residual = self
            .in_service
            .map_or(0.0, |s| (s.finish.secs() - now.secs()).max(0.0));
        let queued: f64 = self.pending.iter().map(|j| j.cost_gflop).sum();
        residual + queued / self.capacity_gflops
    }

    /// Position at which a job of `priority` would be inserted.
    pub fn schedule_priority(&self, priority: Priority) -> usize {
        match self.discipline {
            Discipline::Fifo => self.pending.len(),
            Discipline::Priority => self
                .pending
                .iter()
                .position(|j| j.priority < priority)
                .unwrap_or(self.pending.len()),
        }
    }

    /// Admits a job. Returns the service window if the server was idle.
    pub fn enqueue(
        &mut self,
        demand: usize,
        cost_gflop: f64,
        priority: Priority,
        now: SimTime,
    ) -> Option<Started> {
        assert!(cost_gflop >= 0.0, "negative compute cost");
        let job = Job {
            demand,
            cost_gflop,
            priority,
            arrival: now,
            seq: self.next_seq,
        };
        self.next_seq += 1;
        self.admitted += 1;
        if self.in_service.is_none() {
            return Some(self.start(job, now));
        }
        let at = self.schedule_priority(priority);
        self.pending.insert(at, job);
        None
    }

    fn start(&mut self, job: Job, now: SimTime) -> Started {
        let started = Started {
            job,
            start: now,
            finish: now.after(self.service_time(job.cost_gflop)),
        };
        self.in_service = Some(started);
        started
    }

    /// Finishes the job in service and starts the next one, if any.
    pub fn complete(&mut self, now: SimTime) -> (Job, Option<Started>) {
        let done = self.in_service.take().expect("complete on an idle queue");
        debug_assert_eq!(done.finish, now);
        self.served += 1;
        let next = if self.pending.is_empty() {
            None
        } else {
            let job = self.pending.remove(0);
            Some(self.start(job, now))
        };
        (done.job, next)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DtError {
    #[error("agent of terminal {terminal} admitted to edge {edge} while already pooled at edge {current}")]
    DoubleAdmit {
        terminal: usize,
        edge: usize,
        current: usize,
    },
    #[error("agent of terminal {terminal} evicted from edge {edge} where it is not pooled")]
    EvictAbsent { terminal: usize, edge: usize },
}

/// Terminal-resident twin.
#[derive(Debug, Clone)]
pub struct LocalDt {
    pub terminal: usize,
    pub queue: ComputeQueue,
    /// Outbound messages held back while a handover is in progress.
    pub held: VecDeque<MessageId>,
}

impl LocalDt {
    pub fn new(terminal: usize, gflops: f64) -> Self {
        Self {
            terminal,
            queue: ComputeQueue::new(gflops, Discipline::Priority),
            held: VecDeque::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DigitalAgent {
    pub terminal: usize,
    pub home: usize,
    pub state_bytes: u64,
}

/// Where each terminal's agent currently lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentLocation {
    Pooled(usize),
    Migrating { from: usize },
}

/// Registry of all agents; enforces the exactly-one-pool rule.
#[derive(Debug, Clone, Default)]
pub struct AgentRegistry {
    location: BTreeMap<usize, AgentLocation>,
}

impl AgentRegistry {
    pub fn location(&self, terminal: usize) -> Option<AgentLocation> {
        self.location.get(&terminal).copied()
    }

    pub fn admit(&mut self, edge: &mut EdgeDt, agent: DigitalAgent) -> Result<(), DtError> {
        if let Some(AgentLocation::Pooled(current)) = self.location(agent.terminal) {
            return Err(DtError::DoubleAdmit {
                terminal: agent.terminal,
                edge: edge.id,
                current,
            });
        }
        edge.pool.insert(agent.terminal);
        self.location
            .insert(agent.terminal, AgentLocation::Pooled(edge.id));
        Ok(())
    }

    pub fn evict(&mut self, edge: &mut EdgeDt, terminal: usize) -> Result<DigitalAgent, DtError> {
        if self.location(terminal) != Some(AgentLocation::Pooled(edge.id))
            || !edge.pool.remove(&terminal)
        {
            return Err(DtError::EvictAbsent {
                terminal,
                edge: edge.id,
            });
        }
        self.location
            .insert(terminal, AgentLocation::Migrating { from: edge.id });
        Ok(DigitalAgent {
            terminal,
            home: edge.id,
            state_bytes: edge.agent_state_bytes,
        })
    }

    /// Checks that pooled agents appear in exactly one edge pool and
    /// migrating agents in none.
    pub fn check(&self, edges: &[EdgeDt]) -> Result<(), String> {
        for (&t, &loc) in &self.location {
            let hosts: Vec<usize> = edges
                .iter()
                .filter(|e| e.pool.contains(&t))
                .map(|e| e.id)
                .collect();
            match loc {
                AgentLocation::Pooled(e) if hosts == [e] => {}
                AgentLocation::Migrating { .. } if hosts.is_empty() => {}
                _ => {
                    return Err(format!(
                        "agent {t} recorded as {loc:?} but found in pools {hosts:?}"
                    ))
                }
            }
        }
        for e in edges {
            for t in &e.pool {
                if self.location(*t) != Some(AgentLocation::Pooled(e.id)) {
                    return Err(format!("edge {} pools unknown agent {t}", e.id));
                }
            }
        }
        Ok(())
    }
}

/// Flag decision for one new observation against a window of recent ones.
///
/// Flags when the value deviates from the window mean by more than three
/// population standard deviations. A zero-variance window flags any change.
/// Fewer than two observations never flag.
pub fn anomaly_check(window: &[f64], value: f64) -> bool {
    if window.len() < 2 {
        return false;
    }
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd == 0.0 {
        value != mean
    } else {
        (value - mean).abs() > 3.0 * sd
    }
}

/// Edge-resident twin.
#[derive(Debug, Clone)]
pub struct EdgeDt {
    pub id: usize,
    pub pool: BTreeSet<usize>,
    pub queue: ComputeQueue,
    pub escalation_wait_s: f64,
    pub anomaly_window: usize,
    pub forward_fraction: f64,
    pub agent_state_bytes: u64,
    windows: BTreeMap<usize, VecDeque<f64>>,
    pub anomalies: u64,
    pub aggregated_status_bytes: u64,
}

impl EdgeDt {
    pub fn new(
        id: usize,
        gflops: f64,
        escalation_wait_s: f64,
        anomaly_window: usize,
        forward_fraction: f64,
        agent_state_bytes: u64,
    ) -> Self {
        Self {
            id,
            pool: BTreeSet::new(),
            queue: ComputeQueue::new(gflops, Discipline::Priority),
            escalation_wait_s,
            anomaly_window,
            forward_fraction,
            agent_state_bytes,
            windows: BTreeMap::new(),
            anomalies: 0,
            aggregated_status_bytes: 0,
        }
    }

    /// True when a demand arriving now should go to the cloud instead.
    pub fn should_escalate(&self, now: SimTime) -> bool {
        self.queue.estimated_wait(now) > self.escalation_wait_s
    }

    /// Records an observation for `terminal`; returns whether it was anomalous.
    pub fn observe(&mut self, terminal: usize, value: f64) -> bool {
        let cap = self.anomaly_window;
        let window = self.windows.entry(terminal).or_default();
        let flagged = anomaly_check(window.make_contiguous(), value);
        window.push_back(value);
        while window.len() > cap {
            window.pop_front();
        }
        if flagged {
            self.anomalies += 1;
        }
        flagged
    }

    /// Bytes of a status summary forwarded upward after aggregation.
    pub fn forward_bytes(&mut self, status_bytes: u64) -> u64 {
        self.aggregated_status_bytes += status_bytes;
        (status_bytes as f64 * self.forward_fraction).round() as u64
    }
}

/// Cloud twin.
#[derive(Debug, Clone)]
pub struct CloudDt {
    pub queue: ComputeQueue,
    pub model_update_period_s: f64,
    pub model_update_bytes: u64,
    /// Demands received per edge (global state digest).
    pub digest: BTreeMap<usize, u64>,
    pub model_waves: u64,
}

impl CloudDt {
    pub fn new(gflops: f64, model_update_period_s: f64, model_update_bytes: u64) -> Self {
        Self {
            queue: ComputeQueue::new(gflops, Discipline::Fifo),
            model_update_period_s,
            model_update_bytes,
            digest: BTreeMap::new(),
            model_waves: 0,
        }
    }

    pub fn model_updates_enabled(&self) -> bool {
        self.model_update_period_s > 0.0
    }

    pub fn note_from_edge(&mut self, edge: usize) {
        *self.digest.entry(edge).or_default() += 1;
    }
}
