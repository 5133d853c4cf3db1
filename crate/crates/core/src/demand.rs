//! Workload: per-terminal Poisson demand arrivals with a local/edge/cloud
//! class mix and a per-class payload/compute table.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kernel::{KernelError, RngStream, SimTime};

/// Layer a demand nominally needs. Also used for serving layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Local,
    Edge,
    Cloud,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Local, Layer::Edge, Layer::Cloud];

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Local => "local",
            Layer::Edge => "edge",
            Layer::Cloud => "cloud",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local" => Ok(Layer::Local),
            "edge" => Ok(Layer::Edge),
            "cloud" => Ok(Layer::Cloud),
            other => Err(format!("unknown layer `{other}`")),
        }
    }
}

pub type DemandClass = Layer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Priority {
    Low,
    Normal,
    High,
}

impl Priority {
    pub fn as_str(self) -> &'static str {
        match self {
            Priority::Low => "low",
            Priority::Normal => "normal",
            Priority::High => "high",
        }
    }
}

impl FromStr for Priority {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "high" => Ok(Priority::High),
            "normal" => Ok(Priority::Normal),
            "low" => Ok(Priority::Low),
            other => Err(format!("unknown priority `{other}`")),
        }
    }
}

/// Per-class demand shape. Sizes in bytes, compute in GFLOP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemandSpec {
    pub compute_gflop: f64,
    pub raw_bytes: u64,
    pub semantic_bytes: u64,
    pub result_bytes: u64,
    pub priority: Priority,
}

impl DemandSpec {
    pub fn compression_ratio(&self) -> f64 {
        if self.raw_bytes == 0 {
            1.0
        } else {
            self.semantic_bytes as f64 / self.raw_bytes as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadConfig {
    pub rate_per_terminal: f64,
    /// Fractions for local, edge, cloud (in that order).
    pub class_mix: [f64; 3],
    pub specs: [DemandSpec; 3],
}

impl WorkloadConfig {
    pub fn spec(&self, class: DemandClass) -> &DemandSpec {
        &self.specs[class.index()]
    }

    /// Maps a uniform draw in `[0, 1)` onto a class by cumulative mix.
    pub fn class_for(&self, u: f64) -> DemandClass {
        let mut acc = 0.0;
        for class in Layer::ALL {
            acc += self.class_mix[class.index()];
            if u < acc {
                return class;
            }
        }
        // rounding slack at the top end: last class with non-zero weight
        *Layer::ALL
            .iter()
            .rev()
            .find(|c| self.class_mix[c.index()] > 0.0)
            .unwrap_or(&Layer::Cloud)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandStatus {
    Pending,
    Completed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    NoRoute,
    Orphaned,
}

/// Time spent by a demand in each phase. The phases tile its lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Breakdown {
    pub queue_wait: f64,
    pub transmission: f64,
    pub compute: f64,
    pub buffering: f64,
}

impl Breakdown {
    pub fn total(&self) -> f64 {
        self.queue_wait + self.transmission + self.compute + self.buffering
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    QueueWait,
    Transmission,
    Compute,
    Buffering,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demand {
    pub id: usize,
    pub origin: usize,
    class: DemandClass,
    pub spec: DemandSpec,
    pub t_created: SimTime,
    pub t_completed: Option<SimTime>,
    pub serving_layer: Option<Layer>,
    pub breakdown: Breakdown,
    pub status: DemandStatus,
    pub failure: Option<FailureReason>,
    pub signaling_bytes: u64,
    pub handover_affected: bool,
    /// End of the last accounted interval.
    mark: SimTime,
}

impl Demand {
    pub fn new(id: usize, origin: usize, class: DemandClass, spec: DemandSpec, now: SimTime) -> Self {
        Self {
            id,
            origin,
            class,
            spec,
            t_created: now,
            t_completed: None,
            serving_layer: None,
            breakdown: Breakdown::default(),
            status: DemandStatus::Pending,
            failure: None,
            signaling_bytes: 0,
            handover_affected: false,
            mark: now,
        }
    }

    pub fn class(&self) -> DemandClass {
        self.class
    }

    /// Charges the time since the previous mark to `phase`.
    pub fn account(&mut self, phase: Phase, until: SimTime) {
        debug_assert!(until >= self.mark, "accounting went backwards");
        let dt = until.secs() - self.mark.secs();
        match phase {
            Phase::QueueWait => self.breakdown.queue_wait += dt,
            Phase::Transmission => self.breakdown.transmission += dt,
            Phase::Compute => self.breakdown.compute += dt,
            Phase::Buffering => self.breakdown.buffering += dt,
        }
        self.mark = until;
    }

    pub fn mark(&self) -> SimTime {
        self.mark
    }

    pub fn complete(&mut self, layer: Layer, now: SimTime) {
        assert_eq!(self.status, DemandStatus::Pending, "demand {} completed twice", self.id);
        assert!(layer >= self.class, "demand {} served below its class", self.id);
        self.t_completed = Some(now);
        self.serving_layer = Some(layer);
        self.status = DemandStatus::Completed;
    }

    pub fn fail(&mut self, reason: FailureReason) {
        if self.status == DemandStatus::Pending {
            self.status = DemandStatus::Failed;
            self.failure = Some(reason);
        }
    }

    pub fn latency(&self) -> Option<f64> {
        self.t_completed.map(|t| t.secs() - self.t_created.secs())
    }
}

/// Per-terminal arrival process.
#[derive(Debug, Clone)]
pub struct DemandSource {
    pub terminal: usize,
    rng: RngStream,
}

impl DemandSource {
    pub fn new(terminal: usize, rng: RngStream) -> Self {
        Self { terminal, rng }
    }

    /// Draws the gap to the next arrival and that arrival's class.
    pub fn next_arrival(&mut self, cfg: &WorkloadConfig) -> Result<(f64, DemandClass), KernelError> {
        let delta = self.rng.exponential(cfg.rate_per_terminal)?;
        let class = cfg.class_for(self.rng.unit());
        Ok((delta, class))
    }
}
