//! Closed-form latency oracle and the workload fitting built on it.
//!
//! The oracle sums, along each serving path, serialization (`size * 8 /
//! rate`), propagation and `cost / capacity`. It reads the scenario directly
//! and shares no code with the simulator, so the two can cross-check each
//! other.
//!
//! Fitting adds first-order load and mobility corrections (M/G/1 waits at
//! each queue, expected restart loss on aborted wireless transfers) and
//! bisects one free parameter per class until the predicted mean hits the
//! band midpoint. The corrections are approximations; the simulation is the
//! judge.

use std::fmt::Write as _;

use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::demand::Layer;
use crate::policy::DeploymentMode;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn new(lo: f64, hi: f64) -> Result<Self, CalibrationError> {
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(CalibrationError::EmptyBand(format!("[{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    /// Parses `lo,hi` in seconds.
    pub fn parse(s: &str) -> Result<Self, CalibrationError> {
        let bad = || CalibrationError::EmptyBand(s.to_string());
        let (a, b) = s.split_once(',').ok_or_else(bad)?;
        let lo = a.trim().parse().map_err(|_| bad())?;
        let hi = b.trim().parse().map_err(|_| bad())?;
        Band::new(lo, hi)
    }

    pub fn midpoint(&self) -> f64 {
        (self.lo + self.hi) / 2.0
    }
}

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("band {0} is empty or malformed")]
    EmptyBand(String),
    #[error("target unreachable")]
    Infeasible { report: String, nearest: f64 },
}

fn ser(bytes: f64, bits_per_s: f64) -> f64 {
    bytes * 8.0 / bits_per_s
}

/// Link and compute figures in base units, read straight off the scenario.
#[derive(Debug, Clone, Copy)]
struct Figures {
    up: f64,
    down: f64,
    fiber: f64,
    pw: f64,
    pf: f64,
    terminal: f64,
    edge: f64,
    cloud: f64,
}

impl Figures {
    fn of(cfg: &ScenarioConfig) -> Self {
        Self {
            up: cfg.wireless_uplink_mbps * 1e6,
            down: cfg.wireless_downlink_mbps * 1e6,
            fiber: cfg.fiber_gbps * 1e9,
            pw: cfg.wireless_prop_ms / 1000.0,
            pf: cfg.fiber_prop_ms / 1000.0,
            terminal: cfg.terminal_gflops,
            edge: cfg.edge_gflops,
            cloud: cfg.cloud_gflops,
        }
    }
}

fn class_of(cfg: &ScenarioConfig, class: Layer) -> &crate::config::ClassParams {
    match class {
        Layer::Local => &cfg.local,
        Layer::Edge => &cfg.edge,
        Layer::Cloud => &cfg.cloud,
    }
}

fn mix(cfg: &ScenarioConfig, class: Layer) -> f64 {
    match class {
        Layer::Local => cfg.mix_local,
        Layer::Edge => cfg.mix_edge,
        Layer::Cloud => cfg.mix_cloud,
    }
}

/// Idle-network latency of one demand of `class` under `mode`.
pub fn oracle(cfg: &ScenarioConfig, mode: DeploymentMode, class: Layer) -> f64 {
    let f = Figures::of(cfg);
    let c = class_of(cfg, class);
    let sem = c.semantic_kb * 1000.0;
    let raw = c.raw_kb * 1000.0;
    let res = c.result_kb * 1000.0;
    let back = ser(res, f.fiber) + f.pf + ser(res, f.down) + f.pw;
    match (mode, class) {
        (DeploymentMode::Centralized, _) => {
            ser(raw, f.up) + f.pw + ser(raw, f.fiber) + f.pf + cfg.centralized_cost_gflop / f.cloud + back
        }
        (DeploymentMode::MultiLayer, Layer::Local) => c.compute_gflop / f.terminal,
        (DeploymentMode::MultiLayer, Layer::Edge) => {
            ser(sem, f.up) + f.pw + c.compute_gflop / f.edge + ser(res, f.down) + f.pw
        }
        (DeploymentMode::MultiLayer, Layer::Cloud) => {
            ser(sem, f.up) + f.pw + ser(sem, f.fiber) + f.pf + c.compute_gflop / f.cloud + back
        }
    }
}

/// Class-mix-weighted idle latency.
pub fn weighted_oracle(cfg: &ScenarioConfig, mode: DeploymentMode) -> f64 {
    Layer::ALL
        .iter()
        .map(|&c| mix(cfg, c) * oracle(cfg, mode, c))
        .sum()
}

/// Mean M/G/1 waiting time for arrival rate `lambda` and service moments.
fn mg1_wait(lambda: f64, es: f64, es2: f64) -> f64 {
    let rho = lambda * es;
    if rho >= 1.0 {
        f64::INFINITY
    } else {
        lambda * es2 / (2.0 * (1.0 - rho))
    }
}

/// Arrival-weighted service-time moments of a traffic mixture.
struct Mixture {
    lambda: f64,
    s1: f64,
    s2: f64,
}

impl Mixture {
    fn new() -> Self {
        Self {
            lambda: 0.0,
            s1: 0.0,
            s2: 0.0,
        }
    }

    fn add(&mut self, lambda: f64, s: f64) {
        self.lambda += lambda;
        self.s1 += lambda * s;
        self.s2 += lambda * s * s;
    }

    fn wait(&self) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        mg1_wait(self.lambda, self.s1 / self.lambda, self.s2 / self.lambda)
    }
}

/// Expected loss from restarting a wireless transfer of length `d` when its
/// terminal is moved, with share `p` of terminals moving every `period`.
fn restart_loss(d: f64, p: f64, period: f64) -> f64 {
    let d = d.min(period);
    p * d * d / (2.0 * period)
}

/// First-order expected extra latency over the oracle for `class`.
pub fn expected_overhead(cfg: &ScenarioConfig, mode: DeploymentMode, class: Layer) -> f64 {
    let f = Figures::of(cfg);
    let r = cfg.rate_per_terminal;
    let terminals = cfg.terminals as f64;
    let per_edge = terminals / cfg.edges as f64;
    let p = cfg.movers as f64 / terminals;
    let period = cfg.switch_period_s;
    let c = class_of(cfg, class);
    match mode {
        DeploymentMode::Centralized => {
            let mut up = Mixture::new();
            let mut fiber_up = Mixture::new();
            let mut down = Mixture::new();
            let mut fiber_down = Mixture::new();
            for k in Layer::ALL {
                let kc = class_of(cfg, k);
                let m = mix(cfg, k);
                up.add(r * m, ser(kc.raw_kb * 1000.0, f.up));
                fiber_up.add(r * per_edge * m, ser(kc.raw_kb * 1000.0, f.fiber));
                down.add(r * m, ser(kc.result_kb * 1000.0, f.down));
                fiber_down.add(r * per_edge * m, ser(kc.result_kb * 1000.0, f.fiber));
            }
            let s_cloud = cfg.centralized_cost_gflop / f.cloud;
            let cloud = mg1_wait(r * terminals, s_cloud, s_cloud * s_cloud);
            let mobility = restart_loss(ser(c.raw_kb * 1000.0, f.up), p, period)
                + restart_loss(ser(c.result_kb * 1000.0, f.down), p, period);
            up.wait() + fiber_up.wait() + cloud + fiber_down.wait() + down.wait() + mobility
        }
        DeploymentMode::MultiLayer => {
            let mut up = Mixture::new();
            let mut down = Mixture::new();
            for k in [Layer::Edge, Layer::Cloud] {
                let kc = class_of(cfg, k);
                up.add(r * mix(cfg, k), ser(kc.semantic_kb * 1000.0, f.up));
                down.add(r * mix(cfg, k), ser(kc.result_kb * 1000.0, f.down));
            }
            // a demand generated inside a handover window waits out the window
            let agent = cfg.agent_state_kb * 1000.0;
            let window = up.s1 / up.lambda.max(f64::MIN_POSITIVE) / 2.0
                + ser((cfg.signaling.handover_notice + cfg.signaling.header) as f64, f.up)
                + f.pw
                + 2.0 * (ser(agent, f.fiber) + f.pf);
            let buffering = p / period * window * window / 2.0;
            match class {
                Layer::Local => {
                    let s = c.compute_gflop / f.terminal;
                    mg1_wait(r * cfg.mix_local, s, s * s)
                }
                Layer::Edge => {
                    let s = c.compute_gflop / f.edge;
                    let edge = mg1_wait(r * per_edge * cfg.mix_edge, s, s * s);
                    up.wait() + edge + down.wait() + buffering
                }
                Layer::Cloud => {
                    let s = c.compute_gflop / f.cloud;
                    let cloud = mg1_wait(r * terminals * cfg.mix_cloud, s, s * s);
                    let sf = ser(c.semantic_kb * 1000.0, f.fiber);
                    let fiber = mg1_wait(r * per_edge * cfg.mix_cloud, sf, sf * sf);
                    up.wait() + fiber + cloud + down.wait() + buffering
                }
            }
        }
    }
}

pub fn predicted(cfg: &ScenarioConfig, mode: DeploymentMode, class: Layer) -> f64 {
    oracle(cfg, mode, class) + expected_overhead(cfg, mode, class)
}

/// The parameter fitted for a class in a mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Knob {
    /// `{class}_raw_kb`, which only the centralized path reads at scale.
    RawKb,
    /// `local_compute_gflop`.
    LocalCompute,
    /// `{class}_semantic_kb`.
    SemanticKb,
}

fn knob(mode: DeploymentMode, class: Layer) -> Knob {
    match (mode, class) {
        (DeploymentMode::Centralized, _) => Knob::RawKb,
        (DeploymentMode::MultiLayer, Layer::Local) => Knob::LocalCompute,
        (DeploymentMode::MultiLayer, _) => Knob::SemanticKb,
    }
}

fn knob_mut(cfg: &mut ScenarioConfig, k: Knob, class: Layer) -> &mut f64 {
    let c = match class {
        Layer::Local => &mut cfg.local,
        Layer::Edge => &mut cfg.edge,
        Layer::Cloud => &mut cfg.cloud,
    };
    match k {
        Knob::RawKb => &mut c.raw_kb,
        Knob::LocalCompute => &mut c.compute_gflop,
        Knob::SemanticKb => &mut c.semantic_kb,
    }
}

fn knob_range(cfg: &ScenarioConfig, k: Knob, class: Layer) -> (f64, f64) {
    let c = class_of(cfg, class);
    match k {
        Knob::RawKb => (c.semantic_kb, 1.0e6),
        Knob::LocalCompute => (0.0, 1.0e4),
        Knob::SemanticKb => (0.0, c.raw_kb),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassFit {
    pub mode: DeploymentMode,
    pub class: Layer,
    pub knob: Knob,
    pub value: f64,
    pub oracle: f64,
    pub overhead: f64,
    pub predicted: f64,
    pub reached: bool,
}

impl ClassFit {
    pub fn key(&self) -> String {
        match self.knob {
            Knob::RawKb => format!("{}_raw_kb", self.class),
            Knob::LocalCompute => "local_compute_gflop".into(),
            Knob::SemanticKb => format!("{}_semantic_kb", self.class),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub config: ScenarioConfig,
    pub centralized_band: Band,
    pub multilayer_band: Band,
    pub classes: Vec<ClassFit>,
}

impl Fit {
    pub fn mean(&self, mode: DeploymentMode) -> (f64, f64) {
        let oracle = weighted_oracle(&self.config, mode);
        let pred = Layer::ALL
            .iter()
            .map(|&c| mix(&self.config, c) * predicted(&self.config, mode, c))
            .sum();
        (oracle, pred)
    }

    /// A `[workload]` fragment with the fitted values and their predictions.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for mode in [DeploymentMode::Centralized, DeploymentMode::MultiLayer] {
            let band = match mode {
                DeploymentMode::Centralized => self.centralized_band,
                DeploymentMode::MultiLayer => self.multilayer_band,
            };
            let (o, p) = self.mean(mode);
            let _ = writeln!(
                s,
                "# {mode}: target [{:.3}, {:.3}] s, mix-weighted oracle {o:.6} s, predicted mean {p:.6} s, headroom {:.6} s",
                band.lo,
                band.hi,
                p - o
            );
            for c in self.classes.iter().filter(|c| c.mode == mode) {
                let _ = writeln!(
                    s,
                    "#   {}: oracle {:.6} s + expected load/mobility {:.6} s = {:.6} s{}",
                    c.class,
                    c.oracle,
                    c.overhead,
                    c.predicted,
                    if c.reached { "" } else { "  (UNREACHED)" }
                );
            }
        }
        let _ = writeln!(s, "[workload]");
        for c in &self.classes {
            let _ = writeln!(s, "{} = {}", c.key(), round_sig(c.value));
        }
        s
    }
}

/// Rounds to 6 significant digits so fragments stay readable.
fn round_sig(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    let digits = 6 - v.abs().log10().ceil() as i32;
    let scale = 10f64.powi(digits);
    (v * scale).round() / scale
}

/// Bisects the class knob so the predicted latency hits `target`.
fn solve(cfg: &mut ScenarioConfig, mode: DeploymentMode, class: Layer, target: f64) -> bool {
    let k = knob(mode, class);
    let (mut lo, mut hi) = knob_range(cfg, k, class);
    let eval = |cfg: &mut ScenarioConfig, x: f64| {
        *knob_mut(cfg, k, class) = x;
        predicted(cfg, mode, class)
    };
    if eval(cfg, lo) > target {
        *knob_mut(cfg, k, class) = lo;
        return false;
    }
    // predicted is non-decreasing in the knob but may saturate to infinity
    if eval(cfg, hi) < target {
        *knob_mut(cfg, k, class) = hi;
        return false;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if eval(cfg, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
    }
    *knob_mut(cfg, k, class) = 0.5 * (lo + hi);
    true
}

/// Fits every class so predicted per-class latency sits at the midpoint of
/// its mode's band. Raw sizes are fitted for the centralized path, then
/// local compute and semantic sizes for the multi-layer path; the loop
/// repeats because load terms couple the classes.
pub fn calibrate(cfg: &ScenarioConfig, centralized: Band, multilayer: Band) -> Result<Fit, CalibrationError> {
    let mut work = cfg.clone();
    let plan = [
        (DeploymentMode::Centralized, centralized),
        (DeploymentMode::MultiLayer, multilayer),
    ];
    let mut reached = [[true; 3]; 2];
    for _round in 0..50 {
        let before = work.clone();
        for (i, (mode, band)) in plan.iter().enumerate() {
            for class in Layer::ALL {
                if mix(&work, class) == 0.0 && *mode == DeploymentMode::MultiLayer {
                    continue;
                }
                reached[i][class.index()] = solve(&mut work, *mode, class, band.midpoint());
            }
        }
        if work == before {
            break;
        }
    }
    let mut classes = Vec::new();
    for (i, (mode, _)) in plan.iter().enumerate() {
        for class in Layer::ALL {
            if mix(&work, class) == 0.0 && *mode == DeploymentMode::MultiLayer {
                continue;
            }
            let oracle = oracle(&work, *mode, class);
            let pred = predicted(&work, *mode, class);
            classes.push(ClassFit {
                mode: *mode,
                class,
                knob: knob(*mode, class),
                value: *knob_mut(&mut work, knob(*mode, class), class),
                oracle,
                overhead: pred - oracle,
                predicted: pred,
                reached: reached[i][class.index()],
            });
        }
    }
    let fit = Fit {
        config: work,
        centralized_band: centralized,
        multilayer_band: multilayer,
        classes,
    };
    if let Some(miss) = fit.classes.iter().find(|c| !c.reached) {
        return Err(CalibrationError::Infeasible {
            nearest: miss.predicted,
            report: format!(
                "{} {} cannot reach {:.6} s; nearest achievable {:.6} s\n{}",
                miss.mode,
                miss.class,
                match miss.mode {
                    DeploymentMode::Centralized => centralized.midpoint(),
                    DeploymentMode::MultiLayer => multilayer.midpoint(),
                },
                miss.predicted,
                fit.render()
            ),
        });
    }
    Ok(fit)
}
