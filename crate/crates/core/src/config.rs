//! Scenario files: a sectioned `key = value` format with `#` comments.
//!
//! ```text
//! [topology]
//! terminals = 10   # trailing comments are allowed
//! ```
//!
//! Every key has a default, so an empty file is a complete scenario. Unknown
//! sections and keys are rejected, and all problems are reported together.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::demand::{DemandSpec, Priority, WorkloadConfig};
use crate::metrics::SignalingBudget;
use crate::mobility::{MobilityPlan, Selection};
use crate::net::{gbps, kb, mbps, TopologyParams};
use crate::policy::DeploymentMode;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("[{section}] {key}: {message}")]
    Invalid {
        section: String,
        key: String,
        message: String,
    },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

impl ConfigError {
    fn invalid(section: &str, key: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            section: section.into(),
            key: key.into(),
            message: message.into(),
        }
    }
}

/// Error list returned by [`parse_str`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassParams {
    pub compute_gflop: f64,
    pub raw_kb: f64,
    pub semantic_kb: f64,
    pub result_kb: f64,
    pub priority: Priority,
}

impl ClassParams {
    pub fn spec(&self) -> DemandSpec {
        DemandSpec {
            compute_gflop: self.compute_gflop,
            raw_bytes: kb(self.raw_kb),
            semantic_bytes: kb(self.semantic_kb),
            result_bytes: kb(self.result_kb),
            priority: self.priority,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub duration_s: f64,
    pub seed: u64,
    pub deployment: DeploymentMode,

    pub terminals: usize,
    pub edges: usize,
    pub wireless_uplink_mbps: f64,
    pub wireless_downlink_mbps: f64,
    pub fiber_gbps: f64,
    pub wireless_prop_ms: f64,
    pub fiber_prop_ms: f64,

    pub terminal_gflops: f64,
    pub edge_gflops: f64,
    pub cloud_gflops: f64,
    pub centralized_cost_gflop: f64,

    pub rate_per_terminal: f64,
    pub mix_local: f64,
    pub mix_edge: f64,
    pub mix_cloud: f64,
    pub local: ClassParams,
    pub edge: ClassParams,
    pub cloud: ClassParams,

    pub switch_period_s: f64,
    pub movers: usize,
    pub selection: Selection,

    pub agent_state_kb: f64,

    pub escalation_wait_s: f64,
    pub anomaly_window: usize,
    pub forward_fraction: f64,

    pub model_update_period_s: f64,
    pub model_update_size_kb: f64,

    pub signaling: SignalingBudget,

    pub p2p_enabled: bool,
    pub p2p_bandwidth_mbps: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            duration_s: 60.0,
            seed: 42,
            deployment: DeploymentMode::MultiLayer,
            terminals: 10,
            edges: 2,
            wireless_uplink_mbps: 50.0,
            wireless_downlink_mbps: 200.0,
            fiber_gbps: 1.0,
            wireless_prop_ms: 1.0,
            fiber_prop_ms: 5.0,
            terminal_gflops: 1.0,
            edge_gflops: 20.0,
            cloud_gflops: 500.0,
            centralized_cost_gflop: 60.0,
            rate_per_terminal: 0.5,
            mix_local: 0.5,
            mix_edge: 0.3,
            mix_cloud: 0.2,
            local: ClassParams {
                compute_gflop: 0.1,
                raw_kb: 200.0,
                semantic_kb: 20.0,
                result_kb: 5.0,
                priority: Priority::High,
            },
            edge: ClassParams {
                compute_gflop: 4.0,
                raw_kb: 4000.0,
                semantic_kb: 800.0,
                result_kb: 200.0,
                priority: Priority::Normal,
            },
            cloud: ClassParams {
                compute_gflop: 30.0,
                raw_kb: 4000.0,
                semantic_kb: 800.0,
                result_kb: 200.0,
                priority: Priority::Low,
            },
            switch_period_s: 1.0,
            movers: 5,
            selection: Selection::Resample,
            agent_state_kb: 50.0,
            escalation_wait_s: 0.5,
            anomaly_window: 32,
            forward_fraction: 0.1,
            model_update_period_s: 10.0,
            model_update_size_kb: 100.0,
            signaling: SignalingBudget::default(),
            p2p_enabled: false,
            p2p_bandwidth_mbps: 100.0,
        }
    }
}

/// A config value that can be read from and written to text.
trait Field {
    fn set(&mut self, raw: &str) -> Result<(), String>;
    fn render(&self) -> String;
}

impl Field for f64 {
    fn set(&mut self, raw: &str) -> Result<(), String> {
        let v: f64 = raw.parse().map_err(|_| format!("`{raw}` is not a number"))?;
        if v.is_nan() {
            return Err("NaN is not allowed".into());
        }
        *self = v;
        Ok(())
    }

    fn render(&self) -> String {
        format!("{self}")
    }
}

macro_rules! int_field {
    ($t:ty) => {
        impl Field for $t {
            fn set(&mut self, raw: &str) -> Result<(), String> {
                *self = raw
                    .parse()
                    .map_err(|_| format!("`{raw}` is not a non-negative integer"))?;
                Ok(())
            }

            fn render(&self) -> String {
                self.to_string()
            }
        }
    };
}

int_field!(u64);
int_field!(usize);

impl Field for bool {
    fn set(&mut self, raw: &str) -> Result<(), String> {
        *self = match raw {
            "true" | "yes" | "on" => true,
            "false" | "no" | "off" => false,
            _ => return Err(format!("`{raw}` is not a boolean")),
        };
        Ok(())
    }

    fn render(&self) -> String {
        self.to_string()
    }
}

impl Field for Priority {
    fn set(&mut self, raw: &str) -> Result<(), String> {
        *self = raw.parse()?;
        Ok(())
    }

    fn render(&self) -> String {
        self.as_str().into()
    }
}

impl Field for DeploymentMode {
    fn set(&mut self, raw: &str) -> Result<(), String> {
        *self = raw.parse()?;
        Ok(())
    }

    fn render(&self) -> String {
        self.as_str().into()
    }
}

impl Field for Selection {
    fn set(&mut self, raw: &str) -> Result<(), String> {
        *self = raw.parse()?;
        Ok(())
    }

    fn render(&self) -> String {
        self.as_str().into()
    }
}

pub const SECTIONS: [&str; 10] = [
    "simulation",
    "topology",
    "compute",
    "workload",
    "mobility",
    "handover",
    "edge",
    "model_update",
    "signaling",
    "p2p",
];

const CLASS_KEYS: [[&str; 5]; 3] = [
    [
        "local_compute_gflop",
        "local_raw_kb",
        "local_semantic_kb",
        "local_result_kb",
        "local_priority",
    ],
    [
        "edge_compute_gflop",
        "edge_raw_kb",
        "edge_semantic_kb",
        "edge_result_kb",
        "edge_priority",
    ],
    [
        "cloud_compute_gflop",
        "cloud_raw_kb",
        "cloud_semantic_kb",
        "cloud_result_kb",
        "cloud_priority",
    ],
];

type Entry<'a> = (&'static str, &'static str, &'a mut dyn Field);

impl ScenarioConfig {
    fn fields(&mut self) -> Vec<Entry<'_>> {
        let s = &mut self.signaling;
        let mut v: Vec<Entry<'_>> = vec![
            ("simulation", "duration_s", &mut self.duration_s),
            ("simulation", "seed", &mut self.seed),
            ("simulation", "deployment", &mut self.deployment),
            ("topology", "terminals", &mut self.terminals),
            ("topology", "edges", &mut self.edges),
            ("topology", "wireless_uplink_mbps", &mut self.wireless_uplink_mbps),
            ("topology", "wireless_downlink_mbps", &mut self.wireless_downlink_mbps),
            ("topology", "fiber_gbps", &mut self.fiber_gbps),
            ("topology", "wireless_prop_ms", &mut self.wireless_prop_ms),
            ("topology", "fiber_prop_ms", &mut self.fiber_prop_ms),
            ("compute", "terminal_gflops", &mut self.terminal_gflops),
            ("compute", "edge_gflops", &mut self.edge_gflops),
            ("compute", "cloud_gflops", &mut self.cloud_gflops),
            ("compute", "centralized_cost_gflop", &mut self.centralized_cost_gflop),
            ("workload", "rate_per_terminal", &mut self.rate_per_terminal),
            ("workload", "mix_local", &mut self.mix_local),
            ("workload", "mix_edge", &mut self.mix_edge),
            ("workload", "mix_cloud", &mut self.mix_cloud),
        ];
        for (keys, c) in CLASS_KEYS
            .iter()
            .zip([&mut self.local, &mut self.edge, &mut self.cloud])
        {
            v.push(("workload", keys[0], &mut c.compute_gflop));
            v.push(("workload", keys[1], &mut c.raw_kb));
            v.push(("workload", keys[2], &mut c.semantic_kb));
            v.push(("workload", keys[3], &mut c.result_kb));
            v.push(("workload", keys[4], &mut c.priority));
        }
        let rest: Vec<Entry<'_>> = vec![
            ("mobility", "switch_period_s", &mut self.switch_period_s),
            ("mobility", "movers", &mut self.movers),
            ("mobility", "selection", &mut self.selection),
            ("handover", "agent_state_kb", &mut self.agent_state_kb),
            ("edge", "escalation_wait_s", &mut self.escalation_wait_s),
            ("edge", "anomaly_window", &mut self.anomaly_window),
            ("edge", "forward_fraction", &mut self.forward_fraction),
            ("model_update", "period_s", &mut self.model_update_period_s),
            ("model_update", "size_kb", &mut self.model_update_size_kb),
            ("signaling", "header_bytes", &mut s.header),
            ("signaling", "status_summary_bytes", &mut s.status_summary),
            ("signaling", "result_report_bytes", &mut s.result_report),
            ("signaling", "demand_packet_bytes", &mut s.demand_packet),
            ("signaling", "cloud_forward_bytes", &mut s.cloud_forward),
            ("signaling", "cloud_return_bytes", &mut s.cloud_return),
            ("signaling", "handover_notice_bytes", &mut s.handover_notice),
            ("signaling", "pool_notice_bytes", &mut s.pool_notice),
            ("signaling", "anomaly_flag_bytes", &mut s.anomaly_flag),
            ("signaling", "centralized_status_bytes", &mut s.centralized_status),
            ("signaling", "centralized_request_bytes", &mut s.centralized_request),
            ("signaling", "centralized_feedback_bytes", &mut s.centralized_feedback),
            ("signaling", "centralized_sync_bytes", &mut s.centralized_sync),
            ("p2p", "enabled", &mut self.p2p_enabled),
            ("p2p", "bandwidth_mbps", &mut self.p2p_bandwidth_mbps),
        ];
        v.extend(rest);
        v
    }

    /// Writes every key, grouped by section, in a form [`parse_str`] reads back.
    pub fn to_text(&self) -> String {
        let mut copy = self.clone();
        let mut out = String::new();
        let mut current = "";
        for (section, key, field) in copy.fields() {
            if section != current {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{section}]\n"));
                current = section;
            }
            out.push_str(&format!("{key} = {}\n", field.render()));
        }
        out
    }

    pub fn workload(&self) -> WorkloadConfig {
        WorkloadConfig {
            rate_per_terminal: self.rate_per_terminal,
            class_mix: [self.mix_local, self.mix_edge, self.mix_cloud],
            specs: [self.local.spec(), self.edge.spec(), self.cloud.spec()],
        }
    }

    pub fn topology(&self) -> TopologyParams {
        TopologyParams {
            terminals: self.terminals,
            edges: self.edges,
            uplink_bps: mbps(self.wireless_uplink_mbps),
            downlink_bps: mbps(self.wireless_downlink_mbps),
            fiber_bps: gbps(self.fiber_gbps),
            wireless_prop_s: self.wireless_prop_ms / 1000.0,
            fiber_prop_s: self.fiber_prop_ms / 1000.0,
            p2p_bps: self.p2p_enabled.then(|| mbps(self.p2p_bandwidth_mbps)),
        }
    }

    pub fn mobility(&self) -> MobilityPlan {
        MobilityPlan {
            switch_period_s: self.switch_period_s,
            movers: self.movers,
            selection: self.selection,
        }
    }

    pub fn validate(&self) -> Vec<ConfigError> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, section: &str, key: &str, msg: String| {
            if !ok {
                errs.push(ConfigError::invalid(section, key, msg));
            }
        };
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;

        check(finite_pos(self.duration_s), "simulation", "duration_s", format!("must be positive, got {}", self.duration_s));
        check(self.terminals >= 1, "topology", "terminals", "need at least one terminal".into());
        check(self.edges >= 1, "topology", "edges", "need at least one edge".into());
        for (key, v) in [
            ("wireless_uplink_mbps", self.wireless_uplink_mbps),
            ("wireless_downlink_mbps", self.wireless_downlink_mbps),
            ("fiber_gbps", self.fiber_gbps),
        ] {
            check(finite_pos(v), "topology", key, format!("bandwidth must be positive, got {v}"));
        }
        for (key, v) in [("wireless_prop_ms", self.wireless_prop_ms), ("fiber_prop_ms", self.fiber_prop_ms)] {
            check(finite_nonneg(v), "topology", key, format!("propagation must be >= 0, got {v}"));
        }
        for (key, v) in [
            ("terminal_gflops", self.terminal_gflops),
            ("edge_gflops", self.edge_gflops),
            ("cloud_gflops", self.cloud_gflops),
        ] {
            check(finite_pos(v), "compute", key, format!("capacity must be positive, got {v}"));
        }
        check(finite_nonneg(self.centralized_cost_gflop), "compute", "centralized_cost_gflop", "must be >= 0".into());

        check(finite_pos(self.rate_per_terminal), "workload", "rate_per_terminal", format!("rate must be positive, got {}", self.rate_per_terminal));
        let mixes = [("mix_local", self.mix_local), ("mix_edge", self.mix_edge), ("mix_cloud", self.mix_cloud)];
        for (key, v) in mixes {
            check((0.0..=1.0).contains(&v), "workload", key, format!("fraction must be in [0, 1], got {v}"));
        }
        let sum: f64 = mixes.iter().map(|m| m.1).sum();
        check((sum - 1.0).abs() <= 1e-9, "workload", "mix_local", format!("mix_local + mix_edge + mix_cloud = {sum}, must be 1"));
        for (prefix, c) in [("local", &self.local), ("edge", &self.edge), ("cloud", &self.cloud)] {
            for (suffix, v) in [
                ("compute_gflop", c.compute_gflop),
                ("raw_kb", c.raw_kb),
                ("semantic_kb", c.semantic_kb),
                ("result_kb", c.result_kb),
            ] {
                check(finite_nonneg(v), "workload", &format!("{prefix}_{suffix}"), format!("must be >= 0, got {v}"));
            }
            check(
                c.semantic_kb <= c.raw_kb,
                "workload",
                &format!("{prefix}_semantic_kb"),
                format!("semantic size {} exceeds raw size {}", c.semantic_kb, c.raw_kb),
            );
        }

        if let Err(msg) = self.mobility().validate(self.terminals, self.edges) {
            let key = if self.movers > self.terminals || self.edges < 2 {
                "movers"
            } else {
                "switch_period_s"
            };
            check(false, "mobility", key, msg);
        }
        check(finite_nonneg(self.agent_state_kb), "handover", "agent_state_kb", "must be >= 0".into());
        check(self.escalation_wait_s >= 0.0, "edge", "escalation_wait_s", "must be >= 0 (inf disables escalation)".into());
        check(self.anomaly_window >= 2, "edge", "anomaly_window", "window must hold at least 2 observations".into());
        check((0.0..=1.0).contains(&self.forward_fraction), "edge", "forward_fraction", "must be in [0, 1]".into());
        check(finite_nonneg(self.model_update_period_s), "model_update", "period_s", "must be >= 0 (0 disables)".into());
        check(finite_nonneg(self.model_update_size_kb), "model_update", "size_kb", "must be >= 0".into());
        check(
            !self.p2p_enabled || finite_pos(self.p2p_bandwidth_mbps),
            "p2p",
            "bandwidth_mbps",
            "bandwidth must be positive when enabled".into(),
        );
        errs
    }
}

/// Parses scenario text. Returns the resolved config or every error found.
pub fn parse_str(text: &str) -> Result<ScenarioConfig, ConfigErrors> {
    let mut errors = Vec::new();
    let mut values: BTreeMap<(String, String), (String, usize, usize)> = BTreeMap::new();
    let mut section: Option<String> = None;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("");
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = content.len() - content.trim_start().len();
        let col = indent + 1;
        if let Some(rest) = trimmed.strip_prefix('[') {
            match rest.strip_suffix(']') {
                Some(name) if !name.trim().is_empty() => {
                    let name = name.trim();
                    if !SECTIONS.contains(&name) {
                        errors.push(ConfigError::invalid(name, "", "unknown section"));
                    }
                    section = Some(name.to_string());
                }
                _ => errors.push(ConfigError::Syntax {
                    line: line_no,
                    column: col,
                    message: "malformed section header".into(),
                }),
            }
            continue;
        }
        let Some(eq) = trimmed.find('=') else {
            errors.push(ConfigError::Syntax {
                line: line_no,
                column: col,
                message: "expected `key = value`".into(),
            });
            continue;
        };
        let key = trimmed[..eq].trim();
        let value = trimmed[eq + 1..].trim();
        if key.is_empty() {
            errors.push(ConfigError::Syntax {
                line: line_no,
                column: col,
                message: "missing key before `=`".into(),
            });
            continue;
        }
        if value.is_empty() {
            errors.push(ConfigError::Syntax {
                line: line_no,
                column: col + eq + 1,
                message: format!("missing value for `{key}`"),
            });
            continue;
        }
        let Some(sec) = section.clone() else {
            errors.push(ConfigError::Syntax {
                line: line_no,
                column: col,
                message: format!("key `{key}` appears before any [section]"),
            });
            continue;
        };
        let k = (sec.clone(), key.to_string());
        if values.contains_key(&k) {
            errors.push(ConfigError::invalid(&sec, key, format!("duplicate key on line {line_no}")));
            continue;
        }
        values.insert(k, (value.to_string(), line_no, col));
    }

    let mut cfg = ScenarioConfig::default();
    for (section, key, field) in cfg.fields() {
        if let Some((value, line, _)) = values.remove(&(section.to_string(), key.to_string())) {
            if let Err(msg) = field.set(&value) {
                errors.push(ConfigError::invalid(section, key, format!("{msg} (line {line})")));
            }
        }
    }
    for ((section, key), (_, line, _)) in values {
        if SECTIONS.contains(&section.as_str()) {
            errors.push(ConfigError::invalid(&section, &key, format!("unknown key (line {line})")));
        }
    }
    // dropped lines would make constraint checks report phantom problems
    if !errors.iter().any(|e| matches!(e, ConfigError::Syntax { .. })) {
        let reported: Vec<(String, String)> = errors
            .iter()
            .filter_map(|e| match e {
                ConfigError::Invalid { section, key, .. } => Some((section.clone(), key.clone())),
                _ => None,
            })
            .collect();
        errors.extend(cfg.validate().into_iter().filter(|e| match e {
            ConfigError::Invalid { section, key, .. } => !reported.contains(&(section.clone(), key.clone())),
            _ => true,
        }));
    }
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(errors))
    }
}

pub fn parse_file(path: &Path) -> Result<ScenarioConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigErrors(vec![ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }])
    })?;
    parse_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys_of(errs: &ConfigErrors) -> Vec<(String, String)> {
        errs.0
            .iter()
            .filter_map(|e| match e {
                ConfigError::Invalid { section, key, .. } => Some((section.clone(), key.clone())),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn empty_file_is_defaults() {
        let cfg = parse_str("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!((cfg.terminals, cfg.edges), (10, 2));
        assert_eq!((cfg.terminal_gflops, cfg.edge_gflops, cfg.cloud_gflops), (1.0, 20.0, 500.0));
        assert_eq!((cfg.wireless_uplink_mbps, cfg.wireless_downlink_mbps, cfg.fiber_gbps), (50.0, 200.0, 1.0));
        assert_eq!((cfg.movers, cfg.switch_period_s), (5, 1.0));
    }

    #[test]
    fn mix_must_sum_to_one() {
        let err = parse_str("[workload]\nmix_local = 0.4\n").unwrap_err();
        assert_eq!(keys_of(&err), vec![("workload".into(), "mix_local".into())]);
    }

    #[test]
    fn too_many_movers() {
        let err = parse_str("[mobility]\nmovers = 11\n").unwrap_err();
        assert_eq!(keys_of(&err), vec![("mobility".into(), "movers".into())]);
    }

    #[test]
    fn unknown_key_and_section() {
        let err = parse_str("[topology]\nterminalz = 3\n[bogus]\nx = 1\n").unwrap_err();
        let keys = keys_of(&err);
        assert!(keys.contains(&("topology".into(), "terminalz".into())));
        assert!(keys.contains(&("bogus".into(), "".into())));
    }

    #[test]
    fn syntax_errors_have_positions() {
        let err = parse_str("[simulation]\n  seed 4\nx = 1\n").unwrap_err();
        assert_eq!(
            err.0[0],
            ConfigError::Syntax {
                line: 2,
                column: 3,
                message: "expected `key = value`".into()
            }
        );
        let err = parse_str("seed = 1\n").unwrap_err();
        assert!(matches!(err.0[0], ConfigError::Syntax { line: 1, column: 1, .. }));
    }

    #[test]
    fn all_errors_reported() {
        let err = parse_str("[simulation]\nseed = -1\nduration_s = abc\n[p2p]\nenabled = maybe\n").unwrap_err();
        assert_eq!(err.0.len(), 3);
    }

    #[test]
    fn comments_and_overrides() {
        let cfg = parse_str("# scenario\n[simulation]\nseed = 7 # inline\ndeployment = centralized\n[edge]\nescalation_wait_s = inf\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.deployment, DeploymentMode::Centralized);
        assert!(cfg.escalation_wait_s.is_infinite());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = ScenarioConfig::default();
        cfg.local.compute_gflop = 0.123_456_789_012_345_67;
        cfg.p2p_enabled = true;
        cfg.selection = Selection::FixedSet;
        assert_eq!(parse_str(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn semantic_cannot_exceed_raw() {
        let err = parse_str("[workload]\nedge_semantic_kb = 5000\n").unwrap_err();
        assert_eq!(keys_of(&err), vec![("workload".into(), "edge_semantic_kb".into())]);
    }
}
