//! Deployment strategies and per-demand serving decisions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::demand::{DemandClass, FailureReason, Layer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeploymentMode {
    /// Raw data to the cloud; edges relay passively.
    Centralized,
    MultiLayer,
}

impl DeploymentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DeploymentMode::Centralized => "centralized",
            DeploymentMode::MultiLayer => "multilayer",
        }
    }
}

impl fmt::Display for DeploymentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DeploymentMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "centralized" => Ok(DeploymentMode::Centralized),
            "multilayer" | "multi-layer" => Ok(DeploymentMode::MultiLayer),
            other => Err(format!("unknown deployment `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    Raw,
    Semantic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Path {
    OnTerminal,
    /// Terminal to its edge.
    ToEdge,
    /// Terminal through its edge to the cloud.
    ToCloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetId {
    Centralized,
    MultiLayer(Layer),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServingDecision {
    pub layer: Layer,
    pub payload: Payload,
    pub path: Path,
    pub budget: BudgetId,
}

/// What the originating terminal does with a fresh demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceAction {
    ServeLocally,
    SendUp(Payload),
}

/// What an edge does with a delivered demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeAction {
    ServeHere,
    Escalate,
    /// Centralized relays only forward.
    Relay,
}

pub fn source_action(class: DemandClass, mode: DeploymentMode) -> SourceAction {
    match (mode, class) {
        (DeploymentMode::Centralized, _) => SourceAction::SendUp(Payload::Raw),
        (DeploymentMode::MultiLayer, Layer::Local) => SourceAction::ServeLocally,
        (DeploymentMode::MultiLayer, _) => SourceAction::SendUp(Payload::Semantic),
    }
}

/// Escalates cloud-class demands and any demand whose estimated wait
/// exceeds the threshold.
pub fn edge_action(
    class: DemandClass,
    mode: DeploymentMode,
    estimated_wait_s: f64,
    threshold_s: f64,
) -> EdgeAction {
    match mode {
        DeploymentMode::Centralized => EdgeAction::Relay,
        DeploymentMode::MultiLayer if class == Layer::Cloud => EdgeAction::Escalate,
        DeploymentMode::MultiLayer if estimated_wait_s > threshold_s => EdgeAction::Escalate,
        DeploymentMode::MultiLayer => EdgeAction::ServeHere,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyState {
    /// Whether the origin currently has any route upward.
    pub routable: bool,
    pub edge_wait_s: f64,
    pub escalation_wait_s: f64,
}

pub fn decide(
    class: DemandClass,
    mode: DeploymentMode,
    state: &PolicyState,
) -> Result<ServingDecision, FailureReason> {
    let payload = match source_action(class, mode) {
        SourceAction::ServeLocally => {
            return Ok(ServingDecision {
                layer: Layer::Local,
                payload: Payload::Semantic,
                path: Path::OnTerminal,
                budget: BudgetId::MultiLayer(Layer::Local),
            })
        }
        SourceAction::SendUp(p) => p,
    };
    if !state.routable {
        return Err(FailureReason::NoRoute);
    }
    let layer = match edge_action(class, mode, state.edge_wait_s, state.escalation_wait_s) {
        EdgeAction::ServeHere => Layer::Edge,
        EdgeAction::Escalate | EdgeAction::Relay => Layer::Cloud,
    };
    Ok(ServingDecision {
        layer,
        payload,
        path: if layer == Layer::Edge {
            Path::ToEdge
        } else {
            Path::ToCloud
        },
        budget: match mode {
            DeploymentMode::Centralized => BudgetId::Centralized,
            DeploymentMode::MultiLayer => BudgetId::MultiLayer(layer),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idle() -> PolicyState {
        PolicyState {
            routable: true,
            edge_wait_s: 0.0,
            escalation_wait_s: 0.5,
        }
    }

    #[test]
    fn centralized_always_cloud_raw() {
        for class in Layer::ALL {
            let d = decide(class, DeploymentMode::Centralized, &idle()).unwrap();
            assert_eq!((d.layer, d.payload), (Layer::Cloud, Payload::Raw));
            assert_eq!(d.budget, BudgetId::Centralized);
        }
    }

    #[test]
    fn multilayer_by_class() {
        let m = DeploymentMode::MultiLayer;
        assert_eq!(decide(Layer::Local, m, &idle()).unwrap().layer, Layer::Local);
        assert_eq!(decide(Layer::Edge, m, &idle()).unwrap().layer, Layer::Edge);
        assert_eq!(decide(Layer::Cloud, m, &idle()).unwrap().layer, Layer::Cloud);
    }

    #[test]
    fn overloaded_edge_escalates() {
        let busy = PolicyState {
            edge_wait_s: 0.6,
            ..idle()
        };
        let d = decide(Layer::Edge, DeploymentMode::MultiLayer, &busy).unwrap();
        assert_eq!(d.layer, Layer::Cloud);
        assert_eq!(d.budget, BudgetId::MultiLayer(Layer::Cloud));
        // exactly at the threshold stays
        let edge = PolicyState {
            edge_wait_s: 0.5,
            ..idle()
        };
        assert_eq!(
            decide(Layer::Edge, DeploymentMode::MultiLayer, &edge).unwrap().layer,
            Layer::Edge
        );
    }

    #[test]
    fn unroutable_fails_but_local_survives() {
        let cut = PolicyState {
            routable: false,
            ..idle()
        };
        assert_eq!(
            decide(Layer::Edge, DeploymentMode::MultiLayer, &cut),
            Err(FailureReason::NoRoute)
        );
        assert!(decide(Layer::Local, DeploymentMode::MultiLayer, &cut).is_ok());
    }

    #[test]
    fn never_downward() {
        for class in Layer::ALL {
            for wait in [0.0, 0.4, 0.6, 10.0] {
                let s = PolicyState {
                    edge_wait_s: wait,
                    ..idle()
                };
                let d = decide(class, DeploymentMode::MultiLayer, &s).unwrap();
                assert!(d.layer >= class);
            }
        }
    }
}
