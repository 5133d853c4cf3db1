//! Period-driven edge reassociation of a subset of terminals.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::kernel::{RngStream, SimTime};
use crate::net::MessageId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// The same movers every tick, drawn once.
    FixedSet,
    /// Fresh movers drawn every tick.
    Resample,
}

impl Selection {
    pub fn as_str(self) -> &'static str {
        match self {
            Selection::FixedSet => "fixed-set",
            Selection::Resample => "resample",
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Selection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed-set" | "fixed" => Ok(Selection::FixedSet),
            "resample" | "resample-each-period" => Ok(Selection::Resample),
            other => Err(format!("unknown selection `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityPlan {
    pub switch_period_s: f64,
    pub movers: usize,
    pub selection: Selection,
}

impl MobilityPlan {
    pub fn validate(&self, terminals: usize, edges: usize) -> Result<(), String> {
        if self.movers > terminals {
            return Err(format!(
                "movers ({}) exceeds terminal count ({terminals})",
                self.movers
            ));
        }
        if self.movers > 0 && edges < 2 {
            return Err("mobility needs at least two edges".into());
        }
        if !(self.switch_period_s > 0.0) || !self.switch_period_s.is_finite() {
            return Err("switch period must be positive".into());
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.movers > 0
    }

    /// Tick instants `k * period` for `k >= 1`, up to and including `t_end`.
    pub fn tick_times(&self, t_end: f64) -> impl Iterator<Item = f64> + '_ {
        let period = self.switch_period_s;
        (1..)
            .map(move |k| k as f64 * period)
            .take_while(move |t| *t <= t_end)
    }
}

/// Picks movers per tick.
#[derive(Debug, Clone)]
pub struct MoverSelector {
    plan: MobilityPlan,
    terminals: usize,
    rng: RngStream,
    fixed: Option<Vec<usize>>,
}

impl MoverSelector {
    pub fn new(plan: MobilityPlan, terminals: usize, rng: RngStream) -> Self {
        Self {
            plan,
            terminals,
            rng,
            fixed: None,
        }
    }

    pub fn next(&mut self) -> Vec<usize> {
        if self.plan.movers == 0 {
            return Vec::new();
        }
        match self.plan.selection {
            Selection::Resample => self.rng.choose_distinct(self.terminals, self.plan.movers),
            Selection::FixedSet => {
                let (rng, n, k) = (&mut self.rng, self.terminals, self.plan.movers);
                self.fixed
                    .get_or_insert_with(|| rng.choose_distinct(n, k))
                    .clone()
            }
        }
    }
}

/// Target edge for a mover currently heading to `current`: the other edge
/// when there are two, otherwise uniform over the rest.
pub fn pick_target(current: usize, edges: usize, rng: &mut RngStream) -> usize {
    assert!(edges >= 2, "handover needs two edges");
    if edges == 2 {
        return 1 - current;
    }
    let k = rng.index(edges - 1);
    if k >= current {
        k + 1
    } else {
        k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HandoverRecord {
    pub terminal: usize,
    pub from_edge: usize,
    pub to_edge: usize,
    pub t_start: f64,
    pub t_complete: Option<f64>,
    pub buffered: usize,
    pub aborted: Vec<MessageId>,
    /// Superseded by a later tick before completing.
    pub coalesced: bool,
    /// Target reverted to the origin edge before the agent left.
    pub cancelled: bool,
}

impl HandoverRecord {
    pub fn new(terminal: usize, from_edge: usize, to_edge: usize, t_start: SimTime) -> Self {
        Self {
            terminal,
            from_edge,
            to_edge,
            t_start: t_start.secs(),
            t_complete: None,
            buffered: 0,
            aborted: Vec::new(),
            coalesced: false,
            cancelled: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Stream;

    fn plan(movers: usize, selection: Selection) -> MobilityPlan {
        MobilityPlan {
            switch_period_s: 1.0,
            movers,
            selection,
        }
    }

    #[test]
    fn tick_count() {
        assert_eq!(plan(5, Selection::Resample).tick_times(60.0).count(), 60);
        assert_eq!(plan(5, Selection::Resample).tick_times(0.5).count(), 0);
    }

    #[test]
    fn no_movers() {
        let mut s = MoverSelector::new(plan(0, Selection::Resample), 10, RngStream::new(1, Stream::MoverSelection));
        assert!(s.next().is_empty());
    }

    #[test]
    fn fixed_set_repeats() {
        let mut s = MoverSelector::new(plan(5, Selection::FixedSet), 10, RngStream::new(1, Stream::MoverSelection));
        let first = s.next();
        assert_eq!(first.len(), 5);
        for _ in 0..20 {
            assert_eq!(s.next(), first);
        }
    }

    #[test]
    fn resample_varies() {
        let mut s = MoverSelector::new(plan(5, Selection::Resample), 10, RngStream::new(1, Stream::MoverSelection));
        let draws: Vec<_> = (0..20).map(|_| s.next()).collect();
        assert!(draws.iter().all(|d| d.len() == 5));
        assert!(draws.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn validation() {
        assert!(plan(11, Selection::Resample).validate(10, 2).is_err());
        assert!(plan(10, Selection::Resample).validate(10, 2).is_ok());
        assert!(plan(1, Selection::Resample).validate(10, 1).is_err());
    }

    #[test]
    fn targets_never_self() {
        let mut rng = RngStream::new(3, Stream::Mobility);
        assert_eq!(pick_target(0, 2, &mut rng), 1);
        assert_eq!(pick_target(1, 2, &mut rng), 0);
        for cur in 0..4 {
            for _ in 0..50 {
                let t = pick_target(cur, 4, &mut rng);
                assert!(t != cur && t < 4);
            }
        }
    }
}
