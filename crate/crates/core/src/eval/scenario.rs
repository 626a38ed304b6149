//! Drift scenarios applied to test graphs through the augmentation module.

use std::fmt;
use std::str::FromStr;

use crate::augment::{augment, AugmentParams, DropMode};
use crate::error::{Error, Result};
use crate::graph::TrafficGraph;
use crate::history::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioKind {
    None,
    /// Flow-statistic drift: perturbation only.
    Drift1,
    /// Graph-scale drift: edge dropping only.
    Drift2,
    Drift12,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::None,
        ScenarioKind::Drift1,
        ScenarioKind::Drift2,
        ScenarioKind::Drift12,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::None => "none",
            ScenarioKind::Drift1 => "drift1",
            ScenarioKind::Drift2 => "drift2",
            ScenarioKind::Drift12 => "drift12",
        }
    }

    fn code(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftScenario {
    pub kind: ScenarioKind,
    pub params: AugmentParams,
}

/// Strength of the test-time drifts, in normalized feature units.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub drift1_alpha: f64,
    pub drift1_beta: f64,
    pub drift2_gamma: f64,
    pub drift2_mode: DropMode,
    /// Independently drifted copies of each test graph per scenario.
    pub replicas: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            drift1_alpha: 1.0,
            drift1_beta: 2.0,
            drift2_gamma: 0.1,
            drift2_mode: DropMode::Literal,
            replicas: 3,
            seed: 7,
        }
    }
}

impl ScenarioConfig {
    pub fn scenario(&self, kind: ScenarioKind) -> Result<DriftScenario> {
        let (alpha, beta) = match kind {
            ScenarioKind::Drift1 | ScenarioKind::Drift12 => (self.drift1_alpha, self.drift1_beta),
            _ => (0.0, 0.0),
        };
        let gamma = match kind {
            ScenarioKind::Drift2 | ScenarioKind::Drift12 => self.drift2_gamma,
            _ => 1.0,
        };
        let mode = match kind {
            ScenarioKind::Drift2 | ScenarioKind::Drift12 => self.drift2_mode,
            _ => DropMode::Literal,
        };
        let params = AugmentParams::new(alpha, beta, gamma)?.with_drop_mode(mode);
        Ok(DriftScenario { kind, params })
    }

    pub fn all(&self) -> Result<Vec<DriftScenario>> {
        ScenarioKind::ALL.into_iter().map(|k| self.scenario(k)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(Error::config("eval.replicas", "must be at least 1"));
        }
        self.all().map(|_| ())
    }
}

/// Drifted copies of the test graphs. The no-drift scenario returns the
/// graphs unchanged (one copy each); graphs emptied by dropping are left out.
/// Seeds depend only on the scenario, graph index and replica, so every model
/// is scored on the same drifted graphs.
pub fn apply_scenario(
    graphs: &[TrafficGraph],
    scenario: &DriftScenario,
    cfg: &ScenarioConfig,
) -> Vec<TrafficGraph> {
    if scenario.params.is_identity() {
        return graphs.to_vec();
    }
    let mut out = Vec::with_capacity(graphs.len() * cfg.replicas);
    for (gi, g) in graphs.iter().enumerate() {
        for r in 0..cfg.replicas {
            let seed = mix_seed(cfg.seed, &[scenario.kind.code(), gi as u64, r as u64]);
            let ag = augment(g, &scenario.params.with_seed(seed));
            if !ag.is_empty() {
                out.push(ag);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_params() {
        let cfg = ScenarioConfig::default();
        let s = cfg.all().unwrap();
        assert!(s[0].params.is_identity());
        assert_eq!((s[1].params.alpha, s[1].params.beta, s[1].params.gamma), (1.0, 2.0, 1.0));
        assert_eq!((s[2].params.alpha, s[2].params.beta), (0.0, 0.0));
        assert_eq!(s[3].params.gamma, cfg.drift2_gamma);
        assert_eq!("drift12".parse::<ScenarioKind>().unwrap(), ScenarioKind::Drift12);
        assert!("drift3".parse::<ScenarioKind>().is_err());
    }
}
