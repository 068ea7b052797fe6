//! TOML configuration shared by the command-line tools.
//!
//! ```toml
//! n = 10
//! theta = 0.1
//! seed = 7
//!
//! [rule]
//! kind = "custom"
//! idle = 0.1
//! busy = 0
//! success = 0.9
//! failure = 0.5
//!
//! [protocol]
//! kind = "3"
//! m = 5
//!
//! [mission]
//! length = "geometric"
//! success = 0.05
//!
//! [sim]
//! slots = 1000000
//! ```
//!
//! Every key is optional; command-line flags take precedence.

use std::path::Path;

use serde::Deserialize;

use crate::dcf::DcfParameters;
use crate::error::{Error, Result};
use crate::optimizer::{solve, Objective, OptProblem, SolverSettings};
use crate::protocol::{
    one_period_protocol, protocol1, protocol2, protocol3, rule_memoryless, ArrivalTrigger, MissionLength, MissionModel,
    OnePeriodRule, Protocol,
};
use crate::simulator::Concurrency;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub n: Option<usize>,
    pub theta: Option<f64>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub rule: RuleSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    pub dcf: Option<DcfParameters>,
    #[serde(default)]
    pub mission: MissionSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSection {
    pub kind: Option<String>,
    pub idle: Option<f64>,
    pub busy: Option<f64>,
    pub success: Option<f64>,
    pub failure: Option<f64>,
    pub eta: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub kind: Option<String>,
    pub m: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionSection {
    pub length: Option<String>,
    pub packets: Option<u32>,
    pub success: Option<f64>,
    pub values: Option<Vec<u32>>,
    pub weights: Option<Vec<f64>>,
    pub arrival_probability: Option<f64>,
    pub trigger: Option<ArrivalTrigger>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub slots: Option<u64>,
    pub replications: Option<usize>,
    pub warm_up: Option<u64>,
    pub missions: Option<usize>,
    pub gap: Option<u64>,
    pub concurrency: Option<Concurrency>,
    pub episodes: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub grid_step: Option<f64>,
    pub starts: Option<usize>,
    pub max_iter: Option<usize>,
}

impl OptimizerSection {
    pub fn settings(&self) -> SolverSettings {
        let d = SolverSettings::default();
        SolverSettings {
            grid_step: self.grid_step.unwrap_or(d.grid_step),
            starts: self.starts.unwrap_or(d.starts),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            tol: d.tol,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn mission_model(&self) -> Result<MissionModel> {
        let m = &self.mission;
        let mut model = MissionModel::default();
        match m.length.as_deref() {
            None | Some("fixed") => {
                if let Some(packets) = m.packets {
                    model.length = MissionLength::Fixed { packets };
                }
            }
            Some("geometric") => {
                let success = m
                    .success
                    .ok_or_else(|| Error::Config("geometric mission length needs `success`".into()))?;
                model.length = MissionLength::Geometric { success };
            }
            Some("empirical") => {
                model.length = MissionLength::Empirical {
                    values: m.values.clone().unwrap_or_default(),
                    weights: m.weights.clone().unwrap_or_default(),
                };
            }
            Some(other) => return Err(Error::Config(format!("unknown mission length `{other}`"))),
        }
        if let Some(p) = m.arrival_probability {
            model.arrival_probability = p;
        }
        if let Some(t) = m.trigger {
            model.trigger = t;
        }
        model.validate()?;
        Ok(model)
    }
}

/// Named one-period rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RuleKind {
    Tilde,
    /// `f_two` with parameter `η`.
    Two,
    /// Memoryless `1/N`.
    One,
    Memoryless,
    Alternating,
    Custom,
    /// Throughput-maximizing rule at the given fairness.
    Optimal,
}

impl std::str::FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tilde" => Self::Tilde,
            "two" => Self::Two,
            "one" => Self::One,
            "memoryless" => Self::Memoryless,
            "alternating" => Self::Alternating,
            "custom" => Self::Custom,
            "optimal" => Self::Optimal,
            other => return Err(Error::InvalidParameter(format!("unknown rule `{other}`"))),
        })
    }
}

/// Everything needed to build a rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleSpec {
    pub kind: RuleKind,
    pub users: usize,
    pub theta: f64,
    pub eta: f64,
    pub p: Option<f64>,
    /// `idle, busy, success, failure` for custom rules.
    pub probs: [Option<f64>; 4],
    /// Keep `p_busy = 0` when optimizing.
    pub busy_zero: bool,
    pub objective: Objective,
    pub settings: SolverSettings,
}

impl RuleSpec {
    pub fn build(&self) -> Result<OnePeriodRule> {
        let n = self.users;
        match self.kind {
            RuleKind::Tilde => OnePeriodRule::tilde(n, self.theta),
            RuleKind::Two => OnePeriodRule::two_state(n, self.eta),
            RuleKind::One => OnePeriodRule::uniform(1.0 / n as f64),
            RuleKind::Memoryless => OnePeriodRule::uniform(
                self.p
                    .ok_or_else(|| Error::InvalidParameter("memoryless rule needs p".into()))?,
            ),
            RuleKind::Alternating => Ok(OnePeriodRule::alternating()),
            RuleKind::Custom => {
                let [i, b, s, f] = self.probs;
                match (i, b, s, f) {
                    (Some(i), Some(b), Some(s), Some(f)) => OnePeriodRule::new(i, b, s, f),
                    _ => Err(Error::InvalidParameter(
                        "custom rule needs idle, busy, success and failure".into(),
                    )),
                }
            }
            RuleKind::Optimal => {
                let mut problem = OptProblem::new(n, self.theta, self.objective).with_busy_zero(self.busy_zero);
                problem.settings = self.settings;
                Ok(solve(&problem)?.rule)
            }
        }
    }
}

/// Protocol families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    /// The plain rule, used by every user in every situation.
    Rule,
    Memoryless,
    P1,
    P2,
    P3,
}

impl ProtocolKind {
    pub fn is_mission_aware(&self) -> bool {
        matches!(self, Self::P1 | Self::P2 | Self::P3)
    }
}

impl std::str::FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rule" => Self::Rule,
            "memoryless" => Self::Memoryless,
            "1" => Self::P1,
            "2" => Self::P2,
            "3" => Self::P3,
            other => return Err(Error::InvalidParameter(format!("unknown protocol `{other}`"))),
        })
    }
}

pub fn build_protocol(kind: ProtocolKind, rule: OnePeriodRule, m: usize) -> Result<Protocol> {
    match kind {
        ProtocolKind::Rule => Ok(one_period_protocol(rule)),
        ProtocolKind::Memoryless => {
            if rule.p_idle == rule.p_busy && rule.p_busy == rule.p_success && rule.p_success == rule.p_failure {
                rule_memoryless(rule.p_idle)
            } else {
                Err(Error::InvalidParameter(
                    "memoryless protocol needs a constant rule".into(),
                ))
            }
        }
        ProtocolKind::P1 => protocol1(rule),
        ProtocolKind::P2 => protocol2(rule),
        ProtocolKind::P3 => protocol3(rule, m),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_full_file() {
        let c = Config::parse(
            r#"
n = 10
theta = 0.1
[rule]
kind = "custom"
idle = 0.1
busy = 0
success = 0.9
failure = 0.5
[protocol]
kind = "3"
m = 5
[dcf]
payload_octets = 1500
[mission]
length = "geometric"
success = 0.05
trigger = "after-collision"
[sim]
concurrency = "fcfs"
"#,
        )
        .unwrap();
        assert_eq!(c.n, Some(10));
        assert_eq!(c.rule.failure, Some(0.5));
        assert_eq!(c.dcf.unwrap().payload_octets, 1500);
        assert_eq!(c.dcf.unwrap().slot_time_ns, 9000);
        assert_eq!(c.sim.concurrency, Some(Concurrency::Fcfs));
        let m = c.mission_model().unwrap();
        assert_eq!(m.length, MissionLength::Geometric { success: 0.05 });
        assert_eq!(m.trigger, ArrivalTrigger::AfterCollision);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(Config::parse("[rule]\nidel = 0.1\n").is_err());
        assert!(Config::parse("[mission]\nlength = \"weird\"\n")
            .unwrap()
            .mission_model()
            .is_err());
    }

    #[test]
    fn builds_rules_and_protocols() {
        let spec = RuleSpec {
            kind: RuleKind::Tilde,
            users: 10,
            theta: 0.1,
            eta: 10.0,
            p: None,
            probs: [None; 4],
            busy_zero: false,
            objective: Objective::SlottedAloha,
            settings: SolverSettings::default(),
        };
        let r = spec.build().unwrap();
        assert_eq!(r.as_array(), [0.1, 0.0, 0.9, 0.5]);
        assert_eq!(build_protocol(ProtocolKind::P2, r, 0).unwrap().complexity(), 2);
        assert!(build_protocol(ProtocolKind::Memoryless, r, 0).is_err());
        let custom = RuleSpec {
            kind: RuleKind::Custom,
            probs: [Some(0.1), None, Some(0.9), Some(0.5)],
            ..spec
        };
        assert!(custom.build().is_err());
        assert!("fancy".parse::<RuleKind>().is_err());
    }
}
