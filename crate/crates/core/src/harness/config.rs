use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::TracePoint;
use crate::generators::GadgetParams;

use super::HarnessError;

/// Instance generator, written `regular:<side>:<delta>:<seed>` or
/// `gadget:<r>:<k>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GeneratorSpec {
    Regular { side: usize, delta: usize, seed: u64 },
    Gadget(GadgetParams),
}

impl FromStr for GeneratorSpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || HarnessError::Config(format!("bad generator spec {s:?}"));
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["regular", side, delta, seed] => Ok(GeneratorSpec::Regular {
                side: side.parse().map_err(|_| bad())?,
                delta: delta.parse().map_err(|_| bad())?,
                seed: seed.parse().map_err(|_| bad())?,
            }),
            ["gadget", r, k] => Ok(GeneratorSpec::Gadget(GadgetParams {
                r: r.parse().map_err(|_| bad())?,
                k: k.parse().map_err(|_| bad())?,
            })),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorSpec::Regular { side, delta, seed } => {
                write!(f, "regular:{side}:{delta}:{seed}")
            }
            GeneratorSpec::Gadget(p) => write!(f, "gadget:{}:{}", p.r, p.k),
        }
    }
}

impl TryFrom<String> for GeneratorSpec {
    type Error = HarnessError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<GeneratorSpec> for String {
    fn from(g: GeneratorSpec) -> String {
        g.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSource {
    File(PathBuf),
    Generate(GeneratorSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Paper,
    Greedy,
}

/// How `q` is chosen: an explicit value, `auto` for the recommended rule, or
/// `appendix:<r>` for the gadget-family rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum QPolicy {
    Explicit(usize),
    Recommended,
    Appendix { r: u32 },
}

impl FromStr for QPolicy {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(QPolicy::Recommended);
        }
        if let Some(r) = s.strip_prefix("appendix:") {
            let r: u32 = r
                .parse()
                .map_err(|_| HarnessError::Config(format!("bad q policy {s:?}")))?;
            if r < 3 {
                return Err(HarnessError::Config("appendix rule needs r >= 3".into()));
            }
            return Ok(QPolicy::Appendix { r });
        }
        s.parse()
            .map(QPolicy::Explicit)
            .map_err(|_| HarnessError::Config(format!("bad q policy {s:?}")))
    }
}

impl fmt::Display for QPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QPolicy::Explicit(q) => write!(f, "{q}"),
            QPolicy::Recommended => write!(f, "auto"),
            QPolicy::Appendix { r } => write!(f, "appendix:{r}"),
        }
    }
}

impl TryFrom<String> for QPolicy {
    type Error = HarnessError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<QPolicy> for String {
    fn from(q: QPolicy) -> String {
        q.to_string()
    }
}

/// Parses `t:c:v1[,v2,...]`.
pub fn parse_trace_point(s: &str) -> Result<TracePoint, HarnessError> {
    let bad = || HarnessError::Config(format!("bad trace point {s:?}, expected t:c:v1[,v2...]"));
    let parts: Vec<&str> = s.split(':').collect();
    let [t, c, nodes] = parts.as_slice() else {
        return Err(bad());
    };
    let nodes = nodes
        .split(',')
        .map(|v| v.trim().parse::<u32>().map_err(|_| bad()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TracePoint {
        t: t.parse().map_err(|_| bad())?,
        color: c.parse().map_err(|_| bad())?,
        nodes,
    })
}

fn default_trials() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSource,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_q_policy")]
    pub q: QPolicy,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trace: Vec<TracePoint>,
    /// Include per-trial records in the JSON document.
    #[serde(default)]
    pub per_trial: bool,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Paper
}

fn default_q_policy() -> QPolicy {
    QPolicy::Recommended
}

impl ExperimentConfig {
    pub fn new(instance: InstanceSource) -> Self {
        Self {
            instance,
            algorithm: Algorithm::Paper,
            q: QPolicy::Recommended,
            trials: 1,
            seed: 0,
            trace: Vec::new(),
            per_trial: false,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be >= 1".into()));
        }
        Ok(())
    }
}
