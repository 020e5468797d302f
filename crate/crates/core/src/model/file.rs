use serde::{Deserialize, Serialize};

use super::StateId;

/// On-disk JSON description of an explicit instance.
///
/// `principal` and `noise` hold one sparse row per source state, in source
/// order; each row is a list of `[target, probability]` pairs. An omitted
/// noise kernel means self-loops everywhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub states: StateSpec,
    pub flaws: Vec<FlawSpec>,
    pub priority: Vec<String>,
    pub principal: Vec<Vec<(StateId, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Vec<Vec<(StateId, f64)>>>,
    #[serde(default)]
    pub p: f64,
    #[serde(default)]
    pub initial: InitialSpec,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Count(usize),
    Widths { widths: Vec<u32> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlawSpec {
    pub name: String,
    pub members: Vec<StateId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    State(StateId),
    Distribution { distribution: Vec<(StateId, f64)> },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::State(0)
    }
}
