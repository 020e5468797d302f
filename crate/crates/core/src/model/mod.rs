//! Instance representation: states, flaws, priority, the principal and noise
//! kernels, and the mixed chain they define.

mod distribution;
mod entropy;
mod file;
mod instance;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use distribution::Distribution;
pub use entropy::{binary_entropy, shannon_entropy};
pub use file::{FlawSpec, InitialSpec, InstanceFile, StateSpec};
pub use instance::{
    arc_bound, validate_instance, ExplicitInstance, Flaw, ImplicitDynamics, ImplicitInstance,
    ImplicitNoise, Instance,
};

pub type StateId = usize;
pub type FlawId = usize;
pub type FlawSet = BTreeSet<FlawId>;

/// Kernel rows must sum to one within this tolerance.
pub const ROW_TOLERANCE: f64 = 1e-9;

/// Which of the two transition kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Principal,
    Noise,
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::Principal => "principal",
            Kernel::Noise => "noise",
        })
    }
}

/// A fixed priority order over flaws. Position 0 is the highest priority.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Priority {
    order: Vec<FlawId>,
    rank: Vec<usize>,
}

impl Priority {
    pub fn new(order: Vec<FlawId>) -> Result<Self, Violation> {
        let m = order.len();
        let mut rank = vec![usize::MAX; m];
        for (pos, &f) in order.iter().enumerate() {
            if f >= m || rank[f] != usize::MAX {
                return Err(Violation::PriorityNotPermutation(format!("{order:?}")));
            }
            rank[f] = pos;
        }
        Ok(Self { order, rank })
    }

    pub fn identity(m: usize) -> Self {
        Self {
            order: (0..m).collect(),
            rank: (0..m).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[FlawId] {
        &self.order
    }

    pub fn rank(&self, flaw: FlawId) -> usize {
        self.rank[flaw]
    }

    /// Highest-priority flaw among `flaws`, if any.
    pub fn highest<'a>(&self, flaws: impl IntoIterator<Item = &'a FlawId>) -> Option<FlawId> {
        flaws.into_iter().copied().min_by_key(|&f| self.rank[f])
    }
}

/// Where the chain starts.
#[derive(Clone, Debug, PartialEq)]
pub enum Initial {
    State(StateId),
    Distribution(Distribution),
}

impl Default for Initial {
    fn default() -> Self {
        Initial::State(0)
    }
}

/// Fixed-width mixed-radix encoding of variable assignments as state indices.
/// Variable 0 is the least significant digit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarEncoding {
    widths: Vec<u32>,
    strides: Vec<StateId>,
}

impl VarEncoding {
    pub fn new(widths: Vec<u32>) -> Result<Self, Violation> {
        let mut strides = Vec::with_capacity(widths.len());
        let mut acc: u128 = 1;
        for &w in &widths {
            if w == 0 {
                return Err(Violation::EmptyStateSpace);
            }
            strides.push(acc as StateId);
            acc *= w as u128;
            if acc > StateId::MAX as u128 {
                return Err(Violation::Other(format!(
                    "state space of widths {widths:?} does not fit a state index"
                )));
            }
        }
        Ok(Self { widths, strides })
    }

    pub fn widths(&self) -> &[u32] {
        &self.widths
    }

    pub fn num_vars(&self) -> usize {
        self.widths.len()
    }

    pub fn num_states(&self) -> u128 {
        self.widths.iter().map(|&w| w as u128).product()
    }

    pub fn stride(&self, var: usize) -> StateId {
        self.strides[var]
    }

    pub fn get(&self, state: StateId, var: usize) -> u32 {
        ((state / self.strides[var]) % self.widths[var] as StateId) as u32
    }

    pub fn set(&self, state: StateId, var: usize, value: u32) -> StateId {
        let old = self.get(state, var) as StateId;
        state - old * self.strides[var] + value as StateId * self.strides[var]
    }

    pub fn encode(&self, values: &[u32]) -> StateId {
        values
            .iter()
            .zip(&self.strides)
            .map(|(&v, &s)| v as StateId * s)
            .sum()
    }

    pub fn decode(&self, state: StateId) -> Vec<u32> {
        (0..self.widths.len()).map(|v| self.get(state, v)).collect()
    }

    /// All states obtained from `state` by reassigning `vars` in every way,
    /// sorted by state index.
    pub fn resamplings(&self, state: StateId, vars: &[usize]) -> Vec<StateId> {
        let mut base = state;
        for &v in vars {
            base = self.set(base, v, 0);
        }
        let mut out = vec![base];
        for &v in vars {
            let mut next = Vec::with_capacity(out.len() * self.widths[v] as usize);
            for &s in &out {
                for c in 0..self.widths[v] {
                    next.push(s + c as StateId * self.strides[v]);
                }
            }
            out = next;
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// A single reason an instance description is rejected.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    EmptyRow,
    NonPositive {
        state: StateId,
        prob: f64,
    },
    DuplicateTarget(StateId),
    RowSum(f64),
    TargetOutOfRange(StateId),
    InRow {
        kernel: Kernel,
        state: StateId,
        cause: Box<Violation>,
    },
    RowCount {
        kernel: Kernel,
        expected: usize,
        found: usize,
    },
    FlawlessNotSelfLoop(StateId),
    PriorityNotPermutation(String),
    UnknownFlawName(String),
    DuplicateFlawName(String),
    MemberOutOfRange {
        flaw: String,
        state: StateId,
    },
    MixOutOfRange(f64),
    InitialOutOfRange(StateId),
    EmptyStateSpace,
    Other(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyRow => write!(f, "empty row"),
            Violation::NonPositive { state, prob } => {
                write!(f, "probability must be positive (target {state}: {prob})")
            }
            Violation::DuplicateTarget(s) => write!(f, "duplicate target {s}"),
            Violation::RowSum(sum) => write!(f, "row sum out of tolerance ({sum})"),
            Violation::TargetOutOfRange(s) => write!(f, "target {s} out of range"),
            Violation::InRow {
                kernel,
                state,
                cause,
            } => write!(f, "{kernel} row of state {state}: {cause}"),
            Violation::RowCount {
                kernel,
                expected,
                found,
            } => write!(f, "{kernel} kernel has {found} rows, expected {expected}"),
            Violation::FlawlessNotSelfLoop(s) => write!(
                f,
                "flawless state must self-loop with probability 1 (state {s})"
            ),
            Violation::PriorityNotPermutation(p) => {
                write!(f, "priority is not a permutation of the flaws: {p}")
            }
            Violation::UnknownFlawName(n) => write!(f, "unknown flaw name {n:?}"),
            Violation::DuplicateFlawName(n) => write!(f, "duplicate flaw name {n:?}"),
            Violation::MemberOutOfRange { flaw, state } => {
                write!(
                    f,
                    "flaw {flaw:?} lists state {state} outside the state space"
                )
            }
            Violation::MixOutOfRange(p) => write!(f, "mix probability {p} outside [0, 1]"),
            Violation::InitialOutOfRange(s) => write!(f, "initial state {s} out of range"),
            Violation::EmptyStateSpace => write!(f, "empty state space"),
            Violation::Other(msg) => f.write_str(msg),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn priority_rejects_non_permutations() {
        assert!(Priority::new(vec![1, 0, 2]).is_ok());
        assert!(Priority::new(vec![0, 0]).is_err());
        assert!(Priority::new(vec![0, 2]).is_err());
        let p = Priority::new(vec![2, 0, 1]).unwrap();
        assert_eq!(p.highest(&[0, 1]), Some(0));
        assert_eq!(p.highest(&[0, 2]), Some(2));
        assert_eq!(p.highest(&[]), None);
    }

    #[test]
    fn var_encoding_roundtrip_and_resampling() {
        let e = VarEncoding::new(vec![3, 3, 3]).unwrap();
        assert_eq!(e.num_states(), 27);
        let s = e.encode(&[1, 2, 0]);
        assert_eq!(s, 1 + 2 * 3);
        assert_eq!(e.decode(s), vec![1, 2, 0]);
        assert_eq!(e.set(s, 2, 2), 1 + 6 + 18);
        let r = e.resamplings(s, &[0, 1]);
        assert_eq!(r, (0..9).collect::<Vec<_>>());
        let r = e.resamplings(s, &[0, 2]);
        assert_eq!(r.len(), 9);
        assert!(r.windows(2).all(|w| w[0] < w[1]));
        assert!(r.iter().all(|&t| e.get(t, 1) == 2));
    }
}
