//! Exhaustive enumeration of the process tree truncated at probability
//! `2^-x`, and exact checks of the stratification inequalities on it.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::certifier::Certificate;
use crate::error::{Error, Result};
use crate::model::{arc_bound, shannon_entropy, ExplicitInstance, Initial, Instance, StateId};

/// Default limit on the number of leaves.
pub const DEFAULT_LEAF_CAP: usize = 10_000_000;

/// Slack for the enumerated inequalities and the mass check.
pub const EXACT_TOLERANCE: f64 = 1e-9;

/// Arcs at least this likely count as probability one.
const UNIT: f64 = 1.0 - 1e-12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub cap: usize,
    /// Root state; required when the instance starts from a distribution.
    pub root: Option<StateId>,
    /// Keep every leaf's path (otherwise only the depth is kept).
    pub keep_paths: bool,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            cap: DEFAULT_LEAF_CAP,
            root: None,
            keep_paths: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    /// Root-to-leaf states; empty when paths are not kept.
    pub path: Vec<StateId>,
    pub depth: usize,
    pub prob: f64,
    pub log2_prob: f64,
    /// Every state on the path is flawed.
    pub is_bad: bool,
    /// The path ran into a cycle of probability-one arcs before its
    /// probability fell to `2^-x`.
    pub absorbed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedTree {
    pub x: f64,
    pub root: StateId,
    pub leaves: Vec<Leaf>,
    /// Mass of each maximal red prefix, keyed by its state sequence, in
    /// order of first appearance.
    pub prefix_groups: Vec<(Vec<StateId>, f64)>,
}

impl TruncatedTree {
    pub fn total_mass(&self) -> f64 {
        self.leaves.iter().map(|l| l.prob).sum()
    }
}

fn resolve_root(e: &ExplicitInstance, root: Option<StateId>) -> Result<StateId> {
    match (root, e.initial()) {
        (Some(r), _) if r >= e.num_states() => Err(Error::UnknownState(r)),
        (Some(r), _) => Ok(r),
        (None, Initial::State(s)) => Ok(*s),
        (None, Initial::Distribution(_)) => Err(Error::Precondition(
            "the process tree needs a fixed root; the instance starts from a distribution".into(),
        )),
    }
}

/// Depth-first expansion from the root. A vertex becomes a leaf as soon as
/// `log₂ p_v ≤ -x`.
pub fn truncated_tree(inst: &Instance, x: f64, config: &TreeConfig) -> Result<TruncatedTree> {
    let e = inst.as_explicit()?;
    let root = resolve_root(e, config.root)?;
    let rows: Vec<Vec<(StateId, f64, f64)>> = (0..e.num_states())
        .map(|s| {
            e.mixed_row(s)
                .support()
                .iter()
                .map(|&(t, q)| (t, q, q.log2()))
                .collect()
        })
        .collect();

    struct Frame {
        state: StateId,
        prob: f64,
        logp: f64,
        /// Index in `path` where the current run of probability-one arcs began.
        unit_from: usize,
        /// Next child to visit.
        child: usize,
    }

    let mut leaves = Vec::new();
    let mut groups: Vec<(Vec<StateId>, f64)> = Vec::new();
    let mut group_index: HashMap<Vec<StateId>, usize> = HashMap::new();
    let mut path: Vec<StateId> = Vec::new();
    // length of the all-flawed prefix of `path`
    let mut red_len = 0usize;
    let mut stack: Vec<Frame> = Vec::new();

    let mut enter = |state: StateId,
                     prob: f64,
                     logp: f64,
                     unit_from: usize,
                     path: &mut Vec<StateId>,
                     red_len: &mut usize,
                     stack: &mut Vec<Frame>,
                     leaves: &mut Vec<Leaf>|
     -> Result<bool> {
        path.push(state);
        if *red_len + 1 == path.len() && !e.is_flawless(state) {
            *red_len += 1;
        }
        let row = &rows[state];
        let absorbed = row.len() == 1 && row[0].1 >= UNIT && path[unit_from..].contains(&row[0].0);
        if logp <= -x || absorbed {
            if leaves.len() >= config.cap {
                return Err(Error::CapExceeded {
                    cap: config.cap,
                    frontier: stack.len(),
                });
            }
            let key = path[..*red_len].to_vec();
            let g = *group_index.entry(key.clone()).or_insert_with(|| {
                groups.push((key, 0.0));
                groups.len() - 1
            });
            groups[g].1 += prob;
            leaves.push(Leaf {
                path: if config.keep_paths {
                    path.clone()
                } else {
                    Vec::new()
                },
                depth: path.len() - 1,
                prob,
                log2_prob: logp,
                is_bad: *red_len == path.len(),
                absorbed: absorbed && logp > -x,
            });
            Ok(false)
        } else {
            stack.push(Frame {
                state,
                prob,
                logp,
                unit_from,
                child: 0,
            });
            Ok(true)
        }
    };

    let pop = |path: &mut Vec<StateId>, red_len: &mut usize| {
        path.pop();
        *red_len = (*red_len).min(path.len());
    };

    if !enter(
        root,
        1.0,
        0.0,
        0,
        &mut path,
        &mut red_len,
        &mut stack,
        &mut leaves,
    )? {
        pop(&mut path, &mut red_len);
    }
    while let Some(top) = stack.last_mut() {
        let row = &rows[top.state];
        if top.child == row.len() {
            stack.pop();
            pop(&mut path, &mut red_len);
            continue;
        }
        let (t, q, lq) = row[top.child];
        top.child += 1;
        let (prob, logp) = (top.prob * q, top.logp + lq);
        let unit_from = if q >= UNIT { top.unit_from } else { path.len() };
        if !enter(
            t,
            prob,
            logp,
            unit_from,
            &mut path,
            &mut red_len,
            &mut stack,
            &mut leaves,
        )? {
            pop(&mut path, &mut red_len);
        }
    }

    Ok(TruncatedTree {
        x,
        root,
        leaves,
        prefix_groups: groups,
    })
}

/// `Pr[Σ ∈ B(x)]`.
pub fn bad_mass(tree: &TruncatedTree) -> f64 {
    tree.leaves
        .iter()
        .filter(|l| l.is_bad)
        .map(|l| l.prob)
        .sum()
}

/// `H[P]` for the maximal red prefix `P` of the truncated trajectory.
pub fn prefix_entropy(tree: &TruncatedTree) -> f64 {
    shannon_entropy(tree.prefix_groups.iter().map(|g| g.1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratificationRow {
    pub x: f64,
    pub leaves: usize,
    pub mass: f64,
    pub bad_mass: f64,
    pub h_p: f64,
    /// `H[P] ≥ x·Pr[Σ ∈ B(x)]`.
    pub lower_ok: bool,
    /// Every non-absorbed leaf has probability in `(2^(-x-B), 2^-x]`.
    pub sandwich_ok: bool,
    pub absorbed_leaves: usize,
    pub mass_ok: bool,
    /// `H[P] ≤ λx + M₀`, when certified.
    pub upper_ok: Option<bool>,
    pub note: Option<String>,
}

impl StratificationRow {
    pub fn passed(&self) -> bool {
        self.note.is_none()
            && self.lower_ok
            && self.sandwich_ok
            && self.mass_ok
            && self.upper_ok.unwrap_or(true)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct X0Check {
    pub x0: f64,
    pub bad_mass: Option<f64>,
    /// `(1+λ)/2`.
    pub limit: f64,
    pub ok: Option<bool>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratificationReport {
    pub b: u32,
    pub certified: bool,
    pub rows: Vec<StratificationRow>,
    pub x0: Option<X0Check>,
}

impl StratificationReport {
    /// Every feasible row passes and the `x₀` check, if run, passes.
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.note.is_some() || r.passed())
            && self.x0.as_ref().is_none_or(|c| c.ok != Some(false))
    }
}

/// Builds the tree at every grid point and checks the inequalities. Grid
/// points whose tree exceeds the leaf cap are reported with a note.
pub fn verify_stratification(
    inst: &Instance,
    certificate: Option<&Certificate>,
    xs: &[f64],
    config: &TreeConfig,
) -> Result<StratificationReport> {
    let e = inst.as_explicit()?;
    let b = arc_bound(e)?;
    let bounds = certificate
        .filter(|c| c.certified)
        .and_then(|c| c.bounds.as_ref());
    let cfg = TreeConfig {
        keep_paths: false,
        ..config.clone()
    };
    let mut rows = Vec::with_capacity(xs.len());
    for &x in xs {
        let tree = match truncated_tree(inst, x, &cfg) {
            Ok(t) => t,
            Err(Error::CapExceeded { cap, .. }) => {
                rows.push(StratificationRow {
                    x,
                    leaves: 0,
                    mass: 0.0,
                    bad_mass: 0.0,
                    h_p: 0.0,
                    lower_ok: false,
                    sandwich_ok: false,
                    absorbed_leaves: 0,
                    mass_ok: false,
                    upper_ok: None,
                    note: Some(format!("skipped: more than {cap} leaves")),
                });
                continue;
            }
            Err(err) => return Err(err),
        };
        let mass = tree.total_mass();
        let bad = bad_mass(&tree);
        let h = prefix_entropy(&tree);
        let sandwich_ok = tree
            .leaves
            .iter()
            .filter(|l| !l.absorbed)
            .all(|l| l.log2_prob <= -x && l.log2_prob > -x - b as f64);
        rows.push(StratificationRow {
            x,
            leaves: tree.leaves.len(),
            mass,
            bad_mass: bad,
            h_p: h,
            lower_ok: h >= x * bad - EXACT_TOLERANCE,
            sandwich_ok,
            absorbed_leaves: tree.leaves.iter().filter(|l| l.absorbed).count(),
            mass_ok: (mass - 1.0).abs() <= EXACT_TOLERANCE,
            upper_ok: bounds.map(|bd| h <= bd.lambda * x + bd.m0 + EXACT_TOLERANCE),
            note: None,
        });
    }
    let x0 = bounds.map(|bd| {
        let limit = (1.0 + bd.lambda) / 2.0;
        match truncated_tree(inst, bd.x0, &cfg) {
            Ok(tree) => {
                let m = bad_mass(&tree);
                X0Check {
                    x0: bd.x0,
                    bad_mass: Some(m),
                    limit,
                    ok: Some(m <= limit + EXACT_TOLERANCE),
                    note: None,
                }
            }
            Err(_) => X0Check {
                x0: bd.x0,
                bad_mass: None,
                limit,
                ok: None,
                note: Some("infeasible: tree at x0 exceeds the leaf cap".into()),
            },
        }
    });
    Ok(StratificationReport {
        b,
        certified: bounds.is_some(),
        rows,
        x0,
    })
}
