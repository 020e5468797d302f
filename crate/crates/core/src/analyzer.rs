//! Static quantities of an explicit instance: labeled arcs, causality
//! digraphs, neighborhoods, potentials, congestions and the noise surcharge.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{binary_entropy, ExplicitInstance, FlawId, FlawSet, Instance, Kernel, StateId};
use crate::serde_util::extended_f64;

/// An arc `σ →ⁱ τ` leaving a flawed state, labeled by the flaw addressed at `σ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledArc {
    pub source: StateId,
    pub target: StateId,
    pub label: FlawId,
}

/// Whether the kernel's digraph takes part in the mixed chain. The noise
/// digraph is empty when `p = 0`.
fn kernel_active(inst: &ExplicitInstance, kernel: Kernel) -> bool {
    match kernel {
        Kernel::Principal => true,
        Kernel::Noise => inst.p() > 0.0,
    }
}

fn explicit_arcs(inst: &ExplicitInstance, kernel: Kernel) -> Vec<LabeledArc> {
    if !kernel_active(inst, kernel) {
        return Vec::new();
    }
    let mut arcs = Vec::new();
    for s in 0..inst.num_states() {
        let Some(label) = inst.addressed_flaw(s) else {
            continue;
        };
        arcs.extend(inst.row(kernel, s).targets().map(|t| LabeledArc {
            source: s,
            target: t,
            label,
        }));
    }
    arcs
}

/// Labeled arcs of one kernel's digraph. Arcs leaving flawless states carry
/// no label and are excluded.
pub fn labeled_arcs(inst: &Instance, kernel: Kernel) -> Result<Vec<LabeledArc>> {
    Ok(explicit_arcs(inst.as_explicit()?, kernel))
}

/// Flaw-level digraph: `i → j` iff some arc `σ →ⁱ τ` has `f_j ∋ τ` and `f_j ∌ σ`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalityGraph {
    pub kernel: Kernel,
    pub adjacency: Vec<BTreeSet<FlawId>>,
}

impl CausalityGraph {
    pub fn empty(kernel: Kernel, num_flaws: usize) -> Self {
        Self {
            kernel,
            adjacency: vec![BTreeSet::new(); num_flaws],
        }
    }

    pub fn num_flaws(&self) -> usize {
        self.adjacency.len()
    }

    pub fn has_edge(&self, from: FlawId, to: FlawId) -> bool {
        self.adjacency[from].contains(&to)
    }

    pub fn edges(&self) -> impl Iterator<Item = (FlawId, FlawId)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, out)| out.iter().map(move |&j| (i, j)))
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).sum()
    }

    /// `Γ(f) = {f} ∪ {g : f → g}`.
    pub fn neighborhood(&self, flaw: FlawId) -> FlawSet {
        let mut n = self.adjacency[flaw].clone();
        n.insert(flaw);
        n
    }

    /// Graphviz rendering with flaw names as node labels.
    pub fn to_dot(&self, names: &[String]) -> String {
        let mut out = format!("digraph causality_{} {{\n", self.kernel);
        for (i, name) in names.iter().enumerate() {
            let _ = writeln!(out, "  f{i} [label={name:?}];");
        }
        for (i, j) in self.edges() {
            let _ = writeln!(out, "  f{i} -> f{j};");
        }
        out.push_str("}\n");
        out
    }
}

fn graph_from_arcs(inst: &ExplicitInstance, kernel: Kernel, arcs: &[LabeledArc]) -> CausalityGraph {
    let mut g = CausalityGraph::empty(kernel, inst.num_flaws());
    for a in arcs {
        let before = inst.present_flaws(a.source);
        for &j in inst.present_flaws(a.target) {
            if !before.contains(&j) {
                g.adjacency[a.label].insert(j);
            }
        }
    }
    g
}

pub fn causality_graph(inst: &Instance, kernel: Kernel) -> Result<CausalityGraph> {
    let e = inst.as_explicit()?;
    Ok(graph_from_arcs(e, kernel, &explicit_arcs(e, kernel)))
}

pub fn neighborhood(graph: &CausalityGraph, flaw: FlawId) -> FlawSet {
    graph.neighborhood(flaw)
}

/// `min` over states addressing `flaw` of the mixed row's entropy; `+∞` when
/// no state addresses it.
pub fn potential(inst: &Instance, flaw: FlawId) -> Result<f64> {
    let e = inst.as_explicit()?;
    Ok((0..e.num_states())
        .filter(|&s| e.addressed_flaw(s) == Some(flaw))
        .map(|s| e.mixed_row(s).entropy())
        .fold(f64::INFINITY, f64::min))
}

/// Which states count towards a flaw's congestion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CongestionMode {
    /// Every state containing the flaw (the set-based definition).
    #[default]
    Formal,
    /// Only states where the flaw is addressed (arcs carrying its label).
    Labeled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Congestion {
    pub count: usize,
    /// `log₂ count`, or 0 when `count = 0`.
    pub bits: f64,
    /// True when no arc contributes (count 0).
    pub unreached: bool,
}

impl Congestion {
    fn from_count(count: usize) -> Self {
        Self {
            count,
            bits: if count == 0 {
                0.0
            } else {
                (count as f64).log2()
            },
            unreached: count == 0,
        }
    }
}

fn explicit_congestion(
    inst: &ExplicitInstance,
    flaw: FlawId,
    kernel: Kernel,
    mode: CongestionMode,
    scratch: &mut Vec<usize>,
) -> Congestion {
    if !kernel_active(inst, kernel) {
        return Congestion::from_count(0);
    }
    scratch.clear();
    scratch.resize(inst.num_states(), 0);
    let mut best = 0;
    for &s in &inst.flaw(flaw).members {
        if mode == CongestionMode::Labeled && inst.addressed_flaw(s) != Some(flaw) {
            continue;
        }
        for t in inst.row(kernel, s).targets() {
            scratch[t] += 1;
            best = best.max(scratch[t]);
        }
    }
    Congestion::from_count(best)
}

/// Maximum over targets `τ` of `|{σ ∈ f : τ ∈ A(σ)}|`.
pub fn congestion(
    inst: &Instance,
    flaw: FlawId,
    kernel: Kernel,
    mode: CongestionMode,
) -> Result<Congestion> {
    let e = inst.as_explicit()?;
    Ok(explicit_congestion(e, flaw, kernel, mode, &mut Vec::new()))
}

/// Noise surcharge `q(p) = p·(Δ·(b_ns + 5/2 + h(p)) − 2 − h(p))`.
pub fn q_of_p(delta: usize, b_ns: f64, p: f64) -> f64 {
    let h = binary_entropy(p);
    p * (delta as f64 * (b_ns + 2.5 + h) - 2.0 - h)
}

/// Per-flaw analysis results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlawProfile {
    pub flaw: FlawId,
    pub name: String,
    /// Bits; `inf` when the flaw is never addressed.
    #[serde(with = "extended_f64")]
    pub potential: f64,
    pub congestion_pr: Congestion,
    pub congestion_ns: Congestion,
    pub b_pr: f64,
    /// This flaw's own noise congestion in bits. The surcharge `q` uses the
    /// maximum over all flaws.
    pub b_ns: f64,
    pub gamma_pr: FlawSet,
    pub gamma_ns: FlawSet,
    pub delta: usize,
    pub q: f64,
    #[serde(with = "extended_f64")]
    pub amenability: f64,
    /// Number of states where this flaw is the addressed one.
    pub addressed_states: usize,
}

impl FlawProfile {
    pub fn is_addressed(&self) -> bool {
        self.addressed_states > 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerConfig {
    pub congestion_mode: CongestionMode,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        Self {
            congestion_mode: CongestionMode::Formal,
        }
    }
}

/// Everything the certifier needs about an instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub num_states: usize,
    pub num_flaws: usize,
    pub p: f64,
    pub h_p: f64,
    /// `max_i b_ns^{f_i}`.
    pub b_ns: f64,
    pub congestion_mode: CongestionMode,
    pub profiles: Vec<FlawProfile>,
    pub causality_pr: CausalityGraph,
    pub causality_ns: CausalityGraph,
}

impl Analysis {
    /// `Ξ = max{b_ns, max_i b_pr^{f_i}}`.
    pub fn xi(&self) -> f64 {
        self.profiles
            .iter()
            .map(|p| p.b_pr)
            .fold(self.b_ns, f64::max)
    }

    /// `Δ = max_j Δ_j` (1 when there are no flaws).
    pub fn max_delta(&self) -> usize {
        self.profiles.iter().map(|p| p.delta).max().unwrap_or(1)
    }

    pub fn log2_num_states(&self) -> f64 {
        (self.num_states as f64).log2()
    }
}

/// Computes every per-flaw quantity. Per-flaw work runs in parallel; the
/// result does not depend on scheduling.
pub fn analyze(inst: &Instance, config: &AnalyzerConfig) -> Result<Analysis> {
    let e = inst.as_explicit()?;
    let m = e.num_flaws();
    let p = e.p();

    let arcs_pr = explicit_arcs(e, Kernel::Principal);
    let arcs_ns = explicit_arcs(e, Kernel::Noise);
    let causality_pr = graph_from_arcs(e, Kernel::Principal, &arcs_pr);
    let causality_ns = graph_from_arcs(e, Kernel::Noise, &arcs_ns);

    let mut potential = vec![f64::INFINITY; m];
    let mut addressed_states = vec![0usize; m];
    let entropies: Vec<(StateId, FlawId, f64)> = (0..e.num_states())
        .into_par_iter()
        .filter_map(|s| {
            e.addressed_flaw(s)
                .map(|f| (s, f, e.mixed_row(s).entropy()))
        })
        .collect();
    for &(_, f, h) in &entropies {
        potential[f] = potential[f].min(h);
        addressed_states[f] += 1;
    }

    let congestions: Vec<(Congestion, Congestion)> = (0..m)
        .into_par_iter()
        .map_init(Vec::new, |scratch, f| {
            (
                explicit_congestion(e, f, Kernel::Principal, config.congestion_mode, scratch),
                explicit_congestion(e, f, Kernel::Noise, config.congestion_mode, scratch),
            )
        })
        .collect();
    let b_ns = congestions.iter().map(|c| c.1.bits).fold(0.0, f64::max);

    let profiles = (0..m)
        .map(|f| {
            let (c_pr, c_ns) = congestions[f];
            let gamma_pr = causality_pr.neighborhood(f);
            let gamma_ns = causality_ns.neighborhood(f);
            let delta = gamma_ns.len();
            FlawProfile {
                flaw: f,
                name: e.flaw(f).name.clone(),
                potential: potential[f],
                congestion_pr: c_pr,
                congestion_ns: c_ns,
                b_pr: c_pr.bits,
                b_ns: c_ns.bits,
                gamma_pr,
                gamma_ns,
                delta,
                q: q_of_p(delta, b_ns, p),
                amenability: potential[f] - c_pr.bits,
                addressed_states: addressed_states[f],
            }
        })
        .collect();

    Ok(Analysis {
        num_states: e.num_states(),
        num_flaws: m,
        p,
        h_p: binary_entropy(p),
        b_ns,
        congestion_mode: config.congestion_mode,
        profiles,
        causality_pr,
        causality_ns,
    })
}

/// One profile per flaw with the default (formal) congestion.
pub fn flaw_profiles(inst: &Instance) -> Result<Vec<FlawProfile>> {
    Ok(analyze(inst, &AnalyzerConfig::default())?.profiles)
}
