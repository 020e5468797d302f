use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use super::{
    Distribution, FlawId, FlawSet, FlawSpec, Initial, InitialSpec, InstanceFile, Kernel, Priority,
    StateId, StateSpec, VarEncoding, Violation,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Flaw {
    pub name: String,
    /// Sorted, deduplicated member states.
    pub members: Vec<StateId>,
}

/// A fully enumerated instance. Required by the analyzer, certifier and
/// exact process-tree enumeration.
#[derive(Clone, Debug)]
pub struct ExplicitInstance {
    num_states: usize,
    widths: Option<Vec<u32>>,
    flaws: Vec<Flaw>,
    priority: Priority,
    principal: Vec<Distribution>,
    noise: Vec<Distribution>,
    p: f64,
    initial: Initial,
    present: Vec<FlawSet>,
    addressed: Vec<Option<FlawId>>,
    warnings: Vec<String>,
}

/// Validates a parsed instance description and returns its normalized form.
///
/// All violations are collected rather than stopping at the first one.
pub fn validate_instance(raw: &InstanceFile) -> Result<ExplicitInstance> {
    let mut errs = Vec::new();
    let mut warnings = Vec::new();

    let (num_states, widths) = match &raw.states {
        StateSpec::Count(n) => (*n, None),
        StateSpec::Widths { widths } => match VarEncoding::new(widths.clone()) {
            Ok(enc) => (enc.num_states() as usize, Some(widths.clone())),
            Err(v) => return Err(Error::Invalid(vec![v])),
        },
    };
    if num_states == 0 {
        return Err(Error::Invalid(vec![Violation::EmptyStateSpace]));
    }

    let mut flaws = Vec::with_capacity(raw.flaws.len());
    for FlawSpec { name, members } in &raw.flaws {
        if flaws.iter().any(|f: &Flaw| &f.name == name) {
            errs.push(Violation::DuplicateFlawName(name.clone()));
        }
        let mut m = members.clone();
        m.sort_unstable();
        m.dedup();
        if let Some(&bad) = m.iter().find(|&&s| s >= num_states) {
            errs.push(Violation::MemberOutOfRange {
                flaw: name.clone(),
                state: bad,
            });
            m.retain(|&s| s < num_states);
        }
        if m.is_empty() {
            warnings.push(format!("flaw {name:?} is empty"));
        }
        flaws.push(Flaw {
            name: name.clone(),
            members: m,
        });
    }

    let mut order = Vec::with_capacity(raw.priority.len());
    for name in &raw.priority {
        match flaws.iter().position(|f| &f.name == name) {
            Some(i) => order.push(i),
            None => errs.push(Violation::UnknownFlawName(name.clone())),
        }
    }
    let priority = if order.len() == flaws.len() {
        match Priority::new(order) {
            Ok(p) => Some(p),
            Err(v) => {
                errs.push(v);
                None
            }
        }
    } else {
        errs.push(Violation::PriorityNotPermutation(format!(
            "{:?}",
            raw.priority
        )));
        None
    };

    let mut present = vec![FlawSet::new(); num_states];
    for (i, f) in flaws.iter().enumerate() {
        for &s in &f.members {
            present[s].insert(i);
        }
    }

    let principal = parse_rows(Kernel::Principal, &raw.principal, num_states, &mut errs);
    let noise = match &raw.noise {
        Some(rows) => parse_rows(Kernel::Noise, rows, num_states, &mut errs),
        None => (0..num_states)
            .map(|s| Some(Distribution::point(s)))
            .collect(),
    };

    for (s, row) in principal.iter().enumerate() {
        if let Some(row) = row {
            if present.get(s).is_some_and(|u| u.is_empty()) && !row.is_point_mass_at(s) {
                errs.push(Violation::FlawlessNotSelfLoop(s));
            }
        }
    }

    if !(0.0..=1.0).contains(&raw.p) {
        errs.push(Violation::MixOutOfRange(raw.p));
    }

    let initial = match &raw.initial {
        InitialSpec::State(s) => {
            if *s >= num_states {
                errs.push(Violation::InitialOutOfRange(*s));
            }
            Initial::State(*s)
        }
        InitialSpec::Distribution { distribution } => {
            match Distribution::new(distribution.clone()) {
                Ok(d) => {
                    if let Some(bad) = d.targets().find(|&t| t >= num_states) {
                        errs.push(Violation::InitialOutOfRange(bad));
                    }
                    Initial::Distribution(d)
                }
                Err(v) => {
                    errs.push(v);
                    Initial::State(0)
                }
            }
        }
    };

    if !errs.is_empty() {
        return Err(Error::Invalid(errs));
    }
    let priority = priority.expect("checked above");
    let addressed = present.iter().map(|u| priority.highest(u)).collect();
    Ok(ExplicitInstance {
        num_states,
        widths,
        flaws,
        priority,
        principal: principal.into_iter().map(Option::unwrap).collect(),
        noise: noise.into_iter().map(Option::unwrap).collect(),
        p: raw.p,
        initial,
        present,
        addressed,
        warnings,
    })
}

fn parse_rows(
    kernel: Kernel,
    rows: &[Vec<(StateId, f64)>],
    num_states: usize,
    errs: &mut Vec<Violation>,
) -> Vec<Option<Distribution>> {
    if rows.len() != num_states {
        errs.push(Violation::RowCount {
            kernel,
            expected: num_states,
            found: rows.len(),
        });
    }
    rows.iter()
        .enumerate()
        .map(|(s, row)| {
            let wrap = |cause| Violation::InRow {
                kernel,
                state: s,
                cause: Box::new(cause),
            };
            if let Some(&(t, _)) = row.iter().find(|&&(t, _)| t >= num_states) {
                errs.push(wrap(Violation::TargetOutOfRange(t)));
                return None;
            }
            match Distribution::new(row.clone()) {
                Ok(d) => Some(d),
                Err(v) => {
                    errs.push(wrap(v));
                    None
                }
            }
        })
        .collect()
}

impl ExplicitInstance {
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn widths(&self) -> Option<&[u32]> {
        self.widths.as_deref()
    }

    pub fn num_flaws(&self) -> usize {
        self.flaws.len()
    }

    pub fn flaws(&self) -> &[Flaw] {
        &self.flaws
    }

    pub fn flaw(&self, i: FlawId) -> &Flaw {
        &self.flaws[i]
    }

    pub fn priority(&self) -> &Priority {
        &self.priority
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn initial(&self) -> &Initial {
        &self.initial
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub(crate) fn push_warning(&mut self, warning: String) {
        self.warnings.push(warning);
    }

    pub fn principal_row(&self, s: StateId) -> &Distribution {
        &self.principal[s]
    }

    pub fn noise_row(&self, s: StateId) -> &Distribution {
        &self.noise[s]
    }

    pub fn row(&self, kernel: Kernel, s: StateId) -> &Distribution {
        match kernel {
            Kernel::Principal => &self.principal[s],
            Kernel::Noise => &self.noise[s],
        }
    }

    /// `U(σ)`: the flaws present in `s`.
    pub fn present_flaws(&self, s: StateId) -> &FlawSet {
        &self.present[s]
    }

    /// `π(σ)`: the highest-priority flaw present in `s`.
    pub fn addressed_flaw(&self, s: StateId) -> Option<FlawId> {
        self.addressed[s]
    }

    pub fn is_flawless(&self, s: StateId) -> bool {
        self.present[s].is_empty()
    }

    pub fn in_flaw(&self, flaw: FlawId, s: StateId) -> bool {
        self.present[s].contains(&flaw)
    }

    pub fn flawed_states(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.num_states).filter(|&s| !self.present[s].is_empty())
    }

    /// `ρ(σ,·) = (1-p)·ρ_pr(σ,·) + p·ρ_ns(σ,·)`.
    pub fn mixed_row(&self, s: StateId) -> Distribution {
        Distribution::mixture(&self.principal[s], &self.noise[s], self.p)
    }

    /// Returns a copy with the noise kernel and mix probability replaced.
    pub fn with_noise(&self, noise: Vec<Distribution>, p: f64) -> Result<Self> {
        let mut errs = Vec::new();
        if noise.len() != self.num_states {
            errs.push(Violation::RowCount {
                kernel: Kernel::Noise,
                expected: self.num_states,
                found: noise.len(),
            });
        }
        if let Some((s, t)) = noise.iter().enumerate().find_map(|(s, row)| {
            row.targets()
                .find(|&t| t >= self.num_states)
                .map(|t| (s, t))
        }) {
            errs.push(Violation::InRow {
                kernel: Kernel::Noise,
                state: s,
                cause: Box::new(Violation::TargetOutOfRange(t)),
            });
        }
        if !(0.0..=1.0).contains(&p) {
            errs.push(Violation::MixOutOfRange(p));
        }
        if !errs.is_empty() {
            return Err(Error::Invalid(errs));
        }
        Ok(Self {
            noise,
            p,
            ..self.clone()
        })
    }

    /// Canonical file form: rows in source order, supports sorted by target.
    pub fn to_file(&self) -> InstanceFile {
        let rows = |k: &[Distribution]| k.iter().map(|d| d.support().to_vec()).collect();
        InstanceFile {
            states: match &self.widths {
                Some(w) => StateSpec::Widths { widths: w.clone() },
                None => StateSpec::Count(self.num_states),
            },
            flaws: self
                .flaws
                .iter()
                .map(|f| FlawSpec {
                    name: f.name.clone(),
                    members: f.members.clone(),
                })
                .collect(),
            priority: self
                .priority
                .order()
                .iter()
                .map(|&i| self.flaws[i].name.clone())
                .collect(),
            principal: rows(&self.principal),
            noise: Some(rows(&self.noise)),
            p: self.p,
            initial: match &self.initial {
                Initial::State(s) => InitialSpec::State(*s),
                Initial::Distribution(d) => InitialSpec::Distribution {
                    distribution: d.support().to_vec(),
                },
            },
        }
    }
}

/// Family-specific callbacks for an instance whose state space is too large to
/// enumerate. States are fixed-width variable assignments.
pub trait ImplicitDynamics: Send + Sync + fmt::Debug {
    fn encoding(&self) -> &VarEncoding;
    fn num_flaws(&self) -> usize;
    fn flaw_name(&self, flaw: FlawId) -> String;
    fn in_flaw(&self, flaw: FlawId, state: StateId) -> bool;
    /// Principal row at a flawed `state` whose addressed flaw is `addressed`.
    fn principal_row(&self, state: StateId, addressed: FlawId) -> Distribution;
}

/// Noise models that can be evaluated without enumerating the state space.
#[derive(Clone, Debug, PartialEq)]
pub enum ImplicitNoise {
    SelfLoop,
    Point(StateId),
}

#[derive(Clone, Debug)]
pub struct ImplicitInstance {
    pub dynamics: Arc<dyn ImplicitDynamics>,
    pub priority: Priority,
    pub noise: ImplicitNoise,
    pub p: f64,
    pub initial: Initial,
}

impl ImplicitInstance {
    pub fn new(dynamics: Arc<dyn ImplicitDynamics>, noise: ImplicitNoise, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Invalid(vec![Violation::MixOutOfRange(p)]));
        }
        if let ImplicitNoise::Point(t) = noise {
            if t as u128 >= dynamics.encoding().num_states() {
                return Err(Error::UnknownState(t));
            }
        }
        let priority = Priority::identity(dynamics.num_flaws());
        Ok(Self {
            dynamics,
            priority,
            noise,
            p,
            initial: Initial::State(0),
        })
    }

    pub fn present_flaws(&self, s: StateId) -> FlawSet {
        (0..self.dynamics.num_flaws())
            .filter(|&f| self.dynamics.in_flaw(f, s))
            .collect()
    }

    pub fn addressed_flaw(&self, s: StateId) -> Option<FlawId> {
        // walk the priority order and stop at the first present flaw
        self.priority
            .order()
            .iter()
            .copied()
            .find(|&f| self.dynamics.in_flaw(f, s))
    }
}

/// Either flavor of instance. Simulation and forensics accept both; analysis
/// requires [`Instance::Explicit`].
#[derive(Clone, Debug)]
pub enum Instance {
    Explicit(ExplicitInstance),
    Implicit(ImplicitInstance),
}

impl From<ExplicitInstance> for Instance {
    fn from(e: ExplicitInstance) -> Self {
        Instance::Explicit(e)
    }
}

impl Instance {
    pub fn as_explicit(&self) -> Result<&ExplicitInstance> {
        match self {
            Instance::Explicit(e) => Ok(e),
            Instance::Implicit(_) => Err(Error::RequiresExplicit),
        }
    }

    pub fn is_explicit(&self) -> bool {
        matches!(self, Instance::Explicit(_))
    }

    pub fn num_states(&self) -> u128 {
        match self {
            Instance::Explicit(e) => e.num_states as u128,
            Instance::Implicit(i) => i.dynamics.encoding().num_states(),
        }
    }

    pub fn log2_num_states(&self) -> f64 {
        (self.num_states() as f64).log2()
    }

    pub fn contains_state(&self, s: StateId) -> bool {
        (s as u128) < self.num_states()
    }

    pub fn num_flaws(&self) -> usize {
        match self {
            Instance::Explicit(e) => e.num_flaws(),
            Instance::Implicit(i) => i.dynamics.num_flaws(),
        }
    }

    pub fn flaw_name(&self, f: FlawId) -> String {
        match self {
            Instance::Explicit(e) => e.flaws[f].name.clone(),
            Instance::Implicit(i) => i.dynamics.flaw_name(f),
        }
    }

    pub fn priority(&self) -> &Priority {
        match self {
            Instance::Explicit(e) => &e.priority,
            Instance::Implicit(i) => &i.priority,
        }
    }

    pub fn p(&self) -> f64 {
        match self {
            Instance::Explicit(e) => e.p,
            Instance::Implicit(i) => i.p,
        }
    }

    pub fn initial(&self) -> &Initial {
        match self {
            Instance::Explicit(e) => &e.initial,
            Instance::Implicit(i) => &i.initial,
        }
    }

    pub fn present_flaws(&self, s: StateId) -> FlawSet {
        match self {
            Instance::Explicit(e) => e.present[s].clone(),
            Instance::Implicit(i) => i.present_flaws(s),
        }
    }

    pub fn addressed_flaw(&self, s: StateId) -> Option<FlawId> {
        match self {
            Instance::Explicit(e) => e.addressed[s],
            Instance::Implicit(i) => i.addressed_flaw(s),
        }
    }

    pub fn is_flawless(&self, s: StateId) -> bool {
        self.addressed_flaw(s).is_none()
    }

    pub fn principal_row(&self, s: StateId) -> Cow<'_, Distribution> {
        match self {
            Instance::Explicit(e) => Cow::Borrowed(&e.principal[s]),
            Instance::Implicit(i) => match i.addressed_flaw(s) {
                Some(f) => Cow::Owned(i.dynamics.principal_row(s, f)),
                None => Cow::Owned(Distribution::point(s)),
            },
        }
    }

    pub fn noise_row(&self, s: StateId) -> Cow<'_, Distribution> {
        match self {
            Instance::Explicit(e) => Cow::Borrowed(&e.noise[s]),
            Instance::Implicit(i) => Cow::Owned(match i.noise {
                ImplicitNoise::SelfLoop => Distribution::point(s),
                ImplicitNoise::Point(t) => Distribution::point(t),
            }),
        }
    }

    pub fn mixed_row(&self, s: StateId) -> Distribution {
        Distribution::mixture(&self.principal_row(s), &self.noise_row(s), self.p())
    }
}

/// Smallest integer `B ≥ 1` with `2^-B < ρ(σ,τ) < 1 - 2^-B` for every arc of
/// the mixed chain leaving a flawed state. Arcs leaving flawless states are
/// exempt: their principal self-loop has probability one.
pub fn arc_bound(inst: &ExplicitInstance) -> Result<u32> {
    let mut bound = 1u32;
    for s in inst.flawed_states() {
        for &(t, q) in inst.mixed_row(s).support() {
            if q >= 1.0 {
                return Err(Error::ArcBoundUndefined {
                    from: s,
                    to: t,
                    prob: q,
                });
            }
            let mut b = bound;
            while !(arc_ok(q, b)) {
                b += 1;
                if b > 1100 {
                    return Err(Error::ArcBoundUndefined {
                        from: s,
                        to: t,
                        prob: q,
                    });
                }
            }
            bound = b;
        }
    }
    Ok(bound)
}

fn arc_ok(q: f64, b: u32) -> bool {
    let eps = (-(b as f64)).exp2();
    eps < q && q < 1.0 - eps
}
