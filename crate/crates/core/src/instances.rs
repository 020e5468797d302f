//! Canonical and benchmark instance generators and the noise-model library.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    validate_instance, Distribution, ExplicitInstance, FlawId, FlawSpec, ImplicitDynamics,
    ImplicitInstance, ImplicitNoise, InitialSpec, Instance, InstanceFile, StateId, StateSpec,
    VarEncoding, Violation,
};

/// Default limit on the number of states of an explicit instance.
pub const DEFAULT_EXPLICIT_CAP: u128 = 1 << 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    /// Explicit when the state count fits the cap, implicit otherwise.
    #[default]
    Auto,
    Explicit,
    Implicit,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenConfig {
    pub explicit_cap: u128,
    pub flavor: Flavor,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            explicit_cap: DEFAULT_EXPLICIT_CAP,
            flavor: Flavor::Auto,
        }
    }
}

/// Which successors a greedy adversary may choose from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryCandidates {
    /// The state itself and its principal successors.
    #[default]
    PrincipalSupport,
    /// Every state.
    All,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// The noise leaves the state unchanged.
    #[default]
    #[serde(rename = "selfloop")]
    SelfLoop,
    /// Uniform over the whole state space.
    Uniform,
    /// Always jumps to `target`.
    Point { target: StateId },
    /// Jumps to a candidate with the most flaws present, ties to the lowest index.
    GreedyAdversarial {
        #[serde(default)]
        candidates: AdversaryCandidates,
    },
    /// Arbitrary rows, one per state.
    Custom { rows: Vec<Vec<(StateId, f64)>> },
}

/// Replaces the noise kernel and the mix probability of an explicit instance.
pub fn attach_noise(
    base: &ExplicitInstance,
    model: &NoiseModel,
    p: f64,
) -> Result<ExplicitInstance> {
    let n = base.num_states();
    let rows: Vec<Distribution> = match model {
        NoiseModel::SelfLoop => (0..n).map(Distribution::point).collect(),
        NoiseModel::Uniform => {
            if (n as u128) * (n as u128) > 1 << 26 {
                return Err(Error::Precondition(format!(
                    "uniform noise over {n} states is too dense to materialize"
                )));
            }
            let row = Distribution::uniform(0..n);
            vec![row; n]
        }
        NoiseModel::Point { target } => {
            if *target >= n {
                return Err(Error::UnknownState(*target));
            }
            vec![Distribution::point(*target); n]
        }
        NoiseModel::GreedyAdversarial { candidates } => (0..n)
            .map(|s| {
                let score = |t: StateId| base.present_flaws(t).len();
                let pick = |it: &mut dyn Iterator<Item = StateId>| {
                    // max by score, ties to the lowest index
                    it.fold(None::<StateId>, |best, t| match best {
                        Some(b) if score(b) > score(t) || (score(b) == score(t) && b < t) => {
                            Some(b)
                        }
                        _ => Some(t),
                    })
                    .expect("candidate set is never empty")
                };
                let target = match candidates {
                    AdversaryCandidates::PrincipalSupport => {
                        pick(&mut std::iter::once(s).chain(base.principal_row(s).targets()))
                    }
                    AdversaryCandidates::All => pick(&mut (0..n)),
                };
                Distribution::point(target)
            })
            .collect(),
        NoiseModel::Custom { rows } => {
            if rows.len() != n {
                return Err(Error::Invalid(vec![Violation::RowCount {
                    kernel: crate::model::Kernel::Noise,
                    expected: n,
                    found: rows.len(),
                }]));
            }
            rows.iter()
                .enumerate()
                .map(|(s, r)| {
                    Distribution::new(r.clone()).map_err(|v| {
                        Error::Invalid(vec![Violation::InRow {
                            kernel: crate::model::Kernel::Noise,
                            state: s,
                            cause: Box::new(v),
                        }])
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    base.with_noise(rows, p)
}

/// Flavor-agnostic [`attach_noise`]. Implicit instances accept only the
/// self-loop and point models.
pub fn attach_noise_to(base: &Instance, model: &NoiseModel, p: f64) -> Result<Instance> {
    match base {
        Instance::Explicit(e) => attach_noise(e, model, p).map(Instance::Explicit),
        Instance::Implicit(i) => {
            let noise = match model {
                NoiseModel::SelfLoop => ImplicitNoise::SelfLoop,
                NoiseModel::Point { target } => ImplicitNoise::Point(*target),
                other => {
                    return Err(Error::Precondition(format!(
                        "noise model {other:?} requires an explicit instance"
                    )))
                }
            };
            let mut out = ImplicitInstance::new(i.dynamics.clone(), noise, p)?;
            out.priority = i.priority.clone();
            out.initial = i.initial.clone();
            Ok(Instance::Implicit(out))
        }
    }
}

/// Star gadget: `s0` is the only flawed state and jumps uniformly to one of
/// `s1..sk`, all flawless.
pub fn gen_star(k: usize) -> Result<ExplicitInstance> {
    if k < 2 {
        return Err(Error::Precondition(format!(
            "star needs k >= 2 leaves (k = {k} leaves a flawed state with a single arc of probability 1)"
        )));
    }
    let q = 1.0 / k as f64;
    let mut principal = vec![(1..=k).map(|t| (t, q)).collect::<Vec<_>>()];
    principal.extend((1..=k).map(|s| vec![(s, 1.0)]));
    validate_instance(&InstanceFile {
        states: StateSpec::Count(k + 1),
        flaws: vec![FlawSpec {
            name: "f1".into(),
            members: vec![0],
        }],
        priority: vec!["f1".into()],
        principal,
        noise: None,
        p: 0.0,
        initial: InitialSpec::State(0),
    })
}

/// Flaws over variable assignments whose principal action resamples a fixed
/// set of variables uniformly (the Moser–Tardos rule).
#[derive(Debug)]
struct ResamplingDynamics {
    encoding: VarEncoding,
    names: Vec<String>,
    /// Variables each flaw depends on and resamples.
    scopes: Vec<Vec<usize>>,
    test: FlawTest,
}

#[derive(Debug)]
enum FlawTest {
    /// Edge `(u, v)` is violated when both endpoints share a color.
    Monochromatic,
    /// Clause literals: `(var, positive)`; violated when every literal is false.
    Clause(Vec<Vec<(usize, bool)>>),
}

impl ImplicitDynamics for ResamplingDynamics {
    fn encoding(&self) -> &VarEncoding {
        &self.encoding
    }

    fn num_flaws(&self) -> usize {
        self.scopes.len()
    }

    fn flaw_name(&self, flaw: FlawId) -> String {
        self.names[flaw].clone()
    }

    fn in_flaw(&self, flaw: FlawId, state: StateId) -> bool {
        match &self.test {
            FlawTest::Monochromatic => {
                let s = &self.scopes[flaw];
                let c = self.encoding.get(state, s[0]);
                s.iter().all(|&v| self.encoding.get(state, v) == c)
            }
            FlawTest::Clause(lits) => lits[flaw]
                .iter()
                .all(|&(v, pos)| (self.encoding.get(state, v) == 1) != pos),
        }
    }

    fn principal_row(&self, state: StateId, addressed: FlawId) -> Distribution {
        Distribution::uniform(self.encoding.resamplings(state, &self.scopes[addressed]))
    }
}

fn materialize(dynamics: Arc<ResamplingDynamics>, cfg: &GenConfig) -> Result<Instance> {
    let total = dynamics.encoding.num_states();
    let explicit = match cfg.flavor {
        Flavor::Auto => total <= cfg.explicit_cap,
        Flavor::Explicit => {
            if total > cfg.explicit_cap {
                return Err(Error::TooLarge {
                    states: total,
                    cap: cfg.explicit_cap,
                });
            }
            true
        }
        Flavor::Implicit => false,
    };
    let mut warnings = Vec::new();
    if !explicit {
        let inst = ImplicitInstance::new(dynamics, ImplicitNoise::SelfLoop, 0.0)?;
        return Ok(Instance::Implicit(inst));
    }
    let n = total as usize;
    let m = dynamics.num_flaws();
    let mut members = vec![Vec::new(); m];
    let mut principal = Vec::with_capacity(n);
    for s in 0..n {
        let mut addressed = None;
        for (f, mem) in members.iter_mut().enumerate() {
            if dynamics.in_flaw(f, s) {
                mem.push(s);
                addressed.get_or_insert(f);
            }
        }
        principal.push(match addressed {
            Some(f) => dynamics.principal_row(s, f).support().to_vec(),
            None => vec![(s, 1.0)],
        });
    }
    if m > 0 && (0..n).all(|s| (0..m).any(|f| dynamics.in_flaw(f, s))) {
        warnings.push("no flawless state exists".to_string());
    }
    let file = InstanceFile {
        states: StateSpec::Widths {
            widths: dynamics.encoding.widths().to_vec(),
        },
        flaws: dynamics
            .names
            .iter()
            .cloned()
            .zip(members)
            .map(|(name, members)| FlawSpec { name, members })
            .collect(),
        priority: dynamics.names.clone(),
        principal,
        noise: None,
        p: 0.0,
        initial: InitialSpec::State(0),
    };
    let mut inst = validate_instance(&file)?;
    for w in warnings {
        inst.push_warning(w);
    }
    Ok(Instance::Explicit(inst))
}

/// Proper-coloring instance: one flaw per edge, priority in edge order, start
/// from the all-zero coloring.
pub fn gen_coloring(
    vertices: usize,
    edges: &[(usize, usize)],
    colors: u32,
    cfg: &GenConfig,
) -> Result<Instance> {
    if colors == 0 {
        return Err(Error::Precondition(
            "coloring needs at least one color".into(),
        ));
    }
    if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= vertices || v >= vertices) {
        return Err(Error::Precondition(format!(
            "edge ({u}, {v}) references a vertex outside 0..{vertices}"
        )));
    }
    let encoding = VarEncoding::new(vec![colors; vertices]).map_err(|v| Error::Invalid(vec![v]))?;
    let scopes = edges
        .iter()
        .map(|&(u, v)| if u == v { vec![u] } else { vec![u, v] })
        .collect();
    let names = edges.iter().map(|(u, v)| format!("e{u}-{v}")).collect();
    materialize(
        Arc::new(ResamplingDynamics {
            encoding,
            names,
            scopes,
            test: FlawTest::Monochromatic,
        }),
        cfg,
    )
}

/// CNF instance over `vars` boolean variables. Clauses use signed 1-based
/// literals (`-3` is the negation of variable 3). One flaw per clause; the
/// principal action resamples the clause's variables uniformly.
pub fn gen_ksat(vars: usize, clauses: &[Vec<i64>], cfg: &GenConfig) -> Result<Instance> {
    let mut lits = Vec::with_capacity(clauses.len());
    let mut scopes = Vec::with_capacity(clauses.len());
    for (c, clause) in clauses.iter().enumerate() {
        if clause.is_empty() {
            return Err(Error::Precondition(format!("clause {c} is empty")));
        }
        let mut l = Vec::with_capacity(clause.len());
        for &lit in clause {
            let v = lit.unsigned_abs() as usize;
            if lit == 0 || v > vars {
                return Err(Error::Precondition(format!(
                    "literal {lit} in clause {c} is outside 1..={vars}"
                )));
            }
            l.push((v - 1, lit > 0));
        }
        let mut scope: Vec<usize> = l.iter().map(|&(v, _)| v).collect();
        scope.sort_unstable();
        scope.dedup();
        scopes.push(scope);
        lits.push(l);
    }
    let encoding = VarEncoding::new(vec![2; vars]).map_err(|v| Error::Invalid(vec![v]))?;
    let names = (0..clauses.len()).map(|c| format!("c{}", c + 1)).collect();
    materialize(
        Arc::new(ResamplingDynamics {
            encoding,
            names,
            scopes,
            test: FlawTest::Clause(lits),
        }),
        cfg,
    )
}

/// Parameters for [`gen_random`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSpec {
    pub states: usize,
    pub flaws: usize,
    /// Probability that a given state belongs to a given flaw.
    pub density: f64,
    /// Principal rows at flawed states have between 2 and this many targets.
    pub max_support: usize,
    /// Noise rows have between 1 and this many targets.
    pub noise_support: usize,
    pub p: f64,
    pub seed: u64,
}

impl Default for RandomSpec {
    fn default() -> Self {
        Self {
            states: 32,
            flaws: 4,
            density: 0.2,
            max_support: 6,
            noise_support: 2,
            p: 0.1,
            seed: 0,
        }
    }
}

fn random_row(rng: &mut ChaCha8Rng, n: usize, lo: usize, hi: usize) -> Vec<(StateId, f64)> {
    let k = rng.random_range(lo..=hi.max(lo)).min(n);
    let mut targets = sample(rng, n, k).into_vec();
    targets.sort_unstable();
    let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    targets
        .into_iter()
        .zip(weights)
        .map(|(t, w)| (t, w / total))
        .collect()
}

/// Random explicit instance with random flaw memberships, random priority and
/// random sparse kernels. Starts from a flawed state when one exists.
pub fn gen_random(spec: &RandomSpec) -> Result<ExplicitInstance> {
    if spec.states < 2 {
        return Err(Error::Precondition(
            "random instances need at least 2 states".into(),
        ));
    }
    let n = spec.states;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut members = vec![Vec::new(); spec.flaws];
    let mut flawed = vec![false; n];
    for (s, is_flawed) in flawed.iter_mut().enumerate() {
        for mem in members.iter_mut() {
            if rng.random_bool(spec.density.clamp(0.0, 1.0)) {
                mem.push(s);
                *is_flawed = true;
            }
        }
    }
    let principal = (0..n)
        .map(|s| {
            if flawed[s] {
                random_row(&mut rng, n, 2, spec.max_support)
            } else {
                vec![(s, 1.0)]
            }
        })
        .collect();
    let noise = (0..n)
        .map(|_| random_row(&mut rng, n, 1, spec.noise_support))
        .collect();
    let names: Vec<String> = (1..=spec.flaws).map(|i| format!("f{i}")).collect();
    let mut order = names.clone();
    order.shuffle(&mut rng);
    let initial = flawed.iter().position(|&f| f).unwrap_or(0);
    validate_instance(&InstanceFile {
        states: StateSpec::Count(n),
        flaws: names
            .into_iter()
            .zip(members)
            .map(|(name, members)| FlawSpec { name, members })
            .collect(),
        priority: order,
        principal,
        noise: Some(noise),
        p: spec.p,
        initial: InitialSpec::State(initial),
    })
}

/// Generator families that can be named in an instance document instead of
/// listing every state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GeneratorSpec {
    Star {
        k: usize,
    },
    Coloring {
        vertices: usize,
        edges: Vec<(usize, usize)>,
        colors: u32,
    },
    Ksat {
        vars: usize,
        clauses: Vec<Vec<i64>>,
    },
    Random(RandomSpec),
}

/// `{"generator": ..., "noise": ..., "p": ...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedDocument {
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub p: f64,
    #[serde(default)]
    pub flavor: Flavor,
}

/// An instance document is either a generator recipe or an explicit listing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceDocument {
    Generated(GeneratedDocument),
    Explicit(InstanceFile),
}

impl GeneratorSpec {
    pub fn build(&self, cfg: &GenConfig) -> Result<Instance> {
        match self {
            GeneratorSpec::Star { k } => gen_star(*k).map(Instance::Explicit),
            GeneratorSpec::Coloring {
                vertices,
                edges,
                colors,
            } => gen_coloring(*vertices, edges, *colors, cfg),
            GeneratorSpec::Ksat { vars, clauses } => gen_ksat(*vars, clauses, cfg),
            GeneratorSpec::Random(spec) => gen_random(spec).map(Instance::Explicit),
        }
    }
}

impl InstanceDocument {
    pub fn build(&self, cap: u128) -> Result<Instance> {
        match self {
            InstanceDocument::Explicit(f) => validate_instance(f).map(Instance::Explicit),
            InstanceDocument::Generated(g) => {
                let cfg = GenConfig {
                    explicit_cap: cap,
                    flavor: g.flavor,
                };
                let base = g.generator.build(&cfg)?;
                // random instances carry their own noise unless one is named
                if matches!(g.generator, GeneratorSpec::Random(_))
                    && g.noise == NoiseModel::SelfLoop
                    && g.p == 0.0
                {
                    return Ok(base);
                }
                attach_noise_to(&base, &g.noise, g.p)
            }
        }
    }
}

/// Parses and builds an instance document.
pub fn load_instance(json: &str, cap: u128) -> Result<Instance> {
    let doc: InstanceDocument = serde_json::from_str(json)?;
    doc.build(cap)
}
