//! Seeded execution of the mixed chain and hitting-time statistics.
//!
//! Every step draws two uniforms in a fixed order: the noise coin, then the
//! kernel draw, which is mapped through the inverse CDF of the chosen row.
//! Trial `i` of a batch uses stream `i` of a ChaCha generator keyed by the
//! master seed, so results do not depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certifier::Certificate;
use crate::error::{Error, Result};
use crate::model::{FlawId, Initial, Instance, StateId};

/// Generator for trial `stream` under `seed`.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One transition of the mixed chain. Returns the successor and whether the
/// noise kernel was used.
pub fn step<R: Rng + ?Sized>(inst: &Instance, state: StateId, rng: &mut R) -> (StateId, bool) {
    let coin: f64 = rng.random();
    let u: f64 = rng.random();
    let noise = coin < inst.p();
    let next = if noise {
        inst.noise_row(state).sample(u)
    } else {
        inst.principal_row(state).sample(u)
    };
    (next, noise)
}

/// Draws the starting state. A fixed initial state consumes no randomness.
pub fn initial_state<R: Rng + ?Sized>(inst: &Instance, rng: &mut R) -> StateId {
    match inst.initial() {
        Initial::State(s) => *s,
        Initial::Distribution(d) => d.sample(rng.random()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: StateId,
    /// Flaw addressed at this state, if any.
    pub addressed: Option<FlawId>,
    /// Whether the step leaving this state used the noise kernel; `None` on
    /// the last recorded state.
    pub noise: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    /// The record at index `z` is the first flawless state.
    FlawlessHit,
    BudgetExhausted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub stream: u64,
    /// `σ_1, σ_2, …` in visit order.
    pub records: Vec<StepRecord>,
    pub terminal: Terminal,
    /// Steps taken from flawed states before the first flawless state (or
    /// before the budget ran out).
    pub z: usize,
}

impl Trajectory {
    pub fn states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.records.iter().map(|r| r.state)
    }

    /// `σ_1 … σ_{Z+1}`.
    pub fn bad_prefix(&self) -> &[StepRecord] {
        &self.records[..(self.z + 1).min(self.records.len())]
    }

    pub fn hit_step(&self) -> Option<usize> {
        (self.terminal == Terminal::FlawlessHit).then_some(self.z)
    }

    /// `n_1 … n_Z`.
    pub fn noise_flags(&self) -> Vec<bool> {
        self.records[..self.z]
            .iter()
            .map(|r| r.noise.unwrap_or(false))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub stream: u64,
    pub max_steps: u64,
    /// Overrides the instance's initial state.
    pub start: Option<StateId>,
    /// Keep stepping after the first flawless state until the budget is used.
    pub continue_after_hit: bool,
}

impl RunConfig {
    pub fn new(seed: u64, max_steps: u64) -> Self {
        Self {
            seed,
            stream: 0,
            max_steps,
            start: None,
            continue_after_hit: false,
        }
    }
}

/// Runs the chain from the initial state, recording every visited state.
pub fn run(inst: &Instance, config: &RunConfig) -> Result<Trajectory> {
    if config.max_steps == 0 {
        return Err(Error::Precondition("max_steps must be at least 1".into()));
    }
    let mut rng = trial_rng(config.seed, config.stream);
    let mut state = match config.start {
        Some(s) if !inst.contains_state(s) => return Err(Error::UnknownState(s)),
        Some(s) => s,
        None => initial_state(inst, &mut rng),
    };
    let mut records = Vec::new();
    let mut hit = None;
    let mut taken = 0u64;
    loop {
        let addressed = inst.addressed_flaw(state);
        if addressed.is_none() && hit.is_none() {
            hit = Some(records.len());
        }
        let done = taken == config.max_steps || (hit.is_some() && !config.continue_after_hit);
        if done {
            records.push(StepRecord {
                state,
                addressed,
                noise: None,
            });
            break;
        }
        let (next, noise) = step(inst, state, &mut rng);
        records.push(StepRecord {
            state,
            addressed,
            noise: Some(noise),
        });
        state = next;
        taken += 1;
    }
    let (terminal, z) = match hit {
        Some(i) => (Terminal::FlawlessHit, i),
        None => (Terminal::BudgetExhausted, records.len() - 1),
    };
    Ok(Trajectory {
        seed: config.seed,
        stream: config.stream,
        records,
        terminal,
        z,
    })
}

/// First hitting step of one trial without recording the path.
fn hitting_step(
    inst: &Instance,
    seed: u64,
    stream: u64,
    budget: u64,
    start: Option<StateId>,
) -> Option<u64> {
    let mut rng = trial_rng(seed, stream);
    let mut state = start.unwrap_or_else(|| initial_state(inst, &mut rng));
    for t in 0..=budget {
        if inst.is_flawless(state) {
            return Some(t);
        }
        if t == budget {
            break;
        }
        state = step(inst, state, &mut rng).0;
    }
    None
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub trials: u64,
    pub seed: u64,
    pub budget: u64,
    pub start: Option<StateId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: u64,
    /// `None` when the budget ran out first.
    pub hit_step: Option<u64>,
}

impl TrialResult {
    pub fn censored(&self) -> bool {
        self.hit_step.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingStats {
    pub trials: u64,
    pub seed: u64,
    pub budget: u64,
    pub results: Vec<TrialResult>,
}

impl HittingStats {
    pub fn censored(&self) -> u64 {
        self.results.iter().filter(|r| r.censored()).count() as u64
    }

    /// Fraction of trials not flawless by step `t`; `None` past the budget.
    pub fn tail(&self, t: u64) -> Option<f64> {
        if t > self.budget || self.trials == 0 {
            return None;
        }
        let n = self
            .results
            .iter()
            .filter(|r| r.hit_step.is_none_or(|h| h > t))
            .count();
        Some(n as f64 / self.trials as f64)
    }

    pub fn mean_hit_step(&self) -> Option<f64> {
        let hits: Vec<u64> = self.results.iter().filter_map(|r| r.hit_step).collect();
        (!hits.is_empty()).then(|| hits.iter().sum::<u64>() as f64 / hits.len() as f64)
    }

    /// `(t, tail(t))` for each requested `t` within the budget.
    pub fn tail_table(&self, ts: &[u64]) -> Vec<(u64, f64)> {
        ts.iter()
            .filter_map(|&t| self.tail(t).map(|v| (t, v)))
            .collect()
    }
}

/// Runs `trials` independent trials in parallel.
pub fn monte_carlo(inst: &Instance, config: &MonteCarloConfig) -> Result<HittingStats> {
    if config.trials == 0 {
        return Err(Error::Precondition("trials must be at least 1".into()));
    }
    if let Some(s) = config.start.filter(|&s| !inst.contains_state(s)) {
        return Err(Error::UnknownState(s));
    }
    let results = (0..config.trials)
        .into_par_iter()
        .map(|trial| TrialResult {
            trial,
            hit_step: hitting_step(inst, config.seed, trial, config.budget, config.start),
        })
        .collect();
    Ok(HittingStats {
        trials: config.trials,
        seed: config.seed,
        budget: config.budget,
        results,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailVerdict {
    Pass,
    Fail,
    /// The simulation budget is below the certified step count.
    Inconclusive,
    /// The instance has no certificate.
    NoGuarantee,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub s: f64,
    pub steps: Option<u64>,
    pub empirical: Option<f64>,
    /// `exp(-s)`.
    pub bound: f64,
    /// `sqrt(π₀(1-π₀)/n)` with `π₀ = exp(-s)`.
    pub sigma: f64,
    /// `bound + 3σ`.
    pub limit: f64,
    pub verdict: TailVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub no_guarantee: bool,
    pub rows: Vec<TailRow>,
}

impl TailReport {
    pub fn passed(&self) -> bool {
        !self.no_guarantee && self.rows.iter().all(|r| r.verdict == TailVerdict::Pass)
    }
}

/// Compares the empirical tail at `steps(s)` with `exp(-s) + 3σ`.
pub fn tail_check(stats: &HittingStats, certificate: &Certificate, s_values: &[f64]) -> TailReport {
    let bounds = certificate
        .bounds
        .as_ref()
        .filter(|_| certificate.certified);
    let n = stats.trials.max(1) as f64;
    let rows = s_values
        .iter()
        .map(|&s| {
            let bound = (-s).exp();
            let sigma = (bound * (1.0 - bound) / n).sqrt();
            let limit = bound + 3.0 * sigma;
            let steps = bounds.map(|b| b.step_budget(s));
            let empirical = steps.and_then(|t| stats.tail(t));
            let verdict = match (bounds, empirical) {
                (None, _) => TailVerdict::NoGuarantee,
                (Some(_), None) => TailVerdict::Inconclusive,
                (Some(_), Some(e)) if e <= limit => TailVerdict::Pass,
                _ => TailVerdict::Fail,
            };
            TailRow {
                s,
                steps,
                empirical,
                bound,
                sigma,
                limit,
                verdict,
            }
        })
        .collect();
    TailReport {
        no_guarantee: bounds.is_none(),
        rows,
    }
}
