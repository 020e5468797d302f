//! Sufficient-condition checks, the λ search, derived step bounds and the
//! numeric audits of the inequalities the bounds rest on.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analyzer::{analyze, q_of_p, Analysis, AnalyzerConfig, FlawProfile};
use crate::error::{Error, Result};
use crate::model::{arc_bound, binary_entropy, FlawId, FlawSet, Instance};
use crate::serde_util::extended_f64;

/// Default additive margin for strict inequalities.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;
/// Default width of the final λ bracket.
pub const DEFAULT_LAMBDA_TOLERANCE: f64 = 1e-6;

/// `2^-(2+h(p))`.
pub fn threshold(p: f64) -> f64 {
    (-(2.0 + binary_entropy(p))).exp2()
}

/// `2^(-(λ·Potential - b_pr - q))`; zero for an infinite potential.
fn term(profile: &FlawProfile, lambda: f64) -> f64 {
    if profile.potential.is_infinite() {
        return 0.0;
    }
    (-(lambda * profile.potential - profile.b_pr - profile.q)).exp2()
}

fn neighborhood_sums(profiles: &[FlawProfile], lambda: f64) -> Vec<f64> {
    profiles
        .iter()
        .map(|pi| {
            pi.gamma_pr
                .iter()
                .map(|&j| term(&profiles[j], lambda))
                .sum()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlawSum {
    pub flaw: FlawId,
    pub name: String,
    pub neighborhood: FlawSet,
    pub sum: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub p: f64,
    pub h_p: f64,
    /// `2^-(2+h(p))`.
    pub threshold: f64,
    pub tolerance: f64,
    pub sums: Vec<FlawSum>,
    /// Minimum over flaws of `threshold - sum`; `inf` with no flaws.
    #[serde(with = "extended_f64")]
    pub slack: f64,
    pub certified: bool,
}

/// Per flaw, `Σ_{f_j ∈ Γ_pr(f_i)} 2^(-Amenability(f_j) + q_j(p))` against
/// `2^-(2+h(p)) - tolerance`.
pub fn condition_check(profiles: &[FlawProfile], p: f64, tolerance: f64) -> ConditionReport {
    let thr = threshold(p);
    let sums = neighborhood_sums(profiles, 1.0);
    let sums: Vec<FlawSum> = profiles
        .iter()
        .zip(sums)
        .map(|(pr, sum)| FlawSum {
            flaw: pr.flaw,
            name: pr.name.clone(),
            neighborhood: pr.gamma_pr.clone(),
            sum,
            ok: sum < thr - tolerance,
        })
        .collect();
    let slack = sums
        .iter()
        .map(|s| thr - s.sum)
        .fold(f64::INFINITY, f64::min);
    ConditionReport {
        p,
        h_p: binary_entropy(p),
        threshold: thr,
        tolerance,
        certified: sums.iter().all(|s| s.ok),
        sums,
        slack,
    }
}

/// Whether every neighborhood satisfies the λ-parametrized condition.
pub fn lambda_amenable(profiles: &[FlawProfile], p: f64, lambda: f64, tolerance: f64) -> bool {
    let thr = threshold(p) - tolerance;
    neighborhood_sums(profiles, lambda).iter().all(|&s| s < thr)
}

/// Smallest `λ ∈ (0, 1]` (to within `tol`) for which the condition holds,
/// with the slack there. `None` when it fails at `λ = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSearch {
    pub lambda: f64,
    #[serde(with = "extended_f64")]
    pub slack: f64,
}

pub fn lambda_search(
    profiles: &[FlawProfile],
    p: f64,
    tol: f64,
    tolerance: f64,
) -> Option<LambdaSearch> {
    if !lambda_amenable(profiles, p, 1.0, tolerance) {
        return None;
    }
    // the sums fall as λ grows, so the passing set is an interval ending at 1
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if lambda_amenable(profiles, p, mid, tolerance) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let thr = threshold(p);
    let slack = neighborhood_sums(profiles, hi)
        .into_iter()
        .map(|s| thr - s)
        .fold(f64::INFINITY, f64::min);
    Some(LambdaSearch { lambda: hi, slack })
}

/// Step and distance bounds at a given λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lambda: f64,
    pub b: u32,
    pub xi: f64,
    pub delta: usize,
    pub log2_states: f64,
    pub num_flaws: usize,
    pub m0: f64,
    pub x0: f64,
    pub rows: Vec<BoundRow>,
    /// `steps(1) / (log₂|Ω| + m)`.
    pub r: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub s: f64,
    /// Distance `E(s) = ⌈2s/(1+λ)⌉·(x₀+B)` in bits.
    pub distance: f64,
    /// `2^B · E(s)`.
    pub steps: f64,
    /// Failure probability bound `((1+λ)/2)^⌈2s/(1+λ)⌉`.
    pub failure_bound: f64,
}

impl Bounds {
    /// `M₀ = log₂|Ω| + m(Δ+1)(Ξ+4) + λB` and everything derived from it.
    pub fn new(
        lambda: f64,
        b: u32,
        xi: f64,
        delta: usize,
        log2_states: f64,
        num_flaws: usize,
        s_values: &[f64],
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::Precondition(format!(
                "x0 = 2·M0/(1-λ) is undefined at λ = {lambda}"
            )));
        }
        let m0 =
            log2_states + num_flaws as f64 * (delta as f64 + 1.0) * (xi + 4.0) + lambda * b as f64;
        let x0 = 2.0 * m0 / (1.0 - lambda);
        let bounds = Self {
            lambda,
            b,
            xi,
            delta,
            log2_states,
            num_flaws,
            m0,
            x0,
            rows: s_values
                .iter()
                .map(|&s| Self::row(lambda, b, x0, s))
                .collect(),
            r: 0.0,
        };
        let denom = log2_states + num_flaws as f64;
        let steps1 = Self::row(lambda, b, x0, 1.0).steps;
        Ok(Self {
            r: if denom > 0.0 {
                steps1 / denom
            } else {
                f64::INFINITY
            },
            ..bounds
        })
    }

    fn row(lambda: f64, b: u32, x0: f64, s: f64) -> BoundRow {
        let t = (2.0 * s / (1.0 + lambda)).ceil();
        let distance = t * (x0 + b as f64);
        BoundRow {
            s,
            distance,
            steps: (b as f64).exp2() * distance,
            failure_bound: ((1.0 + lambda) / 2.0).powf(t),
        }
    }

    pub fn distance(&self, s: f64) -> f64 {
        Self::row(self.lambda, self.b, self.x0, s).distance
    }

    pub fn steps(&self, s: f64) -> f64 {
        Self::row(self.lambda, self.b, self.x0, s).steps
    }

    /// Integer step budget: `⌈steps(s)⌉`.
    pub fn step_budget(&self, s: f64) -> u64 {
        self.steps(s).ceil() as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    pub tolerance: f64,
    pub lambda_tolerance: f64,
    /// Bounds are reported at `min(1 - tol, λ* + pad)`.
    pub pad: f64,
    /// Extra λ at which bounds are also reported, if it is λ-amenable.
    pub lambda: Option<f64>,
    pub s_values: Vec<f64>,
    pub analyzer: AnalyzerConfig,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            lambda_tolerance: DEFAULT_LAMBDA_TOLERANCE,
            pad: 0.0,
            lambda: None,
            s_values: vec![1.0, 2.0, 3.0],
            analyzer: AnalyzerConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub condition: ConditionReport,
    pub lambda_star: Option<LambdaSearch>,
    /// B, or `None` when some flawed state has an arc of probability 1.
    pub b: Option<u32>,
    pub xi: f64,
    pub delta: usize,
    pub bounds: Option<Bounds>,
    /// Bounds at the caller-supplied λ, when it passes.
    pub bounds_at_lambda: Option<Bounds>,
    pub certified: bool,
    /// Why the instance is not certified, if it is not.
    pub reason: Option<String>,
}

impl Certificate {
    /// λ used for the reported bounds.
    pub fn lambda(&self) -> Option<f64> {
        self.bounds.as_ref().map(|b| b.lambda)
    }

    pub fn step_budget(&self, s: f64) -> Option<u64> {
        self.bounds.as_ref().map(|b| b.step_budget(s))
    }
}

/// Assembles the certificate from an existing analysis.
pub fn certificate_from_analysis(
    analysis: &Analysis,
    b: Result<u32>,
    config: &CertifyConfig,
) -> Certificate {
    let profiles = &analysis.profiles;
    let p = analysis.p;
    let condition = condition_check(profiles, p, config.tolerance);
    let lambda_star = if condition.certified {
        lambda_search(profiles, p, config.lambda_tolerance, config.tolerance)
    } else {
        None
    };
    let xi = analysis.xi();
    let delta = analysis.max_delta();
    let mut reason = None;
    if !condition.certified {
        let worst = condition.sums.iter().find(|s| !s.ok).map(|s| s.name.clone());
        reason = Some(format!(
            "sufficient condition fails at flaw {}",
            worst.unwrap_or_default()
        ));
    }
    let b = match b {
        Ok(b) => Some(b),
        Err(e) => {
            reason.get_or_insert_with(|| e.to_string());
            None
        }
    };
    let build = |lambda: f64| {
        Bounds::new(
            lambda,
            b?,
            xi,
            delta,
            analysis.log2_num_states(),
            analysis.num_flaws,
            &config.s_values,
        )
        .ok()
    };
    let bounds = lambda_star.and_then(|ls| {
        let lambda = (ls.lambda + config.pad).min(1.0 - config.lambda_tolerance);
        let lambda = if lambda < ls.lambda {
            ls.lambda
        } else {
            lambda
        };
        build(lambda)
    });
    if condition.certified && b.is_some() && bounds.is_none() {
        reason.get_or_insert_with(|| "no λ < 1 satisfies the parametrized condition".into());
    }
    let bounds_at_lambda = match (config.lambda, b) {
        (Some(l), Some(_)) if lambda_amenable(profiles, p, l, config.tolerance) => build(l),
        _ => None,
    };
    let certified = condition.certified && bounds.is_some();
    Certificate {
        condition,
        lambda_star,
        b,
        xi,
        delta,
        bounds,
        bounds_at_lambda,
        certified,
        reason: if certified { None } else { reason },
    }
}

/// Analyzes the instance and builds its certificate.
pub fn certify(inst: &Instance, config: &CertifyConfig) -> Result<(Analysis, Certificate)> {
    let e = inst.as_explicit()?;
    let analysis = analyze(inst, &config.analyzer)?;
    let cert = certificate_from_analysis(&analysis, arc_bound(e), config);
    Ok((analysis, cert))
}

/// Set functions over collections of flaws at a fixed λ.
#[derive(Clone, Debug, PartialEq)]
pub struct SetFunctions {
    pub p: f64,
    pub h_p: f64,
    pub lambda: f64,
    pub b_ns: f64,
    pub b_pr: Vec<f64>,
    pub q: Vec<f64>,
    pub potential: Vec<f64>,
}

impl SetFunctions {
    pub fn new(analysis: &Analysis, lambda: f64) -> Self {
        Self {
            p: analysis.p,
            h_p: analysis.h_p,
            lambda,
            b_ns: analysis.b_ns,
            b_pr: analysis.profiles.iter().map(|p| p.b_pr).collect(),
            q: analysis.profiles.iter().map(|p| p.q).collect(),
            potential: analysis.profiles.iter().map(|p| p.potential).collect(),
        }
    }

    pub fn in_pr(&self, s: &FlawSet) -> f64 {
        s.iter().map(|&f| self.b_pr[f]).sum()
    }

    pub fn in_ns(&self, s: &FlawSet) -> f64 {
        s.len() as f64 * self.b_ns
    }

    /// `In(S) = (1-p)·In_pr(S) + p·In_ns(S)`.
    pub fn in_bits(&self, s: &FlawSet) -> f64 {
        (1.0 - self.p) * self.in_pr(s) + self.p * self.in_ns(s)
    }

    pub fn q(&self, s: &FlawSet) -> f64 {
        s.iter().map(|&f| self.q[f]).sum()
    }

    /// `g(S) = λ⁻¹·(p(2+h(p))|S| + q(S))`.
    pub fn g(&self, s: &FlawSet) -> f64 {
        (self.p * (2.0 + self.h_p) * s.len() as f64 + self.q(s)) / self.lambda
    }

    pub fn potential(&self, s: &FlawSet) -> f64 {
        s.iter().map(|&f| self.potential[f]).sum()
    }

    pub fn potential_minus(&self, s: &FlawSet) -> f64 {
        self.potential(s) - self.g(s)
    }
}

/// Which audited inequality failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    /// `max_k {Δh(k/Δ) + k(b_ns+2+h(p))} < Δ(b_ns+5/2+h(p))`.
    EntropyChain,
    /// `q(p) ≤ pΔ(b_ns+4)`.
    SurchargeBound,
    /// `λ·Potential(f) − q_f(p) ≥ 2+h(p)`.
    PotentialMargin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditViolation {
    pub kind: AuditKind,
    pub delta: usize,
    pub b_ns: f64,
    pub p: f64,
    pub flaw: Option<FlawId>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub points: usize,
    pub violations: Vec<AuditViolation>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn merge(&mut self, other: AuditReport) {
        self.points += other.points;
        self.violations.extend(other.violations);
    }
}

/// `max over integer k ∈ [0, Δ] of Δ·h(k/Δ) + k(b_ns+2+h(p))`.
pub fn entropy_chain_max(delta: usize, b_ns: f64, p: f64) -> f64 {
    let h = binary_entropy(p);
    let d = delta as f64;
    (0..=delta)
        .map(|k| d * binary_entropy(k as f64 / d) + k as f64 * (b_ns + 2.0 + h))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Audit grid over `(Δ, b_ns, p)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditGrid {
    pub deltas: Vec<usize>,
    pub b_ns: Vec<f64>,
    pub ps: Vec<f64>,
}

impl Default for AuditGrid {
    fn default() -> Self {
        Self {
            deltas: (1..=64).collect(),
            b_ns: (0..=8).map(f64::from).collect(),
            ps: (1..=99).map(|k| k as f64 / 100.0).collect(),
        }
    }
}

/// Checks the entropy-chain and surcharge inequalities at every grid point.
pub fn inequality_audit(grid: &AuditGrid) -> AuditReport {
    let points: Vec<(usize, f64, f64)> = grid
        .deltas
        .iter()
        .flat_map(|&d| {
            grid.b_ns
                .iter()
                .flat_map(move |&b| grid.ps.iter().map(move |&p| (d, b, p)))
        })
        .collect();
    let violations = points
        .par_iter()
        .flat_map_iter(|&(delta, b_ns, p)| {
            let h = binary_entropy(p);
            let mut out = Vec::new();
            let lhs = entropy_chain_max(delta, b_ns, p);
            let rhs = delta as f64 * (b_ns + 2.5 + h);
            if lhs >= rhs {
                out.push(AuditViolation {
                    kind: AuditKind::EntropyChain,
                    delta,
                    b_ns,
                    p,
                    flaw: None,
                    lhs,
                    rhs,
                });
            }
            let lhs = q_of_p(delta, b_ns, p);
            let rhs = p * delta as f64 * (b_ns + 4.0);
            if lhs > rhs {
                out.push(AuditViolation {
                    kind: AuditKind::SurchargeBound,
                    delta,
                    b_ns,
                    p,
                    flaw: None,
                    lhs,
                    rhs,
                });
            }
            out
        })
        .collect();
    AuditReport {
        points: points.len(),
        violations,
    }
}

/// Checks `λ·Potential(f) − q_f(p) ≥ 2+h(p)` for every flaw of a certified
/// instance at the certificate's λ.
pub fn audit_certificate(analysis: &Analysis, certificate: &Certificate) -> AuditReport {
    let Some(lambda) = certificate.lambda() else {
        return AuditReport::default();
    };
    let rhs = 2.0 + analysis.h_p;
    let violations = analysis
        .profiles
        .iter()
        .filter_map(|pr| {
            let lhs = lambda * pr.potential - pr.q;
            (lhs < rhs).then_some(AuditViolation {
                kind: AuditKind::PotentialMargin,
                delta: pr.delta,
                b_ns: analysis.b_ns,
                p: analysis.p,
                flaw: Some(pr.flaw),
                lhs,
                rhs,
            })
        })
        .collect();
    AuditReport {
        points: analysis.profiles.len(),
        violations,
    }
}
