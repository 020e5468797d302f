use serde::{Deserialize, Serialize};

use super::entropy::shannon_entropy;
use super::{StateId, Violation, ROW_TOLERANCE};

/// A finitely supported probability distribution over states.
///
/// The support is kept sorted by state index with strictly positive masses.
/// That order is the canonical order used for inverse-CDF sampling, so two
/// rows with the same entries sample identically from the same uniform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distribution {
    support: Vec<(StateId, f64)>,
}

impl Distribution {
    /// Builds a distribution from arbitrary-order entries, checking positivity,
    /// uniqueness and normalization.
    pub fn new(mut entries: Vec<(StateId, f64)>) -> Result<Self, Violation> {
        if entries.is_empty() {
            return Err(Violation::EmptyRow);
        }
        for &(s, q) in &entries {
            if !q.is_finite() || q <= 0.0 {
                return Err(Violation::NonPositive { state: s, prob: q });
            }
        }
        entries.sort_by_key(|&(s, _)| s);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Violation::DuplicateTarget(w[0].0));
        }
        let sum: f64 = entries.iter().map(|&(_, q)| q).sum();
        if (sum - 1.0).abs() > ROW_TOLERANCE {
            return Err(Violation::RowSum(sum));
        }
        Ok(Self { support: entries })
    }

    pub fn point(state: StateId) -> Self {
        Self {
            support: vec![(state, 1.0)],
        }
    }

    /// Uniform distribution over the given targets (duplicates are merged).
    pub fn uniform(targets: impl IntoIterator<Item = StateId>) -> Self {
        let mut t: Vec<StateId> = targets.into_iter().collect();
        t.sort_unstable();
        t.dedup();
        assert!(!t.is_empty(), "uniform distribution over an empty set");
        let q = 1.0 / t.len() as f64;
        Self {
            support: t.into_iter().map(|s| (s, q)).collect(),
        }
    }

    pub fn support(&self) -> &[(StateId, f64)] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn targets(&self) -> impl Iterator<Item = StateId> + '_ {
        self.support.iter().map(|&(s, _)| s)
    }

    pub fn contains(&self, state: StateId) -> bool {
        self.support
            .binary_search_by_key(&state, |&(s, _)| s)
            .is_ok()
    }

    pub fn prob(&self, state: StateId) -> f64 {
        match self.support.binary_search_by_key(&state, |&(s, _)| s) {
            Ok(i) => self.support[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn is_point_mass_at(&self, state: StateId) -> bool {
        self.support.len() == 1 && self.support[0] == (state, 1.0)
    }

    /// Inverse-CDF sample for a uniform `u` in `[0, 1)`.
    pub fn sample(&self, u: f64) -> StateId {
        let mut acc = 0.0;
        for &(s, q) in &self.support {
            acc += q;
            if u < acc {
                return s;
            }
        }
        // rounding slack at the top of the CDF
        self.support[self.support.len() - 1].0
    }

    /// Pointwise mixture `(1-p)·a + p·b` over the union of supports.
    ///
    /// Components with zero weight are dropped, so `p = 0` returns `a` and
    /// `p = 1` returns `b` unchanged.
    pub fn mixture(a: &Self, b: &Self, p: f64) -> Self {
        if p == 0.0 {
            return a.clone();
        }
        if p == 1.0 {
            return b.clone();
        }
        let (x, y) = (&a.support, &b.support);
        let mut out = Vec::with_capacity(x.len() + y.len());
        let (mut i, mut j) = (0, 0);
        while i < x.len() || j < y.len() {
            match (x.get(i), y.get(j)) {
                (Some(&(s, qa)), Some(&(t, qb))) if s == t => {
                    out.push((s, (1.0 - p) * qa + p * qb));
                    i += 1;
                    j += 1;
                }
                (Some(&(s, qa)), Some(&(t, _))) if s < t => {
                    out.push((s, (1.0 - p) * qa));
                    i += 1;
                }
                (Some(&(s, qa)), None) => {
                    out.push((s, (1.0 - p) * qa));
                    i += 1;
                }
                (_, Some(&(t, qb))) => {
                    out.push((t, p * qb));
                    j += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        Self { support: out }
    }

    /// Shannon entropy in bits.
    pub fn entropy(&self) -> f64 {
        shannon_entropy(self.support.iter().map(|&(_, q)| q))
    }
}
