//! Brute-force reference computations for cross-checking the library.
//!
//! Everything here works from the raw instance file with dense matrices and
//! literal transcriptions of the definitions. Nothing is shared with the
//! library's own algorithms.

#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use stochctl::model::{InitialSpec, InstanceFile, StateSpec};

pub type Set = BTreeSet<usize>;

/// Dense view of an instance file.
#[derive(Clone, Debug)]
pub struct Dense {
    pub n: usize,
    pub m: usize,
    pub p: f64,
    /// `member[f][s]`.
    pub member: Vec<Vec<bool>>,
    /// Flaw indices from highest to lowest priority.
    pub order: Vec<usize>,
    pub pr: Vec<Vec<f64>>,
    pub ns: Vec<Vec<f64>>,
    pub root: Option<usize>,
}

impl Dense {
    pub fn new(file: &InstanceFile) -> Self {
        let n = match &file.states {
            StateSpec::Count(n) => *n,
            StateSpec::Widths { widths } => widths.iter().map(|&w| w as usize).product(),
        };
        let m = file.flaws.len();
        let mut member = vec![vec![false; n]; m];
        for (f, spec) in file.flaws.iter().enumerate() {
            for &s in &spec.members {
                member[f][s] = true;
            }
        }
        let order = file
            .priority
            .iter()
            .map(|name| file.flaws.iter().position(|f| &f.name == name).unwrap())
            .collect();
        let dense = |rows: &[Vec<(usize, f64)>]| {
            let mut k = vec![vec![0.0; n]; n];
            for (s, row) in rows.iter().enumerate() {
                for &(t, q) in row {
                    k[s][t] += q;
                }
            }
            k
        };
        let pr = dense(&file.principal);
        let ns = match &file.noise {
            Some(rows) => dense(rows),
            None => (0..n)
                .map(|s| (0..n).map(|t| if s == t { 1.0 } else { 0.0 }).collect())
                .collect(),
        };
        let root = match file.initial {
            InitialSpec::State(s) => Some(s),
            InitialSpec::Distribution { .. } => None,
        };
        Self {
            n,
            m,
            p: file.p,
            member,
            order,
            pr,
            ns,
            root,
        }
    }

    pub fn flawed(&self, s: usize) -> bool {
        (0..self.m).any(|f| self.member[f][s])
    }

    pub fn present(&self, s: usize) -> Set {
        (0..self.m).filter(|&f| self.member[f][s]).collect()
    }

    pub fn addressed(&self, s: usize) -> Option<usize> {
        self.order.iter().copied().find(|&f| self.member[f][s])
    }

    pub fn mixed(&self, s: usize, t: usize) -> f64 {
        (1.0 - self.p) * self.pr[s][t] + self.p * self.ns[s][t]
    }

    /// Kernel matrix with the convention that the noise digraph is empty
    /// when `p = 0`.
    fn kernel(&self, noise: bool) -> Option<&Vec<Vec<f64>>> {
        if noise {
            (self.p > 0.0).then_some(&self.ns)
        } else {
            Some(&self.pr)
        }
    }

    /// Dense causality matrix: `c[i][j]` iff some arc from a state where `i`
    /// is addressed reaches a state containing `j` from one that does not.
    pub fn causality(&self, noise: bool) -> Vec<Vec<bool>> {
        let mut c = vec![vec![false; self.m]; self.m];
        let Some(k) = self.kernel(noise) else {
            return c;
        };
        for s in 0..self.n {
            let Some(i) = self.addressed(s) else { continue };
            for t in 0..self.n {
                if k[s][t] <= 0.0 {
                    continue;
                }
                for j in 0..self.m {
                    if self.member[j][t] && !self.member[j][s] {
                        c[i][j] = true;
                    }
                }
            }
        }
        c
    }

    pub fn gamma(&self, noise: bool, i: usize) -> Set {
        let c = self.causality(noise);
        (0..self.m).filter(|&j| j == i || c[i][j]).collect()
    }

    pub fn potential(&self, i: usize) -> f64 {
        let mut best = f64::INFINITY;
        for s in 0..self.n {
            if self.addressed(s) != Some(i) {
                continue;
            }
            let mut h = 0.0;
            for t in 0..self.n {
                let q = self.mixed(s, t);
                if q > 0.0 {
                    h -= q * q.log2();
                }
            }
            best = best.min(h);
        }
        best
    }

    /// `max_τ |{σ ∈ f_i : τ ∈ A(σ)}|`, or the labeled variant restricted to
    /// states where `i` is addressed.
    pub fn congestion(&self, noise: bool, i: usize, labeled: bool) -> usize {
        let Some(k) = self.kernel(noise) else {
            return 0;
        };
        (0..self.n)
            .map(|t| {
                (0..self.n)
                    .filter(|&s| self.member[i][s] && k[s][t] > 0.0)
                    .filter(|&s| !labeled || self.addressed(s) == Some(i))
                    .count()
            })
            .max()
            .unwrap_or(0)
    }

    /// Smallest integer `B ≥ 1` bounding every mixed arc out of a flawed
    /// state strictly inside `(2^-B, 1 - 2^-B)`, by direct search.
    pub fn arc_bound(&self) -> Option<u32> {
        (1..=1100).find(|&b| {
            let eps = 0.5f64.powi(b as i32);
            (0..self.n).filter(|&s| self.flawed(s)).all(|s| {
                (0..self.n)
                    .map(|t| self.mixed(s, t))
                    .filter(|&q| q > 0.0)
                    .all(|q| eps < q && q < 1.0 - eps)
            })
        })
    }

    /// Probability that the first `d*` steps from the root stay among flawed
    /// states, where every flawed-to-flawed arc has the same probability `c`
    /// and `d* = ⌈x / −log₂ c⌉`. Computed as `e_rootᵀ Q^{d*} 1` with `Q` the
    /// mixed kernel restricted to flawed states. `None` when such arcs do not
    /// share one probability or the root is flawless.
    pub fn bad_mass_matrix_power(&self, x: f64) -> Option<f64> {
        let root = self.root?;
        if !self.flawed(root) {
            return Some(0.0);
        }
        let flawed: Vec<usize> = (0..self.n).filter(|&s| self.flawed(s)).collect();
        let mut c = None::<f64>;
        for &s in &flawed {
            for &t in &flawed {
                let q = self.mixed(s, t);
                if q > 0.0 {
                    match c {
                        None => c = Some(q),
                        Some(c0) if (c0 - q).abs() > 1e-15 => return None,
                        _ => {}
                    }
                }
            }
        }
        let Some(c) = c else {
            // no flawed-to-flawed arc: bad only if the root itself is a leaf
            return Some(if x <= 0.0 { 1.0 } else { 0.0 });
        };
        if c >= 1.0 {
            return None;
        }
        let depth = (x / -c.log2()).ceil().max(0.0) as usize;
        let k = flawed.len();
        let q: Vec<Vec<f64>> = flawed
            .iter()
            .map(|&s| flawed.iter().map(|&t| self.mixed(s, t)).collect())
            .collect();
        let mut v = vec![0.0; k];
        v[flawed.iter().position(|&s| s == root).unwrap()] = 1.0;
        for _ in 0..depth {
            let mut next = vec![0.0; k];
            for a in 0..k {
                if v[a] == 0.0 {
                    continue;
                }
                for b in 0..k {
                    next[b] += v[a] * q[a][b];
                }
            }
            v = next;
        }
        Some(v.iter().sum())
    }

    /// For instances whose principal rows are uniform over their support:
    /// `a_j = min |A_pr(σ)|` over states addressing `j`.
    pub fn min_support(&self, j: usize) -> Option<usize> {
        (0..self.n)
            .filter(|&s| self.addressed(s) == Some(j))
            .map(|s| (0..self.n).filter(|&t| self.pr[s][t] > 0.0).count())
            .min()
    }

    /// Exact rational test `Σ_{j ∈ Γ_pr(i)} 1/a_j < 1/4` for every flaw,
    /// where flaws never addressed contribute nothing.
    pub fn reciprocal_support_criterion(&self) -> bool {
        let quarter = Ratio::new(1u64, 4);
        (0..self.m).all(|i| {
            let sum: Ratio<u64> = self
                .gamma(false, i)
                .into_iter()
                .filter_map(|j| self.min_support(j))
                .map(|a| Ratio::new(1, a as u64))
                .sum();
            sum < quarter
        })
    }
}

/// `H[P]` recomputed from a full leaf list: each leaf's maximal all-flawed
/// prefix is extracted and masses are grouped by it.
pub fn grouped_prefix_entropy(leaves: &[(Vec<usize>, f64)], flawed: impl Fn(usize) -> bool) -> f64 {
    let mut groups: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for (path, prob) in leaves {
        let red: Vec<usize> = path.iter().copied().take_while(|&s| flawed(s)).collect();
        *groups.entry(red).or_default() += prob;
    }
    groups
        .values()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.log2())
        .sum()
}

/// Break-set quantities transcribed literally from the quantified
/// definitions, with horizon `t = witness.len()`. Returns `(B, O, N, B*)`.
pub fn literal_break_sets(
    present: &[Set],
    witness: &[usize],
) -> (Vec<Set>, Vec<Set>, Vec<Set>, Vec<Set>) {
    let t = witness.len();
    let u = |i: usize| &present[i - 1];
    let w = |i: usize| witness[i - 1];
    let mut b = vec![u(1).clone()];
    for i in 1..t {
        let mut kept = u(i).clone();
        kept.remove(&w(i));
        b.push(u(i + 1).difference(&kept).copied().collect());
    }
    let (mut os, mut ns, mut stars) = (Vec::new(), Vec::new(), Vec::new());
    for (i, bi) in b.iter().enumerate() {
        let o: Set = bi
            .iter()
            .copied()
            .filter(|&f| {
                (i + 1..=t).any(|j| !u(j + 1).contains(&f) && (i + 1..=j).all(|l| w(l) != f))
            })
            .collect();
        let n: Set = bi
            .iter()
            .copied()
            .filter(|&f| {
                (i + 1..=t).all(|j| u(j + 1).contains(&f)) && (i + 1..=t).all(|l| w(l) != f)
            })
            .collect();
        let star = bi
            .iter()
            .copied()
            .filter(|f| !o.contains(f) && !n.contains(f))
            .collect();
        os.push(o);
        ns.push(n);
        stars.push(star);
    }
    (b, os, ns, stars)
}

#[cfg(test)]
mod tests {
    use super::*;
    use stochctl::model::FlawSpec;

    fn star(k: usize, p: f64) -> InstanceFile {
        let mut principal = vec![(1..=k).map(|t| (t, 1.0 / k as f64)).collect::<Vec<_>>()];
        principal.extend((1..=k).map(|s| vec![(s, 1.0)]));
        InstanceFile {
            states: StateSpec::Count(k + 1),
            flaws: vec![FlawSpec {
                name: "f1".into(),
                members: vec![0],
            }],
            priority: vec!["f1".into()],
            principal,
            noise: Some(vec![vec![(0, 1.0)]; k + 1]),
            p,
            initial: InitialSpec::State(0),
        }
    }

    #[test]
    fn star_by_hand() {
        let d = Dense::new(&star(8, 0.2));
        assert!((d.potential(0) - 3.121928).abs() < 1e-6);
        assert_eq!(d.congestion(false, 0, false), 1);
        assert_eq!(d.gamma(true, 0), Set::from([0]));
        assert_eq!(d.arc_bound(), Some(4));
        // the all-flawed path s0 s0 … has probability 0.2^k
        assert!((d.bad_mass_matrix_power(3.0).unwrap() - 0.04).abs() < 1e-15);
        assert!(Dense::new(&star(8, 0.0)).reciprocal_support_criterion());
        assert!(!Dense::new(&star(2, 0.0)).reciprocal_support_criterion());
    }

    #[test]
    fn grouping_by_red_prefix() {
        let leaves = vec![(vec![0, 1], 0.25), (vec![0, 2], 0.25), (vec![0, 0], 0.5)];
        let h = grouped_prefix_entropy(&leaves, |s| s == 0);
        assert!((h - 1.0).abs() < 1e-15);
    }
}
