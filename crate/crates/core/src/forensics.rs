//! Witness sequences, break sequences, witness reconstruction and the
//! prefix code for `(B₀*, L)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FlawId, FlawSet, Instance, Priority};
use crate::simulator::Trajectory;

/// `w_1 … w_Z`: the flaws addressed along the bad prefix.
pub fn witness(traj: &Trajectory) -> Vec<FlawId> {
    traj.records[..traj.z]
        .iter()
        .map(|r| r.addressed.expect("bad prefix states are flawed"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakSequence {
    pub z: usize,
    /// `B_0 … B_{Z-1}` (just `B_0` when `Z = 0`).
    pub b: Vec<FlawSet>,
    /// Introduced, then gone before being addressed.
    pub o: Vec<FlawSet>,
    /// Introduced and still present, unaddressed, through the horizon.
    pub n: Vec<FlawSet>,
    pub b_star: Vec<FlawSet>,
}

impl BreakSequence {
    /// `L = |B₀*|, |B₁*|, …, |B_Z*|` with `|B_Z*| = 0`.
    pub fn lengths(&self) -> Vec<usize> {
        let mut l: Vec<usize> = self.b_star.iter().map(FlawSet::len).collect();
        if self.z > 0 {
            l.push(0);
        }
        l
    }

    pub fn b0_star(&self) -> &FlawSet {
        &self.b_star[0]
    }
}

/// Break sets of a bad prefix given `U(σ_1) … U(σ_{Z+1})` and `w_1 … w_Z`.
pub fn break_sets_from(present: &[FlawSet], witness: &[FlawId]) -> Result<BreakSequence> {
    let z = witness.len();
    if present.len() != z + 1 {
        return Err(Error::MalformedBreakSequence(format!(
            "{} flaw sets for a prefix of {z} steps",
            present.len()
        )));
    }
    let count = z.max(1);
    let mut b = Vec::with_capacity(count);
    b.push(present[0].clone());
    for i in 1..z {
        // B_i = U(σ_{i+1}) \ (U(σ_i) \ {w_i})
        let mut kept = present[i - 1].clone();
        kept.remove(&witness[i - 1]);
        b.push(present[i].difference(&kept).copied().collect());
    }
    let (mut o, mut n, mut b_star) = (Vec::new(), Vec::new(), Vec::new());
    for (i, bi) in b.iter().enumerate() {
        let (mut oi, mut ni, mut si) = (FlawSet::new(), FlawSet::new(), FlawSet::new());
        'flaw: for &f in bi {
            for j in i + 1..=z {
                if witness[j - 1] == f {
                    si.insert(f);
                    continue 'flaw;
                }
                if !present[j].contains(&f) {
                    oi.insert(f);
                    continue 'flaw;
                }
            }
            ni.insert(f);
        }
        o.push(oi);
        n.push(ni);
        b_star.push(si);
    }
    Ok(BreakSequence { z, b, o, n, b_star })
}

/// Break sequence of a simulated trajectory, with horizon `t = Z`.
pub fn break_sets(inst: &Instance, traj: &Trajectory) -> Result<BreakSequence> {
    let present: Vec<FlawSet> = traj
        .bad_prefix()
        .iter()
        .map(|r| inst.present_flaws(r.state))
        .collect();
    break_sets_from(&present, &witness(traj))
}

/// One step of the `E` recurrence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayStep {
    pub e: FlawSet,
    pub w: FlawId,
}

/// `E_1 = B₀*`, `E_{i+1} = (E_i − w_i) ∪ B_i*`, `w_i = highest flaw in E_i`.
pub fn replay(b_star: &[FlawSet], priority: &Priority) -> Result<Vec<ReplayStep>> {
    let z: usize = b_star.iter().map(FlawSet::len).sum();
    let mut e = b_star.first().cloned().unwrap_or_default();
    let mut out = Vec::with_capacity(z);
    for i in 1..=z {
        let w = priority.highest(&e).ok_or_else(|| {
            Error::MalformedBreakSequence(format!("E_{i} is empty before step {z}"))
        })?;
        out.push(ReplayStep { e: e.clone(), w });
        e.remove(&w);
        if let Some(bi) = b_star.get(i) {
            e.extend(bi.iter().copied());
        }
    }
    if b_star.len() > z + 1 && b_star[z + 1..].iter().any(|s| !s.is_empty()) {
        return Err(Error::MalformedBreakSequence(
            "flaws introduced after the last step".into(),
        ));
    }
    Ok(out)
}

/// Recovers the witness sequence from `B₀*, B₁*, …`.
pub fn reconstruct_witness(b_star: &[FlawSet], priority: &Priority) -> Result<Vec<FlawId>> {
    Ok(replay(b_star, priority)?.into_iter().map(|s| s.w).collect())
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CodeError {
    #[error("trailing data: code ends at bit {end} of {len}")]
    TrailingData { end: usize, len: usize },
    #[error("bit string exhausted before the code terminated")]
    Exhausted,
    #[error("flaw {flaw} is outside 0..{m}")]
    FlawOutOfRange { flaw: FlawId, m: usize },
    #[error("L is empty")]
    EmptyLengths,
    #[error("L[0] = {l0} but B0* has {b0} flaws")]
    B0Mismatch { l0: usize, b0: usize },
    #[error("inconsistent L: prefix sum minus index is {value} at j = {j}")]
    PrefixSum { j: usize, value: i64 },
    #[error("byte buffer is malformed")]
    BadBuffer,
    #[error("invalid binary digit {0:?}")]
    BadDigit(char),
}

/// Bit string stored most-significant-bit first.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitString {
    len: usize,
    bytes: Vec<u8>,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            self.bytes[self.len / 8] |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    pub fn get(&self, i: usize) -> Option<bool> {
        (i < self.len).then(|| self.bytes[i / 8] & (0x80 >> (i % 8)) != 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i).unwrap())
    }

    pub fn to_binary(&self) -> String {
        self.iter().map(|b| if b { '1' } else { '0' }).collect()
    }

    /// Hex of the packed bytes; the final byte is zero-padded.
    pub fn to_hex(&self) -> String {
        hex::encode(&self.bytes)
    }

    pub fn from_binary(s: &str) -> Result<Self, CodeError> {
        let mut out = Self::new();
        for c in s.chars() {
            match c {
                '0' => out.push(false),
                '1' => out.push(true),
                other => return Err(CodeError::BadDigit(other)),
            }
        }
        Ok(out)
    }

    /// Big-endian `u64` bit length followed by the packed bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = (self.len as u64).to_be_bytes().to_vec();
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodeError> {
        let (head, body) = buf.split_at_checked(8).ok_or(CodeError::BadBuffer)?;
        let len = u64::from_be_bytes(head.try_into().unwrap()) as usize;
        if body.len() != len.div_ceil(8) {
            return Err(CodeError::BadBuffer);
        }
        let s = Self {
            len,
            bytes: body.to_vec(),
        };
        // padding bits must be zero
        if !len.is_multiple_of(8) && s.bytes[len / 8] & (0xff >> (len % 8)) != 0 {
            return Err(CodeError::BadBuffer);
        }
        Ok(s)
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({})", self.to_binary())
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_binary())
    }
}

impl Serialize for BitString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("BitString", 3)?;
        st.serialize_field("len", &self.len)?;
        st.serialize_field("hex", &self.to_hex())?;
        st.serialize_field("binary", &self.to_binary())?;
        st.end()
    }
}

fn check_lengths(b0: usize, l: &[usize]) -> Result<(), CodeError> {
    let Some(&l0) = l.first() else {
        return Err(CodeError::EmptyLengths);
    };
    if l0 != b0 {
        return Err(CodeError::B0Mismatch { l0, b0 });
    }
    let last = l.len() - 1;
    let mut acc: i64 = 0;
    for (j, &lj) in l.iter().enumerate() {
        acc += lj as i64;
        let value = acc - j as i64;
        let ok = if j == last { value == 0 } else { value > 0 };
        if !ok {
            return Err(CodeError::PrefixSum { j, value });
        }
    }
    Ok(())
}

/// `m` bits for the characteristic vector of `B₀*`, then `1^{L_i} 0` for
/// `i = 1 … Z`. The result has exactly `m + 2Z − |B₀*|` bits.
pub fn encode(b0_star: &FlawSet, l: &[usize], m: usize) -> Result<BitString, CodeError> {
    if let Some(&flaw) = b0_star.iter().find(|&&f| f >= m) {
        return Err(CodeError::FlawOutOfRange { flaw, m });
    }
    check_lengths(b0_star.len(), l)?;
    let mut out = BitString::new();
    for f in 0..m {
        out.push(b0_star.contains(&f));
    }
    for &li in &l[1..] {
        for _ in 0..li {
            out.push(true);
        }
        out.push(false);
    }
    Ok(out)
}

/// Inverse of [`encode`]. Stops at the first `j` where
/// `|B₀*| + Σ_{i≤j} L_i − j = 0`; any bits left over are an error.
pub fn decode(bits: &BitString, m: usize) -> Result<(FlawSet, Vec<usize>), CodeError> {
    if bits.len() < m {
        return Err(CodeError::Exhausted);
    }
    let b0: FlawSet = (0..m).filter(|&f| bits.get(f) == Some(true)).collect();
    let mut l = vec![b0.len()];
    let mut pos = m;
    let mut acc = b0.len() as i64;
    let mut j = 0i64;
    while acc - j != 0 {
        let mut run = 0;
        loop {
            match bits.get(pos) {
                None => return Err(CodeError::Exhausted),
                Some(bit) => {
                    pos += 1;
                    if !bit {
                        break;
                    }
                    run += 1;
                }
            }
        }
        l.push(run);
        acc += run as i64;
        j += 1;
    }
    if pos != bits.len() {
        return Err(CodeError::TrailingData {
            end: pos,
            len: bits.len(),
        });
    }
    Ok((b0, l))
}

/// Encodes a break sequence for `m` flaws.
pub fn encode_sequence(seq: &BreakSequence, m: usize) -> Result<BitString, CodeError> {
    encode(seq.b0_star(), &seq.lengths(), m)
}

/// Everything forensics reports about one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForensicsReport {
    pub witness: Vec<FlawId>,
    pub sequence: BreakSequence,
    pub lengths: Vec<usize>,
    pub code: BitString,
    pub expected_len: usize,
    pub reconstructed: Vec<FlawId>,
    pub round_trip: bool,
    pub reconstruction_ok: bool,
}

pub fn analyze_trajectory(inst: &Instance, traj: &Trajectory) -> Result<ForensicsReport> {
    let witness = witness(traj);
    let sequence = break_sets(inst, traj)?;
    let m = inst.num_flaws();
    let lengths = sequence.lengths();
    let code = encode_sequence(&sequence, m)?;
    let decoded = decode(&code, m)?;
    let reconstructed = reconstruct_witness(&sequence.b_star, inst.priority())?;
    Ok(ForensicsReport {
        expected_len: m + 2 * sequence.z - sequence.b0_star().len(),
        round_trip: decoded.0 == *sequence.b0_star() && decoded.1 == lengths,
        reconstruction_ok: reconstructed == witness,
        witness,
        lengths,
        code,
        reconstructed,
        sequence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{attach_noise, gen_coloring, gen_star, GenConfig, NoiseModel};
    use crate::simulator::{run, RunConfig};
    use proptest::prelude::*;

    fn set(v: &[FlawId]) -> FlawSet {
        v.iter().copied().collect()
    }

    #[test]
    fn star_break_sets() {
        let star: Instance = gen_star(8).unwrap().into();
        let t = run(&star, &RunConfig::new(0, 10)).unwrap();
        assert_eq!(witness(&t), vec![0]);
        let seq = break_sets(&star, &t).unwrap();
        assert_eq!(seq.b, vec![set(&[0])]);
        assert_eq!(seq.b_star, vec![set(&[0])]);
        assert_eq!(seq.lengths(), vec![1, 0]);
    }

    #[test]
    fn self_introduction_under_noise() {
        // s0 -> s0 (noise) -> s3
        let present = vec![set(&[0]), set(&[0]), set(&[])];
        let seq = break_sets_from(&present, &[0, 0]).unwrap();
        assert_eq!(seq.b, vec![set(&[0]), set(&[0])]);
        assert_eq!(seq.b_star, vec![set(&[0]), set(&[0])]);
        assert_eq!(seq.lengths(), vec![1, 1, 0]);
    }

    #[test]
    fn collateral_and_persistent_flaws() {
        // f1 introduced at step 1 and gone at step 2 without being addressed
        let present = vec![set(&[0]), set(&[0, 1]), set(&[0]), set(&[])];
        let seq = break_sets_from(&present, &[0, 0, 0]).unwrap();
        assert_eq!(seq.o[1], set(&[1]));
        assert!(seq.b_star[1].is_empty() || seq.b_star[1] == set(&[0]));
        assert!(!seq.b_star[1].contains(&1));

        // censored prefix: flaw 1 stays present and is never addressed
        let present = vec![set(&[0]), set(&[0, 1]), set(&[0, 1])];
        let seq = break_sets_from(&present, &[0, 0]).unwrap();
        assert_eq!(seq.n[1], set(&[1]));
        assert_eq!(seq.b_star[1], set(&[0]));
    }

    #[test]
    fn reconstruction_examples() {
        let p = Priority::identity(3);
        let w = reconstruct_witness(&[set(&[0, 1]), set(&[2]), set(&[])], &p).unwrap();
        assert_eq!(w, vec![0, 1, 2]);
        assert_eq!(reconstruct_witness(&[set(&[0])], &p).unwrap(), vec![0]);
        assert!(reconstruct_witness(&[set(&[0]), set(&[]), set(&[1])], &p).is_err());
    }

    #[test]
    fn code_examples() {
        let c = encode(&set(&[0]), &[1, 1, 0], 3).unwrap();
        assert_eq!(c.to_binary(), "100100");
        assert_eq!(decode(&c, 3).unwrap(), (set(&[0]), vec![1, 1, 0]));

        let c = encode(&set(&[0]), &[1, 0], 1).unwrap();
        assert_eq!(c.to_binary(), "10");
        assert_eq!(decode(&c, 1).unwrap(), (set(&[0]), vec![1, 0]));

        let bad = BitString::from_binary("1010").unwrap();
        assert!(matches!(
            decode(&bad, 1),
            Err(CodeError::TrailingData { .. })
        ));
        assert!(decode(&BitString::from_binary("11").unwrap(), 1).is_err());

        assert!(encode(&set(&[]), &[0, 1, 0], 2).is_err());
        assert_eq!(encode(&set(&[]), &[0], 3).unwrap().to_binary(), "000");
        assert_eq!(
            decode(&BitString::from_binary("000").unwrap(), 3)
                .unwrap()
                .1,
            vec![0]
        );
        assert!(encode(&set(&[0]), &[1, 0, 0], 1).is_err());
    }

    #[test]
    fn byte_buffer_roundtrip() {
        let c = BitString::from_binary("1001001").unwrap();
        assert_eq!(c.to_hex(), "92");
        let back = BitString::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        let mut bytes = c.to_bytes();
        bytes[8] |= 1;
        assert!(BitString::from_bytes(&bytes).is_err());
    }

    #[test]
    fn simulated_trajectories_reconstruct() {
        let tri = gen_coloring(3, &[(0, 1), (1, 2), (0, 2)], 3, &GenConfig::default()).unwrap();
        let noisy: Instance =
            attach_noise(&gen_star(8).unwrap(), &NoiseModel::Point { target: 0 }, 0.4)
                .unwrap()
                .into();
        for inst in [&tri, &noisy] {
            for seed in 0..200 {
                let t = run(inst, &RunConfig::new(seed, 50)).unwrap();
                let r = analyze_trajectory(inst, &t).unwrap();
                assert!(r.round_trip && r.reconstruction_ok);
                assert_eq!(r.code.len(), r.expected_len);
                let first = t.records[0];
                if inst.num_flaws() == 3 && first.state == 0 {
                    assert_eq!(r.witness.first(), Some(&0));
                }
            }
        }
    }

    fn consistent_lengths() -> impl Strategy<Value = (usize, FlawSet, Vec<usize>)> {
        (1usize..8).prop_flat_map(|m| {
            (
                Just(m),
                proptest::collection::btree_set(0..m, 1..=m),
                proptest::collection::vec(0usize..4, 0..20),
            )
                .prop_map(|(m, b0, raw)| {
                    // clip the raw tail so the running balance stays positive
                    let mut l = vec![b0.len()];
                    let mut bal = b0.len() as i64;
                    for r in raw {
                        if bal == 1 {
                            break;
                        }
                        l.push(r);
                        bal += r as i64 - 1;
                    }
                    while bal > 0 {
                        l.push(0);
                        bal -= 1;
                    }
                    (m, b0, l)
                })
        })
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip((m, b0, l) in consistent_lengths()) {
            let z = l.len() - 1;
            let c = encode(&b0, &l, m).unwrap();
            prop_assert_eq!(c.len(), m + 2 * z - b0.len());
            prop_assert_eq!(decode(&c, m).unwrap(), (b0, l));
            prop_assert_eq!(BitString::from_bytes(&c.to_bytes()).unwrap(), c);
        }
    }
}
