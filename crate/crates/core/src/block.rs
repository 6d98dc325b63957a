//! Collections `B_I` of dyadic intervals indexed by `I in D_{<=n}`, Jones'
//! compatibility conditions, and the block basis `b_I = sum_{K in B_I} theta_K h_K`.
//!
//! Unions `B_I` are held as bit sets of mesh cells of width `2^-(N+1)`, so
//! every measure in the compatibility check is an exact cell count.

use std::collections::HashMap;
use std::fmt;

use bitvec::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{dimension, Dyadic, DyadicInterval, IndexSet, MAX_VECTOR_LEVEL};
use crate::error::{Error, Result};
use crate::haar::HaarVector;

/// The collections `B_I`, `I in D_{<=n}`, with members in `D_{<=N}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockCollection {
    target: u32,
    host: u32,
    /// `members[I.index()]`.
    members: Vec<Vec<DyadicInterval>>,
}

fn check_host(host: u32) -> Result<()> {
    if host > MAX_VECTOR_LEVEL {
        return Err(Error::Capacity { level: host, limit: MAX_VECTOR_LEVEL });
    }
    Ok(())
}

impl BlockCollection {
    /// `members[i]` is the collection for `DyadicInterval::from_index(i)`.
    pub fn new(target: u32, host: u32, members: Vec<Vec<DyadicInterval>>) -> Result<Self> {
        check_host(host)?;
        if target > host {
            return Err(Error::InvalidParameter(format!(
                "target level {target} exceeds host level {host}"
            )));
        }
        if members.len() != dimension(target) {
            return Err(Error::DimensionMismatch(format!(
                "{} collections for target level {target} (expected {})",
                members.len(),
                dimension(target)
            )));
        }
        for (i, m) in members.iter().enumerate() {
            if let Some(k) = m.iter().find(|k| k.level() > host) {
                return Err(Error::InvalidParameter(format!(
                    "member {k} of B_{} lies below host level {host}",
                    DyadicInterval::from_index(i)
                )));
            }
        }
        Ok(Self { target, host, members })
    }

    /// Builds from `(I, K)` pairs; targets without members get an empty collection.
    pub fn from_pairs(target: u32, host: u32, pairs: &[(DyadicInterval, DyadicInterval)]) -> Result<Self> {
        let mut members = vec![Vec::new(); dimension(target)];
        for (i, k) in pairs {
            if i.level() > target {
                return Err(Error::InvalidParameter(format!(
                    "target {i} lies below level {target}"
                )));
            }
            members[i.index()].push(*k);
        }
        Self::new(target, host, members)
    }

    pub fn target_level(&self) -> u32 {
        self.target
    }

    pub fn host_level(&self) -> u32 {
        self.host
    }

    pub fn members(&self, i: DyadicInterval) -> &[DyadicInterval] {
        &self.members[i.index()]
    }

    /// `(I, B_I)` in level-major order of `I`.
    pub fn iter(&self) -> impl Iterator<Item = (DyadicInterval, &[DyadicInterval])> {
        self.members.iter().enumerate().map(|(i, m)| (DyadicInterval::from_index(i), m.as_slice()))
    }

    pub fn pairs(&self) -> Vec<(DyadicInterval, DyadicInterval)> {
        self.iter().flat_map(|(i, m)| m.iter().map(move |k| (i, *k))).collect()
    }

    /// Cells of `B_I` at mesh `N + 1`.
    pub fn union_cells(&self, i: DyadicInterval) -> BitVec {
        let mesh = self.host + 1;
        let mut cells = bitvec![0; 1 << mesh];
        for k in self.members(i) {
            cells[k.cell_range(mesh)].fill(true);
        }
        cells
    }

    /// `|B_I|`, exact. Overlapping members are counted once.
    pub fn union_measure(&self, i: DyadicInterval) -> Dyadic {
        let count = self.union_cells(i).count_ones();
        Dyadic::new(count as u64, -((self.host + 1) as i64))
    }

    /// `alpha = max |K|` over all members.
    pub fn alpha(&self) -> Result<Dyadic> {
        if let Some((i, _)) = self.iter().find(|(_, m)| m.is_empty()) {
            return Err(Error::EmptyCollection(i.label()));
        }
        let level = self.members.iter().flatten().map(|k| k.level()).min().expect("non-empty");
        Ok(Dyadic::pow2(-(level as i64)))
    }

    /// Every member interval, flattened.
    pub fn support(&self) -> Vec<DyadicInterval> {
        self.members.iter().flatten().copied().collect()
    }

    /// Condition (C1) as a hard requirement.
    pub fn require_disjoint(&self) -> Result<()> {
        let v = c1_violations(self);
        match v.first() {
            None => Ok(()),
            Some(v) => Err(Error::Compatibility(v.to_string())),
        }
    }
}

/// Gamlen-Gaudet collections: `B_[0,1) = D_m0`, and the collections of
/// `I+` and `I-` consist of the left and right halves of the members of `B_I`.
pub fn gamlen_gaudet(n: u32, m0: u32, host: u32) -> Result<BlockCollection> {
    check_host(host)?;
    if m0 + n > host {
        return Err(Error::InvalidParameter(format!(
            "m0 + n = {} exceeds host level {host}",
            m0 + n
        )));
    }
    let mut members: Vec<Vec<DyadicInterval>> = vec![Vec::new(); dimension(n)];
    members[0] = IndexSet::level_iter(m0).collect();
    for idx in 0..dimension(n) {
        let i = DyadicInterval::from_index(idx);
        if i.level() >= n {
            break;
        }
        let (ip, im) = i.children()?;
        let (plus, minus): (Vec<_>, Vec<_>) =
            members[idx].iter().map(|k| k.children().expect("level checked")).unzip();
        members[ip.index()] = plus;
        members[im.index()] = minus;
    }
    BlockCollection::new(n, host, members)
}

/// One of Jones' four conditions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    C1,
    C2,
    C3,
    C4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: Condition,
    /// Indices involved: `[I]`, `[I, I']`, or `[I0, I, K]`.
    pub intervals: Vec<DyadicInterval>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.intervals.iter().map(|i| i.label()).collect();
        write!(f, "{:?} [{}]: {}", self.condition, ids.join(", "), self.detail)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JonesReport {
    pub kappa: f64,
    pub violations: Vec<Violation>,
    pub triples_checked: usize,
    /// (C4) holds with equality at `kappa = 1` for every triple.
    pub c4_equality: bool,
    pub passed: bool,
}

impl JonesReport {
    pub fn count(&self, c: Condition) -> usize {
        self.violations.iter().filter(|v| v.condition == c).count()
    }
}

fn c1_violations(c: &BlockCollection) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut owner: HashMap<DyadicInterval, DyadicInterval> = HashMap::new();
    for (i, m) in c.iter() {
        let mut sorted = m.to_vec();
        sorted.sort_by(|a, b| a.start().cmp(&b.start()).then(a.level().cmp(&b.level())));
        for w in sorted.windows(2) {
            if w[1].start() < w[0].end() {
                out.push(Violation {
                    condition: Condition::C1,
                    intervals: vec![i, w[0], w[1]],
                    detail: format!("members {} and {} of B_{i} overlap", w[0], w[1]),
                });
            }
        }
        for k in m {
            if let Some(prev) = owner.insert(*k, i) {
                if prev != i {
                    out.push(Violation {
                        condition: Condition::C1,
                        intervals: vec![prev, i, *k],
                        detail: format!("{k} belongs to both B_{prev} and B_{i}"),
                    });
                }
            }
        }
    }
    out
}

/// Checks (C1)-(C4) with exact cell counts; `kappa >= 1` is compared
/// exactly after conversion to a dyadic rational.
pub fn jones_check(c: &BlockCollection, kappa: f64) -> Result<JonesReport> {
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::InvalidParameter(format!("kappa must be >= 1 (got {kappa})")));
    }
    let k_exact = Dyadic::from_f64(kappa)?;
    let mesh = c.host + 1;
    let n = c.target;
    let cells: Vec<BitVec> = (0..dimension(n)).map(|i| c.union_cells(DyadicInterval::from_index(i))).collect();
    let counts: Vec<u64> = cells.iter().map(|b| b.count_ones() as u64).collect();
    let mut violations = c1_violations(c);

    // (C2)
    for idx in 0..dimension(n) {
        let i = DyadicInterval::from_index(idx);
        if i.level() >= n {
            continue;
        }
        let (ip, im) = i.children()?;
        let (bp, bm) = (&cells[ip.index()], &cells[im.index()]);
        let outside = (bp.clone() | bm.clone()) & !cells[idx].clone();
        if outside.any() {
            violations.push(Violation {
                condition: Condition::C2,
                intervals: vec![i],
                detail: format!("B_{ip} u B_{im} is not contained in B_{i}"),
            });
        }
        if (bp.clone() & bm.clone()).any() {
            violations.push(Violation {
                condition: Condition::C2,
                intervals: vec![i],
                detail: format!("B_{ip} and B_{im} intersect"),
            });
        }
    }

    // (C3): |I| <= kappa |B_I| and |B_I| <= kappa |I|, in cells.
    for idx in 0..dimension(n) {
        let i = DyadicInterval::from_index(idx);
        let b = Dyadic::from_int(counts[idx]);
        let ii = Dyadic::pow2((mesh - i.level()) as i64);
        if &k_exact * &b < ii || &k_exact * &ii < b {
            violations.push(Violation {
                condition: Condition::C3,
                intervals: vec![i],
                detail: format!(
                    "|B_{i}| = {} against |{i}| = {}",
                    Dyadic::new(counts[idx], -(mesh as i64)),
                    i.measure()
                ),
            });
        }
    }

    // (C4): kappa |K n B_I0| |B_I| >= |K| |B_I0| for I0 in I, K in B_I.
    let per_i: Vec<(Vec<Violation>, usize, bool)> = (0..dimension(n))
        .into_par_iter()
        .map(|idx| {
            let i = DyadicInterval::from_index(idx);
            let mut v = Vec::new();
            let mut checked = 0;
            let mut equal = true;
            for idx0 in 0..dimension(n) {
                let i0 = DyadicInterval::from_index(idx0);
                if !i.contains(&i0) {
                    continue;
                }
                for k in c.members(i) {
                    checked += 1;
                    let inter = cells[idx0][k.cell_range(mesh)].count_ones() as u128;
                    let kc = k.cell_range(mesh).len() as u128;
                    let lhs = Dyadic::from_int(inter * counts[idx] as u128);
                    let rhs = Dyadic::from_int(kc * counts[idx0] as u128);
                    if lhs != rhs {
                        equal = false;
                    }
                    if &k_exact * &lhs < rhs {
                        v.push(Violation {
                            condition: Condition::C4,
                            intervals: vec![i0, i, *k],
                            detail: format!(
                                "|K n B_I0| |B_I| = {} < |K| |B_I0| / kappa (cells, kappa = {kappa})",
                                inter * counts[idx] as u128
                            ),
                        });
                    }
                }
            }
            (v, checked, equal)
        })
        .collect();
    let mut triples_checked = 0;
    let mut c4_equality = kappa == 1.0;
    for (v, checked, equal) in per_i {
        violations.extend(v);
        triples_checked += checked;
        c4_equality &= equal;
    }
    Ok(JonesReport { kappa, passed: violations.is_empty(), violations, triples_checked, c4_equality })
}

/// Signs `theta_K`, `K in D_{<=N}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignAssignment {
    level: u32,
    signs: Vec<i8>,
    pub seed: Option<u64>,
}

impl SignAssignment {
    pub fn all_plus(level: u32) -> Result<Self> {
        check_host(level)?;
        Ok(Self { level, signs: vec![1; dimension(level)], seed: None })
    }

    pub fn from_signs(level: u32, signs: Vec<i8>) -> Result<Self> {
        check_host(level)?;
        if signs.len() != dimension(level) {
            return Err(Error::DimensionMismatch(format!(
                "{} signs for level {level}",
                signs.len()
            )));
        }
        if let Some(s) = signs.iter().find(|s| s.abs() != 1) {
            return Err(Error::InvalidParameter(format!("sign {s} is not +-1")));
        }
        Ok(Self { level, signs, seed: None })
    }

    /// Uniform signs from a seeded ChaCha8 stream.
    pub fn random(level: u32, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self { seed: Some(seed), ..Self::sample(level, &mut rng)? })
    }

    pub fn sample<R: Rng + ?Sized>(level: u32, rng: &mut R) -> Result<Self> {
        check_host(level)?;
        let signs = (0..dimension(level)).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        Ok(Self { level, signs, seed: None })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn get(&self, k: DyadicInterval) -> i8 {
        self.signs[k.index()]
    }

    pub fn set(&mut self, k: DyadicInterval, sign: i8) -> Result<()> {
        if sign.abs() != 1 {
            return Err(Error::InvalidParameter(format!("sign {sign} is not +-1")));
        }
        if k.level() > self.level {
            return Err(Error::InvalidParameter(format!("{k} lies below level {}", self.level)));
        }
        self.signs[k.index()] = sign;
        Ok(())
    }

    pub fn flip(&mut self, k: DyadicInterval) {
        self.signs[k.index()] = -self.signs[k.index()];
    }
}

/// The block vectors `b_I`, indexed by `I.index()`, at the host level.
pub fn synthesize(c: &BlockCollection, theta: &SignAssignment) -> Result<Vec<HaarVector>> {
    c.require_disjoint()?;
    if theta.level < c.host {
        return Err(Error::DimensionMismatch(format!(
            "signs at level {} for host level {}",
            theta.level, c.host
        )));
    }
    c.iter()
        .map(|(_, m)| {
            let mut v = HaarVector::zeros(c.host)?;
            for k in m {
                v.set(*k, f64::from(theta.get(*k)))?;
            }
            Ok(v)
        })
        .collect()
}

/// `alpha = max |K|` over every collection.
pub fn alpha(c: &BlockCollection) -> Result<Dyadic> {
    c.alpha()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::pairing;
    use crate::norms::{block_norm_closed_form, norm_hp, norm_slinf, SpaceTag};

    fn iv(l: u32, k: u64) -> DyadicInterval {
        DyadicInterval::new(l, k).unwrap()
    }

    #[test]
    fn gamlen_gaudet_examples() {
        let c = gamlen_gaudet(0, 0, 0).unwrap();
        assert_eq!(c.members(iv(0, 0)), &[iv(0, 0)]);

        let c = gamlen_gaudet(1, 2, 3).unwrap();
        assert_eq!(c.members(iv(0, 0)), &[iv(2, 0), iv(2, 1), iv(2, 2), iv(2, 3)]);
        assert_eq!(c.members(iv(1, 0)), &[iv(3, 0), iv(3, 2), iv(3, 4), iv(3, 6)]);
        assert_eq!(c.members(iv(1, 1)), &[iv(3, 1), iv(3, 3), iv(3, 5), iv(3, 7)]);
        assert_eq!(c.union_measure(iv(1, 0)), Dyadic::new(1, -1));
        assert_eq!(c.alpha().unwrap(), Dyadic::new(1, -2));

        assert!(gamlen_gaudet(2, 3, 4).is_err());
        assert_eq!(gamlen_gaudet(0, 5, 5).unwrap().alpha().unwrap(), Dyadic::pow2(-5));
    }

    #[test]
    fn gamlen_gaudet_bookkeeping() {
        for n in 0..=4 {
            for m0 in 0..=5 {
                let c = gamlen_gaudet(n, m0, n + m0).unwrap();
                for (i, m) in c.iter() {
                    assert_eq!(m.len(), 1 << m0);
                    assert!(m.iter().all(|k| k.level() == m0 + i.level()));
                    assert_eq!(c.union_measure(i), i.measure());
                }
            }
        }
    }

    #[test]
    fn gamlen_gaudet_passes_jones_with_equality() {
        for n in 0..=4 {
            for m0 in 0..=5 {
                let c = gamlen_gaudet(n, m0, n + m0 + 1).unwrap();
                let r = jones_check(&c, 1.0).unwrap();
                assert!(r.passed, "n={n} m0={m0}: {:?}", r.violations.first());
                assert!(r.c4_equality, "n={n} m0={m0}");
                assert!(r.triples_checked > 0);
            }
        }
    }

    #[test]
    fn jones_counterexamples() {
        // B_{I+} escapes B_I.
        let c = BlockCollection::new(
            1,
            3,
            vec![vec![iv(2, 0), iv(2, 1)], vec![iv(3, 0)], vec![iv(2, 3)]],
        )
        .unwrap();
        let r = jones_check(&c, 1.0).unwrap();
        assert!(r.count(Condition::C2) >= 1);
        assert!(!r.passed);

        // |B_[0,1)| = 1/2.
        let c = BlockCollection::new(0, 2, vec![vec![iv(1, 0)]]).unwrap();
        let r = jones_check(&c, 1.0).unwrap();
        assert_eq!(r.count(Condition::C3), 1);
        assert!(jones_check(&c, 2.0).unwrap().passed);

        // Shared member.
        let c = BlockCollection::new(1, 2, vec![vec![iv(1, 0), iv(1, 1)], vec![iv(1, 0)], vec![iv(2, 3)]]).unwrap();
        assert!(jones_check(&c, 1.0).unwrap().count(Condition::C1) >= 1);

        // Overlapping members.
        let c = BlockCollection::new(0, 2, vec![vec![iv(1, 0), iv(2, 1), iv(1, 1)]]).unwrap();
        assert!(jones_check(&c, 1.0).unwrap().count(Condition::C1) >= 1);
        assert!(synthesize(&c, &SignAssignment::all_plus(2).unwrap()).is_err());

        assert!(jones_check(&gamlen_gaudet(1, 1, 2).unwrap(), 0.5).is_err());
    }

    #[test]
    fn c4_violation_detected() {
        // B_[0,1) = {[0,1/2), [1/2,1)}; B_[0,1/2) packs into the left half
        // only: (C2), (C3) hold but K = [1/2,1) misses B_I0 entirely.
        let c = BlockCollection::new(
            1,
            3,
            vec![vec![iv(1, 0), iv(1, 1)], vec![iv(2, 0), iv(2, 1)], vec![iv(2, 2), iv(2, 3)]],
        )
        .unwrap();
        let r = jones_check(&c, 1.0).unwrap();
        assert_eq!(r.count(Condition::C1), 0);
        assert_eq!(r.count(Condition::C2), 0);
        assert_eq!(r.count(Condition::C3), 0);
        assert!(r.count(Condition::C4) >= 1);
        assert!(!r.c4_equality);
    }

    #[test]
    fn synthesize_examples() {
        let c = BlockCollection::new(0, 0, vec![vec![iv(0, 0)]]).unwrap();
        let b = synthesize(&c, &SignAssignment::all_plus(0).unwrap()).unwrap();
        assert_eq!(b[0], HaarVector::haar(iv(0, 0), 0).unwrap());

        let c = BlockCollection::new(0, 1, vec![vec![iv(1, 0), iv(1, 1)]]).unwrap();
        let theta = SignAssignment::from_signs(1, vec![1, 1, -1]).unwrap();
        let b = synthesize(&c, &theta).unwrap();
        assert_eq!(b[0].coeffs(), &[0.0, 1.0, -1.0]);
        assert_eq!(norm_slinf(&b[0]), 1.0);
        assert_eq!(b[0].l2_norm_squared(), 1.0);
    }

    #[test]
    fn block_vectors_orthogonal_and_lemma_norms() {
        let c = gamlen_gaudet(2, 3, 6).unwrap();
        for seed in 0..4 {
            let theta = SignAssignment::random(6, seed).unwrap();
            let b = synthesize(&c, &theta).unwrap();
            for (i, bi) in b.iter().enumerate() {
                let ii = DyadicInterval::from_index(i);
                let m = c.members(ii);
                assert_eq!(bi.l2_norm_squared(), c.union_measure(ii).to_f64());
                for p in [1.0, 1.5, 2.0, 4.0] {
                    let closed = block_norm_closed_form(m, SpaceTag::Hp { p }).unwrap();
                    assert!((norm_hp(bi, p).unwrap() - closed).abs() < 1e-12);
                }
                assert_eq!(norm_slinf(bi), 1.0);
                for (j, bj) in b.iter().enumerate() {
                    if i != j {
                        assert_eq!(pairing(bi, bj), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn signs_validate() {
        assert!(SignAssignment::from_signs(1, vec![1, 0, 1]).is_err());
        assert!(SignAssignment::from_signs(1, vec![1, 1]).is_err());
        let a = SignAssignment::random(5, 3).unwrap();
        assert_eq!(a, SignAssignment::random(5, 3).unwrap());
        assert!(a.signs().iter().all(|s| s.abs() == 1));
        let mut b = a.clone();
        b.flip(iv(2, 1));
        assert_eq!(b.get(iv(2, 1)), -a.get(iv(2, 1)));
    }
}
