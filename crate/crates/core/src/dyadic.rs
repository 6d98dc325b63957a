//! Dyadic intervals of `[0, 1)`, their level-major enumeration, and exact
//! dyadic rational arithmetic.
//!
//! An interval is stored as `(level, position)` and stands for
//! `[k 2^-l, (k + 1) 2^-l)`. Its measure `2^-l` and every quantity derived
//! from finite unions of such intervals is a [`Dyadic`] number, so set
//! bookkeeping never touches floating point.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Deepest level an interval may live on. Positions are `u64`, and the
/// children of a level-62 interval would no longer leave headroom for
/// cell arithmetic at one finer mesh.
pub const MAX_LEVEL: u32 = 62;

/// Largest resolution for which dense coefficient vectors are allocated.
pub const MAX_VECTOR_LEVEL: u32 = 20;

/// Largest resolution for which dense operator matrices are allocated.
pub const MAX_OPERATOR_LEVEL: u32 = 12;

/// An exact dyadic rational `mantissa * 2^exponent`.
///
/// The representation is canonical: the mantissa is odd, or zero with a zero
/// exponent, so structural equality is numeric equality.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Dyadic {
    mantissa: BigInt,
    exponent: i64,
}

impl Dyadic {
    pub fn zero() -> Self {
        Self { mantissa: BigInt::zero(), exponent: 0 }
    }

    pub fn one() -> Self {
        Self { mantissa: BigInt::one(), exponent: 0 }
    }

    pub fn new(mantissa: impl Into<BigInt>, exponent: i64) -> Self {
        let mut mantissa = mantissa.into();
        let mut exponent = exponent;
        if mantissa.is_zero() {
            return Self::zero();
        }
        let tz = mantissa.trailing_zeros().unwrap_or(0);
        if tz > 0 {
            mantissa >>= tz;
            exponent += tz as i64;
        }
        Self { mantissa, exponent }
    }

    /// `2^exponent`.
    pub fn pow2(exponent: i64) -> Self {
        Self { mantissa: BigInt::one(), exponent }
    }

    pub fn from_int(value: impl Into<BigInt>) -> Self {
        Self::new(value, 0)
    }

    /// Exact conversion; every finite `f64` is a dyadic rational.
    pub fn from_f64(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::InvalidParameter(format!("{value} is not finite")));
        }
        if value == 0.0 {
            return Ok(Self::zero());
        }
        let bits = value.to_bits();
        let sign = if bits >> 63 == 0 { 1i64 } else { -1 };
        let raw_exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = (bits & 0x000f_ffff_ffff_ffff) as i64;
        let (mantissa, exponent) = if raw_exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1 << 52), raw_exp - 1075)
        };
        Ok(Self::new(sign * mantissa, exponent))
    }

    pub fn mantissa(&self) -> &BigInt {
        &self.mantissa
    }

    pub fn exponent(&self) -> i64 {
        self.exponent
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.mantissa.is_negative()
    }

    pub fn abs(&self) -> Self {
        Self { mantissa: self.mantissa.abs(), exponent: self.exponent }
    }

    /// Multiplies by `2^shift`.
    pub fn shl(&self, shift: i64) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        Self { mantissa: self.mantissa.clone(), exponent: self.exponent + shift }
    }

    pub fn to_rational(&self) -> BigRational {
        let m = BigRational::from_integer(self.mantissa.clone());
        if self.exponent >= 0 {
            m * BigRational::from_integer(BigInt::one() << self.exponent as usize)
        } else {
            m / BigRational::from_integer(BigInt::one() << (-self.exponent) as usize)
        }
    }

    pub fn to_f64(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        if self.mantissa.bits() <= 53 && (-1022..=1023).contains(&self.exponent) {
            let m = self.mantissa.to_f64().unwrap_or(f64::NAN);
            return m * 2f64.powi(self.exponent as i32);
        }
        self.to_rational().to_f64().unwrap_or(f64::NAN)
    }

    /// Returns `Some(k)` when the value is exactly `2^k`.
    pub fn log2_exact(&self) -> Option<i64> {
        (self.mantissa == BigInt::one()).then_some(self.exponent)
    }

    fn aligned(&self, other: &Self) -> (BigInt, BigInt, i64) {
        let e = self.exponent.min(other.exponent);
        let a = &self.mantissa << (self.exponent - e) as usize;
        let b = &other.mantissa << (other.exponent - e) as usize;
        (a, b, e)
    }
}

impl Default for Dyadic {
    fn default() -> Self {
        Self::zero()
    }
}

impl Add for &Dyadic {
    type Output = Dyadic;
    fn add(self, rhs: &Dyadic) -> Dyadic {
        if self.is_zero() {
            return rhs.clone();
        }
        if rhs.is_zero() {
            return self.clone();
        }
        let (a, b, e) = self.aligned(rhs);
        Dyadic::new(a + b, e)
    }
}

impl Add for Dyadic {
    type Output = Dyadic;
    fn add(self, rhs: Dyadic) -> Dyadic {
        &self + &rhs
    }
}

impl Sub for &Dyadic {
    type Output = Dyadic;
    fn sub(self, rhs: &Dyadic) -> Dyadic {
        self + &(-rhs)
    }
}

impl Sub for Dyadic {
    type Output = Dyadic;
    fn sub(self, rhs: Dyadic) -> Dyadic {
        &self - &rhs
    }
}

impl Mul for &Dyadic {
    type Output = Dyadic;
    fn mul(self, rhs: &Dyadic) -> Dyadic {
        Dyadic::new(&self.mantissa * &rhs.mantissa, self.exponent + rhs.exponent)
    }
}

impl Mul for Dyadic {
    type Output = Dyadic;
    fn mul(self, rhs: Dyadic) -> Dyadic {
        &self * &rhs
    }
}

impl Neg for &Dyadic {
    type Output = Dyadic;
    fn neg(self) -> Dyadic {
        Dyadic { mantissa: -&self.mantissa, exponent: self.exponent }
    }
}

impl Neg for Dyadic {
    type Output = Dyadic;
    fn neg(self) -> Dyadic {
        -&self
    }
}

impl std::iter::Sum for Dyadic {
    fn sum<I: Iterator<Item = Dyadic>>(iter: I) -> Dyadic {
        iter.fold(Dyadic::zero(), |acc, x| &acc + &x)
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b, _) = self.aligned(other);
        a.cmp(&b)
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exponent >= 0 {
            write!(f, "{}", &self.mantissa << self.exponent as usize)
        } else {
            write!(f, "{}/2^{}", self.mantissa, -self.exponent)
        }
    }
}

impl Serialize for Dyadic {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl FromStr for Dyadic {
    type Err = Error;

    /// Parses the `Display` forms `m` and `m/2^e`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse { line: 0, message: format!("bad dyadic number `{s}`") };
        let (m, e) = match s.trim().split_once("/2^") {
            Some((m, e)) => (m, -e.trim().parse::<i64>().map_err(|_| bad())?),
            None => (s.trim(), 0),
        };
        let mantissa: BigInt = m.trim().parse().map_err(|_| bad())?;
        Ok(Self::new(mantissa, e))
    }
}

impl<'de> Deserialize<'de> for Dyadic {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Smallest `k` with `2^k > value`, for a positive rational.
pub fn smallest_pow2_exceeding(value: &BigRational) -> i64 {
    let mut k = floor_log2(value);
    while pow2_rational(k) <= *value {
        k += 1;
    }
    k
}

/// `floor(log2(value))` for a positive rational, computed exactly.
pub fn floor_log2(value: &BigRational) -> i64 {
    assert!(value.is_positive(), "floor_log2 of a non-positive value");
    let num_bits = value.numer().bits() as i64;
    let den_bits = value.denom().bits() as i64;
    // The answer lies in {d - 1, d} with d = bits(num) - bits(den).
    let mut k = num_bits - den_bits;
    while pow2_rational(k) > *value {
        k -= 1;
    }
    while pow2_rational(k + 1) <= *value {
        k += 1;
    }
    k
}

pub fn pow2_rational(k: i64) -> BigRational {
    if k >= 0 {
        BigRational::from_integer(BigInt::one() << k as usize)
    } else {
        BigRational::new(BigInt::one(), BigInt::one() << (-k) as usize)
    }
}

/// The dyadic interval `[k 2^-l, (k + 1) 2^-l)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicInterval {
    level: u32,
    position: u64,
}

impl DyadicInterval {
    pub fn new(level: u32, position: u64) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(Error::LevelOverflow { level, max: MAX_LEVEL });
        }
        if position >> level != 0 {
            return Err(Error::InvalidPosition { level, position });
        }
        Ok(Self { level, position })
    }

    pub const fn root() -> Self {
        Self { level: 0, position: 0 }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    /// `2^-level`.
    pub fn measure(&self) -> Dyadic {
        Dyadic::pow2(-(self.level as i64))
    }

    pub fn measure_f64(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn start(&self) -> Dyadic {
        Dyadic::new(self.position, -(self.level as i64))
    }

    pub fn end(&self) -> Dyadic {
        Dyadic::new(self.position + 1, -(self.level as i64))
    }

    /// The halves `(I+, I-)`; `I+` is the left one.
    pub fn children(&self) -> Result<(Self, Self)> {
        if self.level >= MAX_LEVEL {
            return Err(Error::LevelOverflow { level: self.level + 1, max: MAX_LEVEL });
        }
        let level = self.level + 1;
        Ok((
            Self { level, position: 2 * self.position },
            Self { level, position: 2 * self.position + 1 },
        ))
    }

    pub fn left_child(&self) -> Result<Self> {
        self.children().map(|c| c.0)
    }

    pub fn right_child(&self) -> Result<Self> {
        self.children().map(|c| c.1)
    }

    pub fn parent(&self) -> Option<Self> {
        (self.level > 0).then(|| Self { level: self.level - 1, position: self.position >> 1 })
    }

    /// Whether `other` is a subset of `self`.
    pub fn contains(&self, other: &Self) -> bool {
        other.level >= self.level && other.position >> (other.level - self.level) == self.position
    }

    pub fn is_disjoint(&self, other: &Self) -> bool {
        !self.contains(other) && !other.contains(self)
    }

    /// The half-open range of cells at mesh `2^-mesh` covered by the interval.
    pub fn cell_range(&self, mesh: u32) -> std::ops::Range<usize> {
        debug_assert!(mesh >= self.level);
        let width = 1usize << (mesh - self.level);
        let start = self.position as usize * width;
        start..start + width
    }

    /// Index in the level-major ordering of `D_{<=N}` (independent of `N`).
    pub fn index(&self) -> usize {
        (1usize << self.level) - 1 + self.position as usize
    }

    pub fn from_index(index: usize) -> Self {
        let level = (usize::BITS - (index + 1).leading_zeros() - 1) as u32;
        Self { level, position: (index + 1 - (1usize << level)) as u64 }
    }

    /// The `"l:k"` label used in every file format.
    pub fn label(&self) -> String {
        format!("{}:{}", self.level, self.position)
    }
}

impl fmt::Display for DyadicInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.level, self.position)
    }
}

impl FromStr for DyadicInterval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse { line: 0, message: format!("bad interval label `{s}`") };
        let (l, k) = s.trim().split_once(':').ok_or_else(bad)?;
        let level: u32 = l.trim().parse().map_err(|_| bad())?;
        let position: u64 = k.trim().parse().map_err(|_| bad())?;
        Self::new(level, position)
    }
}

impl Serialize for DyadicInterval {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for DyadicInterval {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The intervals of `D_{<=N}` in level-major order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndexSet {
    level: u32,
}

impl IndexSet {
    pub fn new(level: u32) -> Result<Self> {
        if level > MAX_VECTOR_LEVEL {
            return Err(Error::Capacity { level, limit: MAX_VECTOR_LEVEL });
        }
        Ok(Self { level })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// `2^(N+1) - 1`.
    pub fn len(&self) -> usize {
        dimension(self.level)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, index: usize) -> Option<DyadicInterval> {
        (index < self.len()).then(|| DyadicInterval::from_index(index))
    }

    pub fn index_of(&self, interval: &DyadicInterval) -> Option<usize> {
        (interval.level <= self.level).then(|| interval.index())
    }

    pub fn iter(&self) -> impl Iterator<Item = DyadicInterval> + '_ {
        (0..self.len()).map(DyadicInterval::from_index)
    }

    /// Intervals of a single level.
    pub fn level_iter(level: u32) -> impl Iterator<Item = DyadicInterval> {
        (0..1u64 << level).map(move |position| DyadicInterval { level, position })
    }
}

/// `d_N = 2^(N+1) - 1`, the number of Haar functions up to level `N`.
pub fn dimension(level: u32) -> usize {
    (1usize << (level + 1)) - 1
}

/// Enumerates `D_{<=N}`.
pub fn enumerate(level: u32) -> Result<IndexSet> {
    IndexSet::new(level)
}

/// Exact measure of a finite union of pairwise disjoint intervals.
pub fn disjoint_union_measure(intervals: &[DyadicInterval]) -> Result<Dyadic> {
    check_pairwise_disjoint(intervals)?;
    Ok(intervals.iter().map(|i| i.measure()).sum())
}

/// Errors with the first overlapping pair, if any.
pub fn check_pairwise_disjoint(intervals: &[DyadicInterval]) -> Result<()> {
    let mut sorted: Vec<_> = intervals.to_vec();
    sorted.sort_by(|a, b| a.start().cmp(&b.start()).then(a.level.cmp(&b.level)));
    for w in sorted.windows(2) {
        if w[1].start() < w[0].end() {
            return Err(Error::NotDisjoint(w[0].label(), w[1].label()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(l: u32, k: u64) -> DyadicInterval {
        DyadicInterval::new(l, k).unwrap()
    }

    #[test]
    fn children_of_root_and_right_half() {
        let (p, m) = DyadicInterval::root().children().unwrap();
        assert_eq!((p, m), (iv(1, 0), iv(1, 1)));
        assert!(p.start() < m.start());
        let (p, m) = iv(1, 1).children().unwrap();
        assert_eq!(p.start(), Dyadic::new(1, -1));
        assert_eq!(p.end(), Dyadic::new(3, -2));
        assert_eq!(m.end(), Dyadic::one());
    }

    #[test]
    fn level_overflow_is_reported() {
        let deep = iv(62, 5);
        assert!(matches!(deep.children(), Err(Error::LevelOverflow { .. })));
        assert!(DyadicInterval::new(63, 0).is_err());
        assert!(DyadicInterval::new(2, 4).is_err());
    }

    #[test]
    fn enumeration_sizes() {
        assert_eq!(enumerate(0).unwrap().len(), 1);
        assert_eq!(enumerate(2).unwrap().len(), 7);
        assert_eq!(enumerate(10).unwrap().len(), 2047);
        assert!(matches!(enumerate(21), Err(Error::Capacity { .. })));
        let order: Vec<_> = enumerate(2).unwrap().iter().map(|i| i.label()).collect();
        assert_eq!(order, ["0:0", "1:0", "1:1", "2:0", "2:1", "2:2", "2:3"]);
    }

    #[test]
    fn index_round_trip_and_children_measures() {
        for idx in 0..dimension(10) {
            let i = DyadicInterval::from_index(idx);
            assert_eq!(i.index(), idx);
            let (p, m) = i.children().unwrap();
            assert_eq!(p.measure().shl(1), i.measure());
            assert_eq!(m.measure().shl(1), i.measure());
            assert!(i.contains(&p) && i.contains(&m) && p.is_disjoint(&m));
        }
    }

    #[test]
    fn labels_parse() {
        let i: DyadicInterval = "2:3".parse().unwrap();
        assert_eq!(i, iv(2, 3));
        assert_eq!(i.start(), Dyadic::new(3, -2));
        assert!("2:4".parse::<DyadicInterval>().is_err());
        assert!("x".parse::<DyadicInterval>().is_err());
    }

    #[test]
    fn dyadic_arithmetic_is_exact() {
        let a = Dyadic::from_f64(0.1).unwrap();
        let b = Dyadic::from_f64(0.2).unwrap();
        let s = &a + &b;
        assert_ne!(s, Dyadic::from_f64(0.3).unwrap());
        assert_eq!(&s - &b, a);
        assert_eq!(Dyadic::from_f64(0.75).unwrap(), Dyadic::new(3, -2));
        assert_eq!(Dyadic::new(12, 0), Dyadic::new(3, 2));
        assert_eq!(Dyadic::from_f64(-5e-324).unwrap().to_f64(), -5e-324);
        assert_eq!(Dyadic::new(3, -2).to_f64(), 0.75);
        assert!(Dyadic::new(1, -3) < Dyadic::new(1, -2));
    }

    #[test]
    fn exact_log_helpers() {
        let r = |n: i64, d: i64| BigRational::new(n.into(), d.into());
        assert_eq!(floor_log2(&r(8, 1)), 3);
        assert_eq!(floor_log2(&r(7, 1)), 2);
        assert_eq!(floor_log2(&r(1, 3)), -2);
        assert_eq!(smallest_pow2_exceeding(&r(8, 1)), 4);
        assert_eq!(smallest_pow2_exceeding(&r(7, 1)), 3);
        assert_eq!(smallest_pow2_exceeding(&r(1, 4)), -1);
    }

    #[test]
    fn disjointness() {
        assert!(check_pairwise_disjoint(&[iv(1, 0), iv(2, 2), iv(2, 3)]).is_ok());
        assert!(check_pairwise_disjoint(&[iv(1, 0), iv(2, 1)]).is_err());
        let m = disjoint_union_measure(&[iv(1, 0), iv(3, 7)]).unwrap();
        assert_eq!(m, Dyadic::new(5, -3));
    }
}
