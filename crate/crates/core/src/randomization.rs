//! The random variables `Y_{I,I'} = <T b_I, b_I'>` and
//! `Z_I = <T b_I, b_I> - sum_{K in B_I} <T h_K, h_K>` over uniform signs,
//! their moments, tail bounds, and the search for good signs.
//!
//! Exact moments enumerate every sign pattern on the relevant coordinates.
//! Form entries are converted exactly to integers at a common binary scale,
//! patterns are visited in Gray-code order with incremental updates, and the
//! sums are kept in 256-bit integers (arbitrary precision when the entries
//! span too many binary orders of magnitude).

use std::ops::Range;

use ethnum::U256;
use nalgebra::DMatrix;
use num_bigint::{BigInt, Sign};
use num_traits::{Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::{BlockCollection, SignAssignment};
use crate::dyadic::{Dyadic, DyadicInterval};
use crate::error::{Error, Result};
use crate::norms::SpaceTag;
use crate::operators::HaarOperator;

/// Default number of coordinates above which enumeration is refused.
pub const ENUMERATION_CAP: usize = 20;

/// Samples per independent random stream in Monte Carlo runs.
pub const CHUNK: usize = 256;

/// Which random variable: `Y_{I,I'}` or `Z_I`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MomentTarget {
    Pair(DyadicInterval, DyadicInterval),
    Diagonal(DyadicInterval),
}

impl MomentTarget {
    pub fn intervals(&self) -> Vec<DyadicInterval> {
        match *self {
            Self::Pair(i, ip) => vec![i, ip],
            Self::Diagonal(i) => vec![i],
        }
    }

    /// Every `Y_{I,I'}` (ordered, `I != I'`) followed by every `Z_I`.
    pub fn all(c: &BlockCollection) -> Vec<Self> {
        let ids: Vec<DyadicInterval> = c.iter().map(|(i, _)| i).collect();
        let mut out = Vec::new();
        for &i in &ids {
            for &ip in &ids {
                if i != ip {
                    out.push(Self::Pair(i, ip));
                }
            }
        }
        out.extend(ids.iter().map(|&i| Self::Diagonal(i)));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentMethod {
    ExactEnumeration,
    MonteCarlo,
}

/// One moment record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentReport {
    pub pair: Vec<DyadicInterval>,
    pub mean: f64,
    pub second_moment: f64,
    pub bound: Option<f64>,
    pub method: MomentMethod,
    /// Enumeration size `2^m` or Monte Carlo sample count.
    pub samples: u64,
    pub seed: Option<u64>,
    /// Number of sign coordinates the variable depends on.
    pub coordinates: usize,
    pub exact_mean: Option<Dyadic>,
    pub exact_second_moment: Option<Dyadic>,
    /// `sum G[K',K]^2` for `Y`, `sum_{K != K'} (G[K',K]^2 + G[K',K] G[K,K'])` for `Z`.
    pub closed_form: f64,
    /// Whether the enumerated second moment equals the closed form exactly.
    pub matches_closed_form: Option<bool>,
    /// Standard errors of the Monte Carlo mean and second moment.
    pub mean_standard_error: Option<f64>,
    pub second_moment_standard_error: Option<f64>,
}

fn check_operator(t: &HaarOperator, c: &BlockCollection) -> Result<()> {
    if t.level() < c.host_level() {
        return Err(Error::DimensionMismatch(format!(
            "operator at level {} for collections hosted at level {}",
            t.level(),
            c.host_level()
        )));
    }
    Ok(())
}

/// `Y_{I,I'}(theta) = sum_{K in B_I, K' in B_I'} theta_K theta_K' G[K', K]`.
pub fn eval_y(
    t: &HaarOperator,
    c: &BlockCollection,
    theta: &SignAssignment,
    i: DyadicInterval,
    ip: DyadicInterval,
) -> Result<f64> {
    if i == ip {
        return Err(Error::SameIndex(i.label()));
    }
    check_operator(t, c)?;
    let mut y = 0.0;
    for &k in c.members(i) {
        for &kp in c.members(ip) {
            y += f64::from(theta.get(k) * theta.get(kp)) * t.entry(kp, k);
        }
    }
    Ok(y)
}

/// `Z_I(theta)`, computed as the off-diagonal part of the block form.
pub fn eval_z(t: &HaarOperator, c: &BlockCollection, theta: &SignAssignment, i: DyadicInterval) -> Result<f64> {
    check_operator(t, c)?;
    let m = c.members(i);
    let mut z = 0.0;
    for &k in m {
        for &kp in m {
            if k != kp {
                z += f64::from(theta.get(k) * theta.get(kp)) * t.entry(kp, k);
            }
        }
    }
    Ok(z)
}

/// Exact integer images of a list of floats at a common binary scale:
/// `x_i = values[i] * 2^exponent`.
struct Scaled {
    values: Vec<BigInt>,
    exponent: i64,
}

fn scale_exactly(xs: &[f64]) -> Result<Scaled> {
    let ds: Vec<Dyadic> = xs.iter().map(|&x| Dyadic::from_f64(x)).collect::<Result<_>>()?;
    let exponent = ds.iter().filter(|d| !d.is_zero()).map(|d| d.exponent()).min().unwrap_or(0);
    let values = ds
        .iter()
        .map(|d| if d.is_zero() { BigInt::zero() } else { d.mantissa() << (d.exponent() - exponent) as usize })
        .collect();
    Ok(Scaled { values, exponent })
}

trait Accumulator<T>: Default {
    fn push(&mut self, y: &T);
    fn finish(self) -> (BigInt, BigInt);
}

/// `sum y` in `i128`, `sum y^2` in 256 bits; sizes are checked by the caller.
#[derive(Default)]
struct WideAcc {
    sum: i128,
    squares: U256,
}

impl Accumulator<i128> for WideAcc {
    fn push(&mut self, y: &i128) {
        self.sum += *y;
        let a = U256::from(y.unsigned_abs());
        self.squares += a * a;
    }

    fn finish(self) -> (BigInt, BigInt) {
        (BigInt::from(self.sum), BigInt::from_bytes_be(Sign::Plus, &self.squares.to_be_bytes()))
    }
}

#[derive(Default)]
struct BigAcc {
    sum: BigInt,
    squares: BigInt,
}

impl Accumulator<BigInt> for BigAcc {
    fn push(&mut self, y: &BigInt) {
        self.sum += y;
        self.squares += y * y;
    }

    fn finish(self) -> (BigInt, BigInt) {
        (self.sum, self.squares)
    }
}

trait Exact: Clone + Zero + for<'a> std::ops::AddAssign<&'a Self> + for<'a> std::ops::SubAssign<&'a Self> {}
impl Exact for i128 {}
impl Exact for BigInt {}

/// Visits `sum_{a,b} theta_a phi_b w[a][b]` over all `theta in {+-1}^rows`,
/// `phi in {+-1}^cols`.
fn enumerate_bilinear<T: Exact, A: Accumulator<T>>(w: &[Vec<T>], cols: usize) -> A {
    let rows = w.len();
    let mut acc = A::default();
    let mut phi = vec![true; cols];
    let mut u: Vec<T> = w
        .iter()
        .map(|row| row.iter().fold(T::zero(), |mut s, x| {
            s += x;
            s
        }))
        .collect();
    for step in 0..1u64 << cols {
        if step > 0 {
            let b = step.trailing_zeros() as usize;
            for (ua, row) in u.iter_mut().zip(w) {
                // u_a changes by -2 phi_b w[a][b].
                if phi[b] {
                    *ua -= &row[b];
                    *ua -= &row[b];
                } else {
                    *ua += &row[b];
                    *ua += &row[b];
                }
            }
            phi[b] = !phi[b];
        }
        let mut theta = vec![true; rows];
        let mut y = u.iter().fold(T::zero(), |mut s, x| {
            s += x;
            s
        });
        acc.push(&y);
        for inner in 1..1u64 << rows {
            let a = inner.trailing_zeros() as usize;
            if theta[a] {
                y -= &u[a];
                y -= &u[a];
            } else {
                y += &u[a];
                y += &u[a];
            }
            theta[a] = !theta[a];
            acc.push(&y);
        }
    }
    acc
}

/// Visits `sum_{a<b} theta_a theta_b s[a][b]` for symmetric `s` with zero
/// diagonal over all `theta in {+-1}^m`.
fn enumerate_quadratic<T: Exact, A: Accumulator<T>>(s: &[Vec<T>]) -> A {
    let m = s.len();
    let mut acc = A::default();
    let mut theta = vec![true; m];
    let mut r: Vec<T> = s
        .iter()
        .map(|row| row.iter().fold(T::zero(), |mut x, v| {
            x += v;
            x
        }))
        .collect();
    let mut z = T::zero();
    for a in 0..m {
        for b in a + 1..m {
            z += &s[a][b];
        }
    }
    acc.push(&z);
    for step in 1..1u64 << m {
        let a = step.trailing_zeros() as usize;
        if theta[a] {
            z -= &r[a];
            z -= &r[a];
        } else {
            z += &r[a];
            z += &r[a];
        }
        for (b, rb) in r.iter_mut().enumerate() {
            if b != a {
                if theta[a] {
                    *rb -= &s[b][a];
                    *rb -= &s[b][a];
                } else {
                    *rb += &s[b][a];
                    *rb += &s[b][a];
                }
            }
        }
        theta[a] = !theta[a];
        acc.push(&z);
    }
    acc
}

fn bits(x: &BigInt) -> u64 {
    x.bits()
}

fn to_i128_matrix(m: &[Vec<BigInt>]) -> Vec<Vec<i128>> {
    m.iter().map(|row| row.iter().map(|x| x.to_i128().expect("checked")).collect()).collect()
}

/// Exact mean and second moment by enumerating all `2^m` sign patterns on
/// the coordinates the variable depends on.
pub fn exact_moments(
    t: &HaarOperator,
    c: &BlockCollection,
    target: MomentTarget,
    cap: usize,
) -> Result<MomentReport> {
    check_operator(t, c)?;
    let (rows, cols): (Vec<DyadicInterval>, Vec<DyadicInterval>) = match target {
        MomentTarget::Pair(i, ip) => {
            if i == ip {
                return Err(Error::SameIndex(i.label()));
            }
            (c.members(i).to_vec(), c.members(ip).to_vec())
        }
        MomentTarget::Diagonal(i) => (c.members(i).to_vec(), Vec::new()),
    };
    let m = rows.len() + cols.len();
    if m > cap {
        return Err(Error::EnumerationCap { coordinates: m, cap });
    }
    let (sum, squares, closed, exponent) = match target {
        MomentTarget::Pair(..) => {
            // w[a][b] = G[K'_b, K_a].
            let flat: Vec<f64> = rows.iter().flat_map(|&k| cols.iter().map(move |&kp| t.entry(kp, k))).collect();
            let sc = scale_exactly(&flat)?;
            let w: Vec<Vec<BigInt>> = sc.values.chunks(cols.len().max(1)).map(|c| c.to_vec()).collect();
            let w = if cols.is_empty() { vec![Vec::new(); rows.len()] } else { w };
            let closed: BigInt = sc.values.iter().map(|x| x * x).sum();
            let total: BigInt = sc.values.iter().map(|x| x.abs()).sum();
            let b = bits(&total);
            let (sum, squares) = if b + m as u64 <= 126 && 2 * b + m as u64 <= 255 {
                enumerate_bilinear::<i128, WideAcc>(&to_i128_matrix(&w), cols.len()).finish()
            } else {
                enumerate_bilinear::<BigInt, BigAcc>(&w, cols.len()).finish()
            };
            (sum, squares, closed, sc.exponent)
        }
        MomentTarget::Diagonal(_) => {
            let k = rows.len();
            let flat: Vec<f64> = rows.iter().flat_map(|&r| rows.iter().map(move |&col| t.entry(r, col))).collect();
            let sc = scale_exactly(&flat)?;
            let g = |r: usize, col: usize| &sc.values[r * k + col];
            let mut s = vec![vec![BigInt::zero(); k]; k];
            let mut closed = BigInt::zero();
            for a in 0..k {
                for b in 0..k {
                    if a != b {
                        s[a][b] = g(b, a) + g(a, b);
                        closed += g(b, a) * g(b, a) + g(b, a) * g(a, b);
                    }
                }
            }
            let total: BigInt = s.iter().flatten().map(|x| x.abs()).sum();
            let b = bits(&total);
            let (sum, squares) = if b + m as u64 <= 126 && 2 * b + m as u64 <= 255 {
                enumerate_quadratic::<i128, WideAcc>(&to_i128_matrix(&s)).finish()
            } else {
                enumerate_quadratic::<BigInt, BigAcc>(&s).finish()
            };
            (sum, squares, closed, sc.exponent)
        }
    };
    let exact_mean = Dyadic::new(sum, exponent - m as i64);
    let exact_second = Dyadic::new(squares.clone(), 2 * exponent - m as i64);
    let matches = squares == (&closed << m);
    Ok(MomentReport {
        pair: target.intervals(),
        mean: exact_mean.to_f64(),
        second_moment: exact_second.to_f64(),
        bound: None,
        method: MomentMethod::ExactEnumeration,
        samples: 1u64 << m,
        seed: None,
        coordinates: m,
        exact_mean: Some(exact_mean),
        exact_second_moment: Some(exact_second),
        closed_form: Dyadic::new(closed, 2 * exponent).to_f64(),
        matches_closed_form: Some(matches),
        mean_standard_error: None,
        second_moment_standard_error: None,
    })
}

/// The closed-form second moment, exactly.
pub fn closed_form_second_moment(t: &HaarOperator, c: &BlockCollection, target: MomentTarget) -> Result<Dyadic> {
    check_operator(t, c)?;
    let sq = |x: f64| -> Result<Dyadic> {
        let d = Dyadic::from_f64(x)?;
        Ok(&d * &d)
    };
    let mut total = Dyadic::zero();
    match target {
        MomentTarget::Pair(i, ip) => {
            if i == ip {
                return Err(Error::SameIndex(i.label()));
            }
            for &k in c.members(i) {
                for &kp in c.members(ip) {
                    total = total + sq(t.entry(kp, k))?;
                }
            }
        }
        MomentTarget::Diagonal(i) => {
            let m = c.members(i);
            for &k in m {
                for &kp in m {
                    if k != kp {
                        let a = Dyadic::from_f64(t.entry(kp, k))?;
                        let b = Dyadic::from_f64(t.entry(k, kp))?;
                        total = total + &a * &a + &a * &b;
                    }
                }
            }
        }
    }
    Ok(total)
}

/// Dense restriction of the form to the relevant coordinates of one target.
struct LocalForm {
    /// `w[a * cols + b]`; for `Z` the square off-diagonal block with zero diagonal.
    w: Vec<f64>,
    rows: usize,
    cols: usize,
    diagonal: bool,
}

impl LocalForm {
    fn new(t: &HaarOperator, c: &BlockCollection, target: MomentTarget) -> Result<Self> {
        match target {
            MomentTarget::Pair(i, ip) => {
                if i == ip {
                    return Err(Error::SameIndex(i.label()));
                }
                let (r, cl) = (c.members(i), c.members(ip));
                let w = r.iter().flat_map(|&k| cl.iter().map(move |&kp| t.entry(kp, k))).collect();
                Ok(Self { w, rows: r.len(), cols: cl.len(), diagonal: false })
            }
            MomentTarget::Diagonal(i) => {
                let r = c.members(i);
                let w = r
                    .iter()
                    .flat_map(|&k| r.iter().map(move |&kp| if k == kp { 0.0 } else { t.entry(kp, k) }))
                    .collect();
                Ok(Self { w, rows: r.len(), cols: r.len(), diagonal: true })
            }
        }
    }

    fn coordinates(&self) -> usize {
        if self.diagonal {
            self.rows
        } else {
            self.rows + self.cols
        }
    }

    fn eval(&self, signs: &[f64]) -> f64 {
        let (theta, phi) = if self.diagonal { (signs, signs) } else { signs.split_at(self.rows) };
        let mut y = 0.0;
        for a in 0..self.rows {
            let row = &self.w[a * self.cols..(a + 1) * self.cols];
            let s: f64 = row.iter().zip(phi).map(|(w, p)| w * p).sum();
            y += theta[a] * s;
        }
        y
    }
}

fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

fn random_signs<R: Rng>(rng: &mut R, out: &mut [f64]) {
    for s in out {
        *s = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
}

/// Monte Carlo mean and second moment. Sample `j` is drawn from stream
/// `j / CHUNK` of the seed, so a run is a prefix of any longer run.
pub fn mc_moments(
    t: &HaarOperator,
    c: &BlockCollection,
    target: MomentTarget,
    samples: usize,
    seed: u64,
) -> Result<MomentReport> {
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be at least 1".into()));
    }
    check_operator(t, c)?;
    let form = LocalForm::new(t, c, target)?;
    let m = form.coordinates();
    let chunks = samples.div_ceil(CHUNK);
    let partial: Vec<[f64; 4]> = (0..chunks)
        .into_par_iter()
        .map(|j| {
            let mut rng = chunk_rng(seed, j as u64);
            let count = CHUNK.min(samples - j * CHUNK);
            let mut signs = vec![0.0; m];
            let mut acc = [0.0; 4];
            for _ in 0..count {
                random_signs(&mut rng, &mut signs);
                let y = form.eval(&signs);
                acc[0] += y;
                acc[1] += y * y;
                acc[2] += y * y * y * y;
            }
            acc
        })
        .collect();
    let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
    for p in partial {
        s1 += p[0];
        s2 += p[1];
        s4 += p[2];
    }
    let n = samples as f64;
    let mean = s1 / n;
    let second = s2 / n;
    let (se_mean, se_second) = if samples > 1 {
        let var_y = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
        let var_y2 = ((s4 - n * second * second) / (n - 1.0)).max(0.0);
        (Some((var_y / n).sqrt()), Some((var_y2 / n).sqrt()))
    } else {
        (None, None)
    };
    Ok(MomentReport {
        pair: target.intervals(),
        mean,
        second_moment: second,
        bound: None,
        method: MomentMethod::MonteCarlo,
        samples: samples as u64,
        seed: Some(seed),
        coordinates: m,
        exact_mean: None,
        exact_second_moment: None,
        closed_form: closed_form_second_moment(t, c, target)?.to_f64(),
        matches_closed_form: None,
        mean_standard_error: se_mean,
        second_moment_standard_error: se_second,
    })
}

/// Exact enumeration where the coordinate count allows it, Monte Carlo otherwise.
pub fn moments(
    t: &HaarOperator,
    c: &BlockCollection,
    target: MomentTarget,
    cap: usize,
    samples: usize,
    seed: u64,
) -> Result<MomentReport> {
    match exact_moments(t, c, target, cap) {
        Err(Error::EnumerationCap { .. }) => mc_moments(t, c, target, samples, seed),
        other => other,
    }
}

/// Second-moment bound check for one variable.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VarianceEntry {
    pub pair: Vec<DyadicInterval>,
    pub second_moment: f64,
    /// `||T||^2 alpha^(1/2)` (times 2 for `Z`).
    pub bound: f64,
    /// `||T||^2 alpha` (times 2 for `Z`); checked for `SL^inf`.
    pub strong_bound: Option<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VarianceReport {
    pub space: SpaceTag,
    pub operator_norm: f64,
    pub alpha: f64,
    pub entries: Vec<VarianceEntry>,
    pub passed: bool,
}

const BOUND_SLACK: f64 = 1e-12;

/// Checks `E Y^2 <= ||T||^2 alpha^(1/2)` and `E Z^2 <= 2 ||T||^2 alpha^(1/2)`
/// for every variable, using exact second moments. `norm` is the exact
/// operator norm or an upper bound for it.
pub fn variance_bound_check(
    t: &HaarOperator,
    c: &BlockCollection,
    space: SpaceTag,
    norm: f64,
) -> Result<VarianceReport> {
    space.validate()?;
    let alpha = c.alpha()?.to_f64();
    let targets = MomentTarget::all(c);
    let entries: Vec<VarianceEntry> = targets
        .par_iter()
        .map(|&target| {
            let second = closed_form_second_moment(t, c, target)?.to_f64();
            let factor = if matches!(target, MomentTarget::Diagonal(_)) { 2.0 } else { 1.0 };
            let bound = factor * norm * norm * alpha.sqrt();
            let strong_bound = (space == SpaceTag::Slinf).then(|| factor * norm * norm * alpha);
            let ok = |b: f64| second <= b * (1.0 + BOUND_SLACK);
            let passed = ok(bound) && strong_bound.is_none_or(ok);
            Ok(VarianceEntry { pair: target.intervals(), second_moment: second, bound, strong_bound, passed })
        })
        .collect::<Result<_>>()?;
    Ok(VarianceReport { space, operator_norm: norm, alpha, passed: entries.iter().all(|e| e.passed), entries })
}

/// `2^(3(n+2)) Gamma^2 / (2^(m0/2) eta0^2)`.
pub fn union_bound(n: u32, m0: u32, gamma: f64, eta0: f64) -> Result<f64> {
    if !(gamma > 0.0 && eta0 > 0.0) {
        return Err(Error::InvalidParameter("Gamma and eta0 must be positive".into()));
    }
    let log2 = 3.0 * (n as f64 + 2.0) - m0 as f64 / 2.0;
    Ok(log2.exp2() * gamma * gamma / (eta0 * eta0))
}

/// Chebyshev: `P(|X| > eta0) <= min(1, E X^2 / eta0^2)`.
pub fn chebyshev_tail(second_moment: f64, eta0: f64) -> f64 {
    (second_moment / (eta0 * eta0)).min(1.0)
}

/// Sum of Chebyshev tails over every off-diagonal and diagonal event.
pub fn event_union_bound(t: &HaarOperator, c: &BlockCollection, eta0: f64) -> Result<f64> {
    MomentTarget::all(c)
        .iter()
        .map(|&target| Ok(chebyshev_tail(closed_form_second_moment(t, c, target)?.to_f64(), eta0)))
        .sum()
}

/// The operator restricted to the support of all collections, for fast
/// evaluation of every `Y` and `Z` at once.
pub struct BlockForm {
    host: u32,
    coords: Vec<DyadicInterval>,
    groups: Vec<Range<usize>>,
    /// Row-major `g[r * s + c] = G[coords[r], coords[c]]`, zero on the diagonal.
    g: Vec<f64>,
}

impl BlockForm {
    pub fn new(t: &HaarOperator, c: &BlockCollection) -> Result<Self> {
        check_operator(t, c)?;
        c.require_disjoint()?;
        let mut coords = Vec::new();
        let mut groups = Vec::new();
        for (_, m) in c.iter() {
            let start = coords.len();
            coords.extend_from_slice(m);
            groups.push(start..coords.len());
        }
        let s = coords.len();
        let mut g = vec![0.0; s * s];
        for r in 0..s {
            for col in 0..s {
                if r != col {
                    g[r * s + col] = t.entry(coords[r], coords[col]);
                }
            }
        }
        Ok(Self { host: c.host_level(), coords, groups, g })
    }

    pub fn support(&self) -> &[DyadicInterval] {
        &self.coords
    }

    fn restrict(&self, theta: &SignAssignment) -> Vec<f64> {
        self.coords.iter().map(|&k| f64::from(theta.get(k))).collect()
    }

    /// `values[(I', I)] = Y_{I,I'}` off the diagonal and `Z_I` on it.
    pub fn values(&self, theta: &SignAssignment) -> BlockValues {
        self.values_restricted(&self.restrict(theta))
    }

    fn values_restricted(&self, x: &[f64]) -> BlockValues {
        let s = self.coords.len();
        let nb = self.groups.len();
        let mut h = vec![0.0; s * nb];
        for r in 0..s {
            let row = &self.g[r * s..(r + 1) * s];
            for (gi, range) in self.groups.iter().enumerate() {
                h[r * nb + gi] = range.clone().map(|col| row[col] * x[col]).sum();
            }
        }
        let values = DMatrix::from_fn(nb, nb, |ip, i| self.groups[ip].clone().map(|r| x[r] * h[r * nb + i]).sum());
        BlockValues { values }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockValues {
    pub values: DMatrix<f64>,
}

impl BlockValues {
    pub fn off_diagonal_max(&self) -> f64 {
        let n = self.values.nrows();
        let mut m: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    m = m.max(self.values[(a, b)].abs());
                }
            }
        }
        m
    }

    pub fn diagonal_max(&self) -> f64 {
        self.values.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.off_diagonal_max().max(self.diagonal_max())
    }
}

fn attempt_signs(host: u32, seed: u64, attempt: u64) -> SignAssignment {
    let mut rng = chunk_rng(seed, attempt);
    let mut theta = SignAssignment::sample(host, &mut rng).expect("host level validated");
    theta.seed = Some(seed);
    theta
}

/// `max(|Y|, |Z|)` over all variables for `samples` uniform sign draws.
pub fn sample_maxima(form: &BlockForm, samples: usize, seed: u64) -> Vec<f64> {
    (0..samples as u64)
        .into_par_iter()
        .map(|a| form.values(&attempt_signs(form.host, seed, a)).max())
        .collect()
}

/// Nearest-rank `quantile` of the sampled maxima; with this `eta0` a uniform
/// draw succeeds with probability about `quantile`.
pub fn calibrate_eta0(form: &BlockForm, quantile: f64, samples: usize, seed: u64) -> Result<f64> {
    if !(quantile > 0.0 && quantile <= 1.0) || samples == 0 {
        return Err(Error::InvalidParameter(format!(
            "quantile {quantile} must lie in (0, 1] and samples must be positive"
        )));
    }
    let mut maxima = sample_maxima(form, samples, seed);
    maxima.sort_by(f64::total_cmp);
    let rank = ((quantile * samples as f64).ceil() as usize).clamp(1, samples);
    Ok(maxima[rank - 1])
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchStrategy {
    /// Independent uniform draws until one avoids every bad event.
    #[default]
    Rejection,
    /// Single-coordinate flips that lower the worst variable.
    Greedy,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SignSearchResult {
    pub theta: SignAssignment,
    pub off_diagonal_max: f64,
    pub diagonal_max: f64,
    pub attempts: u64,
    pub success: bool,
    pub strategy: SearchStrategy,
}

/// Attempts evaluated per parallel round; fixed so results do not depend
/// on the thread count.
const BATCH: u64 = 64;

/// Looks for signs with `|Y_{I,I'}| <= eta0` and `|Z_I| <= eta0` for all
/// indices. Rejection sampling returns the first success by attempt index;
/// on exhaustion the best draw is returned with `success = false`.
pub fn search_signs(
    t: &HaarOperator,
    c: &BlockCollection,
    eta0: f64,
    budget: u64,
    seed: u64,
    strategy: SearchStrategy,
) -> Result<SignSearchResult> {
    if !(eta0 > 0.0) || budget == 0 {
        return Err(Error::InvalidParameter("eta0 must be positive and budget at least 1".into()));
    }
    let form = BlockForm::new(t, c)?;
    match strategy {
        SearchStrategy::Rejection => rejection(&form, eta0, budget, seed),
        SearchStrategy::Greedy => greedy(&form, eta0, budget, seed),
    }
}

fn result(theta: SignAssignment, v: &BlockValues, eta0: f64, attempts: u64, strategy: SearchStrategy) -> SignSearchResult {
    let off = v.off_diagonal_max();
    let diag = v.diagonal_max();
    SignSearchResult {
        theta,
        off_diagonal_max: off,
        diagonal_max: diag,
        attempts,
        success: off <= eta0 && diag <= eta0,
        strategy,
    }
}

fn rejection(form: &BlockForm, eta0: f64, budget: u64, seed: u64) -> Result<SignSearchResult> {
    let mut best: Option<(f64, u64)> = None;
    let mut start = 0;
    while start < budget {
        let end = (start + BATCH).min(budget);
        let round: Vec<(u64, f64, bool)> = (start..end)
            .into_par_iter()
            .map(|a| {
                let v = form.values(&attempt_signs(form.host, seed, a));
                let worst = v.max();
                (a, worst, worst <= eta0)
            })
            .collect();
        if let Some(&(a, _, _)) = round.iter().find(|r| r.2) {
            let theta = attempt_signs(form.host, seed, a);
            let v = form.values(&theta);
            return Ok(result(theta, &v, eta0, a + 1, SearchStrategy::Rejection));
        }
        for &(a, worst, _) in &round {
            if best.is_none_or(|(b, _)| worst < b) {
                best = Some((worst, a));
            }
        }
        start = end;
    }
    let (_, a) = best.expect("budget >= 1");
    let theta = attempt_signs(form.host, seed, a);
    let v = form.values(&theta);
    Ok(result(theta, &v, eta0, budget, SearchStrategy::Rejection))
}

fn greedy(form: &BlockForm, eta0: f64, budget: u64, seed: u64) -> Result<SignSearchResult> {
    let mut theta = attempt_signs(form.host, seed, 0);
    let mut x = form.restrict(&theta);
    let mut current = form.values_restricted(&x).max();
    let mut evaluations = 1;
    'outer: while current > eta0 && evaluations < budget {
        let mut improved = false;
        for j in 0..x.len() {
            if evaluations >= budget {
                break 'outer;
            }
            x[j] = -x[j];
            let value = form.values_restricted(&x).max();
            evaluations += 1;
            if value < current {
                current = value;
                improved = true;
                theta.flip(form.coords[j]);
                if current <= eta0 {
                    break 'outer;
                }
            } else {
                x[j] = -x[j];
            }
        }
        if !improved {
            break;
        }
    }
    let v = form.values(&theta);
    Ok(result(theta, &v, eta0, evaluations, SearchStrategy::Greedy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::gamlen_gaudet;
    use crate::dyadic::dimension;

    fn iv(l: u32, k: u64) -> DyadicInterval {
        DyadicInterval::new(l, k).unwrap()
    }

    fn random_operator(level: u32, seed: u64) -> HaarOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = dimension(level);
        let g = DMatrix::from_fn(d, d, |r, c| {
            let w = (DyadicInterval::from_index(r).measure_f64() * DyadicInterval::from_index(c).measure_f64()).sqrt();
            rng.random_range(-1.0..1.0) * w
        });
        HaarOperator::new(level, g).unwrap()
    }

    /// Blind oracle: average of Y^2 over all patterns, evaluated directly.
    fn brute_moments(t: &HaarOperator, c: &BlockCollection, target: MomentTarget) -> (f64, f64) {
        let coords: Vec<DyadicInterval> = match target {
            MomentTarget::Pair(i, ip) => c.members(i).iter().chain(c.members(ip)).copied().collect(),
            MomentTarget::Diagonal(i) => c.members(i).to_vec(),
        };
        let m = coords.len();
        let (mut s1, mut s2) = (0.0, 0.0);
        for pattern in 0..1u64 << m {
            let mut theta = SignAssignment::all_plus(c.host_level()).unwrap();
            for (j, k) in coords.iter().enumerate() {
                if pattern >> j & 1 == 1 {
                    theta.flip(*k);
                }
            }
            let v = match target {
                MomentTarget::Pair(i, ip) => eval_y(t, c, &theta, i, ip).unwrap(),
                MomentTarget::Diagonal(i) => eval_z(t, c, &theta, i).unwrap(),
            };
            s1 += v;
            s2 += v * v;
        }
        let n = (1u64 << m) as f64;
        (s1 / n, s2 / n)
    }

    #[test]
    fn identity_and_diagonal_give_zero() {
        let c = gamlen_gaudet(1, 2, 3).unwrap();
        let id = HaarOperator::identity(3).unwrap();
        let diag = HaarOperator::diagonal(3, |k| 1.0 + k.level() as f64).unwrap();
        for seed in 0..5 {
            let theta = SignAssignment::random(3, seed).unwrap();
            for t in [&id, &diag] {
                assert_eq!(eval_y(t, &c, &theta, iv(0, 0), iv(1, 1)).unwrap(), 0.0);
                assert_eq!(eval_z(t, &c, &theta, iv(1, 0)).unwrap(), 0.0);
                let v = BlockForm::new(t, &c).unwrap().values(&theta);
                assert_eq!(v.max(), 0.0);
            }
        }
        let r = exact_moments(&id, &c, MomentTarget::Pair(iv(0, 0), iv(1, 0)), 20).unwrap();
        assert_eq!(r.second_moment, 0.0);
        assert!(eval_y(&id, &c, &SignAssignment::all_plus(3).unwrap(), iv(1, 0), iv(1, 0)).is_err());
    }

    #[test]
    fn single_entry_examples() {
        let c = BlockCollection::new(1, 2, vec![vec![iv(1, 0), iv(1, 1)], vec![iv(2, 0)], vec![iv(2, 3)]]).unwrap();
        let mut t = HaarOperator::zeros(2).unwrap();
        t.set_entry(iv(2, 3), iv(2, 0), 0.75).unwrap();
        let mut theta = SignAssignment::all_plus(2).unwrap();
        theta.set(iv(2, 0), -1).unwrap();
        assert_eq!(eval_y(&t, &c, &theta, iv(1, 0), iv(1, 1)).unwrap(), -0.75);
        // Z on a two-member collection: theta_1 theta_2 (a + b).
        let mut t = HaarOperator::zeros(2).unwrap();
        t.set_entry(iv(1, 1), iv(1, 0), 0.5).unwrap();
        t.set_entry(iv(1, 0), iv(1, 1), -2.0).unwrap();
        theta.set(iv(1, 1), -1).unwrap();
        assert_eq!(eval_z(&t, &c, &theta, iv(0, 0)).unwrap(), 1.5);
    }

    #[test]
    fn locality() {
        let t = random_operator(4, 1);
        let c = gamlen_gaudet(1, 2, 4).unwrap();
        let theta = SignAssignment::random(4, 9).unwrap();
        let y = eval_y(&t, &c, &theta, iv(1, 0), iv(0, 0)).unwrap();
        let z = eval_z(&t, &c, &theta, iv(1, 1)).unwrap();
        let mut other = theta.clone();
        for k in c.members(iv(1, 1)) {
            other.flip(*k);
        }
        other.flip(iv(4, 3));
        assert_eq!(eval_y(&t, &c, &other, iv(1, 0), iv(0, 0)).unwrap(), y);
        let mut other = theta.clone();
        for k in c.members(iv(0, 0)) {
            other.flip(*k);
        }
        assert_eq!(eval_z(&t, &c, &other, iv(1, 1)).unwrap(), z);
    }

    #[test]
    fn exact_moments_match_brute_force_and_closed_forms() {
        let c = gamlen_gaudet(1, 2, 3).unwrap();
        for seed in 0..4 {
            let t = random_operator(3, seed);
            for target in MomentTarget::all(&c) {
                let r = exact_moments(&t, &c, target, 20).unwrap();
                assert!(r.exact_mean.as_ref().unwrap().is_zero());
                assert_eq!(r.matches_closed_form, Some(true));
                assert_eq!(r.exact_second_moment.clone().unwrap(), closed_form_second_moment(&t, &c, target).unwrap());
                let (m1, m2) = brute_moments(&t, &c, target);
                assert!(m1.abs() < 1e-12);
                assert!((m2 - r.second_moment).abs() <= 1e-12 * (1.0 + m2));
            }
        }
    }

    #[test]
    fn wide_and_big_paths_agree() {
        let s: Vec<Vec<i128>> = vec![vec![0, 3, -5], vec![3, 0, 7], vec![-5, 7, 0]];
        let sb: Vec<Vec<BigInt>> = s.iter().map(|r| r.iter().map(|&x| BigInt::from(x)).collect()).collect();
        let a = enumerate_quadratic::<i128, WideAcc>(&s).finish();
        let b = enumerate_quadratic::<BigInt, BigAcc>(&sb).finish();
        assert_eq!(a, b);
        let w = to_i128_matrix(&sb);
        assert_eq!(
            enumerate_bilinear::<i128, WideAcc>(&w, 3).finish(),
            enumerate_bilinear::<BigInt, BigAcc>(&sb, 3).finish()
        );
        // Entries spanning ~2000 binary orders force the arbitrary-precision path.
        let mut t = HaarOperator::zeros(2).unwrap();
        t.set_entry(iv(1, 1), iv(1, 0), 1e300).unwrap();
        t.set_entry(iv(1, 0), iv(1, 1), 1e-300).unwrap();
        let c = BlockCollection::new(0, 2, vec![vec![iv(1, 0), iv(1, 1)]]).unwrap();
        let r = exact_moments(&t, &c, MomentTarget::Diagonal(iv(0, 0)), 20).unwrap();
        assert_eq!(r.matches_closed_form, Some(true));
        assert!(r.exact_mean.unwrap().is_zero());
    }

    #[test]
    fn enumeration_cap() {
        let c = gamlen_gaudet(1, 4, 5).unwrap();
        let t = random_operator(5, 0);
        let err = exact_moments(&t, &c, MomentTarget::Pair(iv(0, 0), iv(1, 0)), 20).unwrap_err();
        assert!(matches!(err, Error::EnumerationCap { coordinates: 32, cap: 20 }));
        let r = moments(&t, &c, MomentTarget::Pair(iv(0, 0), iv(1, 0)), 20, 1000, 3).unwrap();
        assert_eq!(r.method, MomentMethod::MonteCarlo);
    }

    #[test]
    fn monte_carlo_agrees_and_is_prefix_stable() {
        let c = gamlen_gaudet(1, 2, 3).unwrap();
        let t = random_operator(3, 17);
        let target = MomentTarget::Pair(iv(0, 0), iv(1, 1));
        let exact = exact_moments(&t, &c, target, 20).unwrap();
        let mc = mc_moments(&t, &c, target, 20_000, 5).unwrap();
        let se = mc.second_moment_standard_error.unwrap();
        assert!((mc.second_moment - exact.second_moment).abs() <= 5.0 * se);
        assert!(mc.mean.abs() <= 5.0 * mc.mean_standard_error.unwrap());
        let a = mc_moments(&t, &c, target, 1000, 5).unwrap();
        let b = mc_moments(&t, &c, target, 1000, 5).unwrap();
        assert_eq!(a.second_moment, b.second_moment);
        let id = HaarOperator::identity(3).unwrap();
        let z = mc_moments(&id, &c, target, 300, 1).unwrap();
        assert_eq!((z.mean, z.second_moment), (0.0, 0.0));
        assert!(mc_moments(&t, &c, target, 0, 1).is_err());
    }

    #[test]
    fn union_bound_examples() {
        let v = union_bound(1, 40, 1.0, 0.1).unwrap();
        assert!((v - 512.0 / (1048576.0 * 0.01)).abs() < 1e-12);
        assert!(union_bound(1, 41, 1.0, 0.1).unwrap() < v);
        assert!(union_bound(1, 40, 0.0, 0.1).is_err());
        assert_eq!(chebyshev_tail(4.0, 1.0), 1.0);
        assert_eq!(chebyshev_tail(0.25, 1.0), 0.25);
    }

    #[test]
    fn variance_bounds_hold_for_hilbert_norm() {
        let c = gamlen_gaudet(2, 3, 6).unwrap();
        for seed in 0..3 {
            let t = random_operator(6, seed);
            let norm = t.to_map().hilbert_norm().0;
            let r = variance_bound_check(&t, &c, SpaceTag::Hp { p: 2.0 }, norm).unwrap();
            assert!(r.passed);
            assert_eq!(r.entries.len(), 7 * 6 + 7);
        }
        let root = BlockCollection::new(0, 2, vec![vec![iv(0, 0)]]).unwrap();
        let t = random_operator(2, 4);
        let r = variance_bound_check(&t, &root, SpaceTag::Hp { p: 2.0 }, t.to_map().hilbert_norm().0).unwrap();
        assert_eq!(r.alpha, 1.0);
        assert!(r.passed);
    }

    #[test]
    fn block_form_matches_direct_evaluation() {
        let c = gamlen_gaudet(2, 2, 5).unwrap();
        let t = random_operator(5, 2);
        let form = BlockForm::new(&t, &c).unwrap();
        let theta = SignAssignment::random(5, 4).unwrap();
        let v = form.values(&theta);
        let ids: Vec<DyadicInterval> = c.iter().map(|(i, _)| i).collect();
        for (a, &i) in ids.iter().enumerate() {
            for (b, &ip) in ids.iter().enumerate() {
                let direct = if a == b {
                    eval_z(&t, &c, &theta, i).unwrap()
                } else {
                    eval_y(&t, &c, &theta, i, ip).unwrap()
                };
                assert!((v.values[(b, a)] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sign_search_examples() {
        let c = gamlen_gaudet(2, 4, 8).unwrap();
        let id = HaarOperator::identity(8).unwrap();
        let r = search_signs(&id, &c, 1e-9, 10, 0, SearchStrategy::Rejection).unwrap();
        assert!(r.success);
        assert_eq!(r.attempts, 1);
        assert_eq!(r.off_diagonal_max, 0.0);

        let t = id.add(&random_operator(8, 3).scale(0.05)).unwrap();
        let form = BlockForm::new(&t, &c).unwrap();
        let eta0 = calibrate_eta0(&form, 0.9, 400, 77).unwrap();
        let mut successes = 0;
        for seed in 0..100 {
            let r = search_signs(&t, &c, eta0, 10, 1000 + seed, SearchStrategy::Rejection).unwrap();
            if r.success {
                successes += 1;
                assert!(r.off_diagonal_max <= eta0 && r.diagonal_max <= eta0);
            }
        }
        assert!(successes >= 50, "{successes}");

        let a = search_signs(&t, &c, eta0, 100, 5, SearchStrategy::Rejection).unwrap();
        let b = search_signs(&t, &c, eta0, 100, 5, SearchStrategy::Rejection).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.attempts, b.attempts);

        let hard = search_signs(&t, &c, eta0 * 1e-3, 5, 5, SearchStrategy::Rejection).unwrap();
        assert!(!hard.success);
        assert_eq!(hard.attempts, 5);
    }

    #[test]
    fn greedy_improves() {
        let c = gamlen_gaudet(1, 3, 5).unwrap();
        let t = HaarOperator::identity(5).unwrap().add(&random_operator(5, 8).scale(0.1)).unwrap();
        let start = BlockForm::new(&t, &c).unwrap().values(&attempt_signs(5, 1, 0)).max();
        let r = search_signs(&t, &c, start * 0.5, 2000, 1, SearchStrategy::Greedy).unwrap();
        assert!(r.off_diagonal_max.max(r.diagonal_max) < start);
    }
}
