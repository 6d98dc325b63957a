//! Factorization of `Id_{W_n}` through a large-diagonal `T` on `W_N`.
//!
//! With block vectors `b_I`, `I in D_{<=n}`, the maps are
//!
//! * `B h_I = b_I`, `A f = sum_I <f, b_I> / |B_I| h_I`, `P = B A`;
//! * `U f = sum_I <f, b_I> / <T b_I, b_I> b_I`;
//! * `V = (U T I)^-1 U`, where `U T I` is inverted on `span{b_I}`;
//! * `E = M B` and `F = A V`, with `M` the sign normalization of `T`.
//!
//! Then `F T E = Id_{W_n}`. All maps are coefficient matrices; in block
//! coordinates `U T I` is the matrix `<T b_I', b_I> / <T b_I, b_I>` with unit
//! diagonal.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::block::{jones_check, BlockCollection, SignAssignment};
use crate::dyadic::{dimension, floor_log2, pow2_rational, smallest_pow2_exceeding, Dyadic, DyadicInterval};
use crate::error::{Error, Result};
use crate::io::MapFile;
use crate::norms::SpaceTag;
use crate::operators::{sign_normalize, HaarMap, HaarOperator, OpNormEstimate};
use crate::solver::SolverOptions;

/// Condition number above which `U T I` counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

fn rational(x: f64) -> Result<BigRational> {
    Ok(Dyadic::from_f64(x)?.to_rational())
}

/// Serializes a rational as `"p/q"`.
mod rational_string {
    use num_rational::BigRational;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &BigRational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&r.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The constants of the dimension formula.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub n: u32,
    pub delta: f64,
    pub gamma: f64,
    pub eta: f64,
    /// `eta delta / ((1 + eta) 2^(3(n+2)))`.
    #[serde(with = "rational_string")]
    pub eta0_exact: BigRational,
    pub eta0: f64,
    /// Smallest `m0 >= 0` with `2^m0 > 2^(6(n+2)) Gamma^4 / eta0^4`.
    pub m0: i64,
    /// `19(n+2) + floor(4 log2(Gamma/delta) + 4 log2(1 + 1/eta))`.
    pub big_n: i64,
    pub m0_plus_n_within_n: bool,
    pub warnings: Vec<String>,
}

/// Derives `eta0`, `m0` and `N` exactly from `(n, delta, Gamma, eta)`.
pub fn derive_params(n: u32, delta: f64, gamma: f64, eta: f64) -> Result<Params> {
    for (name, v) in [("delta", delta), ("Gamma", gamma), ("eta", eta)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{name} must be positive and finite (got {v})")));
        }
    }
    let (d, g, e) = (rational(delta)?, rational(gamma)?, rational(eta)?);
    let one = BigRational::one();
    let k = 3 * (n as i64 + 2);
    let eta0 = &e * &d / ((&one + &e) * pow2_rational(k));
    let threshold = pow2_rational(2 * k) * g.pow(4) / eta0.pow(4);
    let m0 = smallest_pow2_exceeding(&threshold).max(0);
    // 4 log2(Gamma/delta) + 4 log2(1 + 1/eta) = log2(R^4), R = Gamma (1 + eta) / (delta eta).
    let r = &g * (&one + &e) / (&d * &e);
    let big_n = 19 * (n as i64 + 2) + floor_log2(&r.pow(4));
    let mut warnings = Vec::new();
    if gamma < delta {
        warnings.push(format!(
            "Gamma = {gamma} is below delta = {delta}; no operator has norm <= Gamma and diagonal >= delta"
        ));
    }
    Ok(Params {
        n,
        delta,
        gamma,
        eta,
        eta0: eta0.to_f64().unwrap_or(0.0),
        eta0_exact: eta0,
        m0,
        big_n,
        m0_plus_n_within_n: m0 + n as i64 <= big_n,
        warnings,
    })
}

/// Whether `2^(3(n+2)) Gamma^2 / (2^(m0/2) eta0^2) < 1`, decided exactly
/// by squaring both sides.
pub fn union_bound_below_one(n: u32, m0: i64, gamma: f64, eta0: &BigRational) -> Result<bool> {
    let g = rational(gamma)?;
    let lhs = pow2_rational(6 * (n as i64 + 2)) * g.pow(4);
    Ok(lhs < pow2_rational(m0) * eta0.pow(4))
}

/// `q = eta0 2^(3(n+1)) / (delta - eta0 2^n)`, the contraction constant of
/// `U T I - Id` on the block span. `None` when `delta <= eta0 2^n`.
pub fn contraction(n: u32, delta: f64, eta0: f64) -> Option<f64> {
    let denom = delta - eta0 * (n as f64).exp2();
    (denom > 0.0).then(|| eta0 * (3.0 * (n as f64 + 1.0)).exp2() / denom)
}

/// `2^n + 2^(3(n+1))`.
pub fn separation_factor(n: u32) -> f64 {
    (n as f64).exp2() + (3.0 * (n as f64 + 1.0)).exp2()
}

/// Feasibility flags of the proof's closing inequalities.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Feasibility {
    /// `delta - eta0 2^n > 0`.
    pub diagonal_margin_positive: bool,
    /// `q < 1`.
    pub contraction_below_one: bool,
    pub q: Option<f64>,
    /// `delta - eta0 (2^n + 2^(3(n+1))) > 0`.
    pub separation_positive: bool,
    /// `1 / (delta - eta0 (2^n + 2^(3(n+1))))`, the bound on `||V||`.
    pub v_bound: Option<f64>,
    /// `v_bound <= (1 + eta) / delta`.
    pub chain_within_target: bool,
}

pub fn feasibility(n: u32, delta: f64, eta: f64, eta0: f64) -> Feasibility {
    let q = contraction(n, delta, eta0);
    let sep = delta - eta0 * separation_factor(n);
    let v_bound = (sep > 0.0).then(|| 1.0 / sep);
    Feasibility {
        diagonal_margin_positive: delta - eta0 * (n as f64).exp2() > 0.0,
        contraction_below_one: q.is_some_and(|q| q < 1.0),
        q,
        separation_positive: sep > 0.0,
        v_bound,
        chain_within_target: v_bound.is_some_and(|v| v <= (1.0 + eta) / delta * (1.0 + 1e-12)),
    }
}

fn require_jones(c: &BlockCollection) -> Result<()> {
    let r = jones_check(c, 1.0)?;
    if let Some(v) = r.violations.first() {
        return Err(Error::Compatibility(format!(
            "{} violation(s) at kappa = 1; first: {v}",
            r.violations.len()
        )));
    }
    Ok(())
}

fn check_signs(c: &BlockCollection, theta: &SignAssignment) -> Result<()> {
    if theta.level() < c.host_level() {
        return Err(Error::DimensionMismatch(format!(
            "signs at level {} for host level {}",
            theta.level(),
            c.host_level()
        )));
    }
    Ok(())
}

/// `B h_I = b_I`, a map `W_n -> W_N`.
pub fn build_b(c: &BlockCollection, theta: &SignAssignment) -> Result<HaarMap> {
    require_jones(c)?;
    check_signs(c, theta)?;
    let (n, host) = (c.target_level(), c.host_level());
    let mut m = DMatrix::zeros(dimension(host), dimension(n));
    for (i, members) in c.iter() {
        for &k in members {
            m[(k.index(), i.index())] = f64::from(theta.get(k));
        }
    }
    HaarMap::new(n, host, m)
}

/// `A f = sum_I <f, b_I> / |B_I| h_I`, a map `W_N -> W_n`.
pub fn build_a(c: &BlockCollection, theta: &SignAssignment) -> Result<HaarMap> {
    require_jones(c)?;
    check_signs(c, theta)?;
    let (n, host) = (c.target_level(), c.host_level());
    let mut m = DMatrix::zeros(dimension(n), dimension(host));
    for (i, members) in c.iter() {
        let b = c.union_measure(i).to_f64();
        for &k in members {
            m[(i.index(), k.index())] = f64::from(theta.get(k)) * k.measure_f64() / b;
        }
    }
    HaarMap::new(host, n, m)
}

/// `P = B A`.
pub fn build_p(c: &BlockCollection, theta: &SignAssignment) -> Result<HaarMap> {
    build_b(c, theta)?.compose(&build_a(c, theta)?)
}

/// A sparse matrix over the rationals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRational {
    pub rows: usize,
    pub cols: usize,
    pub entries: BTreeMap<(usize, usize), BigRational>,
}

impl SparseRational {
    pub fn identity(n: usize) -> Self {
        let entries = (0..n).map(|i| ((i, i), BigRational::one())).collect();
        Self { rows: n, cols: n, entries }
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut by_row: BTreeMap<usize, Vec<(usize, &BigRational)>> = BTreeMap::new();
        for ((r, c), v) in &other.entries {
            by_row.entry(*r).or_default().push((*c, v));
        }
        let mut entries: BTreeMap<(usize, usize), BigRational> = BTreeMap::new();
        for ((i, k), a) in &self.entries {
            if let Some(row) = by_row.get(k) {
                for (j, b) in row {
                    *entries.entry((*i, *j)).or_insert_with(BigRational::zero) += a * *b;
                }
            }
        }
        entries.retain(|_, v| !v.is_zero());
        Self { rows: self.rows, cols: other.cols, entries }
    }
}

/// Exact `B` and `A` over the rationals.
pub fn exact_b_a(c: &BlockCollection, theta: &SignAssignment) -> Result<(SparseRational, SparseRational)> {
    require_jones(c)?;
    check_signs(c, theta)?;
    let (dn, dh) = (dimension(c.target_level()), dimension(c.host_level()));
    let mut b = SparseRational { rows: dh, cols: dn, ..Default::default() };
    let mut a = SparseRational { rows: dn, cols: dh, ..Default::default() };
    for (i, members) in c.iter() {
        let measure = c.union_measure(i).to_rational();
        for &k in members {
            let s = BigRational::from_integer(BigInt::from(theta.get(k)));
            b.entries.insert((k.index(), i.index()), s.clone());
            a.entries.insert((i.index(), k.index()), s * k.measure().to_rational() / &measure);
        }
    }
    Ok((b, a))
}

/// `(A B == Id, P^2 == P)` in exact rational arithmetic.
pub fn exact_projection_identities(c: &BlockCollection, theta: &SignAssignment) -> Result<(bool, bool)> {
    let (b, a) = exact_b_a(c, theta)?;
    let ab = a.mul(&b);
    let p = b.mul(&a);
    Ok((ab == SparseRational::identity(dimension(c.target_level())), p.mul(&p) == p))
}

/// Block vectors as columns: `b_I = column I` of `B`.
fn block_columns(c: &BlockCollection, theta: &SignAssignment) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dimension(c.host_level()), dimension(c.target_level()));
    for (i, members) in c.iter() {
        for &k in members {
            m[(k.index(), i.index())] = f64::from(theta.get(k));
        }
    }
    m
}

/// `Gram[I, I'] = <T b_I', b_I>`.
fn block_gram(t: &HaarOperator, bcols: &DMatrix<f64>) -> DMatrix<f64> {
    bcols.transpose() * t.form() * bcols
}

/// `<T b_I, b_I>` for every `I`.
pub fn block_diagonal(t: &HaarOperator, c: &BlockCollection, theta: &SignAssignment) -> Result<Vec<f64>> {
    check_signs(c, theta)?;
    let bc = block_columns(c, theta);
    Ok(block_gram(t, &bc).diagonal().iter().copied().collect())
}

fn check_host_operator(t: &HaarOperator, c: &BlockCollection) -> Result<()> {
    if t.level() != c.host_level() {
        return Err(Error::DimensionMismatch(format!(
            "operator at level {} for host level {}",
            t.level(),
            c.host_level()
        )));
    }
    Ok(())
}

/// `U f = sum_I <f, b_I> / <T b_I, b_I> b_I`, a map `W_N -> W_N`.
pub fn build_u(t: &HaarOperator, c: &BlockCollection, theta: &SignAssignment) -> Result<HaarMap> {
    require_jones(c)?;
    check_signs(c, theta)?;
    check_host_operator(t, c)?;
    let bc = block_columns(c, theta);
    let tau = block_gram(t, &bc).diagonal();
    if let Some((i, _)) = tau.iter().enumerate().find(|(_, v)| **v == 0.0 || !v.is_finite()) {
        return Err(Error::InsufficientSeparation(format!(
            "<T b_I, b_I> vanishes for I = {}",
            DyadicInterval::from_index(i)
        )));
    }
    let host = c.host_level();
    let weights = DVector::from_iterator(
        dimension(host),
        (0..dimension(host)).map(|k| DyadicInterval::from_index(k).measure_f64()),
    );
    // U = Bc diag(1/tau) Bc^T diag(|K|).
    let mut right = bc.transpose();
    for (mut row, t) in right.row_iter_mut().zip(tau.iter()) {
        row /= *t;
    }
    for (mut col, w) in right.column_iter_mut().zip(weights.iter()) {
        col *= *w;
    }
    HaarMap::new(host, host, &bc * right)
}

/// Inverse of `U T I` in block coordinates with diagnostics.
#[derive(Clone, Debug)]
pub struct InverseReport {
    /// `(U T I)^-1` in the basis `b_I`.
    pub inverse: DMatrix<f64>,
    /// 2-norm condition number of the block matrix.
    pub condition: f64,
    /// Largest `|Mblk - Id|` entry, i.e. the largest normalized off-diagonal form.
    pub off_diagonal_max: f64,
}

/// The matrix `<T b_I', b_I> / <T b_I, b_I>` of `U T I` in block coordinates.
pub fn block_matrix(t: &HaarOperator, c: &BlockCollection, theta: &SignAssignment) -> Result<DMatrix<f64>> {
    check_signs(c, theta)?;
    check_host_operator(t, c)?;
    let bc = block_columns(c, theta);
    let gram = block_gram(t, &bc);
    let mut m = gram.clone();
    for (i, mut row) in m.row_iter_mut().enumerate() {
        let tau = gram[(i, i)];
        if tau == 0.0 || !tau.is_finite() {
            return Err(Error::InsufficientSeparation(format!(
                "<T b_I, b_I> vanishes for I = {}",
                DyadicInterval::from_index(i)
            )));
        }
        row /= tau;
    }
    Ok(m)
}

/// Direct solve of the block matrix; fails above [`MAX_CONDITION`].
pub fn invert_on_range(block: &DMatrix<f64>) -> Result<InverseReport> {
    let sv = block.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned(condition));
    }
    let inverse = block.clone().lu().try_inverse().ok_or(Error::IllConditioned(condition))?;
    let d = block.nrows();
    let off = (block - DMatrix::<f64>::identity(d, d)).abs().max();
    Ok(InverseReport { inverse, condition, off_diagonal_max: off })
}

/// Inputs of [`assemble`] beyond the operator and collections.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssembleSettings {
    pub space: SpaceTag,
    pub delta: f64,
    pub eta: f64,
    /// The threshold the signs were searched with.
    pub eta0: f64,
    pub tolerance: f64,
    pub solver: SolverOptions,
}

/// The proof's closing chain evaluated at a given `eta0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalyticChain {
    pub eta0: f64,
    /// `1 / (delta - eta0 2^n)`, the bound on `||U||`.
    pub u_bound: Option<f64>,
    pub q: Option<f64>,
    /// `1 / (1 - q)`, the bound on `||(U T I)^-1||`.
    pub neumann_bound: Option<f64>,
    /// `1 / (delta - eta0 (2^n + 2^(3(n+1))))`, the bound on `||V||` and on
    /// `||E|| ||F||` given `||B||, ||A|| <= 1`.
    pub v_bound: Option<f64>,
    /// Smallest `eta` with `v_bound <= (1 + eta) / delta`.
    pub implied_eta: Option<f64>,
    /// `v_bound <= (1 + eta) / delta` for the configured `eta`.
    pub holds: bool,
}

impl AnalyticChain {
    fn new(n: u32, delta: f64, eta: f64, eta0: f64) -> Self {
        let f = feasibility(n, delta, eta, eta0);
        let u_bound = f.diagonal_margin_positive.then(|| 1.0 / (delta - eta0 * (n as f64).exp2()));
        let neumann_bound = f.q.filter(|q| *q < 1.0).map(|q| 1.0 / (1.0 - q));
        let implied_eta = f.v_bound.map(|v| delta * v - 1.0);
        Self {
            eta0,
            u_bound,
            q: f.q,
            neumann_bound,
            v_bound: f.v_bound,
            implied_eta,
            holds: f.separation_positive && f.contraction_below_one && f.chain_within_target,
        }
    }
}

/// Norms of the intermediate maps, for comparison with the analytic bounds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntermediateNorms {
    /// `||U||` (exact for `H^2`, certified upper bound otherwise).
    pub u: f64,
    /// `||(U T I - Id) P||`, compared with `q`.
    pub crucial: f64,
    /// `||(U T I)^-1 P||`, compared with `1 / (1 - q)`.
    pub inverse: f64,
    /// `||V||`.
    pub v: f64,
    pub exact: bool,
}

/// Outcome of [`assemble`].
#[derive(Clone, Debug)]
pub struct FactorizationResult {
    pub space: SpaceTag,
    pub n: u32,
    pub host: u32,
    pub e: HaarMap,
    pub f: HaarMap,
    pub theta: SignAssignment,
    pub multiplier_signs: Vec<i8>,
    pub collection: BlockCollection,
    /// `<T' b_I, b_I>` for the sign-normalized `T'`.
    pub tau: Vec<f64>,
    pub condition: f64,
    /// `max |<T' b_I', b_I>|`, `I != I'`.
    pub achieved_off_diagonal: f64,
    /// `max |<T' b_I, b_I> - sum_K <T' h_K, h_K>|`.
    pub achieved_diagonal: f64,
    pub residual: f64,
    pub residual_exact: bool,
    pub tolerance: f64,
    pub norm_e: OpNormEstimate,
    pub norm_f: OpNormEstimate,
    /// `(1 + eta) / delta`.
    pub norm_product_bound: f64,
    /// The chain at the searched `eta0`.
    pub analytic_configured: AnalyticChain,
    /// The chain at the achieved maxima, the smallest `eta0` for which the
    /// chosen signs satisfy the almost-diagonal inequalities.
    pub analytic_achieved: AnalyticChain,
    pub intermediate: IntermediateNorms,
    pub settings: AssembleSettings,
}

impl FactorizationResult {
    /// `||E|| ||F||` from the certificates: `(lower, upper)`.
    pub fn norm_product(&self) -> (f64, f64) {
        (self.norm_e.lower * self.norm_f.lower, self.norm_e.upper * self.norm_f.upper)
    }

    /// Residual within tolerance and `||E|| ||F|| <= (1 + eta) / delta`
    /// (exact comparison for `H^2`, upper-bound comparison otherwise).
    pub fn numerical_ok(&self) -> bool {
        self.residual <= self.tolerance && self.norm_product().1 <= self.norm_product_bound * (1.0 + 1e-12)
    }
}

fn map_norm(m: &HaarMap, space: SpaceTag) -> Result<f64> {
    m.norm_upper_bound(space)
}

/// Builds `E` and `F` with `F T E = Id_{W_n}` and certifies them.
///
/// `theta` must come from a sign search on the sign-normalized operator.
/// Errors name the failed precondition: Jones failure, vanishing or
/// insufficient diagonal, or an ill-conditioned block matrix.
pub fn assemble(
    t: &HaarOperator,
    c: &BlockCollection,
    theta: &SignAssignment,
    settings: &AssembleSettings,
) -> Result<FactorizationResult> {
    settings.space.validate()?;
    if !(settings.delta > 0.0 && settings.eta > 0.0 && settings.eta0 > 0.0) {
        return Err(Error::InvalidParameter("delta, eta and eta0 must be positive".into()));
    }
    check_host_operator(t, c)?;
    require_jones(c)?;
    check_signs(c, theta)?;
    let n = c.target_level();
    let host = c.host_level();
    let two_n = (n as f64).exp2();
    if settings.delta - settings.eta0 * two_n <= 0.0 {
        return Err(Error::InsufficientSeparation(format!(
            "delta - eta0 2^n = {} - {} * {two_n} <= 0",
            settings.delta, settings.eta0
        )));
    }
    let sn = sign_normalize(t);
    let tn = &sn.normalized;

    let bc = block_columns(c, theta);
    let gram = block_gram(tn, &bc);
    let tau: Vec<f64> = gram.diagonal().iter().copied().collect();
    let mut achieved_off: f64 = 0.0;
    let mut achieved_diag: f64 = 0.0;
    for (i, members) in c.iter() {
        let ii = i.index();
        let diag_sum: f64 = members.iter().map(|&k| tn.entry(k, k)).sum();
        achieved_diag = achieved_diag.max((gram[(ii, ii)] - diag_sum).abs());
        // Lower bound on the diagonal.
        let floor = (settings.delta - settings.eta0 * two_n) * c.union_measure(i).to_f64();
        if gram[(ii, ii)] < floor * (1.0 - 1e-12) {
            return Err(Error::InsufficientSeparation(format!(
                "<T b_I, b_I> = {} < (delta - 2^n eta0) |B_I| = {floor} for I = {i}",
                gram[(ii, ii)]
            )));
        }
        for j in 0..gram.ncols() {
            if j != ii {
                achieved_off = achieved_off.max(gram[(ii, j)].abs());
            }
        }
    }

    let block = block_matrix(tn, c, theta)?;
    let inv = invert_on_range(&block)?;
    let b_map = build_b(c, theta)?;
    let a_map = build_a(c, theta)?;
    let u_map = build_u(tn, c, theta)?;
    // (U T I)^-1 acting on span{b_I}, written through A (block coordinates).
    let inv_on_y = HaarMap::new(host, host, b_map.matrix.clone() * &inv.inverse * &a_map.matrix)?;
    let v_map = inv_on_y.compose(&u_map)?;
    let m_map = sn.multiplier();
    let e = m_map.compose(&b_map)?;
    let f = a_map.compose(&v_map)?;

    let defect = f.compose(&t.to_map())?.compose(&e)?;
    let defect = HaarMap::new(n, n, defect.matrix - DMatrix::<f64>::identity(dimension(n), dimension(n)))?;
    let residual = map_norm(&defect, settings.space)?;

    let norm_e = e.norm_estimate(settings.space, &settings.solver)?;
    let norm_f = f.norm_estimate(settings.space, &settings.solver)?;

    let d = dimension(n);
    let crucial = HaarMap::new(host, host, b_map.matrix.clone() * (&block - DMatrix::<f64>::identity(d, d)) * &a_map.matrix)?;
    let intermediate = IntermediateNorms {
        u: map_norm(&u_map, settings.space)?,
        crucial: map_norm(&crucial, settings.space)?,
        inverse: map_norm(&inv_on_y, settings.space)?,
        v: map_norm(&v_map, settings.space)?,
        exact: settings.space.is_hilbert(),
    };

    let achieved = achieved_off.max(achieved_diag);
    Ok(FactorizationResult {
        space: settings.space,
        n,
        host,
        e,
        f,
        theta: theta.clone(),
        multiplier_signs: sn.signs.clone(),
        collection: c.clone(),
        tau,
        condition: inv.condition,
        achieved_off_diagonal: achieved_off,
        achieved_diagonal: achieved_diag,
        residual,
        residual_exact: settings.space.is_hilbert(),
        tolerance: settings.tolerance,
        norm_e,
        norm_f,
        norm_product_bound: (1.0 + settings.eta) / settings.delta,
        analytic_configured: AnalyticChain::new(n, settings.delta, settings.eta, settings.eta0),
        analytic_achieved: AnalyticChain::new(n, settings.delta, settings.eta, achieved),
        intermediate,
        settings: settings.clone(),
    })
}

/// JSON form of a [`FactorizationResult`]; `E` and `F` use the operator file
/// layout.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FactorizationRecord {
    pub space: SpaceTag,
    pub n: u32,
    #[serde(rename = "N")]
    pub host: u32,
    pub theta: SignAssignment,
    pub multiplier_signs: Vec<i8>,
    pub collection: Vec<(DyadicInterval, DyadicInterval)>,
    pub e: MapFile,
    pub f: MapFile,
    pub tau: Vec<f64>,
    pub condition: f64,
    pub achieved_off_diagonal: f64,
    pub achieved_diagonal: f64,
    pub residual: f64,
    pub residual_exact: bool,
    pub tolerance: f64,
    pub norm_e: OpNormEstimate,
    pub norm_f: OpNormEstimate,
    pub norm_product: (f64, f64),
    pub norm_product_bound: f64,
    pub analytic_configured: AnalyticChain,
    pub analytic_achieved: AnalyticChain,
    pub intermediate: IntermediateNorms,
    pub settings: AssembleSettings,
}

impl FactorizationResult {
    pub fn to_record(&self) -> FactorizationRecord {
        FactorizationRecord {
            space: self.space,
            n: self.n,
            host: self.host,
            theta: self.theta.clone(),
            multiplier_signs: self.multiplier_signs.clone(),
            collection: self.collection.pairs(),
            e: MapFile::from_map(&self.e),
            f: MapFile::from_map(&self.f),
            tau: self.tau.clone(),
            condition: self.condition,
            achieved_off_diagonal: self.achieved_off_diagonal,
            achieved_diagonal: self.achieved_diagonal,
            residual: self.residual,
            residual_exact: self.residual_exact,
            tolerance: self.tolerance,
            norm_e: self.norm_e.clone(),
            norm_f: self.norm_f.clone(),
            norm_product: self.norm_product(),
            norm_product_bound: self.norm_product_bound,
            analytic_configured: self.analytic_configured.clone(),
            analytic_achieved: self.analytic_achieved.clone(),
            intermediate: self.intermediate.clone(),
            settings: self.settings.clone(),
        }
    }
}

/// Source of the bound `||E|| ||F|| <= (1 + eta) / delta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProductCertificate {
    /// Exact spectral norms (`H^2`).
    Exact,
    /// Certified upper bounds of both norms.
    UpperBound,
    /// `||E|| ||F|| <= ||B|| ||A|| ||V||` with `||B||, ||A|| <= 1` and the
    /// chain bound on `||V||` at the achieved `eta0`.
    Analytic,
    None,
}

/// Independent recomputation of `F T E - Id`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationReport {
    pub space: SpaceTag,
    /// Largest entry of the defect matrix.
    pub defect_max_entry: f64,
    /// Norm of the defect: exact for `H^2`, certified upper bound otherwise.
    pub defect_norm: f64,
    /// Ascent lower bound for the defect norm (equal to `defect_norm` for `H^2`).
    pub defect_lower: f64,
    pub tolerance: f64,
    pub norm_product: (f64, f64),
    pub norm_product_bound: f64,
    /// How the product bound was certified.
    pub product_certificate: ProductCertificate,
    pub residual_ok: bool,
    pub product_ok: bool,
    pub analytic_ok: bool,
    pub passed: bool,
}

pub fn verify(result: &FactorizationResult, t: &HaarOperator, space: SpaceTag, opts: &SolverOptions) -> Result<VerificationReport> {
    space.validate()?;
    let n = result.n;
    let d = dimension(n);
    let fte = &result.f.matrix * t.coefficient_matrix() * &result.e.matrix;
    let defect = HaarMap::new(n, n, fte - DMatrix::<f64>::identity(d, d))?;
    let defect_max_entry = defect.matrix.abs().max();
    let est = defect.norm_estimate(space, opts)?;
    let (e_up, f_up) = if space == result.space {
        (result.norm_e.upper, result.norm_f.upper)
    } else {
        (result.e.norm_upper_bound(space)?, result.f.norm_upper_bound(space)?)
    };
    let (e_lo, f_lo) = if space == result.space {
        (result.norm_e.lower, result.norm_f.lower)
    } else {
        (result.e.norm_estimate(space, opts)?.lower, result.f.norm_estimate(space, opts)?.lower)
    };
    let product = (e_lo * f_lo, e_up * f_up);
    let residual_ok = est.upper <= result.tolerance;
    let analytic_ok = result.analytic_achieved.holds;
    let within = |x: f64| x <= result.norm_product_bound * (1.0 + 1e-12);
    let product_certificate = if space.is_hilbert() && within(product.1) {
        ProductCertificate::Exact
    } else if within(product.1) {
        ProductCertificate::UpperBound
    } else if analytic_ok {
        ProductCertificate::Analytic
    } else {
        ProductCertificate::None
    };
    let product_ok = product_certificate != ProductCertificate::None;
    Ok(VerificationReport {
        space,
        defect_max_entry,
        defect_norm: est.upper,
        defect_lower: est.lower,
        tolerance: result.tolerance,
        norm_product: product,
        norm_product_bound: result.norm_product_bound,
        product_certificate,
        residual_ok,
        product_ok,
        analytic_ok,
        passed: residual_ok && product_ok,
    })
}

/// Exact check that the enumerated `eta0` satisfies the diagonal margin,
/// returned as `delta - eta0 2^n` in rationals.
pub fn diagonal_margin_exact(n: u32, delta: f64, eta0: f64) -> Result<BigRational> {
    Ok(rational(delta)? - rational(eta0)? * pow2_rational(n as i64))
}

/// Whether `m0 + n <= N`; with the notation of [`derive_params`].
pub fn consistent_dimension(p: &Params) -> bool {
    p.m0 + p.n as i64 <= p.big_n
}
