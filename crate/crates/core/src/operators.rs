//! Linear maps between the spaces `W_n`, written in the Haar basis.
//!
//! [`HaarOperator`] stores the bilinear form `G[K', K] = <T h_K, h_K'>` of an
//! operator on `W_N` (column = input). [`HaarMap`] stores the coefficient
//! matrix of a map `W_n -> W_m`, i.e. the matrix sending `(a_K)` to the
//! coefficients of the image. The two are related by
//! `C[K', K] = G[K', K] / |K'|`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dyadic::{dimension, DyadicInterval, MAX_OPERATOR_LEVEL};
use crate::error::{Error, Result};
use crate::haar::HaarVector;
use crate::norms::{hp_norm_grad, norm_hp, norm_slinf, slinf_norm_grad, SpaceTag};
use crate::solver::{multi_start, SolverOptions};

fn measures(level: u32) -> DVector<f64> {
    DVector::from_iterator(
        dimension(level),
        (0..dimension(level)).map(|i| DyadicInterval::from_index(i).measure_f64()),
    )
}

fn check_level(level: u32) -> Result<()> {
    if level > MAX_OPERATOR_LEVEL {
        return Err(Error::Capacity { level, limit: MAX_OPERATOR_LEVEL });
    }
    Ok(())
}

/// An operator `T : W_N -> W_N` given by its Haar bilinear form.
#[derive(Clone, Debug, PartialEq)]
pub struct HaarOperator {
    level: u32,
    g: DMatrix<f64>,
}

impl HaarOperator {
    pub fn new(level: u32, g: DMatrix<f64>) -> Result<Self> {
        check_level(level)?;
        let d = dimension(level);
        if g.nrows() != d || g.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} form for level {level} (expected {d}x{d})",
                g.nrows(),
                g.ncols()
            )));
        }
        Ok(Self { level, g })
    }

    pub fn zeros(level: u32) -> Result<Self> {
        check_level(level)?;
        let d = dimension(level);
        Ok(Self { level, g: DMatrix::zeros(d, d) })
    }

    /// `G[K, K] = |K|`.
    pub fn identity(level: u32) -> Result<Self> {
        Self::diagonal(level, |_| 1.0)
    }

    /// The Haar multiplier `h_K -> d(K) h_K`.
    pub fn diagonal(level: u32, d: impl Fn(DyadicInterval) -> f64) -> Result<Self> {
        let mut t = Self::zeros(level)?;
        for i in 0..dimension(level) {
            let k = DyadicInterval::from_index(i);
            t.g[(i, i)] = d(k) * k.measure_f64();
        }
        Ok(t)
    }

    pub fn from_coefficient_matrix(level: u32, c: DMatrix<f64>) -> Result<Self> {
        check_level(level)?;
        let m = measures(level);
        let mut g = c;
        for (mut row, w) in g.row_iter_mut().zip(m.iter()) {
            row *= *w;
        }
        Self::new(level, g)
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    /// The bilinear form, rows indexed by `K'`, columns by `K`.
    pub fn form(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// `<T h_col, h_row>`.
    pub fn entry(&self, row: DyadicInterval, col: DyadicInterval) -> f64 {
        self.g[(row.index(), col.index())]
    }

    pub fn set_entry(&mut self, row: DyadicInterval, col: DyadicInterval, value: f64) -> Result<()> {
        if row.level() > self.level || col.level() > self.level {
            return Err(Error::DimensionMismatch(format!(
                "entry ({row}, {col}) outside level {}",
                self.level
            )));
        }
        self.g[(row.index(), col.index())] = value;
        Ok(())
    }

    /// `C = diag(1/|K'|) G`.
    pub fn coefficient_matrix(&self) -> DMatrix<f64> {
        let m = measures(self.level);
        let mut c = self.g.clone();
        for (mut row, w) in c.row_iter_mut().zip(m.iter()) {
            row /= *w;
        }
        c
    }

    pub fn to_map(&self) -> HaarMap {
        HaarMap { domain: self.level, codomain: self.level, matrix: self.coefficient_matrix() }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { level: self.level, g: &self.g * c }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.level != other.level {
            return Err(Error::DimensionMismatch("operators at different levels".into()));
        }
        Ok(Self { level: self.level, g: &self.g + &other.g })
    }

    /// The adjoint under the pairing, `G -> G^T`.
    pub fn adjoint(&self) -> Self {
        Self { level: self.level, g: self.g.transpose() }
    }

    /// Coefficients of `T f`.
    pub fn apply(&self, f: &HaarVector) -> Result<HaarVector> {
        self.to_map().apply(f)
    }

    /// `sum_{K, K'} a_K b_K' G[K', K] = <T f, g>`.
    pub fn bilinear(&self, f: &HaarVector, g: &HaarVector) -> Result<f64> {
        if f.level() != self.level || g.level() != self.level {
            return Err(Error::DimensionMismatch(format!(
                "vectors at levels {} and {} for an operator at level {}",
                f.level(),
                g.level(),
                self.level
            )));
        }
        let a = DVector::from_column_slice(f.coeffs());
        let b = DVector::from_column_slice(g.coeffs());
        Ok(b.dot(&(&self.g * a)))
    }

    pub fn diagonal_values(&self) -> Vec<f64> {
        self.g.diagonal().iter().copied().collect()
    }
}

/// Outcome of the large-diagonal test `|<T h_K, h_K>| >= delta |K|`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagonalReport {
    pub requested_delta: f64,
    /// `<T h_K, h_K>` in level-major order.
    pub values: Vec<f64>,
    /// `|<T h_K, h_K>| / |K|`.
    pub ratios: Vec<f64>,
    pub achieved_delta: f64,
    /// First interval attaining the minimum ratio.
    pub weakest: DyadicInterval,
    pub passed: bool,
}

pub fn check_large_diagonal(t: &HaarOperator, delta: f64) -> Result<DiagonalReport> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive (got {delta})")));
    }
    let values = t.diagonal_values();
    let ratios: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(i, v)| v.abs() / DyadicInterval::from_index(i).measure_f64())
        .collect();
    let (weakest, achieved) = ratios
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &r)| if r < acc.1 { (i, r) } else { acc });
    Ok(DiagonalReport {
        requested_delta: delta,
        values,
        ratios,
        achieved_delta: achieved,
        weakest: DyadicInterval::from_index(weakest),
        passed: achieved >= delta,
    })
}

/// `M h_K = sign(<T h_K, h_K>) h_K` and `T M`, whose diagonal is `|<T h_K, h_K>|`.
#[derive(Clone, Debug)]
pub struct SignNormalization {
    /// Diagonal of `M`, with `sign(0) = +1`.
    pub signs: Vec<i8>,
    pub normalized: HaarOperator,
}

impl SignNormalization {
    pub fn multiplier(&self) -> HaarMap {
        let level = self.normalized.level;
        let d = dimension(level);
        let diag = DVector::from_iterator(d, self.signs.iter().map(|&s| f64::from(s)));
        HaarMap { domain: level, codomain: level, matrix: DMatrix::from_diagonal(&diag) }
    }
}

pub fn sign_normalize(t: &HaarOperator) -> SignNormalization {
    let signs: Vec<i8> = t.g.diagonal().iter().map(|&v| if v < 0.0 { -1 } else { 1 }).collect();
    let mut g = t.g.clone();
    for (mut col, &s) in g.column_iter_mut().zip(&signs) {
        if s < 0 {
            col.neg_mut();
        }
    }
    SignNormalization { signs, normalized: HaarOperator { level: t.level, g } }
}

/// A map `W_domain -> W_codomain` as a coefficient matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct HaarMap {
    pub domain: u32,
    pub codomain: u32,
    pub matrix: DMatrix<f64>,
}

impl HaarMap {
    pub fn new(domain: u32, codomain: u32, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != dimension(codomain) || matrix.ncols() != dimension(domain) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix for a map from level {domain} to level {codomain}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { domain, codomain, matrix })
    }

    pub fn identity(level: u32) -> Self {
        let d = dimension(level);
        Self { domain: level, codomain: level, matrix: DMatrix::identity(d, d) }
    }

    pub fn apply(&self, f: &HaarVector) -> Result<HaarVector> {
        if f.level() != self.domain {
            return Err(Error::DimensionMismatch(format!(
                "vector at level {} for a map from level {}",
                f.level(),
                self.domain
            )));
        }
        let out = &self.matrix * DVector::from_column_slice(f.coeffs());
        HaarVector::from_coeffs(self.codomain, out.as_slice().to_vec())
    }

    /// `self . other`.
    pub fn compose(&self, other: &HaarMap) -> Result<HaarMap> {
        if other.codomain != self.domain {
            return Err(Error::DimensionMismatch(format!(
                "cannot compose level {}->{} after {}->{}",
                self.domain, self.codomain, other.domain, other.codomain
            )));
        }
        Ok(HaarMap { domain: other.domain, codomain: self.codomain, matrix: &self.matrix * &other.matrix })
    }

    /// The bilinear form `G[K', K] = <A h_K, h_K'>`, rows over the codomain.
    pub fn bilinear_form(&self) -> DMatrix<f64> {
        let m = measures(self.codomain);
        let mut g = self.matrix.clone();
        for (mut row, w) in g.row_iter_mut().zip(m.iter()) {
            row *= *w;
        }
        g
    }

    /// The adjoint `W_codomain -> W_domain` under the pairing.
    pub fn adjoint(&self) -> HaarMap {
        let dm = measures(self.domain);
        let cm = measures(self.codomain);
        let mut t = self.matrix.transpose();
        for (mut row, w) in t.row_iter_mut().zip(dm.iter()) {
            row /= *w;
        }
        for (mut col, w) in t.column_iter_mut().zip(cm.iter()) {
            col *= *w;
        }
        HaarMap { domain: self.codomain, codomain: self.domain, matrix: t }
    }

    /// `H^2` operator norm: spectral norm of `D_cod^(1/2) C D_dom^(-1/2)`.
    pub fn hilbert_norm(&self) -> (f64, HaarVector) {
        let dm = measures(self.domain);
        let cm = measures(self.codomain);
        let mut m = self.matrix.clone();
        for (mut row, w) in m.row_iter_mut().zip(cm.iter()) {
            row *= w.sqrt();
        }
        for (mut col, w) in m.column_iter_mut().zip(dm.iter()) {
            col /= w.sqrt();
        }
        let svd = m.svd(false, true);
        let (k, sigma) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
        let v_t = svd.v_t.expect("requested");
        let coeffs: Vec<f64> = v_t.row(k).iter().zip(dm.iter()).map(|(v, w)| v / w.sqrt()).collect();
        let witness = HaarVector::from_coeffs(self.domain, coeffs).expect("dimension fixed");
        (sigma, witness)
    }

    /// A certified upper bound on the operator norm in `space`.
    ///
    /// Each coefficient obeys `|a_K| <= ||f|| / ||h_K||`, so the image is
    /// dominated coefficientwise by `u_K' = sum_K |C[K', K]| / ||h_K||`.
    /// `H^p` and `SL^inf` norms are monotone in `|coefficients|`; the dual
    /// case falls back to the triangle inequality.
    pub fn norm_upper_bound(&self, space: SpaceTag) -> Result<f64> {
        space.validate()?;
        if space.is_hilbert() {
            return Ok(self.hilbert_norm().0);
        }
        let (s, _) = space.haar_exponents();
        let haar_norm = |i: usize| DyadicInterval::from_index(i).measure_f64().powf(s);
        let u: Vec<f64> = self
            .matrix
            .row_iter()
            .map(|row| row.iter().enumerate().map(|(k, c)| c.abs() / haar_norm(k)).sum())
            .collect();
        let u = HaarVector::from_coeffs(self.codomain, u)?;
        Ok(match space {
            SpaceTag::Hp { p } => norm_hp(&u, p)?,
            SpaceTag::Slinf => norm_slinf(&u),
            SpaceTag::HpDual { .. } => u.coeffs().iter().enumerate().map(|(i, x)| x * haar_norm(i)).sum(),
        })
    }

    /// Operator norm estimate in `space`.
    pub fn norm_estimate(&self, space: SpaceTag, opts: &SolverOptions) -> Result<OpNormEstimate> {
        space.validate()?;
        if space.is_hilbert() {
            let (value, witness) = self.hilbert_norm();
            return Ok(OpNormEstimate {
                lower: value,
                upper: value,
                exact: true,
                witness,
                via_adjoint: false,
                converged: true,
            });
        }
        let upper = self.norm_upper_bound(space)?;
        match space {
            SpaceTag::HpDual { p } => {
                // ||T||_{(H^p)*} = ||T*||_{H^p} in finite dimension.
                let inner = self.adjoint().ascent_lower_bound(SpaceTag::Hp { p }, opts)?;
                Ok(OpNormEstimate { upper, via_adjoint: true, ..inner })
            }
            _ => Ok(OpNormEstimate { upper, ..self.ascent_lower_bound(space, opts)? }),
        }
    }

    fn ascent_lower_bound(&self, space: SpaceTag, opts: &SolverOptions) -> Result<OpNormEstimate> {
        let dom = self.domain;
        let cod = self.codomain;
        let norm_grad = move |v: &HaarVector| -> (f64, Vec<f64>) {
            match space {
                SpaceTag::Hp { p } => hp_norm_grad(v, p),
                _ => slinf_norm_grad(v),
            }
        };
        let c = &self.matrix;
        let objective = |x: &[f64]| {
            let a = HaarVector::from_coeffs(dom, x.to_vec()).expect("dimension fixed");
            let (na, ga) = norm_grad(&a);
            if na == 0.0 {
                return (f64::NEG_INFINITY, vec![0.0; x.len()]);
            }
            let image = c * DVector::from_column_slice(x);
            let ta = HaarVector::from_coeffs(cod, image.as_slice().to_vec()).expect("dimension fixed");
            let (nt, gt) = norm_grad(&ta);
            let back = c.tr_mul(&DVector::from_vec(gt));
            let grad = back.iter().zip(&ga).map(|(b, g)| (b * na - nt * g) / (na * na)).collect();
            (nt / na, grad)
        };
        // Seed with the best basis vectors h_K.
        let d = dimension(dom);
        let mut basis: Vec<(usize, f64)> = (0..d)
            .map(|k| {
                let mut e = vec![0.0; d];
                e[k] = 1.0;
                (k, objective(&e).0)
            })
            .collect();
        basis.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let seeds: Vec<Vec<f64>> = basis
            .iter()
            .take((opts.starts / 2).max(1))
            .map(|&(k, _)| {
                let mut e = vec![0.0; d];
                e[k] = 1.0;
                e
            })
            .collect();
        let run = multi_start(seeds, d, &objective, opts);
        let witness = HaarVector::from_coeffs(dom, run.point)?;
        Ok(OpNormEstimate {
            lower: run.value,
            upper: f64::INFINITY,
            exact: false,
            witness,
            via_adjoint: false,
            converged: run.converged,
        })
    }
}

/// Operator norm certificate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OpNormEstimate {
    /// Attained ratio `||T w|| / ||w||` at the witness.
    pub lower: f64,
    /// Certified upper bound.
    pub upper: f64,
    /// `lower == upper` is the true norm (Hilbert case).
    pub exact: bool,
    pub witness: HaarVector,
    /// The witness lives in the predual and certifies the adjoint.
    pub via_adjoint: bool,
    pub converged: bool,
}

/// Operator norm of `T` on `W_N`; exact for `H^2`, a certified lower bound
/// with witness (plus an upper bound) otherwise.
pub fn op_norm(t: &HaarOperator, space: SpaceTag, opts: &SolverOptions) -> Result<OpNormEstimate> {
    t.to_map().norm_estimate(space, opts)
}

/// One entry breaking `|G[K', K]| <= Gamma ||h_K|| ||h_K'||_predual`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntryViolation {
    pub row: DyadicInterval,
    pub col: DyadicInterval,
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntryBoundReport {
    pub gamma: f64,
    pub space: SpaceTag,
    /// `max |G[K', K]| / (|K|^s |K'|^t)`, a lower bound for the norm.
    pub max_ratio: f64,
    pub violations: Vec<EntryViolation>,
    pub passed: bool,
}

/// Checks `|<T h_K, h_K'>| <= Gamma |K|^s |K'|^t` for every pair, where
/// `(s, t)` are the exponents of `space` (`1/p, 1/p'` for `H^p`). Without
/// `gamma` the exact `H^2` norm is used, which requires a Hilbert space.
pub fn elementary_bound_check(
    t: &HaarOperator,
    space: SpaceTag,
    gamma: Option<f64>,
) -> Result<EntryBoundReport> {
    space.validate()?;
    let gamma = match gamma {
        Some(g) => g,
        None if space.is_hilbert() => t.to_map().hilbert_norm().0,
        None => {
            return Err(Error::InvalidParameter(
                "an explicit Gamma is required outside H^2".into(),
            ))
        }
    };
    let (s, tt) = space.haar_exponents();
    let d = t.dim();
    let mut violations = Vec::new();
    let mut max_ratio: f64 = 0.0;
    for col in 0..d {
        let k = DyadicInterval::from_index(col);
        for row in 0..d {
            let kp = DyadicInterval::from_index(row);
            let scale = k.measure_f64().powf(s) * kp.measure_f64().powf(tt);
            let value = t.g[(row, col)];
            max_ratio = max_ratio.max(value.abs() / scale);
            let bound = gamma * scale;
            if value.abs() > bound * (1.0 + 1e-12) {
                violations.push(EntryViolation { row: kp, col: k, value, bound });
            }
        }
    }
    Ok(EntryBoundReport { gamma, space, max_ratio, passed: violations.is_empty(), violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::pairing;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iv(l: u32, k: u64) -> DyadicInterval {
        DyadicInterval::new(l, k).unwrap()
    }

    fn random_operator(level: u32, seed: u64) -> HaarOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = dimension(level);
        HaarOperator::new(level, DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn random_vector(level: u32, rng: &mut ChaCha8Rng) -> HaarVector {
        HaarVector::from_coeffs(level, (0..dimension(level)).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn bilinear_examples() {
        let id = HaarOperator::identity(3).unwrap();
        for a in 0..dimension(3) {
            let ka = DyadicInterval::from_index(a);
            let ha = HaarVector::haar(ka, 3).unwrap();
            for b in 0..dimension(3) {
                let hb = HaarVector::haar(DyadicInterval::from_index(b), 3).unwrap();
                let expected = if a == b { ka.measure_f64() } else { 0.0 };
                assert_eq!(id.bilinear(&ha, &hb).unwrap(), expected);
            }
        }
        let mut t = HaarOperator::zeros(2).unwrap();
        t.set_entry(iv(2, 1), iv(1, 0), 3.0).unwrap();
        let hk = HaarVector::haar(iv(1, 0), 2).unwrap();
        let hkp = HaarVector::haar(iv(2, 1), 2).unwrap();
        assert_eq!(t.bilinear(&hk, &hkp).unwrap(), 3.0);
        assert!(t.bilinear(&HaarVector::zeros(1).unwrap(), &hkp).is_err());
    }

    #[test]
    fn large_diagonal_examples() {
        let id = HaarOperator::identity(4).unwrap();
        let r = check_large_diagonal(&id, 1.0).unwrap();
        assert!(r.passed);
        assert_eq!(r.achieved_delta, 1.0);
        assert!(!check_large_diagonal(&id, 1.01).unwrap().passed);
        let d = id.scale(0.3);
        assert_eq!(check_large_diagonal(&d, 0.1).unwrap().achieved_delta, 0.3);
        assert!(check_large_diagonal(&id, 0.0).is_err());
    }

    #[test]
    fn sign_normalize_examples() {
        let neg = HaarOperator::identity(2).unwrap().scale(-1.0);
        let sn = sign_normalize(&neg);
        assert!(sn.signs.iter().all(|&s| s == -1));
        assert_eq!(sn.normalized, HaarOperator::identity(2).unwrap());
        let sn = sign_normalize(&HaarOperator::identity(2).unwrap());
        assert!(sn.signs.iter().all(|&s| s == 1));
        let mixed = HaarOperator::diagonal(1, |k| if k.index() == 0 { 2.0 } else { -3.0 }).unwrap();
        let sn = sign_normalize(&mixed);
        let diag = sn.normalized.diagonal_values();
        assert_eq!(diag, vec![2.0, 1.5, 1.5]);
        assert_eq!(sign_normalize(&HaarOperator::zeros(1).unwrap()).signs, vec![1, 1, 1]);
    }

    #[test]
    fn sign_normalize_is_isometric_with_nonnegative_diagonal() {
        let t = random_operator(4, 3);
        let sn = sign_normalize(&t);
        assert!(sn.normalized.diagonal_values().iter().all(|&v| v >= 0.0));
        let m = sn.multiplier();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let f = random_vector(4, &mut rng);
            let mf = m.apply(&f).unwrap();
            for p in [1.0, 2.0, 3.0] {
                assert_eq!(norm_hp(&f, p).unwrap(), norm_hp(&mf, p).unwrap());
            }
            assert_eq!(norm_slinf(&f), norm_slinf(&mf));
        }
        // T M composed as maps agrees with the normalized form.
        let tm = t.to_map().compose(&m).unwrap();
        assert!((tm.matrix - sn.normalized.coefficient_matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn apply_matches_bilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for level in [0, 3, 6, 8] {
            let t = random_operator(level, level as u64);
            for _ in 0..5 {
                let f = random_vector(level, &mut rng);
                let g = random_vector(level, &mut rng);
                let lhs = pairing(&t.apply(&f).unwrap(), &g);
                let rhs = t.bilinear(&f, &g).unwrap();
                assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn op_norm_examples() {
        let opts = SolverOptions::default();
        let id = HaarOperator::identity(3).unwrap();
        for space in [SpaceTag::Hp { p: 2.0 }, SpaceTag::Hp { p: 1.0 }, SpaceTag::Slinf, SpaceTag::HpDual { p: 3.0 }] {
            let est = op_norm(&id, space, &opts).unwrap();
            assert!((est.lower - 1.0).abs() < 1e-12, "{space}: {}", est.lower);
            assert!(est.upper >= 1.0 - 1e-12);
        }
        let est = op_norm(&id.scale(-2.5), SpaceTag::Hp { p: 2.0 }, &opts).unwrap();
        assert!(est.exact && (est.lower - 2.5).abs() < 1e-12);
    }

    /// Independent route: largest eigenvalue of `M^T M` for the rescaled
    /// form `M = D^(-1/2) G D^(-1/2)`, by symmetric eigendecomposition.
    fn weighted_spectral_oracle(t: &HaarOperator) -> f64 {
        let m = measures(t.level());
        let d = t.dim();
        let scaled = DMatrix::from_fn(d, d, |i, j| t.form()[(i, j)] / (m[i] * m[j]).sqrt());
        let gram = scaled.transpose() * &scaled;
        gram.symmetric_eigenvalues().max().sqrt()
    }

    #[test]
    fn hilbert_norm_matches_oracle() {
        for seed in 0..10 {
            let t = random_operator(2, seed);
            let exact = op_norm(&t, SpaceTag::Hp { p: 2.0 }, &SolverOptions::default()).unwrap();
            let oracle = weighted_spectral_oracle(&t);
            assert!((exact.lower - oracle).abs() <= 1e-9 * oracle);
            // The witness attains the norm.
            let w = &exact.witness;
            let ratio = norm_hp(&t.apply(w).unwrap(), 2.0).unwrap() / norm_hp(w, 2.0).unwrap();
            assert!((ratio - oracle).abs() <= 1e-9 * oracle);
        }
        let t = random_operator(5, 42);
        let exact = op_norm(&t, SpaceTag::Hp { p: 2.0 }, &SolverOptions::default()).unwrap();
        assert!((exact.lower - weighted_spectral_oracle(&t)).abs() <= 1e-9 * exact.lower);
    }

    #[test]
    fn lower_bounds_respect_diagonal_norms() {
        // For a Haar multiplier the norm in every space is max |d(K)|.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..4 {
            let vals: Vec<f64> = (0..dimension(3)).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t = HaarOperator::diagonal(3, |k| vals[k.index()]).unwrap();
            let truth = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for space in [SpaceTag::Hp { p: 1.0 }, SpaceTag::Hp { p: 3.0 }, SpaceTag::Slinf, SpaceTag::HpDual { p: 1.5 }] {
                let est = op_norm(&t, space, &SolverOptions::with_seed(11)).unwrap();
                assert!(est.lower <= truth * (1.0 + 1e-12), "{space}: {} > {truth}", est.lower);
                assert!(est.lower >= truth * (1.0 - 1e-12), "{space}: {} < {truth}", est.lower);
                assert!(est.upper >= truth * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn upper_bounds_dominate_lower_bounds() {
        for seed in 0..3 {
            let t = random_operator(3, 100 + seed);
            for space in [SpaceTag::Hp { p: 1.0 }, SpaceTag::Hp { p: 3.0 }, SpaceTag::Slinf, SpaceTag::HpDual { p: 1.5 }] {
                let est = op_norm(&t, space, &SolverOptions::with_seed(seed)).unwrap();
                assert!(est.lower <= est.upper * (1.0 + 1e-12), "{space}: {} > {}", est.lower, est.upper);
            }
        }
    }

    #[test]
    fn elementary_bound_examples() {
        let id = HaarOperator::identity(3).unwrap();
        let r = elementary_bound_check(&id, SpaceTag::Hp { p: 2.0 }, Some(1.0)).unwrap();
        assert!(r.passed);
        assert!((r.max_ratio - 1.0).abs() < 1e-15);
        for seed in 0..5 {
            let t = random_operator(4, seed);
            let r = elementary_bound_check(&t, SpaceTag::Hp { p: 2.0 }, None).unwrap();
            assert!(r.passed, "{:?}", r.violations.first());
            let r = elementary_bound_check(&t, SpaceTag::Hp { p: 2.0 }, Some(r.max_ratio * 0.5)).unwrap();
            assert!(!r.passed);
        }
        assert!(elementary_bound_check(&id, SpaceTag::Slinf, None).is_err());
    }

    #[test]
    fn adjoint_satisfies_pairing_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_operator(3, 8).to_map();
        let adj = t.adjoint();
        let f = random_vector(3, &mut rng);
        let g = random_vector(3, &mut rng);
        let lhs = pairing(&t.apply(&f).unwrap(), &g);
        let rhs = pairing(&f, &adj.apply(&g).unwrap());
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
