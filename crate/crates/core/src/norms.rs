//! The three space norms: `H^p`, its dual `(H^p)*`, and `SL^inf`.
//!
//! `H^p` and `SL^inf` are evaluated directly from the square function on the
//! step grid. The dual norm has no closed form for general `p`; it is the
//! supremum of `<f, g>` over the `H^p` unit ball and is estimated from below
//! by [`dual_norm_hp`]. Block vectors `sum_{K in B} +-h_K` over disjoint
//! intervals have closed-form norms, exposed by [`block_norm_closed_form`]
//! as an oracle.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dyadic::{disjoint_union_measure, DyadicInterval};
use crate::error::{Error, Result};
use crate::haar::{pairing, square_sums, HaarVector};
use crate::solver::{multi_start, SolverOptions};

/// Which of the three space families a norm refers to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpaceTag {
    Hp { p: f64 },
    HpDual { p: f64 },
    Slinf,
}

impl SpaceTag {
    pub fn hp(p: f64) -> Result<Self> {
        check_exponent(p)?;
        Ok(Self::Hp { p })
    }

    pub fn hp_dual(p: f64) -> Result<Self> {
        check_exponent(p)?;
        Ok(Self::HpDual { p })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Hp { p } | Self::HpDual { p } => check_exponent(p),
            Self::Slinf => Ok(()),
        }
    }

    /// Exponents `(s, t)` with `||h_K||_W = |K|^s` and
    /// `|<T h_K, h_K'>| <= ||T|| |K|^s |K'|^t`. For `SL^inf` this is `(0, 1)`.
    pub fn haar_exponents(&self) -> (f64, f64) {
        match *self {
            Self::Hp { p } => (1.0 / p, dual_exponent_inv(p)),
            Self::HpDual { p } => (dual_exponent_inv(p), 1.0 / p),
            Self::Slinf => (0.0, 1.0),
        }
    }

    /// Whether this is `H^2` (or its dual), where every norm is Hilbertian.
    pub fn is_hilbert(&self) -> bool {
        matches!(*self, Self::Hp { p } | Self::HpDual { p } if p == 2.0)
    }
}

impl fmt::Display for SpaceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Hp { p } => write!(f, "H^{p}"),
            Self::HpDual { p } => write!(f, "(H^{p})*"),
            Self::Slinf => write!(f, "SL^inf"),
        }
    }
}

impl FromStr for SpaceTag {
    type Err = Error;

    /// Accepts `hp:<p>`, `hp-dual:<p>` and `slinf`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("slinf") {
            return Ok(Self::Slinf);
        }
        let (kind, p) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidParameter(format!("bad space `{s}`")))?;
        let p: f64 = p.parse().map_err(|_| Error::InvalidParameter(format!("bad exponent in `{s}`")))?;
        match kind {
            "hp" => Self::hp(p),
            "hp-dual" => Self::hp_dual(p),
            _ => Err(Error::InvalidParameter(format!("bad space `{s}`"))),
        }
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if p.is_finite() && p >= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidExponent(p))
    }
}

/// `1/p'` with `1/p + 1/p' = 1`; zero at `p = 1`.
pub fn dual_exponent_inv(p: f64) -> f64 {
    1.0 - 1.0 / p
}

/// `(int (S f)^p)^(1/p)`.
pub fn norm_hp(f: &HaarVector, p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(hp_from_square_sums(&square_sums(f), f.level(), p))
}

fn hp_from_square_sums(sq: &[f64], mesh: u32, p: f64) -> f64 {
    let w = (-(mesh as f64)).exp2();
    let integral: f64 = if p == 2.0 {
        sq.iter().sum::<f64>() * w
    } else {
        sq.iter().map(|s| s.powf(p / 2.0)).sum::<f64>() * w
    };
    integral.powf(1.0 / p)
}

/// `max_x S f(x)`.
pub fn norm_slinf(f: &HaarVector) -> f64 {
    square_sums(f).into_iter().fold(0.0, f64::max).sqrt()
}

/// `H^p` norm together with its gradient in the coefficients.
pub(crate) fn hp_norm_grad(f: &HaarVector, p: f64) -> (f64, Vec<f64>) {
    let level = f.level();
    let sq = square_sums(f);
    let norm = hp_from_square_sums(&sq, level, p);
    if norm == 0.0 {
        return (0.0, vec![0.0; f.dim()]);
    }
    let w = (-(level as f64)).exp2();
    // d||f||/da_I = ||f||^(1-p) a_I sum_{c in I} w S_c^(p-2)
    let weights: Vec<f64> =
        sq.iter().map(|&s| if s > 0.0 { w * s.powf(p / 2.0 - 1.0) } else { 0.0 }).collect();
    let sums = interval_sums(&weights, level);
    let scale = norm.powf(1.0 - p);
    let grad = f.coeffs().iter().zip(&sums).map(|(a, s)| scale * a * s).collect();
    (norm, grad)
}

/// `SL^inf` norm with a subgradient taken at the first maximizing cell.
pub(crate) fn slinf_norm_grad(f: &HaarVector) -> (f64, Vec<f64>) {
    let level = f.level();
    let sq = square_sums(f);
    let (argmax, max) =
        sq.iter().enumerate().fold((0, 0.0), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
    let norm = max.sqrt();
    let mut grad = vec![0.0; f.dim()];
    if norm > 0.0 {
        // Intervals containing the argmax cell: its ancestors at each level.
        for l in 0..=level {
            let i = DyadicInterval::new(l, (argmax >> (level - l)) as u64).expect("in range");
            grad[i.index()] = f.coeffs()[i.index()] / norm;
        }
    }
    (norm, grad)
}

/// For per-cell values at mesh `level`, the sum over the cells of every
/// interval in `D_{<=level}`, level-major.
fn interval_sums(cells: &[f64], level: u32) -> Vec<f64> {
    let mut out = vec![0.0; crate::dyadic::dimension(level)];
    let mut current = cells.to_vec();
    for l in (0..=level).rev() {
        let offset = (1usize << l) - 1;
        out[offset..offset + current.len()].copy_from_slice(&current);
        current = current.chunks(2).map(|w| w.iter().sum()).collect();
    }
    out
}

/// Lower-bound estimate of the `(H^p)*` norm.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualNormEstimate {
    /// `<f, witness>`; a lower bound on the dual norm.
    pub value: f64,
    /// An element of the `H^p` unit sphere attaining `value`.
    pub witness: HaarVector,
    pub iterations: usize,
    /// False when the best run hit the iteration budget before its step
    /// size collapsed; the value is then low-confidence.
    pub converged: bool,
    pub min_step: f64,
}

/// `sup { <f, g> : ||g||_{H^p} <= 1 }`, estimated by multi-start ascent of
/// `<f, g> / ||g||_{H^p}`. Starts include `f` itself, which is the exact
/// maximizer at `p = 2` and for block vectors.
pub fn dual_norm_hp(f: &HaarVector, p: f64, opts: &SolverOptions) -> Result<DualNormEstimate> {
    check_exponent(p)?;
    let level = f.level();
    if f.is_zero() {
        return Ok(DualNormEstimate {
            value: 0.0,
            witness: HaarVector::zeros(level)?,
            iterations: 0,
            converged: true,
            min_step: opts.min_step,
        });
    }
    // <f, g> = w . g with w_I = a_I |I|.
    let w: Vec<f64> = f
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, a)| a * DyadicInterval::from_index(i).measure_f64())
        .collect();
    let objective = |x: &[f64]| {
        let g = HaarVector::from_coeffs(level, x.to_vec()).expect("dimension fixed");
        let (n, dn) = hp_norm_grad(&g, p);
        if n == 0.0 {
            return (f64::NEG_INFINITY, vec![0.0; x.len()]);
        }
        let l: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
        let grad = w.iter().zip(&dn).map(|(wi, di)| (wi * n - l * di) / (n * n)).collect();
        (l / n, grad)
    };
    let signs: Vec<f64> = f.coeffs().iter().map(|a| a.signum()).collect();
    let run = multi_start(vec![f.coeffs().to_vec(), signs], f.dim(), &objective, opts);
    let g = HaarVector::from_coeffs(level, run.point)?;
    let n = norm_hp(&g, p)?;
    let witness = g.scale(1.0 / n);
    Ok(DualNormEstimate {
        value: pairing(f, &witness),
        witness,
        iterations: run.iterations,
        converged: run.converged,
        min_step: opts.min_step,
    })
}

/// Norm of `f` in the given space; the dual case returns the solver's lower
/// bound.
pub fn norm(f: &HaarVector, space: SpaceTag, opts: &SolverOptions) -> Result<f64> {
    match space {
        SpaceTag::Hp { p } => norm_hp(f, p),
        SpaceTag::HpDual { p } => Ok(dual_norm_hp(f, p, opts)?.value),
        SpaceTag::Slinf => Ok(norm_slinf(f)),
    }
}

/// Norm in every space except the dual with `p != 2`, where only a lower
/// bound is available. `H^2` is self-dual under the pairing, so that case
/// is exact.
pub fn norm_exact(f: &HaarVector, space: SpaceTag) -> Option<f64> {
    match space {
        SpaceTag::Hp { p } => norm_hp(f, p).ok(),
        SpaceTag::HpDual { p } if p == 2.0 => norm_hp(f, 2.0).ok(),
        SpaceTag::HpDual { .. } => None,
        SpaceTag::Slinf => Some(norm_slinf(f)),
    }
}

/// Closed-form norm of `sum_{K in B} theta_K h_K` for pairwise disjoint
/// `B`: `|U B|^(1/p)` in `H^p`, `|U B|^(1/p')` in the dual, and 1 in
/// `SL^inf`. The union measure is exact.
pub fn block_norm_closed_form(intervals: &[DyadicInterval], space: SpaceTag) -> Result<f64> {
    space.validate()?;
    if intervals.is_empty() {
        return Err(Error::EmptyCollection("block".into()));
    }
    let measure = disjoint_union_measure(intervals)?.to_f64();
    Ok(match space {
        SpaceTag::Hp { p } => measure.powf(1.0 / p),
        SpaceTag::HpDual { p } => {
            let e = dual_exponent_inv(p);
            if e == 0.0 {
                1.0
            } else {
                measure.powf(e)
            }
        }
        SpaceTag::Slinf => 1.0,
    })
}
