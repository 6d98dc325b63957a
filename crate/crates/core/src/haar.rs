//! Haar expansions `f = sum a_I h_I` over `D_{<=N}` and their exact
//! piecewise-constant form.

use serde::{Deserialize, Serialize};

use crate::dyadic::{dimension, DyadicInterval, IndexSet, MAX_VECTOR_LEVEL};
use crate::error::{Error, Result};

/// Coefficients `a_I`, `I` in `D_{<=N}`, in level-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HaarVector {
    level: u32,
    coeffs: Vec<f64>,
}

impl HaarVector {
    pub fn zeros(level: u32) -> Result<Self> {
        if level > MAX_VECTOR_LEVEL {
            return Err(Error::Capacity { level, limit: MAX_VECTOR_LEVEL });
        }
        Ok(Self { level, coeffs: vec![0.0; dimension(level)] })
    }

    pub fn from_coeffs(level: u32, coeffs: Vec<f64>) -> Result<Self> {
        if level > MAX_VECTOR_LEVEL {
            return Err(Error::Capacity { level, limit: MAX_VECTOR_LEVEL });
        }
        if coeffs.len() != dimension(level) {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for level {level} (expected {})",
                coeffs.len(),
                dimension(level)
            )));
        }
        Ok(Self { level, coeffs })
    }

    /// The single Haar function `h_I` at resolution `level`.
    pub fn haar(interval: DyadicInterval, level: u32) -> Result<Self> {
        let mut v = Self::zeros(level)?;
        v.set(interval, 1.0)?;
        Ok(v)
    }

    pub fn from_terms(level: u32, terms: &[(DyadicInterval, f64)]) -> Result<Self> {
        let mut v = Self::zeros(level)?;
        for &(i, a) in terms {
            let idx = v.checked_index(&i)?;
            v.coeffs[idx] += a;
        }
        Ok(v)
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    fn checked_index(&self, interval: &DyadicInterval) -> Result<usize> {
        if interval.level() > self.level {
            return Err(Error::DimensionMismatch(format!(
                "interval {interval} is finer than resolution {}",
                self.level
            )));
        }
        Ok(interval.index())
    }

    /// `a_I`, zero for intervals beyond the resolution.
    pub fn coeff(&self, interval: &DyadicInterval) -> f64 {
        if interval.level() > self.level {
            0.0
        } else {
            self.coeffs[interval.index()]
        }
    }

    pub fn set(&mut self, interval: DyadicInterval, value: f64) -> Result<()> {
        let idx = self.checked_index(&interval)?;
        self.coeffs[idx] = value;
        Ok(())
    }

    /// Nonzero terms in level-major order.
    pub fn terms(&self) -> impl Iterator<Item = (DyadicInterval, f64)> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != 0.0)
            .map(|(i, &a)| (DyadicInterval::from_index(i), a))
    }

    /// The same function viewed at a finer resolution.
    pub fn promote(&self, level: u32) -> Result<Self> {
        if level < self.level {
            return Err(Error::DimensionMismatch(format!(
                "cannot promote level {} down to {level}",
                self.level
            )));
        }
        let mut v = Self::zeros(level)?;
        v.coeffs[..self.coeffs.len()].copy_from_slice(&self.coeffs);
        Ok(v)
    }

    /// Keeps only the coefficients up to `level`.
    pub fn truncate(&self, level: u32) -> Self {
        let level = level.min(self.level);
        Self { level, coeffs: self.coeffs[..dimension(level)].to_vec() }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { level: self.level, coeffs: self.coeffs.iter().map(|a| c * a).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let (a, b) = promote_pair(self, other)?;
        let coeffs = a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x + y).collect();
        Ok(Self { level: a.level, coeffs })
    }

    /// Multiplies coefficient `a_I` by `signs[I]`.
    pub fn flip_signs(&self, signs: &[i8]) -> Self {
        let coeffs = self.coeffs.iter().zip(signs).map(|(a, &s)| a * f64::from(s)).collect();
        Self { level: self.level, coeffs }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&a| a == 0.0)
    }

    /// `sum a_I^2 |I|`, the squared `L^2` norm.
    pub fn l2_norm_squared(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, a)| a * a * DyadicInterval::from_index(i).measure_f64())
            .sum()
    }

    pub fn index_set(&self) -> IndexSet {
        IndexSet::new(self.level).expect("level validated at construction")
    }
}

/// Brings two vectors to their common (finer) resolution.
pub fn promote_pair(f: &HaarVector, g: &HaarVector) -> Result<(HaarVector, HaarVector)> {
    let level = f.level.max(g.level);
    Ok((f.promote(level)?, g.promote(level)?))
}

/// A function on `[0, 1)` constant on each cell of width `2^-mesh`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    mesh: u32,
    cells: Vec<f64>,
}

impl StepFunction {
    pub fn new(mesh: u32, cells: Vec<f64>) -> Result<Self> {
        if mesh > MAX_VECTOR_LEVEL + 1 {
            return Err(Error::Capacity { level: mesh, limit: MAX_VECTOR_LEVEL + 1 });
        }
        if cells.len() != 1usize << mesh {
            return Err(Error::DimensionMismatch(format!(
                "{} cells for mesh {mesh}",
                cells.len()
            )));
        }
        Ok(Self { mesh, cells })
    }

    pub fn mesh(&self) -> u32 {
        self.mesh
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn cell_width(&self) -> f64 {
        (-(self.mesh as f64)).exp2()
    }

    /// `2^-M sum cells`.
    pub fn integral(&self) -> f64 {
        self.cells.iter().sum::<f64>() * self.cell_width()
    }

    pub fn max(&self) -> f64 {
        self.cells.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Value at `x` in `[0, 1)`.
    pub fn eval(&self, x: f64) -> f64 {
        let idx = ((x * self.cells.len() as f64) as usize).min(self.cells.len() - 1);
        self.cells[idx]
    }
}

/// Step form of `f` on the mesh `2^-(N+1)`.
pub fn haar_to_step(f: &HaarVector) -> StepFunction {
    let mesh = f.level + 1;
    let mut cells = vec![0.0; 1usize << mesh];
    for (interval, a) in f.terms() {
        let range = interval.cell_range(mesh);
        let mid = range.start + range.len() / 2;
        for c in &mut cells[range.start..mid] {
            *c += a;
        }
        for c in &mut cells[mid..range.end] {
            *c -= a;
        }
    }
    StepFunction { mesh, cells }
}

/// Haar coefficients of a step function, `a_I = <f, h_I> / |I|`, at
/// resolution `mesh - 1`. The constant part of `f`, if any, is dropped.
pub fn step_to_haar(step: &StepFunction) -> Result<HaarVector> {
    if step.mesh == 0 {
        return Err(Error::InvalidParameter("mesh 0 carries no Haar coefficients".into()));
    }
    let level = step.mesh - 1;
    let mut v = HaarVector::zeros(level)?;
    // Pairwise averages bottom-up: means[j] is the mean of f over the j-th
    // interval of the current level.
    let mut means = step.cells.clone();
    for l in (0..=level).rev() {
        let next: Vec<f64> = means.chunks(2).map(|w| (w[0] + w[1]) / 2.0).collect();
        for (k, w) in means.chunks(2).enumerate() {
            let i = DyadicInterval::new(l, k as u64)?;
            v.coeffs[i.index()] = (w[0] - w[1]) / 2.0;
        }
        means = next;
    }
    Ok(v)
}

/// `<f, g> = sum a_I b_I |I|`.
pub fn pairing(f: &HaarVector, g: &HaarVector) -> f64 {
    let n = f.coeffs.len().min(g.coeffs.len());
    (0..n)
        .map(|i| f.coeffs[i] * g.coeffs[i] * DyadicInterval::from_index(i).measure_f64())
        .sum()
}

/// `<f, g> = int f g` evaluated on the common step grid.
pub fn pairing_step(f: &HaarVector, g: &HaarVector) -> Result<f64> {
    let (f, g) = promote_pair(f, g)?;
    let sf = haar_to_step(&f);
    let sg = haar_to_step(&g);
    let sum: f64 = sf.cells.iter().zip(&sg.cells).map(|(a, b)| a * b).sum();
    Ok(sum * sf.cell_width())
}

/// `sum_{I contains x} a_I^2` on each cell of width `2^-N`.
pub(crate) fn square_sums(f: &HaarVector) -> Vec<f64> {
    let mesh = f.level;
    let mut cells = vec![0.0; 1usize << mesh];
    for (interval, a) in f.terms() {
        let a2 = a * a;
        for c in &mut cells[interval.cell_range(mesh)] {
            *c += a2;
        }
    }
    cells
}

/// The square function `S f = (sum a_I^2 h_I^2)^(1/2)`. Since `h_I^2` is the
/// indicator of `I`, it is constant on cells of width `2^-N`.
pub fn square_function(f: &HaarVector) -> StepFunction {
    let cells = square_sums(f).into_iter().map(f64::sqrt).collect();
    StepFunction { mesh: f.level, cells }
}
