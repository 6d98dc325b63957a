//! Experiment configuration, operator generators and the end-to-end run.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::{gamlen_gaudet, jones_check, BlockCollection, JonesReport};
use crate::dyadic::{dimension, DyadicInterval, MAX_OPERATOR_LEVEL};
use crate::error::{Error, Result};
use crate::factorization::{
    assemble, derive_params, feasibility, union_bound_below_one, AssembleSettings, FactorizationRecord, Feasibility,
    Params, VerificationReport,
};
use crate::io::{operator_hash, read_operator};
use crate::norms::SpaceTag;
use crate::operators::{check_large_diagonal, elementary_bound_check, sign_normalize, DiagonalReport, EntryBoundReport, HaarOperator};
use crate::randomization::{
    calibrate_eta0, moments, union_bound, variance_bound_check, BlockForm, MomentReport, MomentTarget, SearchStrategy,
    SignSearchResult, VarianceReport, ENUMERATION_CAP,
};
use crate::solver::SolverOptions;

/// How `eta0` is chosen: a number, the theorem's value, or a quantile of
/// the sampled maxima of `|Y|` and `|Z|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Eta0Setting {
    Value(f64),
    Mode(Eta0Mode),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Eta0Mode {
    Derived,
    Calibrate,
}

impl Default for Eta0Setting {
    fn default() -> Self {
        Self::Mode(Eta0Mode::Derived)
    }
}

impl std::str::FromStr for Eta0Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "derived" => Ok(Self::Mode(Eta0Mode::Derived)),
            "calibrate" => Ok(Self::Mode(Eta0Mode::Calibrate)),
            _ => s
                .parse()
                .map(Self::Value)
                .map_err(|_| Error::InvalidParameter(format!("eta0 must be a number, `derived` or `calibrate` (got `{s}`)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceKind {
    Hp,
    HpDual,
    Slinf,
}

/// One experiment. Missing optional values are derived or measured; the
/// report lists which.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub space: SpaceKind,
    pub p: f64,
    pub n: u32,
    #[serde(rename = "N")]
    pub big_n: Option<u32>,
    pub m0: Option<u32>,
    /// Measured (smallest diagonal ratio) when absent.
    pub delta: Option<f64>,
    /// Certified operator norm upper bound when absent.
    pub gamma: Option<f64>,
    pub eta: f64,
    pub eta0: Eta0Setting,
    /// Quantile used by `eta0 = "calibrate"`.
    pub quantile: f64,
    pub seed: u64,
    pub budget: u64,
    /// Monte Carlo samples for calibration and moment fallbacks.
    pub samples: usize,
    pub strategy: SearchStrategy,
    pub operator_file: Option<PathBuf>,
    pub generator: Option<String>,
    /// Residual tolerance; 1e-8 for `H^2`, 1e-6 otherwise when absent.
    pub tolerance: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            space: SpaceKind::Hp,
            p: 2.0,
            n: 1,
            big_n: None,
            m0: None,
            delta: None,
            gamma: None,
            eta: 1.0,
            eta0: Eta0Setting::default(),
            quantile: 0.9,
            seed: 0,
            budget: 10_000,
            samples: 1_000,
            strategy: SearchStrategy::Rejection,
            operator_file: None,
            generator: None,
            tolerance: None,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn space_tag(&self) -> Result<SpaceTag> {
        let tag = match self.space {
            SpaceKind::Hp => SpaceTag::Hp { p: self.p },
            SpaceKind::HpDual => SpaceTag::HpDual { p: self.p },
            SpaceKind::Slinf => SpaceTag::Slinf,
        };
        tag.validate()?;
        Ok(tag)
    }

    pub fn tolerance(&self) -> Result<f64> {
        Ok(self.tolerance.unwrap_or(if self.space_tag()?.is_hilbert() { 1e-8 } else { 1e-6 }))
    }

    fn validate(&self) -> Result<()> {
        self.space_tag()?;
        match (&self.operator_file, &self.generator) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::InvalidParameter("exactly one of operator_file and generator must be set".into())),
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidParameter(format!("eta must be positive (got {})", self.eta)));
        }
        for (name, v) in [("delta", self.delta), ("gamma", self.gamma), ("tolerance", self.tolerance)] {
            if v.is_some_and(|v| !(v > 0.0)) {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        if let Eta0Setting::Value(v) = self.eta0 {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("eta0 must be positive (got {v})")));
            }
        }
        if !(self.quantile > 0.0 && self.quantile <= 1.0) || self.samples == 0 || self.budget == 0 {
            return Err(Error::InvalidParameter("quantile must lie in (0, 1]; samples and budget must be positive".into()));
        }
        Ok(())
    }
}

/// A parsed generator spec.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Generator {
    Identity,
    /// `G[K, K] = delta |K|`.
    Diag(f64),
    /// `Id + eps R` with `||R|| <= 1` in the run's space.
    DiagPerturb(f64),
    /// A random operator with norm at most the given `Gamma`.
    DenseRandom(f64),
}

impl std::str::FromStr for Generator {
    type Err = Error;

    /// Accepts `name`, `name(x)`, `name x` and `name key=x`.
    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownGenerator(s.to_string());
        let s2 = s.trim();
        let (name, arg) = match s2.find(['(', ' ']) {
            Some(i) => {
                let rest = s2[i..].trim().trim_start_matches('(').trim_end_matches(')');
                let rest = rest.rsplit('=').next().unwrap_or(rest).trim();
                (&s2[..i], Some(rest))
            }
            None => (s2, None),
        };
        let value = || -> Result<f64> {
            let v: f64 = arg.ok_or_else(unknown)?.parse().map_err(|_| unknown())?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("generator argument must be finite and nonnegative in `{s}`")));
            }
            Ok(v)
        };
        match name {
            "identity" if arg.is_none() => Ok(Self::Identity),
            "diag" => Ok(Self::Diag(value()?)),
            "diag-perturb" => Ok(Self::DiagPerturb(value()?)),
            "dense-random" => Ok(Self::DenseRandom(value()?)),
            _ => Err(unknown()),
        }
    }
}

/// `R[K', K] = u |K|^s |K'|^t` with `u` uniform in `(-1, 1)`, drawn row by
/// row, scaled so that its certified norm in `space` is 1.
fn unit_random(level: u32, space: SpaceTag, seed: u64) -> Result<HaarOperator> {
    let (s, t) = space.haar_exponents();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dimension(level);
    let mut g = DMatrix::zeros(d, d);
    for r in 0..d {
        let kp = DyadicInterval::from_index(r).measure_f64();
        for c in 0..d {
            let k = DyadicInterval::from_index(c).measure_f64();
            g[(r, c)] = rng.random_range(-1.0..1.0) * k.powf(s) * kp.powf(t);
        }
    }
    let r = HaarOperator::new(level, g)?;
    let norm = r.to_map().norm_upper_bound(space)?;
    Ok(r.scale(1.0 / norm))
}

/// Deterministic operator generation.
pub fn gen_operator(spec: &str, level: u32, seed: u64, space: SpaceTag) -> Result<HaarOperator> {
    space.validate()?;
    if level > MAX_OPERATOR_LEVEL {
        return Err(Error::Capacity { level, limit: MAX_OPERATOR_LEVEL });
    }
    match spec.parse()? {
        Generator::Identity => HaarOperator::identity(level),
        Generator::Diag(delta) => HaarOperator::diagonal(level, |_| delta),
        Generator::DiagPerturb(eps) => HaarOperator::identity(level)?.add(&unit_random(level, space, seed)?.scale(eps)),
        Generator::DenseRandom(gamma) => Ok(unit_random(level, space, seed)?.scale(gamma)),
    }
}

/// The formula constants with the union bound and the feasibility flags.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FormulaReport {
    pub params: Params,
    /// `2^(3(n+2)) Gamma^2 / (2^(m0/2) eta0^2)` at the derived values.
    pub union_bound: f64,
    /// The same comparison decided in exact arithmetic.
    pub union_bound_below_one: bool,
    pub feasibility: Feasibility,
}

pub fn report_formulas(n: u32, delta: f64, gamma: f64, eta: f64) -> Result<FormulaReport> {
    let params = derive_params(n, delta, gamma, eta)?;
    let m0 = u32::try_from(params.m0).map_err(|_| Error::InvalidParameter(format!("m0 = {} is out of range", params.m0)))?;
    Ok(FormulaReport {
        union_bound: union_bound(n, m0, gamma, params.eta0)?,
        union_bound_below_one: union_bound_below_one(n, params.m0, gamma, &params.eta0_exact)?,
        feasibility: feasibility(n, delta, eta, params.eta0),
        params,
    })
}

impl FormulaReport {
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let f = &self.feasibility;
        let mut s = format!(
            "eta0 = {} ({:e})\nm0 = {}\nN = {}\nm0 + n <= N: {}\nunion bound = {:e} (< 1: {})\n",
            p.eta0_exact, p.eta0, p.m0, p.big_n, p.m0_plus_n_within_n, self.union_bound, self.union_bound_below_one
        );
        s += &format!(
            "delta - eta0 2^n > 0: {}\nq = {}\nq < 1: {}\n",
            f.diagonal_margin_positive,
            f.q.map_or("undefined".to_string(), |q| format!("{q:e}")),
            f.contraction_below_one
        );
        for w in &p.warnings {
            s += &format!("warning: {w}\n");
        }
        s
    }
}

/// Pipeline stage, with the CLI exit code of its failure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Config,
    Io,
    LargeDiagonal,
    Jones,
    SignSearch,
    Assembly,
    Verification,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Config => 2,
            Self::Io => 3,
            Self::LargeDiagonal => 4,
            Self::Jones => 5,
            Self::SignSearch => 6,
            Self::Assembly => 7,
            Self::Verification => 8,
        }
    }
}

/// A failed run.
#[derive(Debug, thiserror::Error)]
#[error("{stage:?} stage failed: {error}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub error: Error,
}

/// Structured failure record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub stage: Stage,
    pub exit_code: i32,
    pub message: String,
}

impl StageError {
    pub fn record(&self) -> ErrorRecord {
        ErrorRecord { stage: self.stage, exit_code: self.stage.exit_code(), message: self.error.to_string() }
    }
}

fn at(stage: Stage) -> impl FnOnce(Error) -> StageError {
    move |error| StageError { stage, error }
}

fn fail(stage: Stage, message: String) -> StageError {
    StageError { stage, error: Error::InvalidParameter(message) }
}

/// Where each parameter came from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub operator_hash: String,
    pub operator_source: String,
    pub space: SpaceTag,
    pub delta: f64,
    pub delta_source: String,
    pub gamma: f64,
    pub gamma_source: String,
    pub eta: f64,
    #[serde(rename = "N")]
    pub big_n: u32,
    pub m0: u32,
    pub eta0: f64,
    pub eta0_source: String,
    pub tolerance: f64,
    /// Values that replace the formula constants.
    pub overrides: Vec<String>,
    /// The formula constants for `(n, delta, Gamma, eta)`.
    pub derived: Params,
    pub warnings: Vec<String>,
}

/// Everything a run produced. Wall-clock timings go to stderr so that the
/// report is reproducible byte for byte.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub provenance: Provenance,
    pub diagonal: DiagonalReport,
    pub entry_bound: EntryBoundReport,
    pub jones: JonesReport,
    pub variance: VarianceReport,
    pub sign_search: SignSearchResult,
    pub factorization: FactorizationRecord,
    pub verification: VerificationReport,
    pub success: bool,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

fn timed<T>(name: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    eprintln!("[time] {name}: {:.3}s", start.elapsed().as_secs_f64());
    out
}

fn load_operator(cfg: &ExperimentConfig, level: u32, space: SpaceTag) -> Result<(HaarOperator, String), StageError> {
    match (&cfg.operator_file, &cfg.generator) {
        (Some(path), _) => {
            let t = read_operator(path).map_err(|e| match e {
                Error::Io(io) => StageError {
                    stage: Stage::Io,
                    error: Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
                },
                other => StageError { stage: Stage::Config, error: other },
            })?;
            if t.level() != level {
                return Err(fail(Stage::Config, format!("operator file has N = {}, run uses N = {level}", t.level())));
            }
            Ok((t, format!("file:{}", path.display())))
        }
        (None, Some(spec)) => Ok((gen_operator(spec, level, cfg.seed, space).map_err(at(Stage::Config))?, format!("generator:{spec}"))),
        (None, None) => Err(fail(Stage::Config, "no operator source".into())),
    }
}

/// Runs the pipeline: sign normalization, Gamlen-Gaudet collections, Jones
/// check, sign search, assembly and verification.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, StageError> {
    cfg.validate().map_err(at(Stage::Config))?;
    let space = cfg.space_tag().map_err(at(Stage::Config))?;
    let tolerance = cfg.tolerance().map_err(at(Stage::Config))?;
    let n = cfg.n;
    let mut overrides = Vec::new();

    // The level is needed before the operator; without an override it comes
    // from the formula, which needs delta and Gamma.
    let level = match cfg.big_n {
        Some(level) => level,
        None => {
            let (Some(d), Some(g)) = (cfg.delta, cfg.gamma) else {
                return Err(fail(Stage::Config, "N can only be derived when delta and gamma are given".into()));
            };
            let p = derive_params(n, d, g, cfg.eta).map_err(at(Stage::Config))?;
            u32::try_from(p.big_n).map_err(|_| fail(Stage::Config, format!("derived N = {} is out of range", p.big_n)))?
        }
    };
    if level > MAX_OPERATOR_LEVEL {
        return Err(StageError { stage: Stage::Config, error: Error::Capacity { level, limit: MAX_OPERATOR_LEVEL } });
    }
    let (t, source) = timed("load operator", || load_operator(cfg, level, space))?;

    let measured = check_large_diagonal(&t, f64::MIN_POSITIVE).map_err(at(Stage::Config))?.achieved_delta;
    let (delta, delta_source) = match cfg.delta {
        Some(d) => (d, "config".to_string()),
        None => (measured, "measured: smallest |<T h_K, h_K>| / |K|".to_string()),
    };
    if !(delta > 0.0) {
        return Err(fail(Stage::LargeDiagonal, "the operator has a vanishing diagonal entry".into()));
    }
    let (gamma, gamma_source) = match cfg.gamma {
        Some(g) => (g, "config".to_string()),
        None => {
            let g = t.to_map().norm_upper_bound(space).map_err(at(Stage::Config))?;
            let how = if space.is_hilbert() { "exact H^2 norm" } else { "certified upper bound" };
            (g, format!("measured: {how}"))
        }
    };
    let derived = derive_params(n, delta, gamma, cfg.eta).map_err(at(Stage::Config))?;
    if cfg.big_n.is_some() {
        overrides.push(format!("N = {level} (derived {})", derived.big_n));
    }
    let m0 = match cfg.m0 {
        Some(m0) => {
            overrides.push(format!("m0 = {m0} (derived {})", derived.m0));
            m0
        }
        None => u32::try_from(derived.m0).map_err(|_| fail(Stage::Config, "derived m0 is out of range".into()))?,
    };
    if m0 + n > level {
        return Err(fail(Stage::Config, format!("m0 + n = {} exceeds N = {level}; set m0", m0 + n)));
    }

    let diagonal = check_large_diagonal(&t, delta).map_err(at(Stage::LargeDiagonal))?;
    if !diagonal.passed {
        return Err(fail(
            Stage::LargeDiagonal,
            format!("|<T h_K, h_K>| / |K| = {} < delta = {delta} at K = {}", diagonal.achieved_delta, diagonal.weakest),
        ));
    }
    let entry_bound = elementary_bound_check(&t, space, Some(gamma)).map_err(at(Stage::Config))?;

    let normalized = sign_normalize(&t);
    let tn = &normalized.normalized;
    let c = gamlen_gaudet(n, m0, level).map_err(at(Stage::Jones))?;
    let jones = timed("jones check", || jones_check(&c, 1.0)).map_err(at(Stage::Jones))?;
    if !jones.passed {
        return Err(fail(Stage::Jones, format!("{} Jones violation(s) at kappa = 1", jones.violations.len())));
    }
    let variance = timed("variance check", || variance_bound_check(tn, &c, space, gamma)).map_err(at(Stage::SignSearch))?;

    let (eta0, eta0_source) = match cfg.eta0 {
        Eta0Setting::Value(v) => {
            overrides.push(format!("eta0 = {v} (derived {})", derived.eta0));
            (v, "config".to_string())
        }
        Eta0Setting::Mode(Eta0Mode::Derived) => (derived.eta0, "derived".to_string()),
        Eta0Setting::Mode(Eta0Mode::Calibrate) => {
            let form = BlockForm::new(tn, &c).map_err(at(Stage::SignSearch))?;
            let v = timed("calibrate eta0", || calibrate_eta0(&form, cfg.quantile, cfg.samples, cfg.seed))
                .map_err(at(Stage::SignSearch))?;
            if v > 0.0 {
                overrides.push(format!("eta0 = {v} (calibrated, derived {})", derived.eta0));
                (v, format!("calibrated: quantile {} of {} sampled maxima", cfg.quantile, cfg.samples))
            } else {
                // Every sampled maximum vanished (a diagonal operator).
                (derived.eta0, "derived: calibrated maxima are all zero".to_string())
            }
        }
    };

    let sign_search = timed("sign search", || {
        crate::randomization::search_signs(tn, &c, eta0, cfg.budget, cfg.seed, cfg.strategy)
    })
    .map_err(at(Stage::SignSearch))?;
    if !sign_search.success {
        return Err(fail(
            Stage::SignSearch,
            format!(
                "no signs within {} attempts; best max |Y| = {}, max |Z| = {}, eta0 = {eta0}",
                sign_search.attempts, sign_search.off_diagonal_max, sign_search.diagonal_max
            ),
        ));
    }

    let settings = AssembleSettings {
        space,
        delta,
        eta: cfg.eta,
        eta0,
        tolerance,
        solver: SolverOptions::with_seed(cfg.seed),
    };
    let result = timed("assemble", || assemble(&t, &c, &sign_search.theta, &settings)).map_err(at(Stage::Assembly))?;
    let verification = timed("verify", || crate::factorization::verify(&result, &t, space, &settings.solver))
        .map_err(at(Stage::Verification))?;

    let mut warnings = derived.warnings.clone();
    if !entry_bound.passed {
        warnings.push(format!("{} entries exceed the elementary bound for Gamma = {gamma}", entry_bound.violations.len()));
    }
    if !variance.passed {
        warnings.push("a second moment exceeds its bound".to_string());
    }
    Ok(RunReport {
        config: ExperimentConfig { out: None, ..cfg.clone() },
        provenance: Provenance {
            operator_hash: operator_hash(&t),
            operator_source: source,
            space,
            delta,
            delta_source,
            gamma,
            gamma_source,
            eta: cfg.eta,
            big_n: level,
            m0,
            eta0,
            eta0_source,
            tolerance,
            overrides,
            derived,
            warnings,
        },
        diagonal,
        entry_bound,
        jones,
        variance,
        sign_search,
        factorization: result.to_record(),
        success: verification.passed,
        verification,
    })
}

/// Seed of entry `index` of a grid.
pub fn grid_seed(master: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// Runs independent configurations in parallel, reseeding each from
/// `(master, index)`.
pub fn run_grid(configs: &[ExperimentConfig], master: u64) -> Vec<Result<RunReport, StageError>> {
    configs
        .par_iter()
        .enumerate()
        .map(|(i, cfg)| run(&ExperimentConfig { seed: grid_seed(master, i), ..cfg.clone() }))
        .collect()
}

/// Moment records for every variable of the collection, with the bound
/// `||T||^2 alpha^(1/2)` (twice that for `Z`) for the given operator norm.
pub fn moment_table(t: &HaarOperator, c: &BlockCollection, norm: f64, samples: usize, seed: u64) -> Result<Vec<MomentReport>> {
    let tn = sign_normalize(t).normalized;
    let alpha = c.alpha()?.to_f64();
    MomentTarget::all(c)
        .par_iter()
        .map(|&target| {
            let mut r = moments(&tn, c, target, ENUMERATION_CAP, samples, seed)?;
            let factor = if matches!(target, MomentTarget::Diagonal(_)) { 2.0 } else { 1.0 };
            r.bound = Some(factor * norm * norm * alpha.sqrt());
            Ok(r)
        })
        .collect()
}

/// CSV with one row per variable.
pub fn moments_csv(reports: &[MomentReport]) -> String {
    let mut s = String::from("pair,method,coordinates,samples,mean,second_moment,bound,closed_form,matches_closed_form\n");
    for r in reports {
        let pair: Vec<String> = r.pair.iter().map(|i| i.label()).collect();
        s += &format!(
            "{},{},{},{},{:?},{:?},{},{:?},{}\n",
            pair.join(" "),
            serde_json::to_value(r.method).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
            r.coordinates,
            r.samples,
            r.mean,
            r.second_moment,
            r.bound.map_or(String::new(), |b| format!("{b:?}")),
            r.closed_form,
            r.matches_closed_form.map_or("".to_string(), |b| b.to_string())
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(generator: &str, n: u32, level: u32, m0: u32) -> ExperimentConfig {
        ExperimentConfig {
            n,
            big_n: Some(level),
            m0: Some(m0),
            generator: Some(generator.into()),
            eta0: Eta0Setting::Mode(Eta0Mode::Calibrate),
            ..Default::default()
        }
    }

    #[test]
    fn generator_specs() {
        assert_eq!("identity".parse::<Generator>().unwrap(), Generator::Identity);
        assert_eq!("diag(0.5)".parse::<Generator>().unwrap(), Generator::Diag(0.5));
        assert_eq!("diag-perturb ε=0.05".parse::<Generator>().unwrap(), Generator::DiagPerturb(0.05));
        assert_eq!("diag-perturb eps=0.05".parse::<Generator>().unwrap(), Generator::DiagPerturb(0.05));
        assert_eq!("dense-random(2)".parse::<Generator>().unwrap(), Generator::DenseRandom(2.0));
        assert!(matches!("wavelet".parse::<Generator>(), Err(Error::UnknownGenerator(_))));
        assert!("diag".parse::<Generator>().is_err());
    }

    #[test]
    fn generated_operators() {
        let h2 = SpaceTag::Hp { p: 2.0 };
        let id = gen_operator("identity", 3, 0, h2).unwrap();
        for k in 0..dimension(3) {
            let i = DyadicInterval::from_index(k);
            assert_eq!(id.entry(i, i), i.measure_f64());
        }
        let d = gen_operator("diag(0.5)", 3, 0, h2).unwrap();
        assert_eq!(check_large_diagonal(&d, 0.5).unwrap().achieved_delta, 0.5);
        let t = gen_operator("diag-perturb(0.05)", 6, 1, h2).unwrap();
        assert!(check_large_diagonal(&t, 0.9).unwrap().passed);
        assert_eq!(t, gen_operator("diag-perturb(0.05)", 6, 1, h2).unwrap());
        let g = gen_operator("dense-random(2)", 4, 1, h2).unwrap();
        assert!((g.to_map().hilbert_norm().0 - 2.0).abs() < 1e-12);
        for space in [SpaceTag::Hp { p: 1.0 }, SpaceTag::Slinf, SpaceTag::HpDual { p: 3.0 }] {
            let g = gen_operator("dense-random(1)", 3, 2, space).unwrap();
            assert!((g.to_map().norm_upper_bound(space).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn formulas() {
        let r = report_formulas(1, 1.0, 1.0, 1.0).unwrap();
        assert_eq!((r.params.m0, r.params.big_n), (59, 61));
        assert!(r.union_bound < 1.0 && r.union_bound_below_one);
        assert!(r.feasibility.diagonal_margin_positive && r.feasibility.contraction_below_one);
        assert!(r.to_text().contains("N = 61"));
        assert_eq!(report_formulas(2, 0.5, 2.0, 0.5).unwrap().params.big_n, 90);
    }

    #[test]
    fn identity_run() {
        let r = run(&cfg("identity", 1, 4, 2)).unwrap();
        assert!(r.success);
        assert_eq!(r.factorization.residual, 0.0);
        assert!(r.provenance.overrides.len() >= 2);
    }

    #[test]
    fn perturbed_run_is_reproducible() {
        let c = ExperimentConfig { seed: 3, ..cfg("diag-perturb(0.05)", 2, 8, 4) };
        let a = run(&c).unwrap();
        assert!(a.success, "{:?}", a.verification);
        assert!(a.factorization.residual <= 1e-8);
        assert_eq!(a.to_json(), run(&c).unwrap().to_json());
    }

    #[test]
    fn stage_failures() {
        let missing = ExperimentConfig {
            operator_file: Some("/nonexistent/op.txt".into()),
            generator: None,
            ..cfg("identity", 1, 4, 2)
        };
        assert_eq!(run(&missing).unwrap_err().stage, Stage::Io);
        let both = ExperimentConfig { operator_file: Some("x".into()), ..cfg("identity", 1, 4, 2) };
        assert_eq!(run(&both).unwrap_err().stage, Stage::Config);
        let weak = ExperimentConfig { delta: Some(0.9), ..cfg("diag(0.5)", 1, 4, 2) };
        assert_eq!(run(&weak).unwrap_err().stage, Stage::LargeDiagonal);
        let tight = ExperimentConfig { eta0: Eta0Setting::Value(1e-9), budget: 5, ..cfg("diag-perturb(0.05)", 1, 5, 2) };
        assert_eq!(run(&tight).unwrap_err().stage, Stage::SignSearch);
        let unknown = cfg("wavelet", 1, 4, 2);
        assert_eq!(run(&unknown).unwrap_err().stage.exit_code(), 2);
        let big = ExperimentConfig { big_n: None, delta: Some(1.0), gamma: Some(1.0), ..cfg("identity", 1, 4, 2) };
        assert!(matches!(run(&big).unwrap_err().error, Error::Capacity { .. }));
    }

    #[test]
    fn config_json() {
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"space":"slinf","n":2,"N":8,"m0":4,"eta0":"calibrate","generator":"identity"}"#).unwrap();
        assert_eq!(c.space_tag().unwrap(), SpaceTag::Slinf);
        assert_eq!(c.eta0, Eta0Setting::Mode(Eta0Mode::Calibrate));
        assert_eq!(c.tolerance().unwrap(), 1e-6);
        let c: ExperimentConfig = serde_json::from_str(r#"{"eta0":0.01}"#).unwrap();
        assert_eq!(c.eta0, Eta0Setting::Value(0.01));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn grid_seeds_differ() {
        assert_ne!(grid_seed(1, 0), grid_seed(1, 1));
        assert_eq!(grid_seed(1, 2), grid_seed(1, 2));
        let reports = run_grid(&[cfg("identity", 1, 3, 1), cfg("identity", 1, 4, 2)], 7);
        assert!(reports.iter().all(|r| r.as_ref().is_ok_and(|r| r.success)));
    }
}
