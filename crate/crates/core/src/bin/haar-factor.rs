use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use haar_factor::block::{gamlen_gaudet, jones_check};
use haar_factor::experiment::{
    gen_operator, moment_table, moments_csv, report_formulas, run, run_grid, Eta0Setting, ExperimentConfig, SpaceKind,
    Stage, StageError,
};
use haar_factor::io::{operator_to_text, parse_collection, read_operator, OperatorFile};
use haar_factor::randomization::SearchStrategy;
use haar_factor::Error;

#[derive(Parser)]
#[command(name = "haar-factor", version, about = "Factor the identity of W_n through large-diagonal operators on W_N")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write a JSON report.
    Run(Flags),
    /// Print eta0, m0, N, the union bound and the feasibility flags.
    Formulas {
        #[command(flatten)]
        flags: Flags,
        /// Plain text instead of JSON.
        #[arg(long)]
        text: bool,
    },
    /// Moments of every Y and Z variable (exact when small, Monte Carlo otherwise).
    Moments {
        #[command(flatten)]
        flags: Flags,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check Jones' conditions for a Gamlen-Gaudet or file collection.
    CheckJones {
        #[command(flatten)]
        flags: Flags,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        /// Collection file (`target=l:k member=l:k` lines).
        #[arg(long)]
        collection: Option<PathBuf>,
    },
    /// Generate an operator file.
    Gen {
        #[command(flatten)]
        flags: Flags,
        /// Write JSON instead of the text format.
        #[arg(long)]
        json: bool,
    },
}

/// Every flag mirrors a config key and overrides it.
#[derive(Args, Clone, Default)]
struct Flags {
    /// JSON config; an array runs a grid.
    #[arg(long)]
    config: Option<PathBuf>,
    /// hp, hp-dual or slinf.
    #[arg(long)]
    space: Option<String>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long = "N")]
    big_n: Option<u32>,
    #[arg(long)]
    m0: Option<u32>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// A number, `derived` or `calibrate`.
    #[arg(long)]
    eta0: Option<String>,
    #[arg(long)]
    quantile: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    /// rejection or greedy.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Operator file (text or JSON).
    #[arg(long)]
    operator: Option<PathBuf>,
    /// identity, diag(x), diag-perturb(eps) or dense-random(gamma).
    #[arg(long)]
    generator: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl ToString) -> Self {
        Self { code: 2, message: message.to_string() }
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        let record = serde_json::to_string(&e.record()).unwrap_or_else(|_| e.to_string());
        Self { code: e.stage.exit_code() as u8, message: record }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => Stage::Io.exit_code(),
            _ => Stage::Config.exit_code(),
        };
        Self { code: code as u8, message: e.to_string() }
    }
}

fn parse_kebab<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, Failure> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| Failure::config(format!("unknown value `{s}`")))
}

fn apply(flags: &Flags, mut c: ExperimentConfig) -> Result<ExperimentConfig, Failure> {
    if let Some(s) = &flags.space {
        c.space = parse_kebab::<SpaceKind>(s)?;
    }
    if let Some(s) = &flags.strategy {
        c.strategy = parse_kebab::<SearchStrategy>(s)?;
    }
    if let Some(e) = &flags.eta0 {
        c.eta0 = e.parse::<Eta0Setting>().map_err(Failure::config)?;
    }
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = flags.$f.clone() { c.$f = v; })* };
    }
    macro_rules! set_opt {
        ($($f:ident),*) => { $(if let Some(v) = flags.$f.clone() { c.$f = Some(v); })* };
    }
    set!(p, n, eta, quantile, seed, budget, samples);
    set_opt!(big_n, m0, delta, gamma, tolerance, generator, out);
    if let Some(path) = &flags.operator {
        c.operator_file = Some(path.clone());
        if flags.generator.is_none() {
            c.generator = None;
        }
    } else if flags.generator.is_some() {
        c.operator_file = None;
    }
    Ok(c)
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure { code: 3, message: format!("{}: {e}", path.display()) })
}

/// The config file's entries (one unless it is an array) with flags applied.
fn load_configs(flags: &Flags) -> Result<Vec<ExperimentConfig>, Failure> {
    let base = match &flags.config {
        None => vec![ExperimentConfig::default()],
        Some(path) => {
            let text = read_text(path)?;
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
            let parse = |v: serde_json::Value| serde_json::from_value::<ExperimentConfig>(v).map_err(|e| Failure::config(format!("{}: {e}", path.display())));
            match value {
                serde_json::Value::Array(items) => items.into_iter().map(parse).collect::<Result<_, _>>()?,
                v => vec![parse(v)?],
            }
        }
    };
    base.into_iter().map(|c| apply(flags, c)).collect()
}

fn single(flags: &Flags) -> Result<ExperimentConfig, Failure> {
    let mut v = load_configs(flags)?;
    if v.len() != 1 {
        return Err(Failure::config("this subcommand takes a single config"));
    }
    Ok(v.remove(0))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure { code: 3, message: format!("{}: {e}", path.display()) }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn cmd_run(flags: &Flags) -> Result<(), Failure> {
    let configs = load_configs(flags)?;
    if configs.len() == 1 {
        let cfg = &configs[0];
        let report = run(cfg)?;
        emit(cfg.out.as_deref(), &report.to_json())?;
        if !report.success {
            return Err(Failure { code: 8, message: json(&report.verification) });
        }
        return Ok(());
    }
    let master = flags.seed.unwrap_or(0);
    let results = run_grid(&configs, master);
    let mut worst = 0;
    let entries: Vec<serde_json::Value> = results
        .into_iter()
        .map(|r| match r {
            Ok(report) => {
                if !report.success {
                    worst = worst.max(8);
                }
                serde_json::to_value(&report).expect("serializable")
            }
            Err(e) => {
                worst = worst.max(e.stage.exit_code());
                serde_json::json!({ "error": e.record() })
            }
        })
        .collect();
    emit(flags.out.as_deref(), &json(&entries))?;
    if worst > 0 {
        return Err(Failure { code: worst as u8, message: "at least one grid entry failed".into() });
    }
    Ok(())
}

fn cmd_formulas(flags: &Flags, text: bool) -> Result<(), Failure> {
    let c = single(flags)?;
    let report = report_formulas(c.n, c.delta.unwrap_or(1.0), c.gamma.unwrap_or(1.0), c.eta)?;
    let body = if text { report.to_text() } else { json(&report) };
    emit(c.out.as_deref(), &body)
}

fn level_and_m0(c: &ExperimentConfig) -> Result<(u32, u32), Failure> {
    let level = c.big_n.ok_or_else(|| Failure::config("--N is required"))?;
    let m0 = c.m0.ok_or_else(|| Failure::config("--m0 is required"))?;
    Ok((level, m0))
}

fn cmd_moments(flags: &Flags, csv: Option<&Path>) -> Result<(), Failure> {
    let c = single(flags)?;
    let (level, m0) = level_and_m0(&c)?;
    let t = match (&c.operator_file, &c.generator) {
        (Some(path), None) => read_operator(path)?,
        (None, Some(spec)) => gen_operator(spec, level, c.seed, c.space_tag()?)?,
        _ => return Err(Failure::config("exactly one of --operator and --generator is required")),
    };
    let collection = gamlen_gaudet(c.n, m0, level)?;
    let norm = match c.gamma {
        Some(g) => g,
        None => t.to_map().norm_upper_bound(c.space_tag()?)?,
    };
    let table = moment_table(&t, &collection, norm, c.samples, c.seed)?;
    if let Some(path) = csv {
        std::fs::write(path, moments_csv(&table)).map_err(|e| Failure { code: 3, message: format!("{}: {e}", path.display()) })?;
    }
    emit(c.out.as_deref(), &json(&table))
}

fn cmd_check_jones(flags: &Flags, kappa: f64, collection: Option<&Path>) -> Result<(), Failure> {
    let c = single(flags)?;
    let coll = match collection {
        Some(path) => parse_collection(&read_text(path)?)?,
        None => {
            let (level, m0) = level_and_m0(&c)?;
            gamlen_gaudet(c.n, m0, level)?
        }
    };
    let report = jones_check(&coll, kappa)?;
    emit(c.out.as_deref(), &json(&report))?;
    if !report.passed {
        return Err(Failure { code: 5, message: format!("{} violation(s)", report.violations.len()) });
    }
    Ok(())
}

fn cmd_gen(flags: &Flags, as_json: bool) -> Result<(), Failure> {
    let c = single(flags)?;
    let level = c.big_n.ok_or_else(|| Failure::config("--N is required"))?;
    let spec = c.generator.clone().ok_or_else(|| Failure::config("--generator is required"))?;
    let t = gen_operator(&spec, level, c.seed, c.space_tag()?)?;
    let body = if as_json { json(&OperatorFile::from_operator(&t)) } else { operator_to_text(&t) };
    emit(c.out.as_deref(), &body)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(flags) => cmd_run(flags),
        Command::Formulas { flags, text } => cmd_formulas(flags, *text),
        Command::Moments { flags, csv } => cmd_moments(flags, csv.as_deref()),
        Command::CheckJones { flags, kappa, collection } => cmd_check_jones(flags, *kappa, collection.as_deref()),
        Command::Gen { flags, json } => cmd_gen(flags, *json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
