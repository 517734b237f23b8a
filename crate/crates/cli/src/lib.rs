//! Command-line front end: scenario runs, estimator sweeps and the
//! dephasing curve as CSV/JSON.
//!
//! Every stochastic command takes `--seed` (falling back to the
//! `QTOKSIM_SEED` environment variable). Results are computed in full
//! before any output file is written, so a failing command leaves no
//! partial files behind.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use qtoksim_core::harness::{
    run_trial, Adversary, HarnessError, Metrics, ProtocolConfig, QuantumChannel, ScenarioConfig,
};
use qtoksim_core::qrpuf::{self, ChallengeResponseTable, EnrollMode, FnResponder};
use qtoksim_core::quantum_core::{
    dephase, dephasing_flip_probability, haar_state, NoiseParams, DEFAULT_T2_US,
};
use qtoksim_core::uupuf::{self, Property};
use qtoksim_core::{QError, QuantumState, RngStream, StateVector};

pub const SEED_ENV: &str = "QTOKSIM_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "qtoksim", version, about = "Quantum PUF and quantum token authentication simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a QR-PUF and write its challenge-response table.
    QrpufEnroll(EnrollArgs),
    /// Challenge a responder with one entry of a stored table.
    QrpufVerify(VerifyArgs),
    /// Sweep the perturbation strength of an unknown-unitary PUF.
    UupufEstimate(EstimateArgs),
    /// Issue and validate HMP4 tokens.
    Hmp4Run(Hmp4Args),
    /// Run a scenario described by a JSON config.
    Scenario(ScenarioArgs),
    /// Emit flip rate against storage time for a dephasing qubit.
    DephasingCurve(CurveArgs),
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Master seed; falls back to QTOKSIM_SEED.
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
}

impl SeedArg {
    fn require(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| usage(format!("a seed is required: pass --seed or set {SEED_ENV}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Analytic,
    Tomography,
}

#[derive(Debug, Args)]
pub struct EnrollArgs {
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub lambda: usize,
    #[arg(long, default_value_t = 8)]
    pub challenges: usize,
    #[arg(long, default_value_t = qrpuf::DEFAULT_QUANT_BITS)]
    pub bits: u32,
    #[arg(long, value_enum, default_value_t = Mode::Analytic)]
    pub mode: Mode,
    /// Preparations per qubit in tomography mode.
    #[arg(long, default_value_t = 30_000)]
    pub shots: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VerifyResponder {
    Honest,
    Emulation,
    RandomGuess,
    Identity,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Seed the table was enrolled with; regenerates the device.
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub crt: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub entry: usize,
    #[arg(long, default_value_t = 0)]
    pub threshold: usize,
    #[arg(long, default_value_t = 4)]
    pub shots: usize,
    #[arg(long, value_enum, default_value_t = VerifyResponder::Honest)]
    pub responder: VerifyResponder,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PropertyArg {
    Robustness,
    Collision,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub lambda: usize,
    /// `start:stop:step`, endpoints inclusive.
    #[arg(long, default_value = "0:0.3:0.05")]
    pub epsilon_grid: String,
    #[arg(long, value_enum, default_value_t = PropertyArg::Collision)]
    pub property: PropertyArg,
    /// Threshold δ; defaults to 0.3 for collision resistance and 0.95 for
    /// robustness.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AdversaryArg {
    None,
    Emulation,
    InterceptResend,
    RandomGuess,
    TokenClone,
}

impl From<AdversaryArg> for Adversary {
    fn from(a: AdversaryArg) -> Self {
        match a {
            AdversaryArg::None => Adversary::None,
            AdversaryArg::Emulation => Adversary::Emulation,
            AdversaryArg::InterceptResend => Adversary::InterceptResend,
            AdversaryArg::RandomGuess => Adversary::RandomGuess,
            AdversaryArg::TokenClone => Adversary::TokenClone,
        }
    }
}

#[derive(Debug, Args)]
pub struct Hmp4Args {
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long, default_value_t = 16)]
    pub registers: usize,
    #[arg(long, default_value_t = 0)]
    pub controls: usize,
    #[arg(long, default_value_t = 12)]
    pub t: usize,
    #[arg(long, default_value_t = 0)]
    pub tolerance: usize,
    #[arg(long, default_value_t = 0.0)]
    pub dwell_us: f64,
    /// Enables dephasing memory with this T₂.
    #[arg(long)]
    pub t2_us: Option<f64>,
    #[arg(long, value_enum, default_value_t = AdversaryArg::None)]
    pub adversary: AdversaryArg,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Output directory for `summary.json` and `trials.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    /// Overrides the config trial count.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Output directory for `summary.json` and `trials.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long, default_value_t = DEFAULT_T2_US)]
    pub t2_us: f64,
    #[arg(long, default_value_t = 100.0)]
    pub t_max_us: f64,
    #[arg(long, default_value_t = 11)]
    pub points: usize,
    #[arg(long, default_value_t = 100_000)]
    pub shots: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `start:stop:step` into the inclusive grid.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    let [start, stop, step] = parts.as_slice() else {
        return Err(usage(format!("grid '{text}' is not start:stop:step")));
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| usage(format!("bad number '{s}' in grid '{text}'")));
    let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
    if !(start.is_finite() && stop.is_finite() && step.is_finite()) || step <= 0.0 || stop < start {
        return Err(usage(format!("grid '{text}' needs start <= stop and step > 0")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

/// One row of the dephasing curve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub t_us: f64,
    pub flip_rate: f64,
    pub analytic_p: f64,
}

/// Prepares `|+⟩`, lets it dephase for each grid time and measures in the
/// X basis `shots` times. Row `i` uses stream `i` of `seed`.
pub fn dephasing_curve(t2_us: f64, t_max_us: f64, points: usize, shots: usize, seed: u64) -> Result<Vec<CurveRow>, CliError> {
    if !(t2_us > 0.0 && t2_us.is_finite()) || !(t_max_us > 0.0 && t_max_us.is_finite()) {
        return Err(usage("t2_us and t_max_us must be positive"));
    }
    if points < 2 || shots == 0 {
        return Err(usage("need at least 2 points and 1 shot"));
    }
    let plus = StateVector::plus().to_density();
    let minus = StateVector::minus();
    (0..points)
        .map(|i| {
            let t_us = t_max_us * i as f64 / (points - 1) as f64;
            let p = dephase(&plus, t_us, t2_us).and_then(|r| r.expectation(&minus)).map_err(runtime)?;
            let mut rng = RngStream::new(seed, i as u64);
            let flips = (0..shots).filter(|_| rng.bernoulli(p.clamp(0.0, 1.0))).count();
            Ok(CurveRow {
                t_us,
                flip_rate: flips as f64 / shots as f64,
                analytic_p: dephasing_flip_probability(t_us, t2_us),
            })
        })
        .collect()
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(runtime)?;
    }
    String::from_utf8(w.into_inner().map_err(runtime)?).map_err(runtime)
}

/// Files a command produces, written only after it succeeded.
#[derive(Debug, Default)]
pub struct Output {
    pub files: Vec<(PathBuf, String)>,
    pub stdout: String,
    pub summary: String,
}

impl Output {
    fn single(out: &Option<PathBuf>, body: String, summary: String) -> Output {
        match out {
            Some(p) => Output {
                files: vec![(p.clone(), body)],
                stdout: String::new(),
                summary,
            },
            None => Output {
                files: Vec::new(),
                stdout: body,
                summary,
            },
        }
    }

    fn metrics(out: &Option<PathBuf>, m: &Metrics) -> Output {
        let summary = format!(
            "{} adversary={} trials={} accepts={} lost={} rate={}",
            m.protocol,
            m.adversary,
            m.trials,
            m.accepts,
            m.lost,
            m.accept_rate()
        );
        match out {
            Some(dir) => Output {
                files: vec![
                    (dir.join("summary.json"), m.summary_json() + "\n"),
                    (dir.join("trials.csv"), m.records_csv()),
                ],
                stdout: String::new(),
                summary,
            },
            None => Output {
                files: Vec::new(),
                stdout: m.summary_json() + "\n",
                summary,
            },
        }
    }

    /// Writes every file, creating parent directories as needed.
    pub fn write(&self) -> Result<(), CliError> {
        for (path, body) in &self.files {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
            }
            fs::write(path, body).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

/// Runs all trials of `cfg`, on `workers` threads when more than one.
pub fn run_scenario_parallel(cfg: &ScenarioConfig, workers: usize) -> Result<Metrics, CliError> {
    cfg.validate()?;
    let trials: Vec<u64> = (0..cfg.trials as u64).collect();
    let records = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(runtime)?;
        pool.install(|| trials.par_iter().map(|&t| run_trial(cfg, t)).collect::<Result<Vec<_>, _>>())?
    } else {
        trials.iter().map(|&t| run_trial(cfg, t)).collect::<Result<Vec<_>, _>>()?
    };
    Ok(Metrics::aggregate(cfg, records))
}

fn check_workers(n: usize) -> Result<(), CliError> {
    if n == 0 {
        Err(usage("--parallel must be at least 1"))
    } else {
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn qerr_config(e: QError) -> CliError {
    CliError::Config(e.to_string())
}

/// Executes a parsed command without touching the filesystem for outputs.
pub fn execute(command: &Command) -> Result<Output, CliError> {
    match command {
        Command::QrpufEnroll(a) => {
            let seed = a.seed.require()?;
            let puf = qrpuf::qgen_qr(a.lambda, &mut RngStream::new(seed, 0)).map_err(qerr_config)?;
            let mut rng = RngStream::new(seed, 1);
            let chs = qrpuf::select_challenges(a.challenges, a.lambda, &mut rng).map_err(qerr_config)?;
            let mode = match a.mode {
                Mode::Analytic => EnrollMode::Analytic,
                Mode::Tomography => EnrollMode::Tomography,
            };
            let crt = qrpuf::enroll(&puf, &chs, mode, a.shots, a.bits, &mut rng).map_err(qerr_config)?;
            let json = crt.to_json().map_err(runtime)? + "\n";
            let summary = format!("enrolled {} challenges at lambda={} b={}", crt.entries.len(), crt.lambda, crt.b);
            Ok(Output::single(&a.out, json, summary))
        }
        Command::QrpufVerify(a) => {
            let seed = a.seed.require()?;
            let crt = ChallengeResponseTable::from_json(&read(&a.crt)?).map_err(qerr_config)?;
            if a.entry >= crt.entries.len() {
                return Err(CliError::Config(format!("table has no entry {}", a.entry)));
            }
            let puf = qrpuf::qgen_qr(crt.lambda, &mut RngStream::new(seed, 0)).map_err(qerr_config)?;
            let mut rng = RngStream::new(seed, 2);
            let outcome = match a.responder {
                VerifyResponder::Honest => {
                    let mut h = puf;
                    qrpuf::verify(&crt, a.entry, &mut h, a.threshold, a.shots, &mut rng)
                }
                VerifyResponder::Emulation => {
                    let u = puf.full_unitary();
                    let mut r = FnResponder::new(move |c: &StateVector, _: &mut RngStream| {
                        QuantumState::Pure(qtoksim_core::quantum_core::apply_unitary(&u, c).unwrap_or_else(|_| c.clone()))
                    });
                    qrpuf::verify(&crt, a.entry, &mut r, a.threshold, a.shots, &mut rng)
                }
                VerifyResponder::RandomGuess => {
                    let mut r = FnResponder::new(|c: &StateVector, r: &mut RngStream| {
                        QuantumState::Pure(haar_state(c.dim(), r))
                    });
                    qrpuf::verify(&crt, a.entry, &mut r, a.threshold, a.shots, &mut rng)
                }
                VerifyResponder::Identity => {
                    let mut r = FnResponder::new(|c: &StateVector, _: &mut RngStream| QuantumState::Pure(c.clone()));
                    qrpuf::verify(&crt, a.entry, &mut r, a.threshold, a.shots, &mut rng)
                }
            }
            .map_err(runtime)?;
            let json = serde_json::to_string_pretty(&outcome).map_err(runtime)? + "\n";
            let summary = format!(
                "entry {} {} (hamming weight {})",
                a.entry,
                if outcome.accept { "accepted" } else { "rejected" },
                outcome.hamming_weight
            );
            Ok(Output::single(&a.out, json, summary))
        }
        Command::UupufEstimate(a) => {
            let seed = a.seed.require()?;
            let grid = parse_grid(&a.epsilon_grid)?;
            if grid.iter().any(|e| !(0.0..=1.0).contains(e)) {
                return Err(usage("epsilon values must lie in [0,1]"));
            }
            if a.trials == 0 {
                return Err(usage("--trials must be positive"));
            }
            let (property, delta) = match a.property {
                PropertyArg::Collision => (Property::CollisionResistance, a.delta.unwrap_or(0.3)),
                PropertyArg::Robustness => (Property::Robustness, a.delta.unwrap_or(0.95)),
            };
            let base = uupuf::qgen_uu(a.lambda, &mut RngStream::new(seed, 0)).map_err(qerr_config)?;
            let rows = uupuf::epsilon_sweep(property, &base, &grid, delta, a.trials, seed).map_err(qerr_config)?;
            let summary = format!("{} rows for lambda={} delta={delta}", rows.len(), a.lambda);
            Ok(Output::single(&a.out, to_csv(&rows)?, summary))
        }
        Command::Hmp4Run(a) => {
            check_workers(a.parallel)?;
            let memory = a
                .t2_us
                .map(|t2| NoiseParams::dephasing_only(t2).map_err(qerr_config))
                .transpose()?;
            let cfg = ScenarioConfig {
                protocol: ProtocolConfig::Hmp4 {
                    registers: a.registers,
                    controls: a.controls,
                    t: a.t,
                    tolerance: a.tolerance,
                    dwell_us: a.dwell_us,
                    memory,
                },
                channel: QuantumChannel::default(),
                adversary: a.adversary.into(),
                grant_unitary_knowledge: true,
                trials: a.trials,
                seed: a.seed.require()?,
            };
            let m = run_scenario_parallel(&cfg, a.parallel)?;
            Ok(Output::metrics(&a.out, &m))
        }
        Command::Scenario(a) => {
            check_workers(a.parallel)?;
            let mut cfg: ScenarioConfig =
                serde_json::from_str(&read(&a.config)?).map_err(|e| CliError::Config(format!("{}: {e}", a.config.display())))?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(t) = a.trials {
                cfg.trials = t;
            }
            let m = run_scenario_parallel(&cfg, a.parallel)?;
            Ok(Output::metrics(&a.out, &m))
        }
        Command::DephasingCurve(a) => {
            let rows = dephasing_curve(a.t2_us, a.t_max_us, a.points, a.shots, a.seed.require()?)?;
            let summary = format!("{} points, T2={}us, {} shots each", rows.len(), a.t2_us, a.shots);
            Ok(Output::single(&a.out, to_csv(&rows)?, summary))
        }
    }
}

/// Parses `args`, runs the command and writes its outputs. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command).and_then(|out| out.write().map(|_| out)) {
        Ok(out) => {
            print!("{}", out.stdout);
            eprintln!("{}", out.summary);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
