//! The `tracelogdet` command line.
//!
//! Exit codes: 0 on success, 2 for usage errors and invalid input, 3 for
//! numerical failures (infeasible or stalled solver, cancellation, overflow).

pub mod input;
pub mod report;
pub mod reproduce;
pub mod table;

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracelogdet::analysis::{taylor_radius, RadiusFamily};
use tracelogdet::estimators::cv_diagnostic;
use tracelogdet::moments::normalize;
use tracelogdet::noise::{monte_carlo, theory};
use tracelogdet::spectra::{exact_stats, trace_powers, SpectrumFamily, SpectrumFile};

use crate::input::{write_traces, InputArgs, SpectrumArgs};
use crate::report::{bounds_stage, estimate_stage};
use crate::reproduce::{rel_error_pct, reproduce, Target};
use crate::table::{Cell, Table};

pub const THREADS_ENV: &str = "TRACELOGDET_THREADS";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(tracelogdet::Error),
}

impl From<tracelogdet::Error> for CliError {
    fn from(e: tracelogdet::Error) -> Self {
        match e {
            tracelogdet::Error::InvalidInput(msg) => CliError::Usage(msg),
            e => CliError::Numeric(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "error: {msg}"),
            CliError::Numeric(e) => write!(f, "numerical failure: {e}"),
        }
    }
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("cannot write output: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "tracelogdet", version, about = "Log-determinant estimates and certified bounds from trace powers")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Output file; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Args)]
struct FloorArgs {
    /// Lower bound on λ_min / AM; defaults to the exact value for spectrum inputs.
    #[arg(long)]
    floor: Option<f64>,
    /// Skip lower bounds even when the spectrum is known.
    #[arg(long, conflicts_with = "floor")]
    no_floor: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a benchmark spectrum (JSON, or CSV of eigenvalues).
    GenSpectrum {
        #[command(flatten)]
        spectrum: SpectrumArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Write trace powers p_1..p_m of a spectrum as `n,k,p_k`.
    Traces {
        #[command(flatten)]
        spectrum: SpectrumArgs,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Point estimate k_{0:m} of K'(0) and log det.
    Estimate {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 4)]
        m: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Guaranteed bounds on GM/AM and the log det interval.
    Bounds {
        #[command(flatten)]
        input: InputArgs,
        /// Order of the estimate being clipped.
        #[arg(long, default_value_t = 4)]
        m: usize,
        /// Number of traces used by the k-trace bounds.
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        floor: FloorArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Estimate, bounds and the clipping verdict in one report.
    Certify {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 4)]
        m: usize,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        floor: FloorArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Taylor radius and Box-Cox CV checks for an order m.
    Diagnose {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 4)]
        m: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Monte Carlo RMSE of k_{0:m} under multiplicative trace noise.
    NoiseSweep {
        #[command(flatten)]
        spectrum: SpectrumArgs,
        #[arg(long, value_delimiter = ',', default_value = "3,4,5,6")]
        m: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.05")]
        eta: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long = "noise-seed", default_value_t = 0)]
        noise_seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Regenerate one of the experiment tables.
    Reproduce {
        #[arg(long, value_enum)]
        table: Target,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Monte Carlo trials per cell (noise-crossover).
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("{e}");
        return e.exit_code();
    }
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} = '{v}' is not a positive integer")))?;
    // a pool may already exist when run() is called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn emit(output: &OutputArgs, write: impl FnOnce(&mut dyn Write) -> Result<(), CliError>) -> Result<(), CliError> {
    match &output.out {
        Some(path) => {
            let mut buf = Vec::new();
            write(&mut buf)?;
            fs::write(path, buf).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            lock.flush().map_err(io_err)
        }
    }
}

fn emit_json<T: serde::Serialize>(output: &OutputArgs, value: &T) -> Result<(), CliError> {
    emit(output, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(io_err)?;
        writeln!(w).map_err(io_err)
    })
}

fn emit_table(output: &OutputArgs, t: &Table) -> Result<(), CliError> {
    match output.format.unwrap_or(Format::Csv) {
        Format::Csv => emit(output, |w| t.write_csv(w).map_err(io_err)),
        Format::Json => emit_json(output, &t.to_json()),
    }
}

fn warn(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

impl FloorArgs {
    fn resolve(&self, exact: Option<f64>) -> Option<f64> {
        if self.no_floor {
            None
        } else {
            self.floor.or(exact)
        }
    }
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::GenSpectrum { spectrum, output } => {
            let (s, _) = spectrum.load()?;
            match output.format.unwrap_or(Format::Json) {
                Format::Json => emit(&output, |w| writeln!(w, "{}", SpectrumFile::from_spectrum(&s).to_json()).map_err(io_err)),
                Format::Csv => {
                    let mut t = Table::new(&["i", "eigenvalue"]);
                    for (i, v) in s.eigenvalues().iter().enumerate() {
                        t.push(vec![(i + 1).into(), (*v).into()]);
                    }
                    emit_table(&output, &t)
                }
            }
        }
        Command::Traces { spectrum, m, output } => {
            let (s, _) = spectrum.load()?;
            let tp = trace_powers(&s, m)?;
            match output.format.unwrap_or(Format::Csv) {
                Format::Csv => emit(&output, |w| write_traces(&tp, w).map_err(io_err)),
                Format::Json => emit_json(&output, &tp),
            }
        }
        Command::Estimate { input, m, output } => {
            let loaded = input.load(m)?;
            let est = estimate_stage(&loaded, m)?;
            let truth = loaded.truth();
            match output.format.unwrap_or(Format::Csv) {
                Format::Json => emit_json(
                    &output,
                    &serde_json::json!({ "input": loaded.descriptor, "estimate": est, "truth": truth }),
                ),
                Format::Csv => {
                    let mut t = Table::new(&["method", "m", "kprime0_hat", "gm_over_am_hat", "logdet_hat", "kprime0", "logdet", "rel_error_pct"]);
                    t.push(vec![
                        "k0m".into(),
                        m.into(),
                        est.kprime0_hat.into(),
                        est.gm_over_am_hat.into(),
                        est.logdet_hat.into(),
                        truth.map(|s| s.kprime0).into(),
                        truth.map(|s| s.logdet).into(),
                        truth.map(|s| rel_error_pct(est.kprime0_hat, s.kprime0)).into(),
                    ]);
                    emit_table(&output, &t)
                }
            }
        }
        Command::Bounds { input, m, k, floor, output } => {
            let k = k.unwrap_or(m);
            let loaded = input.load(m.max(k))?;
            let r = floor.resolve(loaded.exact_floor());
            let est = estimate_stage(&loaded, m)?;
            let b = bounds_stage(&loaded, k, r, &est)?;
            warn(&b.warnings);
            match output.format.unwrap_or(Format::Csv) {
                Format::Json => emit_json(&output, &b),
                Format::Csv => {
                    let mut t = Table::new(&["sense", "bound", "value"]);
                    for (name, v) in &b.upper {
                        t.push(vec!["upper".into(), name.as_str().into(), (*v).into()]);
                    }
                    for (name, v) in &b.lower {
                        t.push(vec!["lower".into(), name.as_str().into(), (*v).into()]);
                    }
                    t.push(vec!["upper".into(), "U_best".into(), b.u_best.into()]);
                    t.push(vec!["lower".into(), "L_best".into(), b.l_best.into()]);
                    t.push(vec!["logdet".into(), "lo".into(), b.logdet_interval.map(|i| i.0).into()]);
                    t.push(vec!["logdet".into(), "hi".into(), b.logdet_upper.into()]);
                    emit_table(&output, &t)
                }
            }
        }
        Command::Certify { input, m, k, floor, output } => {
            let k = k.unwrap_or(m);
            let loaded = input.load(m.max(k))?;
            let r = floor.resolve(loaded.exact_floor());
            let rep = report::certify(&loaded, m, k, r)?;
            warn(&rep.warnings);
            match output.format.unwrap_or(Format::Json) {
                Format::Json => emit_json(&output, &rep),
                Format::Csv => {
                    let mut t = Table::new(&["m", "k", "kprime0_hat", "U_best", "L_best", "logdet_lo", "logdet_hi", "verdict", "clipped_kprime0", "clipped_logdet"]);
                    t.push(vec![
                        m.into(),
                        k.into(),
                        rep.estimate.kprime0_hat.into(),
                        rep.bounds.u_best.into(),
                        rep.bounds.l_best.into(),
                        rep.interval.0.into(),
                        rep.interval.1.into(),
                        serde_json::to_value(rep.verdict).ok().and_then(|v| v.as_str().map(str::to_owned)).into(),
                        rep.clipped_kprime0.into(),
                        rep.clipped_logdet.into(),
                    ]);
                    emit_table(&output, &t)
                }
            }
        }
        Command::Diagnose { input, m, output } => {
            let loaded = input.load(m)?;
            let mut t = Table::new(&["check", "family", "kappa", "value", "note"]);
            let cv = cv_diagnostic(&normalize(&loaded.traces), m)?;
            let note = if cv > 20.0 { "log transform unreliable" } else { "ok" };
            t.push(vec!["cv_pct".into(), Cell::Empty, Cell::Empty, cv.into(), note.into()]);
            if let Some(s) = &loaded.spectrum {
                let kappa = s.kappa();
                let fams: &[RadiusFamily] = match s.family() {
                    SpectrumFamily::Geometric => &[RadiusFamily::LogUniform],
                    SpectrumFamily::Uniform => &[RadiusFamily::Uniform],
                    SpectrumFamily::TwoPoint => &[RadiusFamily::TwoPoint],
                    _ => &[RadiusFamily::TwoPoint, RadiusFamily::LogUniform, RadiusFamily::Uniform],
                };
                for &f in fams {
                    // the two-point family has a single top eigenvalue
                    let p = (f == RadiusFamily::TwoPoint && s.family() == SpectrumFamily::TwoPoint).then(|| 1.0 / s.n() as f64);
                    let r = taylor_radius(f, kappa, p)?;
                    let name = serde_json::to_value(f).ok().and_then(|v| v.as_str().map(str::to_owned));
                    let note = if m > r.safe_order { format!("m = {m} beyond safe order {}", r.safe_order) } else { "ok".into() };
                    t.push(vec!["taylor_radius".into(), name.into(), kappa.into(), r.radius.into(), note.into()]);
                }
                let st = exact_stats(s);
                let est = estimate_stage(&loaded, m)?;
                t.push(vec!["rel_error_pct".into(), s.family().name().into(), kappa.into(), rel_error_pct(est.kprime0_hat, st.kprime0).into(), Cell::Empty]);
            }
            emit_table(&output, &t)
        }
        Command::NoiseSweep { spectrum, m, eta, trials, noise_seed, output } => {
            let (s, _) = spectrum.load()?;
            let truth = exact_stats(&s).kprime0;
            let mut t = Table::new(&["m", "eta", "bias", "sd", "rmse", "interp_bias", "sd_pred", "rmse_pred", "truncations"]);
            let top = m.iter().copied().max().ok_or_else(|| CliError::Usage("--m needs at least one order".into()))?;
            let tp = trace_powers(&s, top)?;
            for &order in &m {
                let b = tracelogdet::estimators::estimate_from_traces(&tp.truncated(order)?, order)?.kprime0_hat - truth;
                for &e in &eta {
                    let st = monte_carlo(&s, order, e, trials, noise_seed)?;
                    let th = theory(order, e, Some(b))?;
                    if st.truncations > 0 {
                        eprintln!("warning: m = {order}, eta = {e}: {} noise draws truncated", st.truncations);
                    }
                    t.push(vec![
                        order.into(),
                        e.into(),
                        st.bias.into(),
                        st.sd.into(),
                        st.rmse.into(),
                        b.into(),
                        th.sd_pred.into(),
                        th.rmse_pred.into(),
                        st.truncations.into(),
                    ]);
                }
            }
            emit_table(&output, &t)
        }
        Command::Reproduce { table, seed, trials, output } => emit_table(&output, &reproduce(table, seed, trials)?),
    }
}
