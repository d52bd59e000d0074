//! Batch front end: load a run configuration, execute the cat-state
//! experiment, and export series, summary and run metadata.
//!
//! Output files in the target directory:
//!
//! * `series_dx<value>.csv`: `time,coherence,stderr`, time in oscillator periods.
//! * `summary.csv`: `delta_x,gamma,gamma_stderr,r_squared,n_used_realizations`.
//! * `manifest.txt`: one `key=value` per line. Keys are `command`, `version`,
//!   `seed`, `threads`, `wall_time_s`, every setting as `config.<key>`, and per
//!   separation `dx<value>.injections`, `dx<value>.failures`, `dx<value>.fit`.
//! * with `--gnuplot`: `coherence.gp` and `gamma.gp`.
//!
//! Floats are written in shortest round-trip form, so `fit` on a written
//! series reproduces the original numbers exactly.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use gaussdrift::config::{ConfigError, RunConfig};
use gaussdrift::experiment::{self, DeltaXResult};
use gaussdrift::observables::{fit_decay, CoherenceSeries, DecayFit};
use thiserror::Error;

pub const SERIES_HEADER: [&str; 3] = ["time", "coherence", "stderr"];
pub const SUMMARY_HEADER: [&str; 5] = ["delta_x", "gamma", "gamma_stderr", "r_squared", "n_used_realizations"];

#[derive(Debug, Parser)]
#[command(name = "gaussdrift", version, about = "Cat-state decoherence in a harmonic trap with a Gaussian gas bath")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a single separation.
    Run {
        #[command(flatten)]
        common: Common,
        /// Separation to run; defaults to the first entry of delta_x_list.
        #[arg(long)]
        dx: Option<f64>,
    },
    /// Run every separation in delta_x_list.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Fit an existing series CSV and print its summary row.
    Fit {
        series: PathBuf,
        /// Also write summary.csv into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads, 0 for one per core.
    #[arg(long, env = "GAUSSDRIFT_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    pub gnuplot: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] gaussdrift::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("no decay fit for delta_x = {delta_x}: {source}")]
    NoFit { delta_x: f64, source: gaussdrift::Error },
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(e) => e.category(),
            CliError::Core(e) => e.category(),
            CliError::Io { .. } => "io",
            CliError::Csv { .. } => "csv",
            CliError::NoFit { source, .. } => source.category(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Csv { path: path.to_path_buf(), message: e.to_string() }
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn series_file_name(delta_x: f64) -> String {
    format!("series_dx{delta_x}.csv")
}

/// Loads the configuration and applies command-line overrides.
pub fn resolve_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.experiment.master_seed = seed;
    }
    if let Some(threads) = common.threads {
        cfg.experiment.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_series(path: &Path, series: &CoherenceSeries) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(SERIES_HEADER).map_err(csv_err(path))?;
    for i in 0..series.len() {
        w.write_record([fmt_f64(series.times[i]), fmt_f64(series.values[i]), fmt_f64(series.stderr[i])])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_series(path: &Path) -> Result<CoherenceSeries, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?;
    if header.iter().ne(SERIES_HEADER) {
        return Err(CliError::Csv { path: path.into(), message: format!("expected header {}", SERIES_HEADER.join(",")) });
    }
    let (mut t, mut v, mut s) = (Vec::new(), Vec::new(), Vec::new());
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let parse = |k: usize| {
            record.get(k).and_then(|x| x.trim().parse::<f64>().ok()).ok_or_else(|| CliError::Csv {
                path: path.into(),
                message: format!("line {}: bad value in column {}", line + 2, SERIES_HEADER[k]),
            })
        };
        t.push(parse(0)?);
        v.push(parse(1)?);
        s.push(parse(2)?);
    }
    Ok(CoherenceSeries::new(t, v, s, 0)?)
}

pub type SummaryRow = (f64, Result<DecayFit, gaussdrift::Error>, usize);

fn summary_record(delta_x: f64, fit: &Result<DecayFit, gaussdrift::Error>, n_used: usize) -> [String; 5] {
    match fit {
        Ok(f) => [fmt_f64(delta_x), fmt_f64(f.gamma), fmt_f64(f.gamma_stderr), fmt_f64(f.r_squared), n_used.to_string()],
        Err(_) => [fmt_f64(delta_x), "NaN".into(), "NaN".into(), "NaN".into(), n_used.to_string()],
    }
}

pub fn write_summary<W: io::Write>(out: W, rows: &[SummaryRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for (dx, fit, n) in rows {
        w.write_record(summary_record(*dx, fit, *n))?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary_file(dir: &Path, rows: &[SummaryRow]) -> Result<(), CliError> {
    let path = dir.join("summary.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    write_summary(file, rows).map_err(csv_err(&path))
}

fn manifest(command: &str, cfg: &RunConfig, results: &[DeltaXResult], wall: f64) -> String {
    let mut s = String::new();
    let e = &cfg.experiment;
    let _ = writeln!(s, "command={command}");
    let _ = writeln!(s, "version={}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "seed={}", e.master_seed);
    let _ = writeln!(s, "threads={}", e.threads);
    let _ = writeln!(s, "wall_time_s={}", fmt_f64(wall));
    for (k, v) in cfg.key_values() {
        let _ = writeln!(s, "config.{k}={v}");
    }
    for r in results {
        let tag = format!("dx{}", r.delta_x);
        let _ = writeln!(s, "{tag}.injections={}", r.injections);
        let _ = writeln!(s, "{tag}.failures={}", r.failures.len());
        match &r.fit {
            Ok(f) => {
                let _ = writeln!(s, "{tag}.fit=ok");
                let _ = writeln!(s, "{tag}.fit_window={},{}", fmt_f64(f.fit_window.0), fmt_f64(f.fit_window.1));
            }
            Err(err) => {
                let _ = writeln!(s, "{tag}.fit={}", err.category());
            }
        }
    }
    s
}

fn gnuplot_scripts(dir: &Path, deltas: &[f64]) -> Result<(), CliError> {
    let mut coherence = String::from(
        "set terminal pngcairo size 800,600\nset output 'coherence.png'\nset datafile separator ','\n\
         set key autotitle columnhead\nset logscale y\nset xlabel 't [periods]'\nset ylabel 'coherence'\nplot ",
    );
    let curves: Vec<String> = deltas
        .iter()
        .map(|dx| format!("'{}' using 1:2:3 with yerrorlines title 'dx = {dx}'", series_file_name(*dx)))
        .collect();
    coherence.push_str(&curves.join(", \\\n     "));
    coherence.push('\n');
    let gamma = "set terminal pngcairo size 800,600\nset output 'gamma.png'\nset datafile separator ','\n\
                 set logscale xy\nset xlabel 'delta x'\nset ylabel 'gamma [1/period]'\n\
                 plot 'summary.csv' skip 1 using 1:2:3 with yerrorpoints title 'fitted decay rate'\n";
    for (name, body) in [("coherence.gp", coherence.as_str()), ("gamma.gp", gamma)] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Runs the given separations and writes every output file. Fails with the
/// first missing fit after all files are written.
pub fn execute(command: &str, cfg: &RunConfig, deltas: &[f64], gnuplot: bool) -> Result<Vec<DeltaXResult>, CliError> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let start = Instant::now();
    let mut exp = cfg.experiment.clone();
    exp.delta_x_list = deltas.to_vec();
    let results = experiment::run_experiment(&exp)?.results;
    let wall = start.elapsed().as_secs_f64();

    for r in &results {
        write_series(&dir.join(series_file_name(r.delta_x)), &r.series)?;
        for f in &r.failures {
            eprintln!(
                "warning: dx={} realization {} (seed {}) failed: {}",
                r.delta_x,
                f.index,
                f.seed,
                f.error.category()
            );
        }
    }
    let rows: Vec<SummaryRow> = results.iter().map(|r| (r.delta_x, r.fit.clone(), r.n_used())).collect();
    write_summary_file(dir, &rows)?;
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest(command, cfg, &results, wall)).map_err(io_err(&path))?;
    if gnuplot {
        gnuplot_scripts(dir, deltas)?;
    }
    if let Some(r) = results.iter().find(|r| r.fit.is_err()) {
        let source = r.fit.clone().unwrap_err();
        return Err(CliError::NoFit { delta_x: r.delta_x, source });
    }
    Ok(results)
}

pub fn cmd_run(common: &Common, dx: Option<f64>) -> Result<Vec<DeltaXResult>, CliError> {
    let cfg = resolve_config(common)?;
    report_warnings(&cfg);
    let dx = dx.unwrap_or(cfg.experiment.delta_x_list[0]);
    if !(dx.is_finite() && dx >= 0.0) {
        return Err(ConfigError::Constraint { key: "dx".into(), reason: format!("must be non-negative, got {dx}") }.into());
    }
    execute("run", &cfg, &[dx], common.gnuplot)
}

pub fn cmd_sweep(common: &Common) -> Result<Vec<DeltaXResult>, CliError> {
    let cfg = resolve_config(common)?;
    report_warnings(&cfg);
    let deltas = cfg.experiment.delta_x_list.clone();
    execute("sweep", &cfg, &deltas, common.gnuplot)
}

/// Fits a series file; the returned row has `n_used_realizations = 0`
/// because a bare series does not record it.
pub fn cmd_fit(series: &Path, out: Option<&Path>) -> Result<SummaryRow, CliError> {
    let s = read_series(series)?;
    let delta_x = series
        .file_stem()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix("series_dx"))
        .and_then(|v| v.parse().ok())
        .unwrap_or(f64::NAN);
    let fit = fit_decay(&s);
    let row = (delta_x, fit, 0);
    write_summary(io::stdout().lock(), std::slice::from_ref(&row)).map_err(csv_err(series))?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_summary_file(dir, std::slice::from_ref(&row))?;
    }
    if let Err(source) = &row.1 {
        return Err(CliError::NoFit { delta_x, source: source.clone() });
    }
    Ok(row)
}

fn report_warnings(cfg: &RunConfig) {
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run { common, dx } => cmd_run(common, *dx).map(drop),
        Command::Sweep { common } => cmd_sweep(common).map(drop),
        Command::Fit { series, out } => cmd_fit(series, out.as_deref()).map(drop),
    }
}
