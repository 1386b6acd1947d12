//! Command-line front end. Every table goes out as CSV with a header row;
//! numbers use the shortest decimal that reads back to the same value.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::estimate::{fit, EmissionFamily, FitConfig};
use crate::expand::expand_model;
use crate::io::{load_inflow_csv, load_model, save_model, FitMetadata, InflowSeries};
use crate::phmodel::PhTypeHmm;
use crate::presets;
use crate::reservoir::{balance_audit, moran_from_model, DEFAULT_ZERO_BAND};
use crate::simulate::{forecast, forecast_initial_law, replication_study, StudyConfig, DEFAULT_LEVELS};

pub const SEED_ENV: &str = "PHRESERVOIR_SEED";

#[derive(Debug, Parser)]
#[command(name = "phreservoir", version, about = "Phase-type hidden Markov inflow models and Moran reservoir dependability")]
pub struct Cli {
    /// Base seed for every random stream.
    #[arg(long, global = true, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to an inflow CSV and write it as JSON.
    Fit(FitArgs),
    /// Replicated simulate-and-fit study.
    Simulate(SimulateArgs),
    /// Bootstrap forecast bands.
    Forecast(ForecastArgs),
    /// Moran chain reliability, availability and MTTF.
    Reliability(ReliabilityArgs),
    /// Recompute stored volumes from the balance equation.
    Audit(AuditArgs),
    /// Validate a model file and summarize it.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Inflow CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub regimes: usize,
    /// Phase count per regime (one value is broadcast).
    #[arg(long, num_args = 1.., default_value = "1")]
    pub phases: Vec<usize>,
    /// poisson, exponential, degenerate:V or categorical:A|B|..; one per
    /// regime or one for all.
    #[arg(long, num_args = 1.., default_value = "exponential")]
    pub emission: Vec<String>,
    /// Allow only the jumps i -> i+1 (mod d).
    #[arg(long)]
    pub cyclic: bool,
    #[arg(long = "max-iter", default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    /// Labels for the regimes in ascending emission-mean order.
    #[arg(long, num_args = 1..)]
    pub labels: Option<Vec<String>>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Summary CSV (stdout when absent).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Model file or preset:NAME.
    #[arg(long, default_value = "preset:two-regime-poisson")]
    pub model: String,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long, default_value_t = 100)]
    pub length: usize,
    /// Start EM from the true model (keeps its phase labels) or from random
    /// draws (phases put in canonical order).
    #[arg(long, value_parser = ["truth", "random"], default_value = "truth")]
    pub start: String,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long = "max-iter", default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 5.0)]
    pub release: f64,
    #[arg(long, default_value_t = 20.0)]
    pub capacity: f64,
    #[arg(long = "max-states")]
    pub max_states: Option<usize>,
    #[arg(long = "zero-band", default_value_t = DEFAULT_ZERO_BAND)]
    pub zero_band: f64,
    #[arg(long, default_value_t = 10)]
    pub horizon: usize,
    /// Directory for the report files.
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 5)]
    pub horizon: usize,
    #[arg(long, default_value_t = 500)]
    pub bootstrap: usize,
    /// Fitting series; the hidden state then starts from its filtered law.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReliabilityArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub release: f64,
    #[arg(long)]
    pub capacity: f64,
    #[arg(long, default_value_t = 10)]
    pub horizon: usize,
    #[arg(long = "max-states")]
    pub max_states: Option<usize>,
    #[arg(long = "zero-band", default_value_t = DEFAULT_ZERO_BAND)]
    pub zero_band: f64,
    /// Also write the Moran matrix as row,col,probability.
    #[arg(long = "matrix-out")]
    pub matrix_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// CSV with outflow_hm3 and stored_hm3 columns.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub capacity: f64,
    /// Largest discrepancies, ranked.
    #[arg(long = "summary-out")]
    pub summary_out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: String,
    /// Also evaluate the log-likelihood of this series.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse, run, report. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::Usage("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Usage(format!("cannot start workers: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Fit(a) => cmd_fit(a, cli.seed),
        Command::Simulate(a) => cmd_simulate(a, cli.seed),
        Command::Forecast(a) => cmd_forecast(a, cli.seed),
        Command::Reliability(a) => cmd_reliability(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Validate(a) => cmd_validate(a),
    })
}

/// `preset:NAME` or a model file path.
pub fn load_model_source(source: &str) -> Result<PhTypeHmm> {
    match source.strip_prefix("preset:") {
        Some(name) => presets::by_name(name),
        None => load_model(Path::new(source)),
    }
}

type Table = csv::Writer<Box<dyn Write>>;

fn table(out: Option<&Path>, header: &[&str]) -> Result<Table> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(header)?;
    Ok(w)
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn level_name(q: f64) -> String {
    let pct = q * 100.0;
    let rounded = (pct * 1e6).round() / 1e6;
    if rounded.fract() == 0.0 && rounded < 10.0 {
        format!("q0{rounded}")
    } else {
        format!("q{rounded}")
    }
}

fn broadcast<T: Clone>(v: &[T], d: usize, what: &str) -> Result<Vec<T>> {
    match v.len() {
        1 => Ok(vec![v[0].clone(); d]),
        n if n == d => Ok(v.to_vec()),
        n => Err(Error::Usage(format!("{what}: expected 1 or {d} values, got {n}"))),
    }
}

fn summary_rows(w: &mut Table, m: &PhTypeHmm) -> Result<()> {
    let occupancy = m.regime_occupancy().ok();
    for i in 0..m.regimes() {
        let label = &m.labels()[i];
        let g = m.emission(i);
        w.write_record(["emission_family", label, g.family_name()])?;
        w.write_record(["emission_mean", label, &num(g.mean())])?;
        w.write_record(["phases", label, &m.sojourn(i).phases().to_string()])?;
        w.write_record(["mean_sojourn", label, &opt(m.sojourn(i).mean().ok())])?;
        w.write_record([
            "occupancy",
            label,
            &opt(occupancy.as_ref().map(|o| o[i])),
        ])?;
    }
    Ok(())
}

fn cmd_fit(a: &FitArgs, seed: u64) -> Result<()> {
    let d = a.regimes;
    if d == 0 {
        return Err(Error::Usage("--regimes must be at least 1".into()));
    }
    let series = load_inflow_csv(&a.data)?;
    let layout = broadcast(&a.phases, d, "--phases")?;
    let families = broadcast(&a.emission, d, "--emission")?
        .iter()
        .map(|s| {
            EmissionFamily::parse(s)
                .ok_or_else(|| Error::Usage(format!("unknown emission family {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cfg = FitConfig::new(layout, families);
    cfg.max_iterations = a.max_iter;
    cfg.tol = a.tol;
    cfg.restarts = a.restarts;
    cfg.seed = seed;
    cfg.labels = a.labels.clone();
    if a.cyclic && d > 1 {
        cfg.jump_mask = Some(
            (0..d)
                .map(|i| (0..d).map(|j| j == (i + 1) % d).collect())
                .collect(),
        );
    }
    cfg.validate()
        .map_err(|e| Error::Usage(format!("fit configuration: {e}")))?;
    let report = fit(&series.inflow, &cfg)?;
    save_model(
        &a.out,
        &report.model,
        Some(FitMetadata::new(
            report.loglik,
            report.aic,
            report.parameter_count,
            report.iterations,
            seed,
        )),
    )?;
    let mut w = table(a.summary.as_deref(), &["metric", "regime", "value"])?;
    w.write_record(["loglik", "", &num(report.loglik)])?;
    w.write_record(["structured_loglik", "", &num(report.structured_loglik)])?;
    w.write_record(["aic", "", &num(report.aic)])?;
    w.write_record(["parameter_count", "", &report.parameter_count.to_string()])?;
    w.write_record(["iterations", "", &report.iterations.to_string()])?;
    w.write_record(["converged", "", &report.converged.to_string()])?;
    w.write_record(["best_restart", "", &report.best_restart.to_string()])?;
    summary_rows(&mut w, &report.model)?;
    w.flush()?;
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, seed: u64) -> Result<()> {
    let truth = load_model_source(&a.model)?;
    let families = truth.emissions().iter().map(EmissionFamily::of).collect();
    let mut fc = FitConfig::new(truth.layout(), families);
    fc.restarts = a.restarts;
    fc.max_iterations = a.max_iter;
    fc.tol = a.tol;
    if a.start == "truth" {
        fc.initial_model = Some(expand_model(&truth));
        fc.canonical_phases = false;
    }
    let cfg = StudyConfig {
        replicates: a.replicates,
        length: a.length,
        fit: fc,
        seed,
        omega: a.release,
        capacity: a.capacity,
        max_states: a.max_states,
        zero_band: a.zero_band,
        horizon: a.horizon,
    };
    let report = replication_study(&truth, &cfg)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let dir = &a.out_dir;
    let labels = truth.labels();

    let mut w = table(Some(&dir.join("params.csv")), &["quantity", "regime", "row", "col", "value"])?;
    for (i, label) in labels.iter().enumerate() {
        for (k, v) in report.mean_alpha[i].iter().enumerate() {
            w.write_record(["alpha", label, "", &k.to_string(), &num(*v)])?;
        }
        let t = &report.mean_t[i];
        for r in 0..t.nrows() {
            for c in 0..t.ncols() {
                w.write_record(["T", label, &r.to_string(), &c.to_string(), &num(t[(r, c)])])?;
            }
        }
        w.write_record(["beta", label, "", "", &num(report.mean_beta[i])])?;
        w.write_record(["emission_mean", label, "", "", &num(report.mean_emission_mean[i])])?;
        for (j, target) in labels.iter().enumerate() {
            w.write_record(["jump", label, "", target, &num(report.mean_jump[(i, j)])])?;
        }
    }
    w.flush()?;

    let mut w = table(Some(&dir.join("moran.csv")), &["source", "row", "col", "value"])?;
    let s = report.truth.matrix.nrows();
    for (source, m) in [
        ("true", &report.truth.matrix),
        ("average", &report.mean_moran),
        ("sd", &report.sd_moran),
    ] {
        for r in 0..s {
            for c in 0..s {
                w.write_record([source, &r.to_string(), &c.to_string(), &num(m[(r, c)])])?;
            }
        }
    }
    w.flush()?;

    let mut w = table(Some(&dir.join("curves.csv")), &["source", "measure", "state", "step", "value"])?;
    for (source, rel, avail) in [
        ("true", &report.truth.reliability, &report.truth.availability),
        ("average", &report.mean_reliability, &report.mean_availability),
    ] {
        for v in 0..s {
            for (n, x) in rel[v].iter().enumerate() {
                w.write_record([source, "reliability", &v.to_string(), &(n + 1).to_string(), &num(*x)])?;
            }
            for (n, x) in avail[v].iter().enumerate() {
                w.write_record([source, "availability", &v.to_string(), &(n + 1).to_string(), &num(*x)])?;
            }
        }
    }
    w.flush()?;

    let mut w = table(Some(&dir.join("mttf.csv")), &["source", "replicate", "state", "mttf"])?;
    for v in 1..s {
        w.write_record(["true", "", &v.to_string(), &opt(report.truth.mttf[v])])?;
    }
    for r in &report.replicates {
        for v in 1..s {
            w.write_record(["replicate", &r.index.to_string(), &v.to_string(), &opt(r.dependability.mttf[v])])?;
        }
    }
    w.flush()?;

    let mut w = table(Some(&dir.join("replicates.csv")), &["replicate", "status", "loglik", "iterations", "message"])?;
    let mut rows: Vec<(usize, [String; 5])> = report
        .replicates
        .iter()
        .map(|r| {
            (r.index, [r.index.to_string(), "ok".into(), num(r.loglik), r.iterations.to_string(), String::new()])
        })
        .chain(report.failures.iter().map(|(i, msg)| {
            (*i, [i.to_string(), "failed".into(), String::new(), String::new(), msg.clone()])
        }))
        .collect();
    rows.sort_by_key(|r| r.0);
    for (_, row) in rows {
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = table(None, &["metric", "value"])?;
    w.write_record(["replicates", &a.replicates.to_string()])?;
    w.write_record(["failures", &report.failures.len().to_string()])?;
    w.write_record(["moran_states", &s.to_string()])?;
    w.flush()?;
    Ok(())
}

fn cmd_forecast(a: &ForecastArgs, seed: u64) -> Result<()> {
    let m = load_model_source(&a.model)?;
    let levels = a.levels.clone().unwrap_or_else(|| DEFAULT_LEVELS.to_vec());
    let (initial, first_year) = match &a.data {
        Some(path) => {
            let s: InflowSeries = load_inflow_csv(path)?;
            let init = forecast_initial_law(&expand_model(&m), &s.inflow)?;
            (Some(init), s.years.last().map(|y| y + 1))
        }
        None => (None, None),
    };
    let bands = forecast(&m, a.horizon, a.bootstrap, seed, &levels, initial.as_deref())
        .map_err(|e| match e {
            Error::InvalidParameter(msg) => Error::Usage(msg),
            other => other,
        })?;
    let mut header = vec!["step".to_string(), "hydro_year_start".into(), "mean".into()];
    header.extend(levels.iter().map(|&q| level_name(q)));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = table(a.out.as_deref(), &header_ref)?;
    for h in 0..bands.horizon {
        let mut row = vec![
            (h + 1).to_string(),
            first_year.map(|y| (y + h as i32).to_string()).unwrap_or_default(),
            num(bands.mean[h]),
        ];
        row.extend(bands.quantiles[h].iter().map(|v| num(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_reliability(a: &ReliabilityArgs) -> Result<()> {
    let m = load_model_source(&a.model)?;
    let chain = moran_from_model(&expand_model(&m), a.release, a.capacity, a.max_states, a.zero_band)?;
    if let Some(path) = &a.matrix_out {
        let mut w = table(Some(path), &["row", "col", "probability"])?;
        for r in 0..chain.states() {
            for c in 0..chain.states() {
                w.write_record([r.to_string(), c.to_string(), num(chain.matrix()[(r, c)])])?;
            }
        }
        w.flush()?;
    }
    let mttf: Vec<Option<f64>> = (0..chain.states())
        .map(|v| if v == 0 { None } else { chain.mttf(v).ok() })
        .collect();
    let mut w = table(a.out.as_deref(), &["state", "step", "reliability", "availability", "mttf"])?;
    for row in chain.dependability(a.horizon)? {
        w.write_record([
            row.state.to_string(),
            row.step.to_string(),
            opt(row.reliability),
            num(row.availability),
            opt(mttf[row.state]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_audit(a: &AuditArgs) -> Result<()> {
    let s = load_inflow_csv(&a.data)?;
    let (Some(out), Some(stored)) = (&s.outflow, &s.stored) else {
        return Err(Error::data(Some(1), "audit needs outflow_hm3 and stored_hm3 columns"));
    };
    s.check_capacity(a.capacity)?;
    let audit = balance_audit(stored, &s.inflow, out, a.capacity)?;
    let year = |k: usize| (s.years[0] + k as i32).to_string();
    let mut w = table(a.out.as_deref(), &["hydro_year_start", "computed_hm3", "recorded_hm3", "discrepancy_hm3"])?;
    for e in &audit.entries {
        w.write_record([year(e.index), num(e.computed), opt(e.recorded), opt(e.discrepancy)])?;
    }
    w.flush()?;
    if let Some(path) = &a.summary_out {
        let mut w = table(Some(path), &["rank", "hydro_year_start", "discrepancy_hm3"])?;
        for (rank, e) in audit.largest(a.top).iter().enumerate() {
            w.write_record([(rank + 1).to_string(), year(e.index), opt(e.discrepancy)])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn cmd_validate(a: &ValidateArgs) -> Result<()> {
    let m = load_model_source(&a.model)?;
    let mut w = table(a.out.as_deref(), &["metric", "regime", "value"])?;
    w.write_record(["regimes", "", &m.regimes().to_string()])?;
    for (i, dph) in m.sojourns().iter().enumerate() {
        for warning in dph.warnings() {
            w.write_record(["warning", &m.labels()[i], &warning])?;
        }
    }
    summary_rows(&mut w, &m)?;
    if let Some(path) = &a.data {
        let s = load_inflow_csv(path)?;
        let ll = crate::estimate::forward_pass(&expand_model(&m), &s.inflow)?.loglik;
        w.write_record(["loglik", "", &num(ll)])?;
    }
    w.flush()?;
    Ok(())
}
