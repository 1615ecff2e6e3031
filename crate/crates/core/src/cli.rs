//! Command-line front end: `simulate`, `fit`, `predict`, `path` and `bench`.
//!
//! Every option can also come from a flat `key = value` file passed with
//! `--config`; flags on the command line win. Each run leaves a `manifest.cfg`
//! in that same format holding every resolved setting, so
//! `sicpln <command> --config <manifest>` repeats the run exactly.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SicError};
use crate::fit::{sicpln_fit, FitOptions, FitResult, StageReport};
use crate::io::{self, Config, LoadOptions};
use crate::metrics::{self, AggregateRow, BenchRecord};
use crate::model::{self, ModelParams, VariationalParams};
use crate::simulate::{default_coefficients, gen_counts, gen_holdout, CovarianceKind, SimScenario};

const VERSION: &str = env!("CARGO_PKG_VERSION");
const MANIFEST: &str = "manifest.cfg";

#[derive(Debug, Parser)]
#[command(name = "sicpln", version, about = "Sparse covariate selection for Poisson log-normal models")]
pub struct Cli {
    /// Settings file with one `key = value` per line; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic dataset and its ground truth.
    Simulate(SimulateArgs),
    /// Fit the sparse model and write estimates, path and diagnostics.
    Fit(FitCommand),
    /// Predict counts from a fitted model.
    Predict(PredictArgs),
    /// Extract the coefficient trajectory of one species from a fit.
    Path(PathArgs),
    /// Compare the sparse fit with the unpenalized one over simulated replications.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Covariates besides the intercept.
    #[arg(long)]
    d: Option<usize>,
    /// full or diagonal
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replication: Option<u64>,
    /// Value of every intercept coefficient.
    #[arg(long, allow_hyphen_values = true)]
    intercept: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Count matrix, n rows by p species.
    #[arg(long)]
    y: Option<String>,
    /// Covariates, n rows; an intercept column is added unless the first column is all ones.
    #[arg(long)]
    x: Option<String>,
    /// Log-scale offsets, n by p.
    #[arg(long)]
    o: Option<String>,
    /// Input files start with a header row.
    #[arg(long)]
    header: bool,
    /// Zero-based covariate column holding a sampling effort; its log becomes the offset.
    #[arg(long)]
    offset_log_col: Option<usize>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Penalty weight; defaults to ln(n).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    eps_start: Option<f64>,
    #[arg(long)]
    eps_ratio: Option<f64>,
    #[arg(long)]
    eps_steps: Option<usize>,
    /// Coefficients below this in absolute value are set to zero after telescoping.
    #[arg(long)]
    zero_threshold: Option<f64>,
    #[arg(long)]
    max_vem_iters: Option<usize>,
    #[arg(long)]
    max_scoring_iters: Option<usize>,
    #[arg(long)]
    tol_elbo: Option<f64>,
    #[arg(long)]
    tol_param: Option<f64>,
    /// Drop the joint (B, M) recentering move from the VE step.
    #[arg(long)]
    no_recenter: bool,
}

#[derive(Debug, Args)]
struct FitCommand {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    fit: FitArgs,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    fit: Option<String>,
    #[command(flatten)]
    data: DataArgs,
    /// Use the variational posterior of the training rows (needs --y and the training design).
    #[arg(long)]
    in_sample: bool,
    /// Output CSV.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
struct PathArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    fit: Option<String>,
    /// Zero-based species column.
    #[arg(long)]
    species: Option<usize>,
    /// Output CSV.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Comma-separated sample sizes.
    #[arg(long)]
    n: Option<String>,
    /// Comma-separated species counts.
    #[arg(long)]
    p: Option<String>,
    /// Comma-separated covariance kinds.
    #[arg(long)]
    kinds: Option<String>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Score predictions on a fresh replica of the counts instead of the training counts.
    #[arg(long)]
    holdout: bool,
    /// Coefficients of external methods: scenario,replication,method,coef_row,coef_col,value.
    #[arg(long)]
    import_baseline: Option<String>,
    /// Worker threads (0 lets the pool decide).
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    fit: FitArgs,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
}

/// Merges flags, the config file and defaults, and records every resolved value
/// for the manifest.
struct Settings {
    file: Config,
    used: BTreeSet<String>,
    manifest: Config,
}

impl Settings {
    fn new(file: Config, command: &str) -> Result<Self> {
        if let Some(c) = file.get("command") {
            if c != command {
                return Err(SicError::Usage(format!("config was written by '{c}', not '{command}'")));
            }
        }
        if let Some(v) = file.get("version") {
            if v != VERSION {
                eprintln!("warning: config was written by version {v}, running {VERSION}");
            }
        }
        let mut manifest = Config::default();
        manifest.set("command", command);
        manifest.set("version", VERSION);
        let used = ["command", "version"].iter().map(|s| s.to_string()).collect();
        Ok(Self { file, used, manifest })
    }

    fn optional<T: FromStr + ToString>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        self.used.insert(key.to_string());
        let value = match flag {
            Some(v) => Some(v),
            None => self.file.parsed(key)?,
        };
        if let Some(v) = &value {
            self.manifest.set(key, v.to_string());
        }
        Ok(value)
    }

    fn or<T: FromStr + ToString>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let v = self.optional(key, flag)?.unwrap_or(default);
        self.manifest.set(key, v.to_string());
        Ok(v)
    }

    fn required<T: FromStr + ToString>(&mut self, key: &str, flag: Option<T>) -> Result<T> {
        self.optional(key, flag)?
            .ok_or_else(|| SicError::Usage(format!("--{} is required", key.replace('_', "-"))))
    }

    /// A flag that can only switch something on from the command line.
    fn switch(&mut self, key: &str, flag: bool, default: bool) -> Result<bool> {
        self.or(key, flag.then_some(true), default)
    }

    /// Rejects config keys that the command never asked for.
    fn finish(&self) -> Result<()> {
        let unknown: Vec<&str> = self.file.keys().filter(|k| !self.used.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(SicError::Usage(format!("unknown config keys: {}", unknown.join(", "))));
        }
        Ok(())
    }

    fn write_manifest(&self, path: &Path) -> Result<()> {
        let text = format!("# sicpln {VERSION}\n{}", self.manifest.render());
        fs::write(path, text)?;
        Ok(())
    }
}

fn load_options(s: &mut Settings, data: &DataArgs) -> Result<LoadOptions> {
    Ok(LoadOptions {
        header: s.switch("header", data.header, false)?,
        offset_log_col: s.optional("offset_log_col", data.offset_log_col)?,
    })
}

fn fit_options(s: &mut Settings, a: &FitArgs) -> Result<FitOptions> {
    let mut o = FitOptions::default();
    o.penalty.lambda = s.optional("lambda", a.lambda)?;
    o.penalty.eps_start = s.or("eps_start", a.eps_start, o.penalty.eps_start)?;
    o.penalty.eps_ratio = s.or("eps_ratio", a.eps_ratio, o.penalty.eps_ratio)?;
    o.penalty.eps_steps = s.or("eps_steps", a.eps_steps, o.penalty.eps_steps)?;
    o.penalty.zero_threshold = s.or("zero_threshold", a.zero_threshold, o.penalty.zero_threshold)?;
    o.max_vem_iters = s.or("max_vem_iters", a.max_vem_iters, o.max_vem_iters)?;
    o.max_scoring_iters = s.or("max_scoring_iters", a.max_scoring_iters, o.max_scoring_iters)?;
    o.tol_elbo = s.or("tol_elbo", a.tol_elbo, o.tol_elbo)?;
    o.tol_param = s.or("tol_param", a.tol_param, o.tol_param)?;
    let recenter = s.optional("recenter", a.no_recenter.then_some(false))?;
    o.recenter = recenter.unwrap_or(true);
    s.manifest.set("recenter", o.recenter);
    o.validate()?;
    Ok(o)
}

fn create_dir(dir: &str) -> Result<PathBuf> {
    let p = PathBuf::from(dir);
    fs::create_dir_all(&p)?;
    Ok(p)
}

fn run_simulate(s: &mut Settings, a: &SimulateArgs) -> Result<()> {
    let n = s.or("n", a.n, 100)?;
    let p = s.or("p", a.p, 10)?;
    let d = s.or("d", a.d, 6)?;
    let kind: CovarianceKind = s.or("kind", a.kind.clone(), "full".to_string())?.parse()?;
    let seed = s.or("seed", a.seed, 0)?;
    let replication = s.or("replication", a.replication, 0)?;
    let intercept = s.or("intercept", a.intercept, 0.0)?;
    let out = create_dir(&s.required("out", a.out.clone())?)?;
    s.finish()?;

    let mut scenario = SimScenario::new(n, p, kind, seed).with_replication(replication);
    scenario.d = d;
    scenario.coefficients = default_coefficients(d, p, intercept);
    scenario.validate()?;
    let sim = gen_counts(&scenario)?;

    let species = io::default_names("y", p);
    let mut covariates = vec!["intercept".to_string()];
    covariates.extend(io::default_names("x", d));
    io::write_table(&out.join("Y.csv"), sim.data.y(), Some(&species))?;
    io::write_table(&out.join("X.csv"), sim.data.x(), Some(&covariates))?;
    io::write_table(&out.join("O.csv"), sim.data.o(), Some(&species))?;
    io::write_table(&out.join("B_true.csv"), &sim.b_true, Some(&species))?;
    io::write_table(&out.join("Sigma_true.csv"), &sim.sigma_true, Some(&species))?;
    s.write_manifest(&out.join(MANIFEST))
}

#[derive(Serialize)]
struct StageSummary {
    step: usize,
    eps: f64,
    iterations: usize,
    converged: bool,
    scoring_converged: bool,
    objective_start: f64,
    objective_end: f64,
}

impl StageSummary {
    fn new(step: usize, r: &StageReport) -> Self {
        Self {
            step,
            eps: r.eps,
            iterations: r.iterations,
            converged: r.converged,
            scoring_converged: r.scoring_converged,
            objective_start: r.trace[0],
            objective_end: *r.trace.last().expect("trace starts with the initial value"),
        }
    }
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    n: usize,
    p: usize,
    d: usize,
    lambda: f64,
    converged: bool,
    active_coefficients: usize,
    initial_objective: f64,
    final_objective: f64,
    species: &'a [String],
    covariates: &'a [String],
    stages: Vec<StageSummary>,
    refit: StageSummary,
}

fn write_fit(out: &Path, fit: &FitResult, loaded: &io::LoadedDataset) -> Result<()> {
    let species = &loaded.species;
    io::write_table(&out.join("B.csv"), &fit.params.b, Some(species))?;
    io::write_table(&out.join("Sigma.csv"), fit.params.sigma(), Some(species))?;
    io::write_table(&out.join("M.csv"), &fit.vp.m, Some(species))?;
    io::write_table(&out.join("S.csv"), &fit.vp.s, Some(species))?;
    io::write_path(&out.join("path.csv"), &fit.path)?;
    let diag = Diagnostics {
        n: loaded.data.n(),
        p: loaded.data.p(),
        d: loaded.data.d(),
        lambda: fit.lambda,
        converged: fit.converged(),
        active_coefficients: fit.active_set.iter().filter(|&&a| a).count(),
        initial_objective: fit.initial_objective,
        final_objective: fit.final_objective,
        species,
        covariates: &loaded.covariates,
        stages: fit.stages.iter().enumerate().map(|(t, r)| StageSummary::new(t + 1, r)).collect(),
        refit: StageSummary::new(fit.stages.len() + 1, &fit.refit),
    };
    let json = serde_json::to_string_pretty(&diag).map_err(|e| SicError::Numeric(format!("diagnostics: {e}")))?;
    fs::write(out.join("diagnostics.json"), json + "\n")?;
    Ok(())
}

fn run_fit(s: &mut Settings, a: &FitCommand) -> Result<()> {
    let y = s.required("y", a.data.y.clone())?;
    let x = s.optional("x", a.data.x.clone())?;
    let o = s.optional("o", a.data.o.clone())?;
    let load = load_options(s, &a.data)?;
    let opts = fit_options(s, &a.fit)?;
    let out = s.required("out", a.out.clone())?;
    s.finish()?;

    let loaded = io::load_dataset(Path::new(&y), x.as_deref().map(Path::new), o.as_deref().map(Path::new), &load)?;
    let fit = sicpln_fit(&loaded.data, &opts)?;
    let out = create_dir(&out)?;
    write_fit(&out, &fit, &loaded)?;
    s.write_manifest(&out.join(MANIFEST))
}

fn read_fitted(dir: &Path) -> Result<ModelParams> {
    let b = io::read_table(&dir.join("B.csv"), true)?.values;
    let sigma = io::read_table(&dir.join("Sigma.csv"), true)?.values;
    ModelParams::new(b, sigma)
}

fn manifest_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|f| f.to_os_string()).unwrap_or_default();
    name.push(".manifest.cfg");
    out.with_file_name(name)
}

fn run_predict(s: &mut Settings, a: &PredictArgs) -> Result<()> {
    let fit_dir = PathBuf::from(s.required("fit", a.fit.clone())?);
    let y = s.optional("y", a.data.y.clone())?;
    let x = s.optional("x", a.data.x.clone())?;
    let o = s.optional("o", a.data.o.clone())?;
    let load = load_options(s, &a.data)?;
    let in_sample = s.switch("in_sample", a.in_sample, false)?;
    let out = PathBuf::from(s.required("out", a.out.clone())?);
    s.finish()?;

    let params = read_fitted(&fit_dir)?;
    let species = io::read_table(&fit_dir.join("B.csv"), true)?.header;
    let x_path = x.as_deref().map(Path::new);
    let o_path = o.as_deref().map(Path::new);
    let pred = if in_sample {
        let y = y.ok_or_else(|| SicError::Usage("--in-sample needs the training counts (--y)".into()))?;
        let loaded = io::load_dataset(Path::new(&y), x_path, o_path, &load)?;
        let m = io::read_table(&fit_dir.join("M.csv"), true)?.values;
        let sd = io::read_table(&fit_dir.join("S.csv"), true)?.values;
        let vp = VariationalParams::new(m, sd)?;
        model::predict_variational(&loaded.data, &params, &vp)?
    } else {
        if y.is_some() {
            return Err(SicError::Usage("--y is only used with --in-sample".into()));
        }
        let x_path = x_path.ok_or_else(|| SicError::Usage("--x is required".into()))?;
        let n = io::read_table(x_path, load.header)?.values.nrows();
        let design = io::load_design(Some(x_path), o_path, n, params.b.ncols(), &load)?;
        model::predict_marginal(&design.x, design.o.as_ref(), &params)?
    };
    io::write_table(&out, &pred, species.as_deref())?;
    s.write_manifest(&manifest_for(&out))
}

fn run_path(s: &mut Settings, a: &PathArgs) -> Result<()> {
    let fit_dir = PathBuf::from(s.required("fit", a.fit.clone())?);
    let species = s.required("species", a.species)?;
    let out = PathBuf::from(s.required("out", a.out.clone())?);
    s.finish()?;

    let mut reader = csv::Reader::from_path(fit_dir.join("path.csv"))?;
    let mut rows: Vec<(usize, String, Vec<String>)> = Vec::new();
    let mut seen = false;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let parse = |i: usize| -> Result<usize> {
            field(i).parse().map_err(|_| SicError::Parse {
                row: line,
                col: i,
                msg: format!("'{}' is not an index", field(i)),
            })
        };
        let (step, row, col) = (parse(0)?, parse(2)?, parse(3)?);
        if col != species {
            continue;
        }
        seen = true;
        match rows.last_mut() {
            Some(last) if last.0 == step => {
                if row != last.2.len() {
                    return Err(SicError::Parse {
                        row: line,
                        col: 2,
                        msg: "coefficient rows out of order".into(),
                    });
                }
                last.2.push(field(4).to_string());
            }
            _ => rows.push((step, field(1).to_string(), vec![field(4).to_string()])),
        }
    }
    if !seen {
        return Err(SicError::Usage(format!("species {species} does not appear in the path")));
    }
    let d = rows[0].2.len();
    let mut w = csv::Writer::from_path(&out)?;
    let mut header = vec!["step".to_string(), "eps".to_string()];
    header.extend((0..d).map(|k| format!("b{k}")));
    w.write_record(&header)?;
    for (step, eps, values) in &rows {
        let mut rec = vec![step.to_string(), eps.clone()];
        rec.extend(values.iter().cloned());
        w.write_record(&rec)?;
    }
    w.flush()?;
    s.write_manifest(&manifest_for(&out))
}

fn parse_list<T: FromStr>(key: &str, text: &str) -> Result<Vec<T>> {
    let items: Vec<T> = text
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| SicError::Usage(format!("--{key}: cannot parse '{t}'"))))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(SicError::Usage(format!("--{key} is empty")));
    }
    Ok(items)
}

fn scenario_id(n: usize, p: usize, kind: CovarianceKind) -> String {
    format!("n{n}_p{p}_{kind}")
}

/// Coefficients of external methods keyed by `(scenario, replication, method)`.
type Baselines = std::collections::BTreeMap<(String, u64, String), Vec<(usize, usize, f64)>>;

fn read_baselines(path: &Path) -> Result<Baselines> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Baselines::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 6 {
            return Err(SicError::Parse {
                row,
                col: record.len(),
                msg: "expected scenario,replication,method,coef_row,coef_col,value".into(),
            });
        }
        let num = |col: usize| -> Result<f64> {
            record[col].trim().parse().map_err(|_| SicError::Parse {
                row,
                col,
                msg: format!("'{}' is not a number", &record[col]),
            })
        };
        let index = |col: usize| -> Result<usize> {
            let v = num(col)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(SicError::Parse {
                    row,
                    col,
                    msg: format!("'{}' is not an index", &record[col]),
                });
            }
            Ok(v as usize)
        };
        let key = (record[0].trim().to_string(), index(1)? as u64, record[2].trim().to_string());
        out.entry(key).or_default().push((index(3)?, index(4)?, num(5)?));
    }
    Ok(out)
}

struct Job {
    scenario: SimScenario,
    id: String,
}

fn bench_one(job: &Job, opts: &FitOptions, holdout: bool, baselines: &Baselines) -> Result<Vec<(BenchRecord, f64)>> {
    let sim = gen_counts(&job.scenario)?;
    let target = if holdout {
        Some(gen_holdout(&job.scenario, sim.data.x().clone(), &sim.b_true, sim.sigma_true.clone())?)
    } else {
        None
    };
    let mut pln = opts.clone();
    pln.penalty.lambda = Some(0.0);
    pln.penalty.eps_steps = 1;

    let mut out = Vec::new();
    for (method, o) in [("SICPLN", opts), ("PLN", &pln)] {
        let start = Instant::now();
        let fit = sicpln_fit(&sim.data, o)?;
        let elapsed = start.elapsed().as_secs_f64();
        let (y, pred) = match &target {
            Some(t) => (t.data.y(), model::predict_marginal(t.data.x(), None, &fit.params)?),
            None => (sim.data.y(), model::predict_variational(&sim.data, &fit.params, &fit.vp)?),
        };
        out.push((
            BenchRecord {
                scenario: job.id.clone(),
                method: method.into(),
                replication: job.scenario.replication,
                estimation_error: metrics::estimation_error(&sim.b_true, &fit.params.b)?,
                tnr: metrics::tnr(&sim.b_true, &fit.params.b)?,
                prediction_mse: metrics::prediction_mse(y, &pred)?,
                wall_time: elapsed,
            },
            elapsed,
        ));
    }

    let shape = sim.b_true.shape();
    for ((id, rep, method), coefs) in baselines.range((job.id.clone(), job.scenario.replication, String::new())..) {
        if *id != job.id || *rep != job.scenario.replication {
            break;
        }
        let mut b = DMatrix::zeros(shape.0, shape.1);
        for &(k, j, v) in coefs {
            if k >= shape.0 || j >= shape.1 {
                return Err(SicError::Dimension(format!(
                    "baseline {method} has coefficient ({k}, {j}) outside {shape:?}"
                )));
            }
            b[(k, j)] = v;
        }
        let (x, y) = match &target {
            Some(t) => (t.data.x(), t.data.y()),
            None => (sim.data.x(), sim.data.y()),
        };
        // external fits carry no latent covariance, so predictions are exp(XB)
        let pred = model::checked_exp(x * &b)?;
        out.push((
            BenchRecord {
                scenario: job.id.clone(),
                method: method.clone(),
                replication: *rep,
                estimation_error: metrics::estimation_error(&sim.b_true, &b)?,
                tnr: metrics::tnr(&sim.b_true, &b)?,
                prediction_mse: metrics::prediction_mse(y, &pred)?,
                wall_time: f64::NAN,
            },
            f64::NAN,
        ));
    }
    Ok(out)
}

fn write_records(path: &Path, records: &[BenchRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scenario", "method", "replication", "estimation_error", "tnr", "prediction_mse"])?;
    for r in records {
        w.write_record([
            r.scenario.clone(),
            r.method.clone(),
            r.replication.to_string(),
            r.estimation_error.to_string(),
            r.tnr.to_string(),
            r.prediction_mse.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Summary without the timing columns, which are the only run-dependent values.
fn write_summary(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let keep = AggregateRow::HEADER.len() - 4;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&AggregateRow::HEADER[..keep])?;
    for row in rows {
        w.write_record(&row.fields()[..keep])?;
    }
    w.flush()?;
    Ok(())
}

fn write_timings(path: &Path, records: &[BenchRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scenario", "method", "replication", "wall_time"])?;
    for r in records {
        w.write_record([
            r.scenario.clone(),
            r.method.clone(),
            r.replication.to_string(),
            r.wall_time.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run_bench(s: &mut Settings, a: &BenchArgs) -> Result<()> {
    let ns: Vec<usize> = parse_list("n", &s.or("n", a.n.clone(), "100".to_string())?)?;
    let ps: Vec<usize> = parse_list("p", &s.or("p", a.p.clone(), "10".to_string())?)?;
    let kinds: Vec<CovarianceKind> = parse_list("kinds", &s.or("kinds", a.kinds.clone(), "full,diagonal".to_string())?)?;
    let replications = s.or("replications", a.replications, 20)?;
    let seed = s.or("seed", a.seed, 0)?;
    let holdout = s.switch("holdout", a.holdout, false)?;
    let baseline_path = s.optional("import_baseline", a.import_baseline.clone())?;
    let threads = s.or("threads", a.threads, 0)?;
    let opts = fit_options(s, &a.fit)?;
    let out = s.required("out", a.out.clone())?;
    s.finish()?;
    if replications == 0 {
        return Err(SicError::Usage("--replications must be at least 1".into()));
    }
    let baselines = match &baseline_path {
        Some(p) => read_baselines(Path::new(p))?,
        None => Baselines::new(),
    };

    let mut jobs = Vec::new();
    for &n in &ns {
        for &p in &ps {
            for &kind in &kinds {
                for r in 0..replications {
                    jobs.push(Job {
                        scenario: SimScenario::new(n, p, kind, seed).with_replication(r as u64),
                        id: scenario_id(n, p, kind),
                    });
                }
            }
        }
    }
    let known: BTreeSet<(&str, u64)> = jobs.iter().map(|j| (j.id.as_str(), j.scenario.replication)).collect();
    if let Some((id, rep, method)) = baselines.keys().find(|(id, rep, _)| !known.contains(&(id.as_str(), *rep))) {
        return Err(SicError::Usage(format!(
            "baseline {method} refers to scenario {id} replication {rep}, which is not in the grid"
        )));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SicError::Usage(format!("thread pool: {e}")))?;
    let results: Vec<Result<Vec<(BenchRecord, f64)>>> =
        pool.install(|| jobs.par_iter().map(|job| bench_one(job, &opts, holdout, &baselines)).collect());
    let mut records = Vec::new();
    for r in results {
        records.extend(r?.into_iter().map(|(rec, _)| rec));
    }

    let out = create_dir(&out)?;
    write_records(&out.join("records.csv"), &records)?;
    write_summary(&out.join("summary.csv"), &metrics::aggregate(&records)?)?;
    write_timings(&out.join("timings.csv"), &records)?;
    s.write_manifest(&out.join(MANIFEST))
}

impl Cli {
    pub fn run(&self) -> Result<()> {
        let file = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        match &self.command {
            Command::Simulate(a) => run_simulate(&mut Settings::new(file, "simulate")?, a),
            Command::Fit(a) => run_fit(&mut Settings::new(file, "fit")?, a),
            Command::Predict(a) => run_predict(&mut Settings::new(file, "predict")?, a),
            Command::Path(a) => run_path(&mut Settings::new(file, "path")?, a),
            Command::Bench(a) => run_bench(&mut Settings::new(file, "bench")?, a),
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.run() {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
