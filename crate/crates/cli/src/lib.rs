//! The `deepes` command line: fit and apply ES models on CSV data, and run
//! seeded simulation studies.

pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use deepes_core::data::{load_csv, load_csv_opts, MinMaxScaler, Table};
use deepes_core::estimators::{fit_two_step, fit_upper, EsModel, Tail};
use deepes_core::eval::{huber_bias_check, summary_table_csv, vpi, VpiTarget};
use deepes_core::experiment::{self, curve, curve_csv, simulate, sweep_csv, sweep_rows, ExperimentConfig, RunManifest};
use deepes_core::noncrossing::{fit_nc_two_step, NcEsModel};
use deepes_core::nn::{FitConfig, TrainReport};
use deepes_core::simgen::{DistKind, ErrorDist, Model};
use deepes_core::Dataset;

use config::{env_parallelism, parse_estimators, parse_model, parse_tau, parse_truncation, tau_value_to_string, FileConfig};
use output::{create_run_dir, emit, write_json, write_new};

#[derive(Debug, Parser)]
#[command(name = "deepes", version, about = "Deep expected-shortfall regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a two-step (or non-crossing multi-level) ES model on a CSV file.
    Fit(FitCmd),
    /// Predict quantile and ES values for the rows of a CSV file.
    Predict(PredictCmd),
    /// Run a seeded simulation study and write MSPE tables.
    Simulate(SimulateCmd),
    /// Run simulations over a grid of training sizes.
    Curve(CurveCmd),
    /// Permutation importance of a fitted model's features.
    Vpi(VpiCmd),
    /// Sensitivity of DRES to the τ rule multiplier.
    TauSweep(TauSweepCmd),
    /// Population Huber-bias check for a noise distribution.
    BiasCheck(BiasCheckCmd),
}

/// Optimizer settings shared by fitting commands.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Hidden widths, e.g. 64,128,128,64.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Output bound: auto (2·max|y|), none, or a number.
    #[arg(long)]
    pub truncation: Option<String>,
}

impl TrainArgs {
    fn apply(&self, mut cfg: FitConfig) -> Result<FitConfig> {
        if let Some(v) = self.epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = &self.hidden {
            cfg.hidden = v.clone();
        }
        if let Some(v) = self.validation_fraction {
            cfg.validation_fraction = v;
        }
        if let Some(v) = &self.truncation {
            cfg.truncation = parse_truncation(v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TailArg {
    Lower,
    Upper,
}

#[derive(Debug, Args)]
pub struct FitCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Fit a non-crossing model at these increasing levels instead of one α.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    /// rule, inf (least squares) or a fixed positive value.
    #[arg(long, default_value = "rule")]
    pub tau: String,
    #[arg(long, default_value_t = 1.0)]
    pub tau_const: f64,
    #[arg(long, value_enum, default_value = "lower")]
    pub tail: TailArg,
    /// Use the features as given instead of min-max scaling them to [0, 1].
    #[arg(long)]
    pub no_scale: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base directory for the timestamped run directory.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct PredictCmd {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with the model's feature columns; a `y` column is ignored.
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Settings shared by the simulation commands.
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// C1, C2 or C3.
    #[arg(long)]
    pub model: Option<String>,
    /// normal, scaled_t, t, pareto, frechet or burr (parameters via the config file).
    #[arg(long)]
    pub error: Option<String>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    /// Any of DQR, DES, DRES, NC-DRES, oracle-DES, oracle-DRES.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[arg(long)]
    pub tau: Option<String>,
    #[arg(long)]
    pub tau_const: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Worker threads; defaults to the config file, then $DEEPES_PARALLELISM, then 1.
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct SimulateCmd {
    #[command(flatten)]
    pub exp: ExperimentArgs,
}

#[derive(Debug, Args)]
pub struct CurveCmd {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Increasing training sizes, e.g. 2048,4096,8192.
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct TauSweepCmd {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Rule multipliers, e.g. 0.1,0.5,1,2.
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VpiTargetArg {
    Response,
    Surrogate,
}

#[derive(Debug, Args)]
pub struct VpiCmd {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "surrogate")]
    pub target: VpiTargetArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BiasCheckCmd {
    /// normal, scaled_t, t, pareto, frechet, burr or two_point.
    #[arg(long, default_value = "pareto")]
    pub error: String,
    #[arg(long)]
    pub df: Option<f64>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub s_min: Option<f64>,
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long)]
    pub k2: Option<f64>,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub standardized: bool,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// τ grid; `inf` is allowed.
    #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
    pub taus: Vec<String>,
    /// JSON report path (a CSV table always goes to stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Result of a command: where it wrote, and the process exit status.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub run_dir: Option<PathBuf>,
    pub exit_code: u8,
}

impl Outcome {
    fn ok(run_dir: Option<PathBuf>) -> Self {
        Self { run_dir, exit_code: 0 }
    }
}

/// Parses arguments (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<Outcome>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            e.print()?;
            return Ok(Outcome {
                run_dir: None,
                exit_code: code,
            });
        }
    };
    run(cli)
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Fit(c) => cmd_fit(&c),
        Command::Predict(c) => cmd_predict(&c),
        Command::Simulate(c) => cmd_simulate(&c),
        Command::Curve(c) => cmd_curve(&c),
        Command::Vpi(c) => cmd_vpi(&c),
        Command::TauSweep(c) => cmd_tau_sweep(&c),
        Command::BiasCheck(c) => cmd_bias_check(&c),
    }
}

/// A fitted model as stored on disk, with the feature preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub feature_names: Vec<String>,
    /// Min-max scaler applied to raw features; absent when fitted unscaled.
    pub scaler: Option<MinMaxScaler>,
    pub model: StoredModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoredModel {
    Single { fit: EsModel },
    NonCrossing { fit: NcEsModel },
}

pub const MODEL_FORMAT: &str = "deepes-model";

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
        let m: ModelFile = serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))?;
        if m.format != MODEL_FORMAT || m.version != 1 {
            bail!("{} is not a version-1 {MODEL_FORMAT} file", path.display());
        }
        Ok(m)
    }

    fn dim(&self) -> usize {
        self.feature_names.len()
    }

    /// Reads a CSV and maps its features into the model's input space.
    pub fn prepare(&self, path: &Path, require_response: bool) -> Result<Table> {
        let mut table = load_csv_opts(path, require_response)?;
        if table.feature_names != self.feature_names {
            bail!(
                "feature columns [{}] do not match the model's [{}]",
                table.feature_names.join(", "),
                self.feature_names.join(", ")
            );
        }
        if let Some(s) = &self.scaler {
            table.data = s.transform(&table.data)?;
        }
        debug_assert_eq!(table.data.dim(), self.dim());
        Ok(table)
    }
}

#[derive(Debug, Serialize)]
struct StageReport {
    best_epoch: usize,
    best_val_loss: f64,
    snapshot_id: String,
    train_loss: Vec<f64>,
    val_loss: Vec<f64>,
}

impl From<&TrainReport> for StageReport {
    fn from(r: &TrainReport) -> Self {
        Self {
            best_epoch: r.best_epoch,
            best_val_loss: r.best_val_loss(),
            snapshot_id: r.snapshot_id.clone(),
            train_loss: r.train_loss.clone(),
            val_loss: r.val_loss.clone(),
        }
    }
}

fn tau_json(t: f64) -> serde_json::Value {
    if t.is_infinite() {
        serde_json::Value::String("inf".into())
    } else {
        serde_json::json!(t)
    }
}

#[derive(Debug, Serialize)]
struct FitReport {
    command: &'static str,
    data: String,
    n: usize,
    d: usize,
    feature_names: Vec<String>,
    constant_features: Vec<String>,
    scaled: bool,
    kind: &'static str,
    tail: Tail,
    levels: Vec<f64>,
    tau_used: Vec<serde_json::Value>,
    quantile_stage: StageReport,
    es_stage: StageReport,
    fit_config: FitConfig,
    seconds: f64,
}

/// Reads a training CSV and applies (or skips) min-max scaling.
pub fn load_training_data(path: &Path, scale: bool) -> Result<(Table, Option<MinMaxScaler>)> {
    let mut table = load_csv(path).with_context(|| format!("loading {}", path.display()))?;
    for name in &table.constant_features {
        eprintln!("warning: feature `{name}` is constant; it is kept but carries no information");
    }
    let scaler = scale.then(|| MinMaxScaler::fit(&table.data));
    if let Some(s) = &scaler {
        table.data = s.transform(&table.data)?;
    }
    Ok((table, scaler))
}

fn fit_config_for(file: &FileConfig, seed: Option<u64>, train: &TrainArgs) -> Result<FitConfig> {
    let mut cfg = file.fit.apply(FitConfig::default())?;
    if let Some(s) = seed.or(file.experiment.seed) {
        cfg.seed = s;
    }
    train.apply(cfg)
}

pub fn cmd_fit(c: &FitCmd) -> Result<Outcome> {
    let start = Instant::now();
    let file = FileConfig::load_opt(c.config.as_deref())?;
    let cfg = fit_config_for(&file, c.seed, &c.train)?;
    let rule = parse_tau(&c.tau, c.tau_const)?;
    let (table, scaler) = load_training_data(&c.data, !c.no_scale)?;
    let data = &table.data;

    let (model, levels, taus, q_rep, e_rep, kind, tail) = match &c.levels {
        Some(levels) => {
            if c.tail == TailArg::Upper {
                bail!("--tail upper is not supported with --levels");
            }
            let fit = fit_nc_two_step(data, levels, rule, &cfg)?;
            let taus = fit.model.taus.clone();
            (
                StoredModel::NonCrossing { fit: fit.model },
                levels.clone(),
                taus,
                fit.quantile_report,
                fit.es_report,
                "non_crossing",
                Tail::Lower,
            )
        }
        None => {
            let fit = match c.tail {
                TailArg::Lower => fit_two_step(data, c.alpha, rule, &cfg)?,
                TailArg::Upper => fit_upper(data, c.alpha, rule, &cfg)?,
            };
            let tau = fit.model.tau_used;
            let tail = fit.model.tail;
            (
                StoredModel::Single { fit: fit.model },
                vec![c.alpha],
                vec![tau],
                fit.quantile_report,
                fit.es_report,
                "single",
                tail,
            )
        }
    };

    let dir = create_run_dir(&c.out, "fit")?;
    let file_out = ModelFile {
        format: MODEL_FORMAT.into(),
        version: 1,
        feature_names: table.feature_names.clone(),
        scaler,
        model,
    };
    write_json(&dir.join("model.json"), &file_out)?;
    let report = FitReport {
        command: "fit",
        data: c.data.display().to_string(),
        n: data.len(),
        d: data.dim(),
        feature_names: table.feature_names.clone(),
        constant_features: table.constant_features.clone(),
        scaled: !c.no_scale,
        kind,
        tail,
        levels,
        tau_used: taus.iter().map(|&t| tau_json(t)).collect(),
        quantile_stage: (&q_rep).into(),
        es_stage: (&e_rep).into(),
        fit_config: cfg,
        seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("report.json"), &report)?;
    println!("wrote {}", dir.display());
    Ok(Outcome::ok(Some(dir)))
}

/// Prediction CSV for a stored model on prepared data.
pub fn prediction_csv(model: &ModelFile, data: &Dataset) -> Result<String> {
    let mut out = String::new();
    match &model.model {
        StoredModel::Single { fit } => {
            out.push_str("quantile,es\n");
            for (q, g) in fit.predict_batch(data)? {
                out.push_str(&format!("{q},{g}\n"));
            }
        }
        StoredModel::NonCrossing { fit } => {
            let header: Vec<String> = fit
                .levels()
                .iter()
                .flat_map(|a| [format!("quantile_{a}"), format!("es_{a}")])
                .collect();
            out.push_str(&header.join(","));
            out.push('\n');
            let (f, g) = fit.predict_batch(data)?;
            for i in 0..data.len() {
                let row: Vec<String> = (0..f.len()).flat_map(|k| [f[k][i].to_string(), g[k][i].to_string()]).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
    }
    Ok(out)
}

pub fn cmd_predict(c: &PredictCmd) -> Result<Outcome> {
    let model = ModelFile::load(&c.model)?;
    let table = model.prepare(&c.data, false)?;
    emit(c.out.as_deref(), &prediction_csv(&model, &table.data)?)?;
    Ok(Outcome::ok(None))
}

/// Merges file values, flags and the environment into an experiment config.
/// Precedence: flag, then config file, then (for parallelism) the environment.
pub fn experiment_config(a: &ExperimentArgs) -> Result<(ExperimentConfig, FileConfig)> {
    let (cfg, file) = merge_experiment(a)?;
    cfg.validate()?;
    Ok((cfg, file))
}

fn merge_experiment(a: &ExperimentArgs) -> Result<(ExperimentConfig, FileConfig)> {
    let file = FileConfig::load_opt(a.config.as_deref())?;
    let mut dgp = file.dgp.clone();
    if a.error.is_some() {
        dgp.error = a.error.clone();
    }
    let model = parse_model(a.model.as_deref().or(dgp.model.as_deref()).unwrap_or("C1"))?;
    let error = dgp.error_dist()?;
    let n_train = a.n_train.or(dgp.n_train).unwrap_or(4096);
    let seed = a.seed.or(file.experiment.seed).unwrap_or(0);
    let mut cfg = ExperimentConfig::new(model, error, n_train, seed);
    cfg.n_test = a.n_test.or(dgp.n_test).unwrap_or(cfg.n_test);
    cfg.noise_columns = dgp.noise_columns.unwrap_or(0);
    if let Some(v) = a.alphas.clone().or(file.experiment.alphas.clone()) {
        cfg.alphas = v;
    }
    if let Some(v) = a.estimators.clone().or(file.experiment.estimators.clone()) {
        cfg.estimators = parse_estimators(&v)?;
    }
    let tau_const = a.tau_const.or(file.experiment.tau_const).unwrap_or(1.0);
    let tau = match (&a.tau, &file.experiment.tau) {
        (Some(t), _) => t.clone(),
        (None, Some(v)) => tau_value_to_string(v)?,
        (None, None) => "rule".into(),
    };
    cfg.tau_rule = parse_tau(&tau, tau_const)?;
    if let Some(v) = &file.experiment.tau_sweep {
        cfg.tau_sweep = v.clone();
    }
    cfg.reps = a.reps.or(file.experiment.reps).unwrap_or(1);
    cfg.parallelism = match a.parallelism.or(file.experiment.parallelism) {
        Some(p) => p,
        None => env_parallelism()?.unwrap_or(1),
    };
    cfg.fit = a.train.apply(file.fit.apply(FitConfig::default())?)?;
    Ok((cfg, file))
}

/// Manifest written next to every simulation output.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    #[serde(flatten)]
    pub run: &'a RunManifest,
    pub config: &'a ExperimentConfig,
}

fn report_failures(run: &experiment::SimulationResult) -> u8 {
    let failed = run.failures();
    for r in &failed {
        eprintln!("replication {} failed: {}", r.rep, r.error.as_deref().unwrap_or(""));
    }
    u8::from(!failed.is_empty())
}

pub fn cmd_simulate(c: &SimulateCmd) -> Result<Outcome> {
    let (cfg, _) = experiment_config(&c.exp)?;
    let run = simulate(&cfg)?;
    let dir = create_run_dir(&c.exp.out, "simulate")?;
    write_new(&dir.join("table.csv"), summary_table_csv(&run.summaries).as_bytes())?;
    write_json(&dir.join("summaries.json"), &run.summaries)?;
    write_new(&dir.join("reps.csv"), run.reps_csv().as_bytes())?;
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            command: "simulate",
            run: &run.manifest,
            config: &cfg,
        },
    )?;
    print!("{}", summary_table_csv(&run.summaries));
    println!("wrote {}", dir.display());
    Ok(Outcome {
        exit_code: report_failures(&run),
        run_dir: Some(dir),
    })
}

pub fn cmd_curve(c: &CurveCmd) -> Result<Outcome> {
    let (cfg, file) = experiment_config(&c.exp)?;
    let grid = c
        .n_grid
        .clone()
        .or(file.experiment.n_grid.clone())
        .context("curve needs --n-grid (or `n_grid` in the config file)")?;
    let (rows, runs) = curve(&cfg, &grid)?;
    let dir = create_run_dir(&c.exp.out, "curve")?;
    write_new(&dir.join("curve.csv"), curve_csv(&rows).as_bytes())?;
    let all: Vec<_> = runs.iter().flat_map(|r| r.summaries.iter().cloned()).collect();
    write_json(&dir.join("summaries.json"), &all)?;
    let manifests: Vec<Manifest> = runs
        .iter()
        .map(|r| Manifest {
            command: "curve",
            run: &r.manifest,
            config: &cfg,
        })
        .collect();
    write_json(&dir.join("manifest.json"), &manifests)?;
    print!("{}", curve_csv(&rows));
    println!("wrote {}", dir.display());
    let code = runs.iter().map(report_failures).max().unwrap_or(0);
    Ok(Outcome {
        exit_code: code,
        run_dir: Some(dir),
    })
}

pub fn cmd_tau_sweep(c: &TauSweepCmd) -> Result<Outcome> {
    let (mut cfg, _) = merge_experiment(&c.exp)?;
    // only the swept DRES fits (DQR is fitted once and shared)
    cfg.estimators.clear();
    cfg.tau_sweep = c.grid.clone();
    cfg.validate()?;
    let run = simulate(&cfg)?;
    let dir = create_run_dir(&c.exp.out, "tau-sweep")?;
    let mut csv = String::new();
    for &alpha in &cfg.alphas {
        let rows = sweep_rows(&run, &c.grid, alpha);
        let table = sweep_csv(&rows);
        if cfg.alphas.len() == 1 {
            csv = table;
        } else {
            // prefix an alpha column when several levels are swept
            for (i, line) in table.lines().enumerate() {
                if i == 0 {
                    if csv.is_empty() {
                        csv.push_str(&format!("alpha,{line}\n"));
                    }
                } else {
                    csv.push_str(&format!("{alpha},{line}\n"));
                }
            }
        }
    }
    write_new(&dir.join("tau_sweep.csv"), csv.as_bytes())?;
    write_json(&dir.join("summaries.json"), &run.summaries)?;
    write_new(&dir.join("reps.csv"), run.reps_csv().as_bytes())?;
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            command: "tau-sweep",
            run: &run.manifest,
            config: &cfg,
        },
    )?;
    print!("{csv}");
    println!("wrote {}", dir.display());
    Ok(Outcome {
        exit_code: report_failures(&run),
        run_dir: Some(dir),
    })
}

pub fn cmd_vpi(c: &VpiCmd) -> Result<Outcome> {
    let model = ModelFile::load(&c.model)?;
    let es = match &model.model {
        StoredModel::Single { fit } => fit,
        StoredModel::NonCrossing { .. } => bail!("permutation importance is implemented for single-level models"),
    };
    let table = model.prepare(&c.data, true)?;
    let target = match c.target {
        VpiTargetArg::Response => VpiTarget::Response,
        VpiTargetArg::Surrogate => VpiTarget::Surrogate,
    };
    let report = vpi(es, &table.data, target, &model.feature_names, c.seed, c.repeats)?;
    emit(c.out.as_deref(), &report.to_csv())?;
    Ok(Outcome::ok(None))
}

fn bias_dist(c: &BiasCheckCmd) -> Result<ErrorDist> {
    let need = |v: Option<f64>, key: &str| v.with_context(|| format!("--error {} needs --{key}", c.error));
    let kind = match c.error.to_ascii_lowercase().as_str() {
        "normal" => DistKind::Normal,
        "scaled_t" if c.df.is_none() => return Ok(ErrorDist::scaled_t()),
        "scaled_t" | "t" => DistKind::ScaledT {
            df: need(c.df, "df")?,
            scale: c.scale.unwrap_or(1.0),
        },
        "pareto" => DistKind::Pareto {
            k: c.k.unwrap_or(2.5),
            s_min: c.s_min.unwrap_or(1.0),
        },
        "frechet" => DistKind::Frechet { k: need(c.k, "k")? },
        "burr" => DistKind::Burr {
            k1: need(c.k1, "k1")?,
            k2: need(c.k2, "k2")?,
        },
        "two_point" => DistKind::TwoPoint,
        other => bail!("unknown error distribution {other:?}"),
    };
    Ok(ErrorDist::new(kind, c.standardized)?)
}

pub fn cmd_bias_check(c: &BiasCheckCmd) -> Result<Outcome> {
    let dist = bias_dist(c)?;
    let taus = c
        .taus
        .iter()
        .map(|t| match t.trim() {
            "inf" => Ok(f64::INFINITY),
            v => v.parse::<f64>().with_context(|| format!("bad tau {v:?}")),
        })
        .collect::<Result<Vec<_>>>()?;
    let check = huber_bias_check(&dist, c.alpha, c.p, &taus)?;
    let mut csv = String::from("tau,deviation,scaled_deviation,bound,holds\n");
    for r in &check.rows {
        csv.push_str(&format!("{},{},{},{},{}\n", r.tau, r.deviation, r.scaled_deviation, r.bound, r.holds));
    }
    print!("{csv}");
    if let Some(p) = &c.out {
        write_json(p, &check)?;
    }
    let all_hold = check.rows.iter().all(|r| r.holds);
    Ok(Outcome {
        run_dir: None,
        exit_code: u8::from(!all_hold),
    })
}

/// Synthetic training data for a model, e.g. for exporting to CSV.
pub fn synthetic_data(model: Model, error: ErrorDist, n: usize, seed: u64) -> Result<Dataset> {
    let spec = deepes_core::simgen::DgpSpec {
        n_test: 1,
        ..deepes_core::simgen::DgpSpec::new(model, error, n, seed)
    };
    Ok(deepes_core::simgen::generate(&spec)?.train)
}
