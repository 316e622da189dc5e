//! Command-line driver. Each subcommand reads one TOML config, validates it
//! completely, loads its inputs, and only then creates the output directory
//! and computes.
//!
//! Exit codes: 0 success, 1 a verified property failed, 2 bad config,
//! 3 I/O or input-data error.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::datasets::{load_csv, load_idx, make_blob_splits, BlobSpec, Dataset, Split};
use crate::error::Error;
use crate::geometry::{Point, ProxyPair};
use crate::landscape::{evaluate_along_line, evaluate_grid, export_grid, first_argmin, GridSpec};
use crate::loss::{LossConfig, ProxySet};
use crate::metrics::{avg_dtp, RetrievalResult};
use crate::properties::{run_suite, SuiteOptions};
use crate::trainer::{embed, train, Checkpoint, EmbedderSpec, TrainConfig, TrainTrace};
use crate::warp::WarpSpec;

#[derive(Debug, Parser)]
#[command(name = "softmax-warp", version, about = "Warped proxy softmax experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate a 2-D loss landscape and report its extrema.
    Landscape(RunArgs),
    /// Run the landscape property suite.
    Verify(VerifyArgs),
    /// Train an embedder and evaluate it on the test split.
    Train(RunArgs),
    /// Train once per value of one warp parameter.
    Sweep(RunArgs),
    /// Evaluate a checkpoint on a test split.
    Eval(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Optional `[suite]` overrides (resolution, lemma_pairs, prop_random).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Property(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Property(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Property(m) => write!(f, "property failure: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::Malformed { .. } | Error::BadField { .. } => {
                CliError::Io(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Landscape(a) => cmd_landscape(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Eval(a) => cmd_eval(&a),
    }
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message().trim())))
}

fn invalid(e: Error) -> CliError {
    CliError::Config(e.to_string())
}

fn create_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))
}

fn write_file(path: &Path, body: &str) -> CliResult<()> {
    fs::write(path, body).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    write_file(path, &(text + "\n"))
}

/// Resolves `p` against the directory holding the config file.
fn relative_to(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}

// ---------------------------------------------------------------- landscape

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeConfig {
    #[serde(default)]
    pub seed: u64,
    pub proxies: ProxiesConfig,
    pub loss: LossConfig,
    pub grid: GridSpec,
    /// Samples along `L_p` for the 1-D report.
    #[serde(default = "default_line_samples")]
    pub line_samples: usize,
}

fn default_line_samples() -> usize {
    4001
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxiesConfig {
    pub p_c: Vec<f64>,
    pub p_cprime: Vec<f64>,
}

impl ProxiesConfig {
    fn pair(&self) -> crate::Result<ProxyPair> {
        ProxyPair::new(Point::new(self.p_c.clone())?, Point::new(self.p_cprime.clone())?)
    }
}

#[derive(Serialize)]
struct ExtremumOut {
    x: f64,
    y: f64,
    value: f64,
    distance_to_line: f64,
    on_line: bool,
}

fn cmd_landscape(a: &RunArgs) -> CliResult<()> {
    let cfg: LandscapeConfig = read_config(&a.config)?;
    let pair = cfg.proxies.pair().map_err(invalid)?;
    if pair.dim() != 2 {
        return Err(CliError::Config("proxies: landscapes need 2-D proxies".into()));
    }
    cfg.loss.validate().map_err(invalid)?;
    cfg.grid.validate().map_err(invalid)?;
    if cfg.line_samples < 2 {
        return Err(CliError::Config("line_samples: need at least 2".into()));
    }

    create_out(&a.out)?;
    let grid = evaluate_grid(&pair, &cfg.loss, &cfg.grid)?;
    export_grid(&grid, &a.out.join("landscape.csv"))?;

    let line = crate::geometry::line_through(&pair)?;
    let diag = cfg.grid.cell_diagonal();
    let describe = |list: &[crate::landscape::GridPoint]| -> Vec<ExtremumOut> {
        list.iter()
            .map(|g| {
                let d = crate::geometry::perp_dist(&[g.x, g.y], &line);
                ExtremumOut {
                    x: g.x,
                    y: g.y,
                    value: g.value,
                    distance_to_line: d,
                    on_line: d <= diag,
                }
            })
            .collect()
    };
    let minima = describe(&grid.minima);
    let maxima = describe(&grid.maxima);
    let all_on_line = minima.iter().chain(&maxima).all(|e| e.on_line);

    // Outbound ray from p_c, long enough to pass any warp kink.
    let t_max = cfg.loss.warp.f1.alpha().unwrap_or(0.0) + 3.0 * pair.separation();
    let ray = evaluate_along_line(&pair, &cfg.loss, (0.0, t_max), cfg.line_samples)?;
    let (argmin_t, min_value) = first_argmin(&ray).expect("non-empty");
    let point = line.point_at(argmin_t);

    let mut report = Map::new();
    report.insert("warp".into(), Value::from(cfg.loss.warp.to_string()));
    report.insert("temperature".into(), Value::from(cfg.loss.temperature));
    report.insert("cell_diagonal".into(), Value::from(diag));
    report.insert("minima".into(), serde_json::to_value(&minima).expect("ok"));
    report.insert("maxima".into(), serde_json::to_value(&maxima).expect("ok"));
    report.insert("extrema_on_line".into(), Value::from(all_on_line));
    let mut ray_report = Map::new();
    ray_report.insert("t_max".into(), Value::from(t_max));
    ray_report.insert("argmin_t".into(), Value::from(argmin_t));
    ray_report.insert("argmin_point".into(), serde_json::to_value(point.coords()).expect("ok"));
    ray_report.insert("min_value".into(), Value::from(min_value));
    ray_report.insert("step".into(), Value::from(ray[1].0 - ray[0].0));
    if let WarpSpec::PiecewiseLinear { alpha, .. } = cfg.loss.warp.f1 {
        ray_report.insert("expected_alpha".into(), Value::from(alpha));
    }
    report.insert("outbound_ray".into(), Value::Object(ray_report));
    write_json(&a.out.join("extrema.json"), &report)
}

// ------------------------------------------------------------------- verify

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyConfig {
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    suite: SuiteOverrides,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteOverrides {
    resolution: Option<usize>,
    lemma_pairs: Option<usize>,
    prop_random: Option<usize>,
}

fn cmd_verify(a: &VerifyArgs) -> CliResult<()> {
    let cfg: VerifyConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => VerifyConfig::default(),
    };
    let d = SuiteOptions::default();
    let opts = SuiteOptions {
        resolution: cfg.suite.resolution.unwrap_or(d.resolution),
        lemma_pairs: cfg.suite.lemma_pairs.unwrap_or(d.lemma_pairs),
        prop_random: cfg.suite.prop_random.unwrap_or(d.prop_random),
        seed: a.seed.or(cfg.seed).unwrap_or(d.seed),
    };
    GridSpec::square(8.0, opts.resolution).map_err(invalid)?;

    create_out(&a.out)?;
    let report = run_suite(&opts)?;
    write_json(&a.out.join("verify.json"), &report)?;
    for p in &report.properties {
        println!("{} {}", if p.pass { "PASS" } else { "FAIL" }, p.name);
    }
    if report.all_pass {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .properties
            .iter()
            .filter(|p| !p.pass)
            .map(|p| p.name.as_str())
            .collect();
        Err(CliError::Property(failed.join(", ")))
    }
}

// -------------------------------------------------------------------- train

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataConfig {
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        center_scale: f64,
        noise_std: f64,
        test_per_class: usize,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
}

impl DataConfig {
    fn validate(&self, seed: u64) -> CliResult<()> {
        if let DataConfig::Blobs { test_per_class, .. } = self {
            self.blob_spec(seed).validate().map_err(invalid)?;
            if *test_per_class == 0 {
                return Err(CliError::Config("data.test_per_class: must be positive".into()));
            }
        }
        Ok(())
    }

    fn blob_spec(&self, seed: u64) -> BlobSpec {
        match *self {
            DataConfig::Blobs {
                classes,
                per_class,
                dim,
                center_scale,
                noise_std,
                ..
            } => BlobSpec {
                classes,
                per_class,
                dim,
                center_scale,
                noise_std,
                seed,
            },
            _ => unreachable!("only called for blobs"),
        }
    }

    /// Train and test splits; file paths are relative to the config.
    fn load(&self, config: &Path, seed: u64) -> CliResult<(Dataset, Dataset)> {
        let rel = |p: &Path| relative_to(config, p);
        Ok(match self {
            DataConfig::Blobs { test_per_class, .. } => {
                make_blob_splits(&self.blob_spec(seed), *test_per_class)?
            }
            DataConfig::Csv { train, test } => (
                load_csv(&rel(train), Split::Train)?,
                load_csv(&rel(test), Split::Test)?,
            ),
            DataConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                limit,
            } => {
                let mut tr = load_idx(&rel(train_images), &rel(train_labels), *limit)?;
                let mut te = load_idx(&rel(test_images), &rel(test_labels), *limit)?;
                tr.split = Split::Train;
                te.split = Split::Test;
                (tr, te)
            }
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
}

fn default_ks() -> Vec<usize> {
    vec![1, 2, 4, 8]
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { ks: default_ks() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub seed: u64,
    pub data: DataConfig,
    pub embedder: EmbedderSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl TrainFile {
    fn load(path: &Path, seed_override: Option<u64>) -> CliResult<Self> {
        let mut cfg: TrainFile = read_config(path)?;
        if let Some(s) = seed_override {
            cfg.seed = s;
        }
        cfg.train.seed = cfg.seed;
        cfg.data.validate(cfg.seed)?;
        cfg.embedder.validate().map_err(invalid)?;
        cfg.train.validate().map_err(invalid)?;
        if cfg.eval.ks.is_empty() || cfg.eval.ks.contains(&0) {
            return Err(CliError::Config("eval.ks: need positive values".into()));
        }
        Ok(cfg)
    }

    /// Loads data and checks it against the network and batch settings.
    fn load_data(&self, path: &Path) -> CliResult<(Dataset, Dataset)> {
        let (tr, te) = self.data.load(path, self.seed)?;
        for (name, d) in [("train", &tr), ("test", &te)] {
            if d.is_empty() {
                return Err(CliError::Io(format!("{name} split is empty")));
            }
            if d.dim() != self.embedder.input_dim() {
                return Err(CliError::Config(format!(
                    "embedder.widths[0] = {} but the {name} data has {} features",
                    self.embedder.input_dim(),
                    d.dim()
                )));
            }
        }
        let classes = tr.num_classes();
        if self.train.batch_size / self.train.samples_per_class > classes {
            return Err(CliError::Config(format!(
                "train.batch_size: needs more than the {classes} classes in the data"
            )));
        }
        if let Some(&k) = self.eval.ks.iter().find(|&&k| k >= te.len()) {
            return Err(CliError::Config(format!(
                "eval.ks: {k} is not below the test split size {}",
                te.len()
            )));
        }
        Ok((tr, te))
    }
}

/// Test-split metrics for a trained model, or `None` when the model's
/// embeddings are no longer finite.
fn evaluate(
    embedder: &EmbedderSpec,
    params: &[f64],
    proxies: &ProxySet,
    test: &Dataset,
    ks: &[usize],
    seed: u64,
) -> CliResult<Option<Map<String, Value>>> {
    let batch = match embed(embedder, params, &test.features, &test.labels) {
        Ok(b) => b,
        Err(Error::NonFinite { .. }) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let metrics = RetrievalResult::evaluate(&batch, ks, seed)?;
    // Test labels beyond the trained proxies have no distance-to-proxy.
    let dtp = avg_dtp(&batch, proxies).ok().map(|r| r.avg_dtp);
    Ok(Some(metrics.to_json(dtp)))
}

fn metrics_json(trace: &TrainTrace, metrics: Option<Map<String, Value>>) -> Map<String, Value> {
    let mut out = metrics.unwrap_or_default();
    out.insert("diverged".into(), Value::from(trace.is_diverged()));
    if let Some(d) = &trace.diverged {
        out.insert("diverged_step".into(), Value::from(d.step));
        out.insert("diverged_reason".into(), Value::from(d.reason.clone()));
    }
    out.insert("steps_completed".into(), Value::from(trace.steps.len()));
    if let Some(d) = trace.final_avg_dtp() {
        out.insert("train_avg_dtp".into(), Value::from(d));
    }
    out.insert("seed".into(), Value::from(trace.seed));
    out
}

fn steps_csv(trace: &TrainTrace) -> String {
    let mut s = String::from("step,phase,loss\n");
    for r in &trace.steps {
        s.push_str(&format!("{},{},{}\n", r.step, r.phase, r.loss));
    }
    s
}

fn epochs_csv(trace: &TrainTrace) -> String {
    let mut s = String::from("epoch,step,avg_dtp\n");
    for r in &trace.epochs {
        s.push_str(&format!("{},{},{}\n", r.epoch, r.step, r.avg_dtp));
    }
    s
}

fn cmd_train(a: &RunArgs) -> CliResult<()> {
    let cfg = TrainFile::load(&a.config, a.seed)?;
    let (tr, te) = cfg.load_data(&a.config)?;

    create_out(&a.out)?;
    let trace = train(&tr.features, &tr.labels, &cfg.embedder, &cfg.train)?;
    let metrics = evaluate(&cfg.embedder, &trace.params, &trace.proxies, &te, &cfg.eval.ks, cfg.seed)?;
    write_file(&a.out.join("trace_steps.csv"), &steps_csv(&trace))?;
    write_file(&a.out.join("trace_epochs.csv"), &epochs_csv(&trace))?;
    trace.checkpoint.save(&a.out.join("checkpoint.json"))?;
    write_json(&a.out.join("metrics.json"), &metrics_json(&trace, metrics))?;
    if let Some(d) = &trace.diverged {
        eprintln!("training diverged at step {}: {}", d.step, d.reason);
    }
    Ok(())
}

// -------------------------------------------------------------------- sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    K1,
    K2,
    DeltaK,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::K1 => "k1",
            SweepParam::K2 => "k2",
            SweepParam::DeltaK => "delta_k",
        }
    }
}

/// The swept value replaces the parameter of `f1` in both phases; `delta`
/// is then recomputed as `delta_k · (1 − k1) · alpha`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: String,
    pub values: Vec<f64>,
    #[serde(default = "default_delta_k")]
    pub delta_k: f64,
}

fn default_delta_k() -> f64 {
    1.0
}

fn parse_sweep_param(name: &str) -> CliResult<SweepParam> {
    match name {
        "alpha" => Ok(SweepParam::Alpha),
        "k1" => Ok(SweepParam::K1),
        "k2" => Ok(SweepParam::K2),
        "delta_k" => Ok(SweepParam::DeltaK),
        other => Err(CliError::Config(format!(
            "sweep.parameter: unknown parameter `{other}` (expected alpha, k1, k2 or delta_k)"
        ))),
    }
}

fn swept_warp(base: &WarpSpec, param: SweepParam, value: f64, delta_k: f64) -> crate::Result<WarpSpec> {
    let WarpSpec::PiecewiseLinear {
        mut alpha,
        mut k1,
        mut k2,
        ..
    } = *base
    else {
        return Err(Error::param("warp", format!("sweeps need a pwl f1, got `{base}`")));
    };
    let mut margin = delta_k;
    match param {
        SweepParam::Alpha => alpha = value,
        SweepParam::K1 => k1 = value,
        SweepParam::K2 => k2 = value,
        SweepParam::DeltaK => margin = value,
    }
    if margin < 1.0 {
        return Err(Error::param("delta_k", format!("must be at least 1, got {margin}")));
    }
    WarpSpec::piecewise(alpha, k1, k2, margin * (1.0 - k1) * alpha)
}

fn sweep_train_config(base: &TrainConfig, param: SweepParam, value: f64, delta_k: f64) -> crate::Result<TrainConfig> {
    let mut cfg = base.clone();
    for phase in [&mut cfg.phase1, &mut cfg.phase2] {
        phase.loss.warp.f1 = swept_warp(&phase.loss.warp.f1, param, value, delta_k)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_sweep(a: &RunArgs) -> CliResult<()> {
    let cfg = TrainFile::load(&a.config, a.seed)?;
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| CliError::Config("missing [sweep] table".into()))?;
    let param = parse_sweep_param(&sweep.parameter)?;
    if sweep.values.is_empty() {
        return Err(CliError::Config("sweep.values: empty list".into()));
    }
    let configs = sweep
        .values
        .iter()
        .map(|&v| sweep_train_config(&cfg.train, param, v, sweep.delta_k))
        .collect::<crate::Result<Vec<_>>>()
        .map_err(|e| CliError::Config(format!("sweep: {e}")))?;
    let (tr, te) = cfg.load_data(&a.config)?;

    create_out(&a.out)?;
    let rows = configs
        .par_iter()
        .map(|tc| -> CliResult<Map<String, Value>> {
            let trace = train(&tr.features, &tr.labels, &cfg.embedder, tc)?;
            let m = evaluate(&cfg.embedder, &trace.params, &trace.proxies, &te, &cfg.eval.ks, cfg.seed)?;
            Ok(metrics_json(&trace, m))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut columns: Vec<String> = cfg.eval.ks.iter().map(|k| format!("r_at_{k}")).collect();
    columns.extend(
        ["nmi", "map_at_r", "rp", "p_at_1", "avg_dtp", "train_avg_dtp", "diverged"]
            .map(String::from),
    );
    let mut body = format!("{},{}\n", param.name(), columns.join(","));
    for (v, row) in sweep.values.iter().zip(&rows) {
        let cells: Vec<String> = columns
            .iter()
            .map(|c| match row.get(c) {
                Some(Value::Number(n)) => n.to_string(),
                Some(Value::Bool(b)) => b.to_string(),
                _ => String::new(),
            })
            .collect();
        body.push_str(&format!("{v},{}\n", cells.join(",")));
    }
    write_file(&a.out.join("sweep.csv"), &body)
}

// --------------------------------------------------------------------- eval

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalFile {
    #[serde(default)]
    seed: u64,
    checkpoint: PathBuf,
    data: DataConfig,
    #[serde(default)]
    eval: EvalSettings,
}

fn cmd_eval(a: &RunArgs) -> CliResult<()> {
    let mut cfg: EvalFile = read_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.data.validate(cfg.seed)?;
    if cfg.eval.ks.is_empty() || cfg.eval.ks.contains(&0) {
        return Err(CliError::Config("eval.ks: need positive values".into()));
    }
    let ck = Checkpoint::load(&relative_to(&a.config, &cfg.checkpoint))?;
    let (_, te) = cfg.data.load(&a.config, cfg.seed)?;
    if te.dim() != ck.embedder.input_dim() {
        return Err(CliError::Config(format!(
            "checkpoint expects {} features, test data has {}",
            ck.embedder.input_dim(),
            te.dim()
        )));
    }
    if let Some(&k) = cfg.eval.ks.iter().find(|&&k| k >= te.len()) {
        return Err(CliError::Config(format!("eval.ks: {k} is not below the test size")));
    }
    let proxies = ProxySet::new(
        ck.proxies
            .iter()
            .map(|p| Point::new(p.clone()))
            .collect::<crate::Result<_>>()?,
    )?;

    create_out(&a.out)?;
    let metrics = evaluate(&ck.embedder, &ck.params, &proxies, &te, &cfg.eval.ks, cfg.seed)?
        .ok_or_else(|| CliError::Property("checkpoint produces non-finite embeddings".into()))?;
    write_json(&a.out.join("metrics.json"), &metrics)
}
