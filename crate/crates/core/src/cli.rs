//! The `sfcast` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::baselines::KnnWeighting;
use crate::config::{RunConfig, TuneConfig};
use crate::error::{Error, Result};
use crate::experiment::{self, Manifest};
use crate::io;
use crate::metadata::{replicate_for_years, tfidf_featurize};
use crate::metrics::MetricKind;
use crate::model::{ModelSpec, Regression};
use crate::pipeline::{
    evaluate_rows, forecast_matrix, make_split, scrub, select_series, to_rows, ForecastMode, ForecastOptions,
    SplitManifest, SplitOptions,
};
use crate::profile::{reorganize, standardize_all, StandardizationStats};
use crate::scenarios::{generate_synthetic, ScenarioKind, SyntheticConfig};
use crate::trainer::{fit, Mode, TrainConfig};
use crate::tuning::two_stage_cv;

#[derive(Debug, Parser)]
#[command(name = "sfcast", version, about = "Seasonal profile forecasting with metadata regression and matrix factorization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build profile and metadata containers from a series CSV and a JSONL document file.
    Ingest(IngestArgs),
    /// Split a profile container into training and evaluation containers.
    Split(SplitArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Choose regularization weights (and knot count) by two-stage cross-validation.
    Tune(TuneArgs),
    /// Forecast whole series.
    Forecast(ForecastArgs),
    /// Score a forecast file against a truth container.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic dataset with known parameters.
    Synth(SynthArgs),
    /// Run a manifest end to end.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Long-format CSV with header `series_id,t,value`.
    #[arg(long)]
    series: PathBuf,
    /// JSON lines `{"series_id": ..., "tokens": [...]}`.
    #[arg(long)]
    docs: PathBuf,
    #[arg(long)]
    period: usize,
    /// CSV `series_id,start_offset`.
    #[arg(long)]
    offsets: Option<PathBuf>,
    /// Standardize each series and write `stats.json`.
    #[arg(long)]
    standardize: bool,
    /// Also write a cell-per-line `profile.csv`.
    #[arg(long)]
    dump: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScenarioArg {
    LongRange,
    ColdStart,
    WarmStart,
    Missing,
}

impl From<ScenarioArg> for ScenarioKind {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::LongRange => ScenarioKind::LongRange,
            ScenarioArg::ColdStart => ScenarioKind::ColdStart,
            ScenarioArg::WarmStart => ScenarioKind::WarmStart,
            ScenarioArg::Missing => ScenarioKind::Missing,
        }
    }
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(value_enum)]
    scenario: ScenarioArg,
    #[arg(long)]
    profile: PathBuf,
    /// Share of series withheld for cold and warm start.
    #[arg(long)]
    holdout: Option<f64>,
    /// Visible leading rows of each warm-start test year.
    #[arg(long)]
    prefix: Option<usize>,
    /// Mean missing-chunk length.
    #[arg(long)]
    mean_len: Option<f64>,
    /// Share of remaining training entries to hide uniformly.
    #[arg(long, default_value_t = 0.0)]
    uniform_removal: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Stochastic,
    FullBatch,
}

#[derive(Debug, Args)]
struct TrainOverrides {
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trace_every: Option<usize>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(m) = self.mode {
            cfg.mode = match m {
                ModeArg::Stochastic => Mode::Stochastic,
                ModeArg::FullBatch => Mode::FullBatch,
            };
        }
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(lambda1, lambda2, iterations, step_size, minibatch, restarts, seed, trace_every);
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training profile container.
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    metadata: PathBuf,
    /// TOML file with `[model]` and `[train]` sections.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
    /// Model container to write.
    #[arg(long)]
    out: PathBuf,
    /// Fit report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Loss trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    metadata: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// TOML file with `[grid]` and optional `[cv]` sections.
    #[arg(long)]
    grid: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
    /// Directory for `cv.csv`, `cv.json` and `chosen.toml`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ForecastArg {
    Cold,
    Warm,
    Impute,
    Avg,
    Knn,
}

impl From<ForecastArg> for ForecastMode {
    fn from(f: ForecastArg) -> Self {
        match f {
            ForecastArg::Cold => ForecastMode::Cold,
            ForecastArg::Warm => ForecastMode::Warm,
            ForecastArg::Impute => ForecastMode::Impute,
            ForecastArg::Avg => ForecastMode::Avg,
            ForecastArg::Knn => ForecastMode::Knn,
        }
    }
}

#[derive(Debug, Args)]
struct ForecastArgs {
    #[arg(value_enum)]
    mode: ForecastArg,
    /// Profile container whose observed cells condition the forecast.
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    metadata: PathBuf,
    /// Model container; required for cold, warm and impute.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Forecast only these series (comma separated).
    #[arg(long, value_delimiter = ',')]
    series: Option<Vec<String>>,
    /// Forecast the test series recorded in a split manifest.
    #[arg(long, conflicts_with = "series")]
    split: Option<PathBuf>,
    /// Ridge weight for warm-start latent estimation.
    #[arg(long, default_value_t = 1.0)]
    lambda2: f64,
    /// Neighbour count for k-NN.
    #[arg(long, default_value_t = crate::baselines::DEFAULT_K)]
    k: usize,
    /// Equal neighbour weights instead of inverse distance.
    #[arg(long)]
    uniform: bool,
    /// Map forecasts back to natural units with these statistics.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Mse,
    Mae,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// CSV `series_id,t,value`.
    #[arg(long)]
    forecast: PathBuf,
    /// Profile container whose observed cells are scored.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_enum, default_value = "mse")]
    metric: MetricArg,
    /// Threshold on |truth|; omit for none.
    #[arg(long)]
    rho: Option<f64>,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// TOML generator settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    period: Option<usize>,
    #[arg(long)]
    n_series: Option<usize>,
    #[arg(long)]
    years: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// TOML or JSON manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn error_json(kind: &str, message: &str) -> String {
    json!({ "error": kind, "message": message }).to_string()
}

/// Parse `args` (including the program name), run the command and return the
/// process exit code. Failures are reported on stderr as
/// `{"error": kind, "message": text}`.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", error_json("usage", e.render().to_string().trim()));
            return 2;
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_json(e.kind(), &e.to_string()));
            1
        }
    }
}

fn configure_threads() {
    let Ok(v) = std::env::var("SF_THREADS") else {
        return;
    };
    match v.parse::<usize>() {
        Ok(n) if n > 0 => {
            if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
                log::debug!("thread pool already initialized");
            }
        }
        _ => log::warn!("ignoring SF_THREADS={v:?}"),
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest(a) => ingest(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Tune(a) => tune(a),
        Command::Forecast(a) => forecast(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Synth(a) => synth(a),
        Command::Experiment(a) => run_experiment(a),
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let mut series = io::read_series_csv(&a.series)?;
    if let Some(path) = &a.offsets {
        let offsets = io::read_offsets_csv(path)?;
        for s in &mut series {
            if let Some(&o) = offsets.get(&s.id) {
                s.start_offset = o;
            }
        }
    }
    let stats = if a.standardize {
        let (z, stats) = standardize_all(&series)?;
        series = z;
        Some(stats)
    } else {
        None
    };
    let pm = reorganize(&series, a.period)?;
    let docs = io::read_docs_jsonl(&a.docs)?;
    let series_meta = tfidf_featurize(&docs)?;
    let meta = replicate_for_years(&series_meta, pm.index())?;

    fs::create_dir_all(&a.out)?;
    io::save_profile(a.out.join("profile.sfpm"), &pm)?;
    io::save_metadata(a.out.join("metadata.sfsm"), &meta)?;
    io::save_metadata(a.out.join("series_meta.sfsm"), &series_meta)?;
    io::write_vocab(a.out.join("vocab.txt"), &series_meta.vocab)?;
    if let Some(stats) = &stats {
        io::save_json(a.out.join("stats.json"), stats)?;
    }
    if a.dump {
        io::write_with(a.out.join("profile.csv"), |b| io::write_profile_text(b, &pm))?;
    }
    print_json(&json!({
        "series": pm.index().n_series(),
        "columns": pm.n_columns(),
        "period": pm.period(),
        "observed": pm.observed_count(),
        "vocabulary": series_meta.dim(),
    }))
}

fn split(a: SplitArgs) -> Result<()> {
    let pm = io::load_profile(&a.profile)?;
    let kind = ScenarioKind::from(a.scenario);
    let options = SplitOptions {
        holdout: a.holdout,
        prefix: a.prefix,
        mean_len: a.mean_len,
        uniform_removal: a.uniform_removal,
    };
    let scenario = make_split(&pm, kind, &options, a.seed)?;
    let train = scrub(&scenario.train)?;
    let truth = pm.with_mask(scenario.eval_mask.clone())?;
    let manifest = SplitManifest {
        scenario: kind,
        seed: a.seed,
        options,
        test_series: scenario.test_series.clone(),
        train_observed: train.observed_count(),
        eval_count: scenario.eval_count(),
    };
    fs::create_dir_all(&a.out)?;
    io::save_profile(a.out.join("train.sfpm"), &train)?;
    io::save_profile(a.out.join("truth.sfpm"), &truth)?;
    io::save_json(a.out.join("split.json"), &manifest)?;
    print_json(&manifest)
}

fn load_run_config(path: &Path, overrides: &TrainOverrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    overrides.apply(&mut cfg.train);
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = load_run_config(&a.config, &a.overrides)?;
    let pm = io::load_profile(&a.profile)?;
    let meta = io::load_metadata(&a.metadata, None)?;
    let (params, report) = match fit(cfg.model, &pm, &meta, &cfg.train) {
        Ok(r) => r,
        Err(Error::Divergence { step_size, report }) => {
            if let Some(path) = &a.report {
                io::save_json(path, &report)?;
            }
            return Err(Error::Divergence { step_size, report });
        }
        Err(e) => return Err(e),
    };
    io::save_model(&a.out, &params)?;
    if let Some(path) = &a.report {
        io::save_json(path, &report)?;
    }
    if let Some(path) = &a.trace {
        io::write_with(path, |b| io::write_trace_csv(b, &report.loss_trace))?;
    }
    print_json(&json!({
        "final_loss": report.final_loss,
        "best_restart": report.best_restart,
        "wall_time": report.wall_time,
    }))
}

fn tune(a: TuneArgs) -> Result<()> {
    let cfg = load_run_config(&a.config, &a.overrides)?;
    let tune_cfg = TuneConfig::load(&a.grid)?;
    let grid = tune_cfg.grid.resolve()?;
    let pm = io::load_profile(&a.profile)?;
    let meta = io::load_metadata(&a.metadata, None)?;
    let result = two_stage_cv(cfg.model, &pm, &meta, &grid, &cfg.train, &tune_cfg.cv)?;
    let (model, train) = result.chosen.apply(cfg.model, &cfg.train);
    fs::create_dir_all(&a.out)?;
    io::write_with(a.out.join("cv.csv"), |b| result.write_csv(b))?;
    io::save_json(a.out.join("cv.json"), &result)?;
    io::atomic_write(a.out.join("chosen.toml"), RunConfig { model, train }.to_toml()?.as_bytes())?;
    print_json(&result.chosen)
}

fn forecast(a: ForecastArgs) -> Result<()> {
    let mode = ForecastMode::from(a.mode);
    let pm = io::load_profile(&a.profile)?;
    let meta = io::load_metadata(&a.metadata, None)?;
    let params = a.model.as_ref().map(io::load_model).transpose()?;
    let ids = match (&a.series, &a.split) {
        (Some(ids), _) => Some(ids.clone()),
        (None, Some(path)) => {
            let m: SplitManifest = io::load_json(path)?;
            (!m.test_series.is_empty()).then_some(m.test_series)
        }
        (None, None) => None,
    };
    let series = select_series(&pm, ids.as_deref())?;
    let opts = ForecastOptions {
        lambda2: a.lambda2,
        k: a.k,
        weighting: if a.uniform {
            KnnWeighting::Uniform
        } else {
            KnnWeighting::InverseDistance
        },
    };
    let values = forecast_matrix(mode, params.as_ref(), &pm, &meta, &series, &opts)?;
    let stats: Option<StandardizationStats> = a.stats.as_ref().map(io::load_json).transpose()?;
    let rows = to_rows(&pm, &values, &series, stats.as_ref())?;
    io::write_with(&a.out, |b| io::write_forecast_csv(b, &rows))?;
    print_json(&json!({ "series": series.len(), "rows": rows.len() }))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let truth = io::load_profile(&a.truth)?;
    let rows = io::read_forecast_csv(&a.forecast)?;
    let kind = match a.metric {
        MetricArg::Mse => MetricKind::Mse,
        MetricArg::Mae => MetricKind::Mae,
    };
    let report = evaluate_rows(&truth, &rows, kind, a.rho.unwrap_or(f64::INFINITY))?;
    if let Some(path) = &a.out {
        io::save_json(path, &report)?;
    }
    print_json(&report)
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = crate::io::read_text(path)?;
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        }
        None => SyntheticConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $(if let Some(v) = a.$flag { cfg.$field = v; })* };
    }
    set!(period => period, n_series => n_series, years => years_per_series, m => m, noise_std => noise_std, seed => seed);
    ModelSpec::new(cfg.regression, cfg.mf_rank).validate()?;
    let data = generate_synthetic(&cfg)?;
    fs::create_dir_all(&a.out)?;
    io::save_profile(a.out.join("profile.sfpm"), &data.pm)?;
    io::save_metadata(a.out.join("metadata.sfsm"), &data.meta)?;
    io::save_metadata(a.out.join("series_meta.sfsm"), &data.series_meta)?;
    io::save_model(a.out.join("truth.sfmd"), &data.truth)?;
    io::write_with(a.out.join("series.csv"), |b| io::write_series_csv(b, &data.series))?;
    io::save_json(a.out.join("synth.json"), &cfg)?;
    print_json(&json!({
        "series": cfg.n_series,
        "columns": data.pm.n_columns(),
        "period": cfg.period,
        "regression": cfg.regression != Regression::None,
        "mf_rank": cfg.mf_rank,
    }))
}

fn run_experiment(a: ExperimentArgs) -> Result<()> {
    let m = Manifest::load(&a.manifest)?;
    let outcome = experiment::run(&m, Some(&a.out))?;
    print_json(&outcome.report)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}
