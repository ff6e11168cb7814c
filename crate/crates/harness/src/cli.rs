//! The `trunet` command line.
//!
//! Usage errors exit with status 2, validation and runtime failures with 1.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use trunet_core::data::calendar::{day, parse_date};
use trunet_core::data::tgrd::entry;
use trunet_core::data::{read_grid_file, synth_generate, write_grid_file, GridTensor, Manifest, NormStats, Season, SyntheticConfig};
use trunet_core::layers::{DropoutMode, DropoutSpec};
use trunet_core::model::{load_checkpoint, manifest_path, save_checkpoint, Model, ModelConfig};
use trunet_core::objective::LossKind;
use trunet_core::{Tensor, Tensor32};

use crate::evaluate::{predict_windows, Inference};
use crate::gradcheck::{default_suite, model_gradcheck};
use crate::gridsearch::{grid_search, table, Grid};
use crate::metrics::{evaluate, scatter_stats, scatter_table};
use crate::optim::OptimizerConfig;
use crate::pipeline::{prepare, read_dataset, synth_manifest, write_dataset, DataPlan};
use crate::train::{train, TrainConfig, TrainError};

#[derive(Parser, Debug)]
#[command(name = "trunet", version, about = "Train and evaluate rainfall downscaling models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic gridded-weather dataset.
    Synth(SynthArgs),
    /// Train a model and write its best checkpoint.
    Train(TrainArgs),
    /// Score a prediction file against an observation file.
    Evaluate(EvaluateArgs),
    /// Train one model per grid point and rank by validation R10 RMSE.
    Gridsearch(GridArgs),
    /// Finite-difference check of every model gradient.
    Gradcheck(GradcheckArgs),
    /// Predict a split with a trained checkpoint.
    Predict(PredictArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Scale {
    Micro,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Trunet,
    Hcgru,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Loss {
    Cc,
    Mse,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 730)]
    pub days: usize,
    #[arg(long, value_enum, default_value = "micro")]
    pub scale: Scale,
}

/// Options shared by commands that build and train models.
#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Manifest of model, training and data keys; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub model: Option<Arch>,
    #[arg(long, value_enum)]
    pub loss: Option<Loss>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Architecture preset: micro, paper or gradcheck.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub per_side: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: ModelArgs,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[command(flatten)]
    pub common: ModelArgs,
    /// Axes as `key=v1,v2;key2=v3`.
    #[arg(long)]
    pub grid: String,
    #[arg(long, default_value_t = 16)]
    pub budget: usize,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub obs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    pub bin_width: f64,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Check one architecture only.
    #[arg(long, value_enum)]
    pub model: Option<Arch>,
    /// Overrides the default model seeds.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// Dropout samples to average; 0 runs one deterministic pass.
    #[arg(long, default_value_t = 0)]
    pub mcma_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses the process arguments and runs the command; returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Gridsearch(a) => gridsearch_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Predict(a) => predict_cmd(a),
    }
}

fn create_dir(out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let config = match a.scale {
        Scale::Micro => SyntheticConfig::micro(a.seed),
        Scale::Paper => SyntheticConfig::paper_scale(a.seed),
    };
    let series = synth_generate::<f32>(&config, a.days)?;
    create_dir(&a.out)?;
    let path = a.out.join("dataset.tgrd");
    write_dataset(&path, &series, &synth_manifest(&config))?;
    let wet = series.fine_rain.data().iter().filter(|&&v| v > 0.0).count();
    println!(
        "wrote {} ({} days, fine grid {:?}, wet fraction {:.3})",
        path.display(),
        series.days(),
        series.fine_shape(),
        wet as f64 / series.fine_rain.numel() as f64
    );
    Ok(())
}

/// Model, training and data settings resolved from config file and flags.
struct Resolved {
    model: ModelConfig,
    train: TrainConfig,
    plan: DataPlan,
}

fn resolve(a: &ModelArgs) -> anyhow::Result<Resolved> {
    let mut m = match &a.config {
        Some(p) => Manifest::read(p).with_context(|| format!("reading config {}", p.display()))?,
        None => Manifest::new(),
    };
    if let Some(arch) = a.model {
        m.set("model", if arch == Arch::Trunet { "trunet" } else { "hcgru" });
    }
    if let Some(loss) = a.loss {
        m.set("loss", if loss == Loss::Cc { "cc" } else { "mse" });
    }
    if let Some(p) = &a.preset {
        m.set("preset", p);
    }
    if !m.contains("preset") {
        m.set("preset", "micro");
    }
    let loss: LossKind = m.get("loss")?.unwrap_or(LossKind::Cc);
    if !m.contains("cc") {
        m.set("cc", loss == LossKind::Cc);
    }
    m.set("seed", a.seed);
    for (key, v) in [("epochs", a.epochs), ("batch_size", a.batch_size), ("per_side", a.per_side), ("stride", a.stride)] {
        if let Some(v) = v {
            m.set(key, v);
        }
    }
    if let Some(v) = a.learning_rate {
        m.set("learning_rate", v);
    }
    let model = ModelConfig::from_manifest(&m)?;
    let (optimizer, dropout) = match model {
        ModelConfig::TruNet(_) => (OptimizerConfig::trunet_cc(), (0.15, 0.15, 0.35)),
        ModelConfig::Hcgru(_) => (OptimizerConfig::hcgru(), (0.225, 0.35, 0.0)),
    };
    let mut base = TrainConfig::new(loss, optimizer, a.seed);
    (base.dropout.p_input, base.dropout.p_recurrent, base.dropout.p_attention) = dropout;
    let train = base.merge_manifest(&m)?;
    let plan = DataPlan::default().merge_manifest(&m)?;
    Ok(Resolved { model, train, plan })
}

fn train_cmd(a: TrainArgs) -> anyhow::Result<()> {
    let a = a.common;
    let r = resolve(&a)?;
    let series = read_dataset::<f32>(&a.data)?;
    let prepared = prepare(&series, &r.model, &r.plan, None)?;
    let (tr, val) = (&prepared.splits.train, &prepared.splits.val);
    println!("{} training and {} validation windows", tr.len(), val.len());
    let mut model = Model::<f32>::new(r.model.clone(), a.seed)?;
    let result = train(&mut model, tr, val, &r.train);
    let log = match &result {
        Ok(log) => log.clone(),
        Err(TrainError::NonFinite { log, .. }) => log.clone(),
        Err(TrainError::Core(_)) => return Err(result.unwrap_err().into()),
    };
    create_dir(&a.out)?;
    let mut extra = Manifest::new();
    r.train.to_manifest(&mut extra);
    r.plan.to_manifest(&mut extra);
    prepared.stats.to_manifest(&mut extra);
    if let Some(b) = log.best_epoch {
        extra.set("best_epoch", b);
    }
    save_checkpoint(&model, &a.out.join("model.tgrd"), &extra)?;
    fs::write(a.out.join("train_log.txt"), log.to_text())?;
    print!("{}", log.to_text());
    result.map(|_| ()).map_err(Into::into)
}

fn split_of<T>(s: trunet_core::data::Splits<T>, which: Split) -> Vec<trunet_core::data::WeatherWindow<T>> {
    match which {
        Split::Train => s.train,
        Split::Val => s.val,
        Split::Test => s.test,
    }
}

fn write_rain_file(path: &Path, rain: Vec<Tensor32>, starts: &[usize], locations: &[usize], start: chrono::NaiveDate) -> anyhow::Result<()> {
    let refs: Vec<&Tensor32> = rain.iter().collect();
    let stacked = trunet_core::tensor::stack(&refs)?;
    write_grid_file(path, &[("rain".to_string(), GridTensor::from(stacked))])?;
    let mut m = Manifest::new();
    m.set("start", start).set_list("start_day", starts).set_list("location", locations);
    m.write(manifest_path(path))?;
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> anyhow::Result<()> {
    let (model, manifest) = load_checkpoint::<f32>(&a.checkpoint)?;
    let stats = NormStats::from_manifest(&manifest)?.ok_or_else(|| anyhow!("checkpoint lacks normalization statistics"))?;
    let plan = DataPlan::default().merge_manifest(&manifest)?;
    let series = read_dataset::<f32>(&a.data)?;
    let windows = split_of(prepare(&series, &model.config, &plan, Some(stats))?.splits, a.split);
    if windows.is_empty() {
        bail!("the {:?} split holds no windows", a.split);
    }
    let inference = if a.mcma_samples == 0 {
        Inference::Deterministic
    } else {
        let p = |k: &str| -> anyhow::Result<f64> { Ok(manifest.get(k)?.unwrap_or(0.0)) };
        let dropout = DropoutSpec {
            p_input: p("p_input")?,
            p_recurrent: p("p_recurrent")?,
            p_attention: p("p_attention")?,
            seed: a.seed,
            mode: DropoutMode::McmaSample,
        };
        Inference::Mcma { samples: a.mcma_samples, dropout }
    };
    let preds = predict_windows(&model, &windows, inference)?;
    let starts: Vec<usize> = windows.iter().map(|w| w.start_day).collect();
    let locs: Vec<usize> = windows.iter().map(|w| w.location).collect();
    create_dir(&a.out)?;
    write_rain_file(&a.out.join("predictions.tgrd"), preds, &starts, &locs, series.start)?;
    write_rain_file(&a.out.join("observations.tgrd"), windows.into_iter().map(|w| w.y).collect(), &starts, &locs, series.start)?;
    println!("wrote predictions for {} windows to {}", starts.len(), a.out.display());
    Ok(())
}

/// Shape, start date, window start days and locations of a rain file.
type RainLayout = (Vec<usize>, String, Vec<usize>, Vec<usize>);

/// Rain cells of a prediction file with the season of each cell's day.
fn read_rain_file(path: &Path) -> anyhow::Result<(RainLayout, Vec<f64>, Vec<Season>)> {
    let rain: Tensor<f64> = entry(&read_grid_file(path)?, "rain")?.to_tensor();
    let m = Manifest::read(manifest_path(path))?;
    let start = m.get_str("start").and_then(parse_date).ok_or_else(|| anyhow!("{} lacks a start date", path.display()))?;
    let starts: Vec<usize> = m.get_list("start_day")?.unwrap_or_default();
    let locations: Vec<usize> = m.get_list("location")?.unwrap_or_default();
    let shape = rain.shape().to_vec();
    if shape.len() != 4 || shape[0] != starts.len() {
        bail!("{}: rain of shape {shape:?} does not match {} window starts", path.display(), starts.len());
    }
    let (days, per_day) = (shape[1], shape[2] * shape[3]);
    let seasons = (0..rain.numel())
        .map(|i| {
            let w = i / (days * per_day);
            Season::of(day(start, starts[w] + (i / per_day) % days))
        })
        .collect();
    Ok(((shape, start.to_string(), starts, locations), rain.into_data(), seasons))
}

fn evaluate_cmd(a: EvaluateArgs) -> anyhow::Result<()> {
    let (ps, p, seasons) = read_rain_file(&a.pred)?;
    let (os, o, obs_seasons) = read_rain_file(&a.obs)?;
    if ps != os || seasons != obs_seasons {
        bail!("prediction {} and observation {} files do not align", a.pred.display(), a.obs.display());
    }
    let report = evaluate(&p, &o, &seasons)?;
    let scatter = scatter_stats(&p, &o, a.bin_width)?;
    create_dir(&a.out)?;
    fs::write(a.out.join("report.txt"), report.to_table())?;
    report.to_manifest().write(a.out.join("report.manifest"))?;
    fs::write(a.out.join("scatter.txt"), scatter_table(&scatter))?;
    print!("{}", report.to_table());
    Ok(())
}

fn gridsearch_cmd(a: GridArgs) -> anyhow::Result<()> {
    let r = resolve(&a.common)?;
    let grid = Grid::parse(&a.grid)?;
    let series = read_dataset::<f32>(&a.common.data)?;
    let prepared = prepare(&series, &r.model, &r.plan, None)?;
    let trials = grid_search(&grid, a.budget, &r.model, a.common.seed, &r.train, &prepared.splits.train, &prepared.splits.val)?;
    let text = table(&grid, &trials);
    create_dir(&a.common.out)?;
    fs::write(a.common.out.join("gridsearch.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> anyhow::Result<()> {
    let mut failed = Vec::new();
    for (name, config, seed) in default_suite() {
        let arch = if matches!(config, ModelConfig::TruNet(_)) { Arch::Trunet } else { Arch::Hcgru };
        if a.model.is_some_and(|m| m != arch) {
            continue;
        }
        let report = model_gradcheck(config, a.seed.unwrap_or(seed))?;
        let status = if report.passed() { "ok" } else { "FAILED" };
        println!("{name}: {status} ({} tensors, max relative error {:.3e})", report.entries.len(), report.max_rel_error());
        if !report.passed() {
            failed.push(format!("{name}: {}", report.failures().join(", ")));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        bail!("gradient check failed for {}", failed.join("; "))
    }
}
