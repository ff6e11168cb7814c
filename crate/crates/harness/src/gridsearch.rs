//! Exhaustive search over small hyperparameter grids, ranked by validation
//! R10 RMSE.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use trunet_core::data::{Manifest, WeatherWindow};
use trunet_core::model::{Model, ModelConfig};
use trunet_core::{Error, Result, Scalar};

use crate::evaluate::{evaluate_model, Inference};
use crate::metrics::EvalReport;
use crate::train::{train, TrainConfig, TrainError};

/// Keys a grid may vary, with their table headings.
pub const GRID_KEYS: [(&str, &str); 10] = [
    ("beta1", "beta1"),
    ("beta2", "beta2"),
    ("learning_rate", "lr"),
    ("p_input", "input_do"),
    ("p_recurrent", "recurrent_do"),
    ("clip_norm", "clip_norm"),
    ("p_attention", "attention_do"),
    ("warmup_steps", "warmup"),
    ("batch_size", "batch"),
    ("epochs", "epochs"),
];

/// Columns always shown, in table order.
const TABLE_KEYS: [&str; 6] = ["beta2", "learning_rate", "p_input", "p_recurrent", "clip_norm", "p_attention"];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grid {
    pub axes: Vec<(String, Vec<String>)>,
}

impl Grid {
    /// Parses `key=v1,v2;key2=v3`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut axes = Vec::new();
        for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| Error::Config(format!("grid axis {part:?} lacks '='")))?;
            let k = k.trim();
            if !GRID_KEYS.iter().any(|(g, _)| *g == k) {
                return Err(Error::Config(format!("unknown grid key {k}")));
            }
            if axes.iter().any(|(a, _): &(String, _)| a == k) {
                return Err(Error::Config(format!("grid key {k} given twice")));
            }
            let values: Vec<String> = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            axes.push((k.to_string(), values));
        }
        Ok(Grid { axes })
    }

    pub fn size(&self) -> usize {
        if self.axes.is_empty() {
            0
        } else {
            self.axes.iter().map(|(_, v)| v.len()).product()
        }
    }

    /// Every combination, last axis varying fastest.
    pub fn combinations(&self) -> Vec<Manifest> {
        let n = self.size();
        (0..n)
            .map(|mut i| {
                let mut m = Manifest::new();
                for (k, values) in self.axes.iter().rev() {
                    m.set(k.clone(), &values[i % values.len()]);
                    i /= values.len();
                }
                m
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub settings: TrainConfig,
    pub report: EvalReport,
    pub best_val_loss: f64,
}

fn by_r10(a: &Trial, b: &Trial) -> Ordering {
    match (a.report.all.r10_rmse, b.report.all.r10_rmse) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
    .then(a.report.all.rmse.total_cmp(&b.report.all.rmse))
    .then(a.index.cmp(&b.index))
}

/// Trains one model per grid point from `model_seed` and ranks the trials
/// by validation R10 RMSE, undefined scores last.
pub fn grid_search<T: Scalar>(
    grid: &Grid,
    budget: usize,
    model: &ModelConfig,
    model_seed: u64,
    base: &TrainConfig,
    train_windows: &[WeatherWindow<T>],
    val_windows: &[WeatherWindow<T>],
) -> Result<Vec<Trial>> {
    let n = grid.size();
    if n == 0 {
        return Err(Error::Contract { op: "grid_search", detail: "grid has no combinations".into() });
    }
    if n > budget {
        return Err(Error::Contract { op: "grid_search", detail: format!("{n} combinations exceed budget {budget}") });
    }
    let settings = grid.combinations().iter().map(|m| base.clone().merge_manifest(m)).collect::<Result<Vec<_>>>()?;
    let mut trials = settings
        .into_par_iter()
        .enumerate()
        .map(|(index, settings)| {
            let mut m = Model::<T>::new(model.clone(), model_seed)?;
            let log = match train(&mut m, train_windows, val_windows, &settings) {
                Ok(log) => log.best_val_loss,
                Err(TrainError::NonFinite { log, .. }) => log.best_val_loss,
                Err(TrainError::Core(e)) => return Err(e),
            };
            let report = evaluate_model(&m, val_windows, Inference::Deterministic)?;
            Ok(Trial { index, settings, report, best_val_loss: log })
        })
        .collect::<Result<Vec<_>>>()?;
    trials.sort_by(by_r10);
    Ok(trials)
}

fn setting(t: &TrainConfig, key: &str) -> String {
    let mut m = Manifest::new();
    t.to_manifest(&mut m);
    m.get_str(key).unwrap_or("-").to_string()
}

/// Ranked table: the tuned optimizer and dropout settings, any other varied
/// keys, then validation scores.
pub fn table(grid: &Grid, trials: &[Trial]) -> String {
    let mut keys: Vec<&str> = TABLE_KEYS.to_vec();
    keys.extend(grid.axes.iter().map(|(k, _)| k.as_str()).filter(|k| !TABLE_KEYS.contains(k)));
    let heading = |k: &str| GRID_KEYS.iter().find(|(g, _)| *g == k).map_or(k, |(_, h)| *h).to_string();
    let mut s = format!("{:>5}{:>7}", "rank", "trial");
    for k in &keys {
        let _ = write!(s, "{:>14}", heading(k));
    }
    let _ = writeln!(s, "{:>12}{:>12}", "r10_rmse", "rmse");
    for (rank, t) in trials.iter().enumerate() {
        let _ = write!(s, "{:>5}{:>7}", rank + 1, t.index);
        for k in &keys {
            let _ = write!(s, "{:>14}", setting(&t.settings, k));
        }
        let r10 = t.report.all.r10_rmse.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(s, "{:>12}{:>12.4}", r10, t.report.all.rmse);
    }
    s
}
