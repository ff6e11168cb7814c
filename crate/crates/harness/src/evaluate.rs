//! Model inference over windows and scoring against observations.

use std::collections::BTreeMap;

use rayon::prelude::*;
use trunet_core::data::calendar::day;
use trunet_core::data::{Season, WeatherWindow};
use trunet_core::layers::{Dropout, DropoutMode, DropoutSpec};
use trunet_core::model::{crop_center, Model};
use trunet_core::objective::mcma_predict;
use trunet_core::{Error, Result, Scalar, Tensor};

use crate::metrics::{evaluate, EvalReport};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Inference {
    /// One pass without dropout; CC models are gated at `r > 0.5`.
    Deterministic,
    /// Monte Carlo model averaging with the training dropout rates.
    Mcma { samples: usize, dropout: DropoutSpec },
}

/// Cropped rainfall prediction `[days, crop, crop]` for one input window.
pub fn predict_window<T: Scalar>(model: &Model<T>, x: &Tensor<T>, inference: Inference) -> Result<Tensor<T>> {
    match (inference, model.is_cc()) {
        (Inference::Deterministic, true) => mcma_predict(model, x, 1, &DropoutSpec::off()),
        (Inference::Mcma { samples, dropout }, true) => {
            mcma_predict(model, x, samples, &dropout.with_mode(DropoutMode::McmaSample))
        }
        (Inference::Deterministic, false) => crop_center(&model.predict(x, &Dropout::off())?.intensity, model.config.crop()),
        (Inference::Mcma { .. }, false) => {
            Err(Error::Config("model averaging needs a model with a rain-probability head".into()))
        }
    }
}

pub fn predict_windows<T: Scalar>(model: &Model<T>, windows: &[WeatherWindow<T>], inference: Inference) -> Result<Vec<Tensor<T>>> {
    windows.par_iter().map(|w| predict_window(model, &w.x, inference)).collect()
}

/// Flattened cells of aligned predictions and observations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Cells {
    pub predictions: Vec<f64>,
    pub observations: Vec<f64>,
    pub seasons: Vec<Season>,
}

impl Cells {
    pub fn collect<T: Scalar>(predictions: &[Tensor<T>], windows: &[WeatherWindow<T>]) -> Result<Self> {
        if predictions.len() != windows.len() {
            return Err(Error::Data(format!("{} predictions for {} windows", predictions.len(), windows.len())));
        }
        let mut c = Cells::default();
        for (p, w) in predictions.iter().zip(windows) {
            if p.shape() != w.y.shape() {
                return Err(Error::Data(format!("prediction {:?} vs target {:?}", p.shape(), w.y.shape())));
            }
            let per_day = w.y.numel() / w.days();
            for (i, (pv, ov)) in p.data().iter().zip(w.y.data()).enumerate() {
                c.predictions.push(pv.as_f64());
                c.observations.push(ov.as_f64());
                c.seasons.push(Season::of(day(w.start, i / per_day)));
            }
        }
        Ok(c)
    }

    pub fn evaluate(&self) -> Result<EvalReport> {
        evaluate(&self.predictions, &self.observations, &self.seasons)
    }
}

pub fn evaluate_model<T: Scalar>(model: &Model<T>, windows: &[WeatherWindow<T>], inference: Inference) -> Result<EvalReport> {
    Cells::collect(&predict_windows(model, windows, inference)?, windows)?.evaluate()
}

/// Per-location, per-cell mean rainfall of a training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Climatology {
    means: BTreeMap<usize, Vec<f64>>,
}

impl Climatology {
    pub fn fit<T: Scalar>(train: &[WeatherWindow<T>]) -> Result<Self> {
        let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
        for w in train {
            let per_day = w.y.numel() / w.days();
            let (s, n) = sums.entry(w.location).or_insert_with(|| (vec![0.0; per_day], 0));
            for d in w.y.data().chunks(per_day) {
                s.iter_mut().zip(d).for_each(|(a, v)| *a += v.as_f64());
                *n += 1;
            }
        }
        if sums.is_empty() {
            return Err(Error::Data("climatology needs training windows".into()));
        }
        Ok(Climatology { means: sums.into_iter().map(|(k, (s, n))| (k, s.iter().map(|v| v / n as f64).collect())).collect() })
    }

    pub fn predict<T: Scalar>(&self, windows: &[WeatherWindow<T>]) -> Result<Vec<Tensor<T>>> {
        windows
            .iter()
            .map(|w| {
                let m = self.means.get(&w.location).ok_or_else(|| Error::Data(format!("no climatology for location {}", w.location)))?;
                let data = (0..w.y.numel()).map(|i| T::lit(m[i % m.len()])).collect();
                Tensor::new(w.y.shape().to_vec(), data)
            })
            .collect()
    }
}
