//! Mini-batch training with clipped adaptive updates.
//!
//! Per-window gradients of a batch are computed in parallel and summed in
//! batch order, so a run is bit-reproducible for a given seed regardless of
//! thread count.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use trunet_core::autograd::Gradients;
use trunet_core::data::manifest::fmt_f64;
use trunet_core::data::{Manifest, WeatherWindow};
use trunet_core::layers::{mix_seed, Dropout, DropoutMode, DropoutSpec};
use trunet_core::model::Model;
use trunet_core::objective::{cc_loss_graph, mse_loss_graph, LossKind};
use trunet_core::{Error, Graph, ParamStore, Result, Scalar, Var};

use crate::optim::{Optimizer, OptimizerConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub dropout: DropoutSpec,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(loss: LossKind, optimizer: OptimizerConfig, seed: u64) -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            loss,
            dropout: DropoutSpec { mode: DropoutMode::Train, ..DropoutSpec::off() },
            optimizer,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        self.dropout.validate()?;
        self.optimizer.validate()
    }

    pub fn to_manifest(&self, m: &mut Manifest) {
        self.optimizer.to_manifest(m);
        m.set("epochs", self.epochs)
            .set("batch_size", self.batch_size)
            .set("loss", self.loss)
            .set("p_input", self.dropout.p_input)
            .set("p_recurrent", self.dropout.p_recurrent)
            .set("p_attention", self.dropout.p_attention)
            .set("seed", self.seed);
    }

    /// Reads every training key present in `m` over `self`.
    pub fn merge_manifest(mut self, m: &Manifest) -> Result<Self> {
        self.optimizer = OptimizerConfig::from_manifest(m, self.optimizer)?;
        if let Some(v) = m.get("epochs")? {
            self.epochs = v;
        }
        if let Some(v) = m.get("batch_size")? {
            self.batch_size = v;
        }
        if let Some(v) = m.get("loss")? {
            self.loss = v;
        }
        if let Some(v) = m.get("p_input")? {
            self.dropout.p_input = v;
        }
        if let Some(v) = m.get("p_recurrent")? {
            self.dropout.p_recurrent = v;
        }
        if let Some(v) = m.get("p_attention")? {
            self.dropout.p_attention = v;
        }
        if let Some(v) = m.get("seed")? {
            self.seed = v;
        }
        self.validate()?;
        Ok(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub steps: usize,
    /// Mean loss of the batches of this epoch, under dropout.
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Mean batch loss of every optimizer step.
    pub step_losses: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
}

impl TrainLog {
    pub fn to_text(&self) -> String {
        let mut s = String::from("epoch steps train_loss val_loss\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{} {} {} {}", e.epoch, e.steps, fmt_f64(e.train_loss), fmt_f64(e.val_loss));
        }
        if let Some(b) = self.best_epoch {
            let _ = writeln!(s, "best epoch {b} val_loss {}", fmt_f64(self.best_val_loss));
        }
        s
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    /// The model holds the last good parameters when this is returned.
    #[error("non-finite loss or gradient at step {step}")]
    NonFinite { step: usize, log: TrainLog },
    #[error(transparent)]
    Core(#[from] Error),
}

/// Loss node of `window` under `kind`, computed on the central crop.
pub fn window_loss<T: Scalar>(
    g: &Graph<T>,
    model: &Model<T>,
    window: &WeatherWindow<T>,
    kind: LossKind,
    dropout: &Dropout,
) -> Result<Var> {
    let out = model.forward(g, &window.x, dropout)?;
    let crop = model.config.crop();
    let rain = g.crop_center(out.intensity, crop)?;
    match (kind, out.rain_prob) {
        (LossKind::Cc, Some(p)) => {
            let p = g.crop_center(p, crop)?;
            Ok(cc_loss_graph(g, rain, p, &window.y)?.total)
        }
        (LossKind::Cc, None) => Err(Error::Config("the CC loss needs a model with a rain-probability head".into())),
        (LossKind::Mse, _) => mse_loss_graph(g, rain, &window.y),
    }
}

fn loss_and_grad<T: Scalar>(
    model: &Model<T>,
    window: &WeatherWindow<T>,
    kind: LossKind,
    dropout: &Dropout,
) -> Result<(f64, Gradients<T>)> {
    let g = Graph::new(&model.params);
    let loss = window_loss(&g, model, window, kind, dropout)?;
    let value = g.value(loss).data()[0].as_f64();
    Ok((value, g.backward(loss)?))
}

/// Mean loss over `windows` with dropout off.
pub fn mean_loss<T: Scalar>(model: &Model<T>, windows: &[WeatherWindow<T>], kind: LossKind) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Data("no windows to score".into()));
    }
    let losses = windows
        .par_iter()
        .map(|w| {
            let g = Graph::new(&model.params);
            let l = window_loss(&g, model, w, kind, &Dropout::off())?;
            Ok(g.value(l).data()[0].as_f64())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn snapshot<T: Scalar>(params: &ParamStore<T>) -> Vec<trunet_core::Tensor<T>> {
    params.iter().map(|(_, p)| p.value.clone()).collect()
}

fn restore<T: Scalar>(params: &mut ParamStore<T>, values: &[trunet_core::Tensor<T>]) {
    for (p, v) in params.iter_mut().zip(values) {
        p.value = v.clone();
    }
}

/// Trains `model` and leaves it holding the parameters of the epoch with the
/// lowest validation loss.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train: &[WeatherWindow<T>],
    val: &[WeatherWindow<T>],
    config: &TrainConfig,
) -> std::result::Result<TrainLog, TrainError> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation splits must be non-empty".into()).into());
    }
    if config.loss == LossKind::Cc && !model.is_cc() {
        return Err(Error::Config("the CC loss needs a model with a rain-probability head".into()).into());
    }
    let mut opt = Optimizer::new(config.optimizer, &model.params)?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 1));
    let dropout_seed = mix_seed(config.seed, 2);
    let spec = config.dropout.with_mode(DropoutMode::Train);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog { best_val_loss: f64::INFINITY, ..Default::default() };
    let mut best = snapshot(&model.params);
    let mut draws = 0u64;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            let step = opt.steps_taken() + 1;
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let dropout = Dropout::new(spec.with_seed(mix_seed(dropout_seed, draws + j as u64)));
                    loss_and_grad(model, &train[i], config.loss, &dropout)
                })
                .collect::<Result<Vec<_>>>()?;
            draws += batch.len() as u64;
            let mut total = Gradients::zeros_like(&model.params);
            let mut loss = 0.0;
            for (l, g) in &results {
                loss += l;
                total.add_assign(g);
            }
            let n = batch.len() as f64;
            loss /= n;
            total.scale(T::lit(1.0 / n));
            if !loss.is_finite() || !total.global_norm().is_finite() {
                restore(&mut model.params, &best);
                return Err(TrainError::NonFinite { step, log });
            }
            opt.step(&mut model.params, total);
            log.step_losses.push(loss);
            epoch_loss += loss;
            batches += 1;
        }
        let val_loss = mean_loss(model, val, config.loss)?;
        if !val_loss.is_finite() {
            restore(&mut model.params, &best);
            return Err(TrainError::NonFinite { step: opt.steps_taken(), log });
        }
        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = Some(epoch);
            best = snapshot(&model.params);
        }
        log.epochs.push(EpochLog { epoch, steps: opt.steps_taken(), train_loss: epoch_loss / batches as f64, val_loss });
    }
    restore(&mut model.params, &best);
    Ok(log)
}
