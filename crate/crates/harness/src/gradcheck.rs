//! Finite-difference verification of full-model gradients in 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trunet_core::autograd::{finite_diff_check, GradCheckOptions, GradCheckReport};
use trunet_core::layers::Dropout;
use trunet_core::model::{HcgruConfig, Model, ModelConfig, TruNetConfig};
use trunet_core::objective::LossKind;
use trunet_core::{Graph, Result, Tensor};

use crate::train::window_loss;

pub const GRADCHECK_OPTIONS: GradCheckOptions = GradCheckOptions { eps: 1e-5, tol: 1e-4, floor: 1e-6 };

/// Checks every parameter gradient of `config` on a random window.
pub fn model_gradcheck(config: ModelConfig, seed: u64) -> Result<GradCheckReport> {
    let loss = if config.cc() { LossKind::Cc } else { LossKind::Mse };
    let mut model = Model::<f64>::new(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(100));
    let x = Tensor::from_fn(model.input_shape().to_vec(), |_| rng.random_range(-1.0..1.0));
    let (days, crop) = (model.config.days(), model.config.crop());
    let y = Tensor::from_fn(vec![days, crop, crop], |_| if rng.random_bool(0.4) { rng.random_range(0.1..3.0) } else { 0.0 });
    let window = trunet_core::data::WeatherWindow { x, y, location: 0, start_day: 0, start: chrono::NaiveDate::MIN };
    let arch = model.clone();
    finite_diff_check(
        &mut model.params,
        |g: &Graph<f64>| window_loss(g, &arch, &window, loss, &Dropout::off()),
        GRADCHECK_OPTIONS,
    )
}

/// The two micro models checked by default, with seeds whose output-head
/// pre-activations stay clear of the ReLU kink by more than the step size.
pub fn default_suite() -> Vec<(&'static str, ModelConfig, u64)> {
    vec![
        ("trunet-cc", ModelConfig::TruNet(TruNetConfig::gradcheck(true)), 4),
        ("hcgru-cc", ModelConfig::Hcgru(HcgruConfig::gradcheck(true)), 2),
    ]
}
