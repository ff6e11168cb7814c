//! TRU-NET and the HCGRU baseline assembled from the layer primitives.

mod checkpoint;
mod config;
mod hcgru;
mod trunet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, manifest_path, save_checkpoint};
pub use config::{AttentionSettings, HcgruConfig, ModelConfig, TruNetConfig};
pub use hcgru::Hcgru;
pub use trunet::TruNet;

use crate::autograd::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::layers::{Dropout, OutputHead};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Sequence lengths observed during one forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SequenceTrace {
    pub input: usize,
    pub encoder: Vec<usize>,
    pub decoder: usize,
}

/// Graph outputs of one forward pass, both `[days, H, W]`.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub intensity: Var,
    pub rain_prob: Option<Var>,
    pub trace: SequenceTrace,
}

/// Evaluated model output.
#[derive(Clone, Debug, PartialEq)]
pub struct CcPrediction<T> {
    /// Rain level, mm/day, non-negative.
    pub intensity: Tensor<T>,
    /// Rain probability in (0, 1); absent for the non-CC variant.
    pub rain_prob: Option<Tensor<T>>,
}

impl<T: Scalar> CcPrediction<T> {
    pub fn crop_center(&self, size: usize) -> Result<Self> {
        Ok(CcPrediction {
            intensity: crop_center(&self.intensity, size)?,
            rain_prob: self.rain_prob.as_ref().map(|p| crop_center(p, size)).transpose()?,
        })
    }
}

/// Central `size x size` window of the two trailing axes.
pub fn crop_center<T: Scalar>(field: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    crate::tensor::crop_center(field, size)
}

#[derive(Clone, Debug)]
pub enum Architecture {
    TruNet(TruNet),
    Hcgru(Hcgru),
}

/// A built network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub arch: Architecture,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let arch = match &config {
            ModelConfig::TruNet(c) => Architecture::TruNet(TruNet::new(&mut params, c, &mut rng)?),
            ModelConfig::Hcgru(c) => Architecture::Hcgru(Hcgru::new(&mut params, c, &mut rng)?),
        };
        Ok(Model { config, arch, params })
    }

    pub fn is_cc(&self) -> bool {
        self.config.cc()
    }

    pub fn input_shape(&self) -> [usize; 4] {
        let s = self.config.stencil();
        [self.config.window(), s, s, self.config.input_channels()]
    }

    /// Builds the forward pass of `x` (`[window, S, S, C]`) on `g`.
    pub fn forward(&self, g: &Graph<T>, x: &Tensor<T>, dropout: &Dropout) -> Result<ForwardOutput> {
        let want = self.input_shape();
        if x.shape() != want {
            return Err(Error::shape("model_forward", format!("input {:?}, expected {want:?}", x.shape())));
        }
        let xv = g.input(x.clone());
        match &self.arch {
            Architecture::TruNet(m) => m.forward(g, xv, dropout),
            Architecture::Hcgru(m) => m.forward(g, xv, dropout),
        }
    }

    /// Evaluates the forward pass outside of training.
    pub fn predict(&self, x: &Tensor<T>, dropout: &Dropout) -> Result<CcPrediction<T>> {
        let g = Graph::new(&self.params);
        let out = self.forward(&g, x, dropout)?;
        Ok(CcPrediction {
            intensity: (*g.value(out.intensity)).clone(),
            rain_prob: out.rain_prob.map(|p| (*g.value(p)).clone()),
        })
    }
}

/// Total scalar parameter count.
pub fn count_parameters<T: Scalar>(model: &Model<T>) -> usize {
    model.params.scalar_count()
}

/// Applies the intensity head (and probability head, if any) per step and
/// stacks the results into `[days, H, W]`.
pub(crate) fn apply_heads<T: Scalar>(
    g: &Graph<T>,
    latents: &[Var],
    intensity: &OutputHead,
    prob: Option<&OutputHead>,
) -> Result<(Var, Option<Var>)> {
    let run = |head: &OutputHead| -> Result<Var> {
        let steps = latents.iter().map(|&l| head.apply(g, l)).collect::<Result<Vec<_>>>()?;
        g.stack(&steps)
    };
    let i = run(intensity)?;
    let p = prob.map(run).transpose()?;
    Ok((i, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Gradients;
    use crate::layers::{DropoutMode, DropoutSpec};
    use rand::Rng;

    fn random_input<T: Scalar>(model: &Model<T>, seed: u64) -> Tensor<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(model.input_shape().to_vec(), |_| T::lit(rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn crop_picks_rows_six_to_nine() {
        let f = Tensor::from_fn(vec![2, 16, 16], |ix| ix[1] as f64);
        let c = crop_center(&f, 4).unwrap();
        assert_eq!(c.shape(), [2, 4, 4]);
        for d in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(c.get(&[d, i, j]), (6 + i) as f64);
                }
            }
        }
        assert_eq!(crop_center(&Tensor::full(vec![3, 16, 16], 2.5), 4).unwrap(), Tensor::full(vec![3, 4, 4], 2.5));
        assert_eq!(crop_center(&f, 16).unwrap(), f);
        assert!(crop_center(&f, 17).is_err());
    }

    #[test]
    fn micro_trunet_shapes_and_trace() {
        let m = Model::<f64>::new(ModelConfig::TruNet(TruNetConfig::gradcheck(true)), 1).unwrap();
        let g = Graph::new(&m.params);
        let out = m.forward(&g, &random_input(&m, 2), &Dropout::off()).unwrap();
        assert_eq!(g.shape(out.intensity), [4, 4, 4]);
        assert_eq!(out.trace.encoder, vec![8, 4, 2]);
        assert_eq!(out.trace.decoder, 4);
        let p = g.value(out.rain_prob.unwrap());
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(g.value(out.intensity).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let m = Model::<f64>::new(ModelConfig::TruNet(TruNetConfig::gradcheck(true)), 1).unwrap();
        let g = Graph::new(&m.params);
        let x = Tensor::zeros(vec![8, 4, 4, 5]);
        assert!(matches!(m.forward(&g, &x, &Dropout::off()), Err(Error::Shape { .. })));
    }

    #[test]
    fn forward_is_deterministic() {
        for cfg in [ModelConfig::TruNet(TruNetConfig::gradcheck(true)), ModelConfig::Hcgru(HcgruConfig::gradcheck(true))] {
            let m = Model::<f32>::new(cfg, 3).unwrap();
            let x = random_input(&m, 4);
            assert_eq!(m.predict(&x, &Dropout::off()).unwrap(), m.predict(&x, &Dropout::off()).unwrap());
        }
    }

    #[test]
    fn non_cc_matches_cc_intensity_branch() {
        for (cc, plain) in [
            (ModelConfig::TruNet(TruNetConfig::gradcheck(true)), ModelConfig::TruNet(TruNetConfig::gradcheck(false))),
            (ModelConfig::Hcgru(HcgruConfig::gradcheck(true)), ModelConfig::Hcgru(HcgruConfig::gradcheck(false))),
        ] {
            let a = Model::<f64>::new(cc, 5).unwrap();
            let mut b = Model::<f64>::new(plain, 6).unwrap();
            assert_eq!(b.params.copy_matching(&a.params), b.params.len());
            let x = random_input(&a, 7);
            let pa = a.predict(&x, &Dropout::off()).unwrap();
            let pb = b.predict(&x, &Dropout::off()).unwrap();
            assert!(pb.rain_prob.is_none());
            assert_eq!(pa.intensity, pb.intensity);
        }
    }

    fn gradients(m: &Model<f64>, seed: u64) -> Gradients<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_input(m, seed);
        let g = Graph::new(&m.params);
        let out = m.forward(&g, &x, &Dropout::off()).unwrap();
        let days = g.shape(out.intensity)[0];
        let s = g.shape(out.intensity)[1];
        let w = g.input(Tensor::from_fn(vec![days, s, s], |_| rng.random_range(-1.0..1.0)));
        let mut loss = g.sum(g.mul(out.intensity, w).unwrap());
        if let Some(p) = out.rain_prob {
            loss = g.add(loss, g.sum(g.mul(p, w).unwrap())).unwrap();
        }
        g.backward(loss).unwrap()
    }

    #[test]
    fn every_parameter_receives_gradient() {
        for cfg in [ModelConfig::TruNet(TruNetConfig::gradcheck(true)), ModelConfig::Hcgru(HcgruConfig::gradcheck(true))] {
            let mut m = Model::<f64>::new(cfg, 8).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for p in m.params.iter_mut() {
                p.value = Tensor::from_fn(p.value.shape().to_vec(), |_| rng.random_range(-0.5..0.5));
            }
            let grads = gradients(&m, 10);
            for ((_, p), gr) in m.params.iter().zip(grads.iter()) {
                assert!(gr.data().iter().any(|&v| v != 0.0), "{} has zero gradient", p.name);
            }
        }
    }

    #[test]
    fn dropout_changes_outputs_only_when_active() {
        let m = Model::<f64>::new(ModelConfig::TruNet(TruNetConfig::gradcheck(true)), 11).unwrap();
        let x = random_input(&m, 12);
        let spec = DropoutSpec { p_input: 0.3, p_recurrent: 0.3, p_attention: 0.3, seed: 1, mode: DropoutMode::McmaSample };
        let base = m.predict(&x, &Dropout::off()).unwrap();
        let a = m.predict(&x, &Dropout::new(spec)).unwrap();
        let b = m.predict(&x, &Dropout::new(spec)).unwrap();
        let c = m.predict(&x, &Dropout::new(spec.with_seed(2))).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, base);
        assert_ne!(a, c);
        assert_eq!(m.predict(&x, &Dropout::new(spec.with_mode(DropoutMode::Off))).unwrap(), base);
    }

    #[test]
    fn hcgru_param_count_matches_closed_form() {
        for cc in [false, true] {
            let cfg = HcgruConfig::micro(cc);
            let m = Model::<f32>::new(ModelConfig::Hcgru(cfg.clone()), 0).unwrap();
            assert_eq!(count_parameters(&m), cfg.param_count());
        }
    }

    #[test]
    fn single_conv_counts_two() {
        let mut s = ParamStore::<f32>::new();
        s.add("k", Tensor::zeros(vec![1, 1, 1, 1])).unwrap();
        s.add("b", Tensor::zeros(vec![1])).unwrap();
        assert_eq!(s.scalar_count(), 2);
    }
}
