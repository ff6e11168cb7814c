use crate::error::{Error, Result};
use crate::layers::{mix_seed, Dropout, DropoutMode, DropoutSpec};
use crate::model::{CcPrediction, Model};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MCMA_THRESHOLD: f64 = 0.5;

/// Source of stochastic predictions, one per sample index.
pub trait McmaSampler<T: Scalar> {
    fn sample(&self, x: &Tensor<T>, index: usize, spec: &DropoutSpec) -> Result<CcPrediction<T>>;
}

/// Sample `i` runs the model under masks seeded by `mix_seed(spec.seed, i)`
/// and is cropped to the model's target window.
impl<T: Scalar> McmaSampler<T> for Model<T> {
    fn sample(&self, x: &Tensor<T>, index: usize, spec: &DropoutSpec) -> Result<CcPrediction<T>> {
        let dropout = Dropout::new(spec.with_seed(mix_seed(spec.seed, index as u64)));
        self.predict(x, &dropout)?.crop_center(self.config.crop())
    }
}

/// Gated mean of `samples`: per cell, `(1/I) sum_i 1{r_i > threshold} y_i`.
///
/// Gated values are summed in sorted order so the result does not depend on
/// sample order; cells whose gated values all agree return that value.
pub fn mcma_reduce<T: Scalar>(samples: &[CcPrediction<T>], threshold: T) -> Result<Tensor<T>> {
    let first = samples.first().ok_or_else(|| Error::contract("mcma_predict", "need at least one sample"))?;
    let shape = first.intensity.shape().to_vec();
    let mut probs = Vec::with_capacity(samples.len());
    for s in samples {
        let p = s.rain_prob.as_ref().ok_or_else(|| Error::contract("mcma_predict", "model has no rain-probability output"))?;
        if s.intensity.shape() != shape.as_slice() || p.shape() != shape.as_slice() {
            return Err(Error::shape("mcma_predict", "samples disagree in shape"));
        }
        probs.push(p);
    }
    let n = T::from_usize(samples.len()).unwrap();
    let mut buf = Vec::with_capacity(samples.len());
    let out = (0..first.intensity.numel())
        .map(|c| {
            buf.clear();
            buf.extend(samples.iter().zip(&probs).map(|(s, p)| {
                if p.data()[c] > threshold {
                    s.intensity.data()[c]
                } else {
                    T::zero()
                }
            }));
            buf.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            if buf[0] == buf[buf.len() - 1] {
                buf[0]
            } else {
                buf.iter().copied().sum::<T>() / n
            }
        })
        .collect();
    Tensor::new(shape, out)
}

/// Monte Carlo model averaging over `samples` dropout-masked passes.
pub fn mcma_predict<T: Scalar>(
    sampler: &impl McmaSampler<T>,
    x: &Tensor<T>,
    samples: usize,
    spec: &DropoutSpec,
) -> Result<Tensor<T>> {
    if samples == 0 {
        return Err(Error::contract("mcma_predict", "sample count must be at least 1"));
    }
    spec.validate()?;
    let spec = DropoutSpec { mode: DropoutMode::McmaSample, ..*spec };
    let draws = (0..samples).map(|i| sampler.sample(x, i, &spec)).collect::<Result<Vec<_>>>()?;
    mcma_reduce(&draws, T::lit(MCMA_THRESHOLD))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, TruNetConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Stub(Vec<(f64, f64)>);

    impl McmaSampler<f64> for Stub {
        fn sample(&self, _x: &Tensor<f64>, i: usize, _spec: &DropoutSpec) -> Result<CcPrediction<f64>> {
            let (r, y) = self.0[i];
            Ok(CcPrediction { intensity: Tensor::full(vec![1, 1], y), rain_prob: Some(Tensor::full(vec![1, 1], r)) })
        }
    }

    #[test]
    fn four_sample_hand_case() {
        let stub = Stub(vec![(0.6, 2.0), (0.4, 5.0), (0.9, 1.0), (0.55, 3.0)]);
        let out = mcma_predict(&stub, &Tensor::zeros(vec![1]), 4, &DropoutSpec::off()).unwrap();
        assert_eq!(out.data(), [1.5]);
    }

    #[test]
    fn all_dry_gives_zero_and_zero_samples_rejected() {
        let stub = Stub(vec![(0.5, 2.0), (0.1, 5.0), (0.0, 7.0)]);
        assert_eq!(mcma_predict(&stub, &Tensor::zeros(vec![1]), 3, &DropoutSpec::off()).unwrap().data(), [0.0]);
        assert!(mcma_predict(&stub, &Tensor::zeros(vec![1]), 0, &DropoutSpec::off()).is_err());
    }

    #[test]
    fn permutation_invariant_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<_> = (0..9)
            .map(|_| CcPrediction {
                intensity: Tensor::from_fn(vec![4, 3], |_| rng.random_range(0.0..20.0)),
                rain_prob: Some(Tensor::from_fn(vec![4, 3], |_| rng.random_range(0.0..1.0))),
            })
            .collect();
        let a = mcma_reduce(&samples, 0.5).unwrap();
        let mut rev = samples.clone();
        rev.reverse();
        rev.swap(1, 5);
        let b = mcma_reduce(&rev, 0.5).unwrap();
        let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn model_without_dropout_is_sample_count_invariant() {
        let m = Model::<f64>::new(ModelConfig::TruNet(TruNetConfig::gradcheck(true)), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(m.input_shape().to_vec(), |_| rng.random_range(-1.0..1.0));
        let off = DropoutSpec::off();
        let one = mcma_predict(&m, &x, 1, &off).unwrap();
        assert_eq!(mcma_predict(&m, &x, 5, &off).unwrap(), one);
        let det = m.predict(&x, &Dropout::off()).unwrap().crop_center(2).unwrap();
        let p = det.rain_prob.unwrap();
        let gated: Vec<f64> = det.intensity.data().iter().zip(p.data()).map(|(&y, &r)| if r > 0.5 { y } else { 0.0 }).collect();
        assert_eq!(one.data(), gated.as_slice());
        let non_cc = Model::<f64>::new(ModelConfig::TruNet(TruNetConfig::gradcheck(false)), 2).unwrap();
        assert!(matches!(mcma_predict(&non_cc, &x, 2, &off), Err(Error::Contract { .. })));
    }
}
