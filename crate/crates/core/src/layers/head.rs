use rand::Rng;

use super::init::fan_in_uniform;
use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadActivation {
    /// Logistic output in (0, 1).
    Probability,
    /// Softplus output in [0, inf).
    Intensity,
}

/// Per-step readout: 3x3 conv to `hidden` channels, ReLU, 3x3 conv to one
/// channel, then the output activation.
#[derive(Clone, Debug)]
pub struct OutputHead {
    pub activation: HeadActivation,
    pub k1: ParamId,
    pub b1: ParamId,
    pub k2: ParamId,
    pub b2: ParamId,
}

impl OutputHead {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_channels: usize,
        hidden: usize,
        activation: HeadActivation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(OutputHead {
            activation,
            k1: store.add(format!("{prefix}.k1"), fan_in_uniform(&[hidden, 3, 3, in_channels], 9 * in_channels, rng))?,
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(vec![hidden]))?,
            k2: store.add(format!("{prefix}.k2"), fan_in_uniform(&[1, 3, 3, hidden], 9 * hidden, rng))?,
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(vec![1]))?,
        })
    }

    /// Maps `[H, W, C]` to `[H, W]`.
    pub fn apply<T: Scalar>(&self, g: &Graph<T>, x: Var) -> Result<Var> {
        let hidden = g.relu(g.conv2d(x, g.param(self.k1), Some(g.param(self.b1)))?);
        let out = g.conv2d(hidden, g.param(self.k2), Some(g.param(self.b2)))?;
        let out = match self.activation {
            HeadActivation::Probability => g.sigmoid(out),
            HeadActivation::Intensity => g.softplus(out),
        };
        let shape = g.shape(out);
        g.reshape(out, vec![shape[0], shape[1]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn activations_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::<f64>::new();
        let p = OutputHead::new(&mut store, "p", 3, 4, HeadActivation::Probability, &mut rng).unwrap();
        let r = OutputHead::new(&mut store, "r", 3, 4, HeadActivation::Intensity, &mut rng).unwrap();
        for p in store.iter_mut() {
            p.value = Tensor::from_fn(p.value.shape().to_vec(), |_| rng.random_range(-20.0..20.0));
        }
        let g = Graph::new(&store);
        let x = g.input(Tensor::from_fn(vec![5, 4, 3], |_| rng.random_range(-5.0..5.0)));
        let prob = g.value(p.apply(&g, x).unwrap());
        let rain = g.value(r.apply(&g, x).unwrap());
        assert_eq!(prob.shape(), [5, 4]);
        assert!(prob.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(rain.data().iter().all(|&v| v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn zero_weights_give_activation_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut store = ParamStore::<f64>::new();
        let p = OutputHead::new(&mut store, "p", 2, 3, HeadActivation::Probability, &mut rng).unwrap();
        let r = OutputHead::new(&mut store, "r", 2, 3, HeadActivation::Intensity, &mut rng).unwrap();
        for p in store.iter_mut() {
            p.value = Tensor::zeros(p.value.shape().to_vec());
        }
        let g = Graph::new(&store);
        let x = g.input(Tensor::from_fn(vec![3, 3, 2], |_| rng.random_range(-5.0..5.0)));
        assert!(g.value(p.apply(&g, x).unwrap()).data().iter().all(|&v| v == 0.5));
        assert!(g.value(r.apply(&g, x).unwrap()).data().iter().all(|&v| v == 2f64.ln()));
    }
}
