//! Inverted-dropout masks for the three dropout sites of the recurrent
//! layers: layer inputs, recurrent state, and attention weights.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    /// Training-time masking kept on at inference, one mask set per sample.
    McmaSample,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    pub p_input: f64,
    pub p_recurrent: f64,
    pub p_attention: f64,
    pub seed: u64,
    pub mode: DropoutMode,
}

impl DropoutSpec {
    pub fn off() -> Self {
        DropoutSpec { p_input: 0.0, p_recurrent: 0.0, p_attention: 0.0, seed: 0, mode: DropoutMode::Off }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_input", self.p_input), ("p_recurrent", self.p_recurrent), ("p_attention", self.p_attention)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn with_mode(self, mode: DropoutMode) -> Self {
        DropoutSpec { mode, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        DropoutSpec { seed, ..self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Site {
    Input,
    Recurrent,
    Attention,
}

/// SplitMix64 finaliser over `seed ^ stream * golden`, used to derive
/// independent per-sample / per-step seeds from one user seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mask source for one forward pass. Masks are drawn in call order, so a
/// sequential forward pass with a fixed seed always sees the same masks.
pub struct Dropout {
    spec: DropoutSpec,
    rng: RefCell<ChaCha8Rng>,
}

impl Dropout {
    pub fn new(spec: DropoutSpec) -> Self {
        Dropout { spec, rng: RefCell::new(ChaCha8Rng::seed_from_u64(spec.seed)) }
    }

    pub fn off() -> Self {
        Self::new(DropoutSpec::off())
    }

    pub fn spec(&self) -> &DropoutSpec {
        &self.spec
    }

    fn rate(&self, site: Site) -> f64 {
        if self.spec.mode == DropoutMode::Off {
            return 0.0;
        }
        match site {
            Site::Input => self.spec.p_input,
            Site::Recurrent => self.spec.p_recurrent,
            Site::Attention => self.spec.p_attention,
        }
    }

    /// Bernoulli(1 - p) mask scaled by `1 / (1 - p)`, or `None` when the
    /// site is inactive.
    pub fn mask<T: Scalar>(&self, site: Site, shape: &[usize]) -> Option<Tensor<T>> {
        let p = self.rate(site);
        if p <= 0.0 {
            return None;
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mut rng = self.rng.borrow_mut();
        Some(Tensor::from_fn(shape.to_vec(), |_| {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        }))
    }
}
