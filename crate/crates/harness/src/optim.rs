//! Adam and rectified Adam with global-norm clipping and linear warmup.

use trunet_core::autograd::Gradients;
use trunet_core::data::Manifest;
use trunet_core::{Error, ParamStore, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerVariant {
    Adam,
    RectifiedAdam,
}

impl std::str::FromStr for OptimizerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerVariant::Adam),
            "radam" | "rectified_adam" => Ok(OptimizerVariant::RectifiedAdam),
            other => Err(Error::Config(format!("unknown optimizer {other}"))),
        }
    }
}

impl std::fmt::Display for OptimizerVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerVariant::Adam => "adam",
            OptimizerVariant::RectifiedAdam => "radam",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global L2 norm the gradient is clipped to.
    pub clip_norm: f64,
    /// Steps of linear warmup; 0 disables it.
    pub warmup_steps: usize,
    pub variant: OptimizerVariant,
}

impl OptimizerConfig {
    /// TRU-NET CC settings: lr 1e-4, beta2 0.90, clip norm 4.5.
    pub fn trunet_cc() -> Self {
        OptimizerConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.9,
            epsilon: 1e-7,
            clip_norm: 4.5,
            warmup_steps: 100,
            variant: OptimizerVariant::Adam,
        }
    }

    /// HCGRU settings: lr 1e-3, beta1 0.90, beta2 0.99.
    pub fn hcgru() -> Self {
        OptimizerConfig { learning_rate: 1e-3, beta2: 0.99, ..Self::trunet_cc() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.learning_rate)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip norm {} must be positive", self.clip_norm)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} = {b} must lie in (0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate of 1-based step `k`: `lr * k / warmup` during warmup.
    pub fn lr_at(&self, k: usize) -> f64 {
        if k < self.warmup_steps {
            self.learning_rate * k as f64 / self.warmup_steps as f64
        } else {
            self.learning_rate
        }
    }

    pub fn to_manifest(&self, m: &mut Manifest) {
        m.set("learning_rate", self.learning_rate)
            .set("beta1", self.beta1)
            .set("beta2", self.beta2)
            .set("epsilon", self.epsilon)
            .set("clip_norm", self.clip_norm)
            .set("warmup_steps", self.warmup_steps)
            .set("optimizer", self.variant);
    }

    pub fn from_manifest(m: &Manifest, base: Self) -> Result<Self> {
        let mut c = base;
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = m.get(stringify!($field))? {
                    c.$field = v;
                }
            )*};
        }
        take!(learning_rate, beta1, beta2, epsilon, clip_norm, warmup_steps);
        if let Some(v) = m.get("optimizer")? {
            c.variant = v;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Scales `grads` in place so their global norm is at most `clip_norm`;
/// returns the pre-clip norm and the factor applied.
pub fn clip_global_norm<T: Scalar>(grads: &mut Gradients<T>, clip_norm: f64) -> (f64, f64) {
    let norm = grads.global_norm().as_f64();
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    if scale < 1.0 {
        grads.scale(T::lit(scale));
    }
    (norm, scale)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub step: usize,
    pub lr: f64,
    pub grad_norm: f64,
    pub clip_scale: f64,
}

/// First and second moment state, one slot per parameter.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    pub config: OptimizerConfig,
    step: usize,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, params: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let zeros = || params.iter().map(|(_, p)| Tensor::zeros(p.value.shape().to_vec())).collect();
        Ok(Optimizer { config, step: 0, m: zeros(), v: zeros() })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Clips `grads` and applies one update to `params`.
    pub fn step(&mut self, params: &mut ParamStore<T>, mut grads: Gradients<T>) -> StepInfo {
        let (grad_norm, clip_scale) = clip_global_norm(&mut grads, self.config.clip_norm);
        self.step += 1;
        let k = self.step;
        let lr = self.config.lr_at(k);
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = 1.0 - c.beta1.powi(k as i32);
        let bc2 = 1.0 - c.beta2.powi(k as i32);
        // Adaptive factor and whether the second moment is used at all.
        let (factor, adaptive) = match c.variant {
            OptimizerVariant::Adam => (lr / bc1, true),
            OptimizerVariant::RectifiedAdam => {
                let rho_inf = 2.0 / (1.0 - c.beta2) - 1.0;
                let rho = rho_inf - 2.0 * k as f64 * c.beta2.powi(k as i32) / bc2;
                if rho > 4.0 {
                    let r = ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt();
                    (lr * r / bc1, true)
                } else {
                    (lr / bc1, false)
                }
            }
        };
        let (factor, bc2, eps) = (T::lit(factor), T::lit(bc2), T::lit(c.epsilon));
        for (((p, g), m), v) in params.iter_mut().zip(grads.iter()).zip(&mut self.m).zip(&mut self.v) {
            let (pd, gd, md, vd) = (p.value.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = b1 * md[i] + (T::one() - b1) * gd[i];
                vd[i] = b2 * vd[i] + (T::one() - b2) * gd[i] * gd[i];
                let denom = if adaptive { (vd[i] / bc2).sqrt() + eps } else { T::one() };
                pd[i] -= factor * md[i] / denom;
            }
        }
        StepInfo { step: k, lr, grad_norm, clip_scale }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(vec![values.len()], values.to_vec()).unwrap()).unwrap();
        s
    }

    fn grads_of(s: &mut ParamStore<f64>, g: &[f64]) -> Gradients<f64> {
        s.zero_grad();
        s.iter_mut().next().unwrap().grad = Tensor::new(vec![g.len()], g.to_vec()).unwrap();
        s.gradients()
    }

    #[test]
    fn clip_scales_norm_ten_to_four_and_a_half() {
        let mut s = store(&[0.0, 0.0]);
        let mut g = grads_of(&mut s, &[6.0, 8.0]);
        let (norm, scale) = clip_global_norm(&mut g, 4.5);
        assert_eq!(norm, 10.0);
        assert!((scale - 0.45).abs() < 1e-15);
        assert!((g.global_norm() - 4.5).abs() < 1e-12);
        let mut small = grads_of(&mut s, &[0.3, 0.4]);
        assert_eq!(clip_global_norm(&mut small, 4.5), (0.5, 1.0));
    }

    #[test]
    fn warmup_is_linear_and_one_based() {
        let c = OptimizerConfig { learning_rate: 3e-4, warmup_steps: 7, ..OptimizerConfig::trunet_cc() };
        for k in 1..7 {
            assert_eq!(c.lr_at(k), 3e-4 * k as f64 / 7.0);
        }
        assert_eq!(c.lr_at(7), 3e-4);
        assert_eq!(OptimizerConfig { warmup_steps: 0, ..c }.lr_at(1), 3e-4);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        for variant in [OptimizerVariant::Adam, OptimizerVariant::RectifiedAdam] {
            let mut s = store(&[0.25, -1.5, 3.0]);
            let before = s.clone();
            let c = OptimizerConfig { learning_rate: 0.0, variant, ..OptimizerConfig::trunet_cc() };
            let mut opt = Optimizer::new(c, &s).unwrap();
            for i in 0..20 {
                let g = grads_of(&mut s, &[1.0 + i as f64, -2.0, 0.5]);
                opt.step(&mut s, g);
            }
            assert_eq!(s.value(trunet_core::ParamId(0)), before.value(trunet_core::ParamId(0)));
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr_times_sign() {
        let mut s = store(&[1.0, 1.0]);
        let c = OptimizerConfig { learning_rate: 0.1, warmup_steps: 0, epsilon: 1e-12, ..OptimizerConfig::trunet_cc() };
        let mut opt = Optimizer::new(c, &s).unwrap();
        let g = grads_of(&mut s, &[0.5, -2.0]);
        opt.step(&mut s, g);
        let w = s.value(trunet_core::ParamId(0)).data();
        assert!((w[0] - 0.9).abs() < 1e-10 && (w[1] - 1.1).abs() < 1e-10, "{w:?}");
    }

    #[test]
    fn rectified_adam_starts_with_momentum_sgd() {
        // beta2 = 0.99 gives rho_t <= 4 for the first few steps.
        let mut s = store(&[1.0]);
        let c = OptimizerConfig {
            learning_rate: 0.1,
            beta2: 0.99,
            warmup_steps: 0,
            variant: OptimizerVariant::RectifiedAdam,
            ..OptimizerConfig::trunet_cc()
        };
        let mut opt = Optimizer::new(c, &s).unwrap();
        let g = grads_of(&mut s, &[3.0]);
        opt.step(&mut s, g);
        assert!((s.value(trunet_core::ParamId(0)).data()[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn minimizes_a_quadratic() {
        for variant in [OptimizerVariant::Adam, OptimizerVariant::RectifiedAdam] {
            let mut s = store(&[4.0, -3.0]);
            let c = OptimizerConfig { learning_rate: 0.05, warmup_steps: 10, variant, ..OptimizerConfig::trunet_cc() };
            let mut opt = Optimizer::new(c, &s).unwrap();
            for _ in 0..2000 {
                let w = s.value(trunet_core::ParamId(0)).data().to_vec();
                let g = grads_of(&mut s, &[2.0 * (w[0] - 1.0), 2.0 * (w[1] + 2.0)]);
                opt.step(&mut s, g);
            }
            let w = s.value(trunet_core::ParamId(0)).data();
            assert!((w[0] - 1.0).abs() < 1e-2 && (w[1] + 2.0).abs() < 1e-2, "{variant}: {w:?}");
        }
    }

    #[test]
    fn rejects_bad_settings() {
        let base = OptimizerConfig::trunet_cc();
        assert!(OptimizerConfig { clip_norm: 0.0, ..base }.validate().is_err());
        assert!(OptimizerConfig { beta1: 1.0, ..base }.validate().is_err());
        assert!(OptimizerConfig { beta2: 0.0, ..base }.validate().is_err());
        assert!(OptimizerConfig { learning_rate: -1.0, ..base }.validate().is_err());
    }
}
