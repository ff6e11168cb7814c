//! Training objectives and Monte Carlo model averaging.
//!
//! The conditional-continuous loss is minimized as
//!
//! ```text
//! L = mean[ -1{y>0} ln r - 1{y=0} ln(1 - r) ] + mean[ (y - y_hat)^2 ]
//! ```
//!
//! over every cell of the target crop, with `r` clamped to
//! `[1e-7, 1 - 1e-7]`. The squared term covers wet and dry cells alike.

mod mcma;

pub use mcma::{mcma_predict, mcma_reduce, McmaSampler, MCMA_THRESHOLD};

use crate::autograd::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Cc,
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cc" => Ok(LossKind::Cc),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::Config(format!("unknown loss {other}"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Cc => "cc",
            LossKind::Mse => "mse",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub bce_component: T,
    pub sq_component: T,
    pub cell_count: usize,
}

/// Loss nodes on a graph.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub bce: Option<Var>,
    pub sq: Var,
}

impl LossVars {
    pub fn breakdown<T: Scalar>(&self, g: &Graph<T>) -> LossBreakdown<T> {
        let v = |x: Var| g.value(x).data()[0];
        LossBreakdown {
            total: v(self.total),
            bce_component: self.bce.map(v).unwrap_or_else(T::zero),
            sq_component: v(self.sq),
            cell_count: 0,
        }
    }
}

fn check_target<T: Scalar>(target: &Tensor<T>) -> Result<()> {
    if target.data().iter().any(|&v| !(v >= T::zero())) {
        return Err(Error::Data("targets must be non-negative and finite".into()));
    }
    Ok(())
}

fn check_same<T: Scalar>(g: &Graph<T>, v: Var, target: &Tensor<T>, op: &'static str) -> Result<()> {
    if g.shape(v) != target.shape() {
        return Err(Error::shape(op, format!("prediction {:?} vs target {:?}", g.shape(v), target.shape())));
    }
    Ok(())
}

/// Conditional-continuous loss on graph nodes.
pub fn cc_loss_graph<T: Scalar>(g: &Graph<T>, intensity: Var, rain_prob: Var, target: &Tensor<T>) -> Result<LossVars> {
    check_same(g, intensity, target, "cc_loss")?;
    check_same(g, rain_prob, target, "cc_loss")?;
    check_target(target)?;
    // Exact 0 or 1 can only come from a saturated logistic in low precision;
    // the clamp below handles those.
    if g.value(rain_prob).data().iter().any(|&p| !(p >= T::zero() && p <= T::one())) {
        return Err(Error::contract("cc_loss", "rain probability outside [0, 1]"));
    }
    let wet = g.input(target.map(|y| if y > T::zero() { T::one() } else { T::zero() }));
    let p = g.clamp(rain_prob, T::lit(PROB_CLAMP), T::lit(1.0 - PROB_CLAMP));
    let ll = g.add(g.mul(wet, g.ln(p))?, g.mul(g.one_minus(wet), g.ln(g.one_minus(p)))?)?;
    let bce = g.scale(g.mean(ll), -T::one());
    let sq = mse_loss_graph(g, intensity, target)?;
    Ok(LossVars { total: g.add(bce, sq)?, bce: Some(bce), sq })
}

pub fn mse_loss_graph<T: Scalar>(g: &Graph<T>, intensity: Var, target: &Tensor<T>) -> Result<Var> {
    check_same(g, intensity, target, "mse_loss")?;
    let diff = g.sub(intensity, g.input(target.clone()))?;
    Ok(g.mean(g.square(diff)))
}

/// Evaluates the conditional-continuous loss of a prediction.
pub fn cc_loss<T: Scalar>(intensity: &Tensor<T>, rain_prob: &Tensor<T>, target: &Tensor<T>) -> Result<LossBreakdown<T>> {
    let store = ParamStore::new();
    let g = Graph::new(&store);
    let vars = cc_loss_graph(&g, g.input(intensity.clone()), g.input(rain_prob.clone()), target)?;
    Ok(LossBreakdown { cell_count: target.numel(), ..vars.breakdown(&g) })
}

pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    let store = ParamStore::new();
    let g = Graph::new(&store);
    let v = mse_loss_graph(&g, g.input(pred.clone()), target)?;
    Ok(g.value(v).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{finite_diff_check, GradCheckOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_dry_cell_at_half() {
        let t = |v: f64| Tensor::new(vec![1], vec![v]).unwrap();
        let l = cc_loss(&t(0.0), &t(0.5), &t(0.0)).unwrap();
        assert!((l.bce_component - 2f64.ln()).abs() < 1e-15);
        assert_eq!(l.sq_component, 0.0);
        assert_eq!(l.total, l.bce_component + l.sq_component);
        assert_eq!(l.cell_count, 1);
    }

    #[test]
    fn perfect_fit_is_near_zero() {
        let y = Tensor::new(vec![2, 2], vec![0.0, 3.0, 0.0, 12.5]).unwrap();
        let p = y.map(|v| if v > 0.0 { 1.0 - 1e-12 } else { 1e-12 });
        let l = cc_loss(&y, &p, &y).unwrap();
        assert!(l.total >= 0.0 && l.total <= 2e-6, "{}", l.total);
    }

    #[test]
    fn invalid_inputs() {
        let t = |v: f64| Tensor::new(vec![1], vec![v]).unwrap();
        assert!(matches!(cc_loss(&t(0.0), &t(1.5), &t(0.0)), Err(Error::Contract { .. })));
        assert!(matches!(cc_loss(&t(0.0), &t(f64::NAN), &t(0.0)), Err(Error::Contract { .. })));
        assert!(cc_loss(&t(0.0), &t(1.0), &t(0.0)).unwrap().total.is_finite());
        assert!(matches!(cc_loss(&t(0.0), &t(0.5), &t(-1.0)), Err(Error::Data(_))));
        assert!(matches!(mse_loss(&t(0.0), &Tensor::zeros(vec![2])), Err(Error::Shape { .. })));
    }

    #[test]
    fn mse_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Tensor<f64> = Tensor::from_fn(vec![3, 4], |_| rng.random_range(0.0..10.0));
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        assert!((mse_loss(&a.map(|v| v + 1.0), &a).unwrap() - 1.0).abs() < 1e-14);
        let b: Tensor<f64> = Tensor::from_fn(vec![3, 4], |_| rng.random_range(0.0..10.0));
        let mut s = 0.0f64;
        for i in 0..12 {
            s += (a.data()[i] - b.data()[i]).powi(2);
        }
        assert!((mse_loss(&a, &b).unwrap() - s / 12.0).abs() < 1e-13);
    }

    #[test]
    fn cc_loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let logits = store.add("logit", Tensor::from_fn(vec![3, 2, 2], |_| rng.random_range(-2.0..2.0))).unwrap();
        let rain = store.add("rain", Tensor::from_fn(vec![3, 2, 2], |_| rng.random_range(0.0..5.0))).unwrap();
        let y = Tensor::from_fn(vec![3, 2, 2], |_| if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.1..8.0) });
        let f = |g: &Graph<f64>| {
            let p = g.sigmoid(g.param(logits));
            Ok(cc_loss_graph(g, g.param(rain), p, &y)?.total)
        };
        let opts = GradCheckOptions { tol: 1e-6, ..Default::default() };
        let report = finite_diff_check(&mut store, f, opts).unwrap();
        assert!(report.passed(), "{:?}", report.entries);
    }
}
