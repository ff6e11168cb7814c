//! Central finite-difference verification of analytic gradients.

use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Lower bound on the relative-error denominator, so components whose
    /// true gradient is ~0 are judged on absolute error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-5, tol: 1e-5, floor: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub options: GradCheckOptions,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.entries.iter().filter(|e| !e.passed).map(|e| e.name.as_str()).collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

fn eval<T: Scalar>(store: &ParamStore<T>, f: &impl Fn(&Graph<T>) -> Result<Var>) -> Result<f64> {
    let g = Graph::new(store);
    let loss = f(&g)?;
    g.value(loss)
        .item()
        .map(Scalar::as_f64)
        .ok_or_else(|| Error::Contract { op: "finite_diff_check", detail: "loss must be scalar".into() })
}

/// Compares the analytic gradient of `f` against central differences for
/// every element of every parameter in `store`. `f` must be deterministic.
pub fn finite_diff_check<T: Scalar>(
    store: &mut ParamStore<T>,
    f: impl Fn(&Graph<T>) -> Result<Var>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let grads = {
        let g = Graph::new(&*store);
        let loss = f(&g)?;
        g.backward(loss)?
    };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut entries = Vec::with_capacity(ids.len());
    for id in ids {
        let name = store.get(id).name.clone();
        let n = store.value(id).numel();
        let mut worst = GradCheckEntry {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for k in 0..n {
            let orig = store.value(id).data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + T::lit(opts.eps);
            let up = eval(store, &f);
            store.get_mut(id).value.data_mut()[k] = orig - T::lit(opts.eps);
            let down = eval(store, &f);
            store.get_mut(id).value.data_mut()[k] = orig;
            let (up, down) = (up?, down?);
            let numeric = (up - down) / (2.0 * opts.eps);
            let analytic = grads.get(id).data()[k].as_f64();
            if !numeric.is_finite() || !analytic.is_finite() {
                return Err(Error::NonFinite(format!("gradient check of parameter {name} element {k}")));
            }
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(opts.floor);
            if rel > worst.max_rel_error {
                worst.max_rel_error = rel;
                worst.worst_index = k;
                worst.analytic = analytic;
                worst.numeric = numeric;
            }
        }
        worst.passed = worst.max_rel_error <= opts.tol;
        entries.push(worst);
    }
    Ok(GradCheckReport { entries, options: opts })
}
