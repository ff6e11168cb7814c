//! Weight initialisers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Uniform on `±sqrt(3 / fan_in)` (unit-variance pre-activations for
/// unit-variance inputs), where `fan_in` is the product of all but the
/// leading extent for kernels and the leading extent for matrices.
pub fn fan_in_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let limit = (3.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.random_range(-limit..limit)))
}

/// Kernel `[Cout, Kh, Kw, Cin]` whose `Cout x (Kh*Kw*Cin)` matrix has
/// orthonormal rows (or columns, when `Cout` exceeds the fan-in).
pub fn orthogonal_kernel<T: Scalar>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    let rows = shape[0];
    let cols: usize = shape[1..].iter().product();
    let transpose = rows > cols;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    Tensor::from_fn(shape.to_vec(), |idx| {
        let r = idx[0];
        let c = idx[1..].iter().zip(&shape[1..]).fold(0, |acc, (&i, &d)| acc * d + i);
        T::lit(if transpose { basis[c][r] } else { basis[r][c] })
    })
}
