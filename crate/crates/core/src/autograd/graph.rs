//! Tape-based reverse-mode differentiation.
//!
//! Every op evaluates eagerly and appends a node to the tape. Nodes are
//! appended after their inputs, so reverse tape order is a reverse
//! topological order and [`Graph::backward`] visits each node once.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};
use crate::tensor::{self, Broadcast, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    Conv2d { x: usize, k: usize, b: Option<usize> },
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize, Broadcast),
    Sub(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    Affine { a: usize, scale: T },
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    Ln(usize),
    Square(usize),
    Clamp { a: usize, lo: T, hi: T },
    Softmax(usize),
    AvgPool { a: usize, m: usize },
    Reshape(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Stack(Vec<usize>),
    Index { a: usize, i: usize },
    Repeat { a: usize, factor: usize },
    Crop { a: usize, size: usize },
    Sum(usize),
    Mean(usize),
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
}

/// Records a forward computation over the parameters of one [`ParamStore`].
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: RefCell<Vec<Node<T>>>,
    bound: RefCell<HashMap<ParamId, Var>>,
    #[cfg(test)]
    pub(crate) corrupt_conv_bias: std::cell::Cell<bool>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(HashMap::new()),
            #[cfg(test)]
            corrupt_conv_bias: std::cell::Cell::new(false),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// A constant leaf; receives no gradient.
    pub fn input(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    /// Binds a parameter; repeated calls return the same node.
    pub fn param(&self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.borrow().get(&id) {
            return v;
        }
        let v = self.push(self.params.value(id).clone(), Op::Param(id));
        self.bound.borrow_mut().insert(id, v);
        v
    }

    pub fn conv2d(&self, x: Var, k: Var, b: Option<Var>) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            tensor::conv2d(&nodes[x.0].value, &nodes[k.0].value, b.map(|b| &*nodes[b.0].value))?
        };
        Ok(self.push(out, Op::Conv2d { x: x.0, k: k.0, b: b.map(|b| b.0) }))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(&self.value(a), &self.value(b))?;
        Ok(self.push(out, Op::MatMul(a.0, b.0)))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let out = tensor::transpose2d(&self.value(a))?;
        Ok(self.push(out, Op::Transpose(a.0)))
    }

    fn binary(&self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, Broadcast)> {
        let (va, vb) = (self.value(a), self.value(b));
        let kind = tensor::broadcast_kind(va.shape(), vb.shape(), name)?;
        Ok((tensor::binary(&va, &vb, name, f)?, kind))
    }

    /// `a + b`; `b` may be a vector over `a`'s trailing axis.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (out, k) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a.0, b.0, k)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (out, k) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a.0, b.0, k)))
    }

    /// Hadamard product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (out, k) = self.binary(a, b, "hadamard", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a.0, b.0, k)))
    }

    /// `scale * a + shift`.
    pub fn affine(&self, a: Var, scale: T, shift: T) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push(out, Op::Affine { a: a.0, scale })
    }

    pub fn scale(&self, a: Var, s: T) -> Var {
        self.affine(a, s, T::zero())
    }

    /// `1 - a`.
    pub fn one_minus(&self, a: Var) -> Var {
        self.affine(a, -T::one(), T::one())
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = self.value(a).map(scalar::sigmoid);
        self.push(out, Op::Sigmoid(a.0))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out = self.value(a).map(T::tanh);
        self.push(out, Op::Tanh(a.0))
    }

    pub fn relu(&self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.push(out, Op::Relu(a.0))
    }

    pub fn softplus(&self, a: Var) -> Var {
        let out = self.value(a).map(scalar::softplus);
        self.push(out, Op::Softplus(a.0))
    }

    pub fn ln(&self, a: Var) -> Var {
        let out = self.value(a).map(T::ln);
        self.push(out, Op::Ln(a.0))
    }

    pub fn square(&self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a.0))
    }

    /// Clamp into `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&self, a: Var, lo: T, hi: T) -> Var {
        let out = self.value(a).map(|x| x.max(lo).min(hi));
        self.push(out, Op::Clamp { a: a.0, lo, hi })
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, a: Var) -> Var {
        let out = tensor::softmax(&self.value(a));
        self.push(out, Op::Softmax(a.0))
    }

    /// `M x M x 1` average pooling over the spatial axes of `[.., H, W, C]`.
    pub fn avg_pool(&self, a: Var, m: usize) -> Result<Var> {
        let out = tensor::avg_pool(&self.value(a), m)?;
        Ok(self.push(out, Op::AvgPool { a: a.0, m }))
    }

    pub fn reshape(&self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a.0)))
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let refs: Vec<&Tensor<T>> = vals.iter().map(|v| &**v).collect();
        let out = tensor::concat(&refs, axis)?;
        Ok(self.push(out, Op::Concat { parts: parts.iter().map(|p| p.0).collect(), axis }))
    }

    pub fn stack(&self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let refs: Vec<&Tensor<T>> = vals.iter().map(|v| &**v).collect();
        let out = tensor::stack(&refs)?;
        Ok(self.push(out, Op::Stack(parts.iter().map(|p| p.0).collect())))
    }

    /// Slice `i` of the leading axis.
    pub fn index(&self, a: Var, i: usize) -> Result<Var> {
        let out = tensor::index0(&self.value(a), i)?;
        Ok(self.push(out, Op::Index { a: a.0, i }))
    }

    /// Splits the leading axis into a sequence of slices.
    pub fn unstack(&self, a: Var) -> Result<Vec<Var>> {
        let n = self.shape(a)[0];
        (0..n).map(|i| self.index(a, i)).collect()
    }

    pub fn repeat_interleave(&self, a: Var, factor: usize) -> Result<Var> {
        let out = tensor::repeat_interleave(&self.value(a), factor)?;
        Ok(self.push(out, Op::Repeat { a: a.0, factor }))
    }

    pub fn crop_center(&self, a: Var, size: usize) -> Result<Var> {
        let out = tensor::crop_center(&self.value(a), size)?;
        Ok(self.push(out, Op::Crop { a: a.0, size }))
    }

    pub fn sum(&self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a.0))
    }

    pub fn mean(&self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).mean());
        self.push(out, Op::Mean(a.0))
    }

    /// Back-propagates from a one-element `loss` and returns the gradient of
    /// every parameter in the store; parameters the loss does not reach get
    /// zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", nodes[loss.0].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape().to_vec(), T::one()));
        let mut out = Gradients::zeros_like(self.params);

        fn acc<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
            match slot {
                Some(s) => s.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let val = |j: usize| &*nodes[j].value;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.get_mut(*id).add_assign(&g),
                Op::Conv2d { x, k, b } => {
                    let (dx, dk, db) = tensor::conv2d_backward(val(*x), val(*k), &g);
                    acc(&mut grads[*x], dx);
                    acc(&mut grads[*k], dk);
                    if let Some(b) = b {
                        #[cfg(test)]
                        let db = if self.corrupt_conv_bias.get() { db.map(|v| v * T::lit(1.5)) } else { db };
                        acc(&mut grads[*b], db);
                    }
                }
                Op::MatMul(a, b) => {
                    let da = tensor::matmul(&g, &tensor::transpose2d(val(*b))?)?;
                    let db = tensor::matmul(&tensor::transpose2d(val(*a))?, &g)?;
                    acc(&mut grads[*a], da);
                    acc(&mut grads[*b], db);
                }
                Op::Transpose(a) => acc(&mut grads[*a], tensor::transpose2d(&g)?),
                Op::Add(a, b, k) => {
                    let db = reduce(&g, *k, val(*b).numel());
                    acc(&mut grads[*a], g);
                    acc(&mut grads[*b], db);
                }
                Op::Sub(a, b, k) => {
                    let db = reduce(&g, *k, val(*b).numel()).map(|v| -v);
                    acc(&mut grads[*a], g);
                    acc(&mut grads[*b], db);
                }
                Op::Mul(a, b, k) => {
                    let da = tensor::binary(&g, val(*b), "hadamard", |x, y| x * y)?;
                    let gb = g.zip_map(val(*a), |x, y| x * y)?;
                    acc(&mut grads[*a], da);
                    acc(&mut grads[*b], reduce(&gb, *k, val(*b).numel()));
                }
                Op::Affine { a, scale } => acc(&mut grads[*a], g.map(|v| v * *scale)),
                Op::Sigmoid(a) => {
                    let d = g.zip_map(&node.value, |gv, y| gv * y * (T::one() - y))?;
                    acc(&mut grads[*a], d);
                }
                Op::Tanh(a) => {
                    let d = g.zip_map(&node.value, |gv, y| gv * (T::one() - y * y))?;
                    acc(&mut grads[*a], d);
                }
                Op::Relu(a) => {
                    let d = g.zip_map(val(*a), |gv, x| if x > T::zero() { gv } else { T::zero() })?;
                    acc(&mut grads[*a], d);
                }
                Op::Softplus(a) => {
                    let d = g.zip_map(val(*a), |gv, x| gv * scalar::sigmoid(x))?;
                    acc(&mut grads[*a], d);
                }
                Op::Ln(a) => acc(&mut grads[*a], g.zip_map(val(*a), |gv, x| gv / x)?),
                Op::Square(a) => {
                    let two = T::lit(2.0);
                    acc(&mut grads[*a], g.zip_map(val(*a), |gv, x| two * x * gv)?);
                }
                Op::Clamp { a, lo, hi } => {
                    let d = g.zip_map(val(*a), |gv, x| if x > *lo && x < *hi { gv } else { T::zero() })?;
                    acc(&mut grads[*a], d);
                }
                Op::Softmax(a) => acc(&mut grads[*a], tensor::softmax_backward(&node.value, &g)),
                Op::AvgPool { a, m } => acc(&mut grads[*a], tensor::avg_pool_backward(&g, *m)),
                Op::Reshape(a) => acc(&mut grads[*a], g.reshape(val(*a).shape().to_vec())?),
                Op::Concat { parts, axis } => {
                    let sizes: Vec<usize> = parts.iter().map(|&p| val(p).shape()[*axis]).collect();
                    for (&p, piece) in parts.iter().zip(tensor::split(&g, *axis, &sizes)) {
                        acc(&mut grads[p], piece);
                    }
                }
                Op::Stack(parts) => {
                    for (j, &p) in parts.iter().enumerate() {
                        acc(&mut grads[p], slice0(&g, j, val(p).shape()));
                    }
                }
                Op::Index { a, i } => {
                    let src = val(*a);
                    let inner = g.numel();
                    let mut d = Tensor::zeros(src.shape().to_vec());
                    d.data_mut()[i * inner..(i + 1) * inner].copy_from_slice(g.data());
                    acc(&mut grads[*a], d);
                }
                Op::Repeat { a, factor } => acc(&mut grads[*a], tensor::repeat_interleave_backward(&g, *factor)),
                Op::Crop { a, size } => acc(&mut grads[*a], uncrop(&g, val(*a).shape(), *size)),
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    acc(&mut grads[*a], Tensor::full(val(*a).shape().to_vec(), gv));
                }
                Op::Mean(a) => {
                    let src = val(*a);
                    let gv = g.data()[0] / T::from_usize(src.numel()).unwrap();
                    acc(&mut grads[*a], Tensor::full(src.shape().to_vec(), gv));
                }
            }
        }
        Ok(out)
    }
}

fn reduce<T: Scalar>(g: &Tensor<T>, kind: Broadcast, n: usize) -> Tensor<T> {
    match kind {
        Broadcast::Same => g.clone(),
        Broadcast::Trailing => tensor::reduce_trailing(g, n),
    }
}

fn slice0<T: Scalar>(g: &Tensor<T>, j: usize, shape: &[usize]) -> Tensor<T> {
    let inner: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), g.data()[j * inner..(j + 1) * inner].to_vec()).expect("stack slice")
}

fn uncrop<T: Scalar>(g: &Tensor<T>, shape: &[usize], size: usize) -> Tensor<T> {
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let (oy, ox) = ((h - size) / 2, (w - size) / 2);
    let lead: usize = shape[..r - 2].iter().product();
    let mut d = Tensor::zeros(shape.to_vec());
    let dd = d.data_mut();
    for l in 0..lead {
        for y in 0..size {
            let src = &g.data()[(l * size + y) * size..][..size];
            dd[(l * h + oy + y) * w + ox..][..size].copy_from_slice(src);
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_gradient_is_input() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::new(vec![2, 2], vec![0.5, -1.0, 2.0, 3.0]).unwrap()).unwrap();
        let unused = store.add("unused", Tensor::full(vec![3], 1.0)).unwrap();
        let g = Graph::new(&store);
        let x = g.input(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let loss = g.sum(g.mul(g.param(w), x).unwrap());
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).data(), [1.0, 2.0, 3.0, 4.0]);
        assert!(grads.get(unused).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reused_parameter_accumulates() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        let g = Graph::new(&store);
        let p = g.param(w);
        let loss = g.sum(g.add(p, g.param(w)).unwrap());
        assert_eq!(g.backward(loss).unwrap().get(w).data(), [2.0, 2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::zeros(vec![2])).unwrap();
        let g = Graph::new(&store);
        let v = g.param(w);
        assert!(matches!(g.backward(v), Err(Error::Contract { .. })));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::new(vec![3], vec![0.1, -0.7, 1.3]).unwrap()).unwrap();
        let g = Graph::new(&store);
        let s = g.softmax(g.tanh(g.param(w)));
        let loss = g.sum(g.square(s));
        assert_eq!(g.backward(loss).unwrap(), g.backward(loss).unwrap());
    }

    #[test]
    fn elementwise_values() {
        let store = ParamStore::<f64>::new();
        let g = Graph::new(&store);
        let z = g.input(Tensor::zeros(vec![1]));
        assert_eq!(g.value(g.sigmoid(z)).data(), [0.5]);
        assert_eq!(g.value(g.tanh(z)).data(), [0.0]);
        let x = g.input(Tensor::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap());
        let ones = g.input(Tensor::full(vec![3], 1.0));
        assert_eq!(*g.value(g.mul(x, ones).unwrap()), *g.value(x));
        let bad = g.input(Tensor::zeros(vec![2]));
        assert!(g.add(x, bad).is_err());
    }
}
