//! Dense row-major tensors and the numeric kernels behind every graph op.
//!
//! Kernels here are plain functions over [`Tensor`] values; the autograd
//! layer in [`crate::autograd`] records them and calls the matching
//! adjoint kernels during the backward sweep.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", format!("zero extent in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(&[usize]) -> T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d);
            acc * d + i
        })
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "reshape",
                format!("cannot reshape {:?} into {shape:?}", self.shape),
            ));
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "zip",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.numel()).unwrap()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Element type conversion.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.as_f64()).unwrap()).collect(),
        }
    }
}

/// Zero padding `(before, after)` that keeps a length unchanged under a
/// stride-1 convolution with kernel extent `k`. Even kernels put the extra
/// cell after.
pub fn same_padding(k: usize) -> (usize, usize) {
    ((k - 1) / 2, k / 2)
}

/// How a right-hand operand combines with a left-hand one in binary ops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Broadcast {
    Same,
    /// Right operand is a vector matching the trailing (channel) axis.
    Trailing,
}

pub fn broadcast_kind(a: &[usize], b: &[usize], op: &'static str) -> Result<Broadcast> {
    if a == b {
        Ok(Broadcast::Same)
    } else if b.len() == 1 && a.last() == Some(&b[0]) {
        Ok(Broadcast::Trailing)
    } else {
        Err(Error::shape(op, format!("cannot broadcast {b:?} onto {a:?}")))
    }
}

pub fn binary<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    match broadcast_kind(a.shape(), b.shape(), op)? {
        Broadcast::Same => a.zip_map(b, f),
        Broadcast::Trailing => {
            let c = b.numel();
            let data = a
                .data
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, b.data[i % c]))
                .collect();
            Ok(Tensor { shape: a.shape.clone(), data })
        }
    }
}

/// Sums a full-shape gradient back onto a trailing-axis vector.
pub fn reduce_trailing<T: Scalar>(g: &Tensor<T>, c: usize) -> Tensor<T> {
    let mut out = vec![T::zero(); c];
    for (i, &v) in g.data.iter().enumerate() {
        out[i % c] += v;
    }
    Tensor { shape: vec![c], data: out }
}

/// "Same"-padded stride-1 2-D convolution.
///
/// `input` is `[H, W, Cin]`, `kernel` is `[Cout, Kh, Kw, Cin]`, `bias` is `[Cout]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (h, w, cin, cout, kh, kw) = conv_dims(input, kernel)?;
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias {:?} does not match {cout} output channels", b.shape()),
            ));
        }
    }
    let (pt, _) = same_padding(kh);
    let (pl, _) = same_padding(kw);
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![T::zero(); h * w * cout];
    for y in 0..h {
        for xx in 0..w {
            let o = &mut out[(y * w + xx) * cout..(y * w + xx + 1) * cout];
            if let Some(b) = bias {
                o.copy_from_slice(b.data());
            }
            for ky in 0..kh {
                let sy = y as isize + ky as isize - pt as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let sx = xx as isize + kx as isize - pl as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = &x[(sy as usize * w + sx as usize) * cin..][..cin];
                    for (co, ov) in o.iter_mut().enumerate() {
                        let kr = &k[((co * kh + ky) * kw + kx) * cin..][..cin];
                        let mut acc = T::zero();
                        for (a, b) in src.iter().zip(kr) {
                            acc += *a * *b;
                        }
                        *ov += acc;
                    }
                }
            }
        }
    }
    Tensor::new(vec![h, w, cout], out)
}

fn conv_dims<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (&[h, w, cin], &[cout, kh, kw, kcin]) = (input.shape(), kernel.shape()) else {
        return Err(Error::shape(
            "conv2d",
            format!("expected [H,W,C] input and [Co,Kh,Kw,Ci] kernel, got {:?} and {:?}", input.shape(), kernel.shape()),
        ));
    };
    if cin != kcin {
        return Err(Error::shape(
            "conv2d",
            format!("kernel expects {kcin} input channels, input has {cin}"),
        ));
    }
    Ok((h, w, cin, cout, kh, kw))
}

/// Adjoints of [`conv2d`]: gradients for input, kernel and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (h, w, cin, cout, kh, kw) = conv_dims(input, kernel).expect("checked in forward");
    let (pt, _) = same_padding(kh);
    let (pl, _) = same_padding(kw);
    let x = input.data();
    let k = kernel.data();
    let g = grad_out.data();
    let mut dx = vec![T::zero(); x.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut db = vec![T::zero(); cout];
    for y in 0..h {
        for xx in 0..w {
            let go = &g[(y * w + xx) * cout..][..cout];
            for (d, &v) in db.iter_mut().zip(go) {
                *d += v;
            }
            for ky in 0..kh {
                let sy = y as isize + ky as isize - pt as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let sx = xx as isize + kx as isize - pl as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let base = (sy as usize * w + sx as usize) * cin;
                    for (co, &gv) in go.iter().enumerate() {
                        if gv == T::zero() {
                            continue;
                        }
                        let koff = ((co * kh + ky) * kw + kx) * cin;
                        for ci in 0..cin {
                            dx[base + ci] += gv * k[koff + ci];
                            dk[koff + ci] += gv * x[base + ci];
                        }
                    }
                }
            }
        }
    }
    (
        Tensor { shape: input.shape.clone(), data: dx },
        Tensor { shape: kernel.shape.clone(), data: dk },
        Tensor { shape: vec![cout], data: db },
    )
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
        return Err(Error::shape("matmul", format!("{:?} x {:?} not 2-D", a.shape(), b.shape())));
    };
    if k != k2 {
        return Err(Error::shape("matmul", format!("inner extents {k} and {k2} differ")));
    }
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b.data[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn transpose2d<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let &[m, n] = a.shape() else {
        return Err(Error::shape("transpose", format!("{:?} not 2-D", a.shape())));
    };
    Ok(Tensor::from_fn(vec![n, m], |i| a.data[i[1] * n + i[0]]))
}

/// Softmax along the last axis, stabilised by subtracting the row maximum.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let n = *x.shape.last().expect("rank >= 1");
    let mut out = x.data.clone();
    for row in out.chunks_mut(n) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Tensor { shape: x.shape.clone(), data: out }
}

pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let n = *y.shape.last().unwrap();
    let mut out = vec![T::zero(); y.numel()];
    for ((o, yr), gr) in out.chunks_mut(n).zip(y.data.chunks(n)).zip(g.data.chunks(n)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((ov, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
            *ov = yv * (gv - dot);
        }
    }
    Tensor { shape: y.shape.clone(), data: out }
}

fn spatial_dims(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize, usize)> {
    if shape.len() < 3 {
        return Err(Error::shape(op, format!("need [..,H,W,C], got {shape:?}")));
    }
    let r = shape.len();
    let lead: usize = shape[..r - 3].iter().product();
    Ok((lead, shape[r - 3], shape[r - 2], shape[r - 1]))
}

/// `M x M x 1` average pooling over the two spatial axes of `[.., H, W, C]`.
pub fn avg_pool<T: Scalar>(x: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    let (lead, h, w, c) = spatial_dims(x.shape(), "avg_pool")?;
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(Error::Config(format!("pool size {m} does not divide spatial extents {h}x{w}")));
    }
    let (ho, wo) = (h / m, w / m);
    let inv = T::one() / T::from_usize(m * m).unwrap();
    let mut out = vec![T::zero(); lead * ho * wo * c];
    for l in 0..lead {
        for y in 0..h {
            for xx in 0..w {
                let src = &x.data[((l * h + y) * w + xx) * c..][..c];
                let dst = &mut out[((l * ho + y / m) * wo + xx / m) * c..][..c];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }
    for v in &mut out {
        *v *= inv;
    }
    let mut shape = x.shape.clone();
    let r = shape.len();
    shape[r - 3] = ho;
    shape[r - 2] = wo;
    Tensor::new(shape, out)
}

/// Nearest-neighbour re-expansion by `m` over the spatial axes of `[.., H, W, C]`.
pub fn upsample_nearest<T: Scalar>(x: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    let (lead, h, w, c) = spatial_dims(x.shape(), "upsample_nearest")?;
    let (ho, wo) = (h * m, w * m);
    let mut out = Vec::with_capacity(lead * ho * wo * c);
    for l in 0..lead {
        for y in 0..ho {
            for xx in 0..wo {
                out.extend_from_slice(&x.data[((l * h + y / m) * w + xx / m) * c..][..c]);
            }
        }
    }
    let mut shape = x.shape.clone();
    let r = shape.len();
    shape[r - 3] = ho;
    shape[r - 2] = wo;
    Tensor::new(shape, out)
}

pub fn avg_pool_backward<T: Scalar>(g: &Tensor<T>, m: usize) -> Tensor<T> {
    let inv = T::one() / T::from_usize(m * m).unwrap();
    upsample_nearest(g, m).expect("pooled shape").map(|v| v * inv)
}

/// Align-corners interpolation source for output index `i` of `dst` cells
/// drawn from `src` cells: `(lower index, upper index, upper weight)`.
pub fn bilinear_source(src: usize, dst: usize, i: usize) -> (usize, usize, f64) {
    if src == 1 || dst == 1 {
        return (0, 0, 0.0);
    }
    let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
    let lo = (pos.floor() as usize).min(src - 1);
    let hi = (lo + 1).min(src - 1);
    (lo, hi, pos - lo as f64)
}

/// Align-corners bilinear resampling of `[H, W, C]` onto `[H', W', C]`.
pub fn bilinear_upsample<T: Scalar>(x: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    let &[h, w, c] = x.shape() else {
        return Err(Error::shape("bilinear_upsample", format!("need [H,W,C], got {:?}", x.shape())));
    };
    let (th, tw) = target;
    if th < h || tw < w {
        return Err(Error::shape(
            "bilinear_upsample",
            format!("target {th}x{tw} smaller than source {h}x{w}"),
        ));
    }
    let rows: Vec<_> = (0..th).map(|i| bilinear_source(h, th, i)).collect();
    let cols: Vec<_> = (0..tw).map(|j| bilinear_source(w, tw, j)).collect();
    let mut out = Vec::with_capacity(th * tw * c);
    for &(y0, y1, fy) in &rows {
        let fy = T::lit(fy);
        for &(x0, x1, fx) in &cols {
            let fx = T::lit(fx);
            for ch in 0..c {
                let at = |yy: usize, xx: usize| x.data[(yy * w + xx) * c + ch];
                let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
                let bot = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
                out.push(top + (bot - top) * fy);
            }
        }
    }
    Tensor::new(vec![th, tw, c], out)
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat", "no operands"))?;
    if axis >= first.rank() {
        return Err(Error::shape("concat", format!("axis {axis} out of range for {:?}", first.shape())));
    }
    for p in parts {
        let ok = p.rank() == first.rank()
            && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::shape(
                "concat",
                format!("{:?} incompatible with {:?} on axis {axis}", p.shape(), first.shape()),
            ));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inners: Vec<usize> = parts.iter().map(|p| p.shape()[axis..].iter().product()).collect();
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.numel()).sum());
    for o in 0..outer {
        for (p, &inner) in parts.iter().zip(&inners) {
            data.extend_from_slice(&p.data[o * inner..(o + 1) * inner]);
        }
    }
    let mut shape = first.shape.clone();
    shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    Tensor::new(shape, data)
}

/// Splits a gradient of a concatenation back into per-operand pieces.
pub fn split<T: Scalar>(g: &Tensor<T>, axis: usize, sizes: &[usize]) -> Vec<Tensor<T>> {
    let outer: usize = g.shape()[..axis].iter().product();
    let tail: usize = g.shape()[axis + 1..].iter().product();
    let total = g.shape()[axis] * tail;
    let mut out: Vec<Vec<T>> = sizes.iter().map(|s| Vec::with_capacity(outer * s * tail)).collect();
    for o in 0..outer {
        let mut off = o * total;
        for (buf, &s) in out.iter_mut().zip(sizes) {
            buf.extend_from_slice(&g.data[off..off + s * tail]);
            off += s * tail;
        }
    }
    out.into_iter()
        .zip(sizes)
        .map(|(d, &s)| {
            let mut shape = g.shape.clone();
            shape[axis] = s;
            Tensor { shape, data: d }
        })
        .collect()
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::shape("stack", "no operands"))?;
    if let Some(p) = parts.iter().find(|p| p.shape() != first.shape()) {
        return Err(Error::shape("stack", format!("{:?} vs {:?}", p.shape(), first.shape())));
    }
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(first.shape());
    let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
    Tensor::new(shape, data)
}

/// Slice `i` of the leading axis.
pub fn index0<T: Scalar>(x: &Tensor<T>, i: usize) -> Result<Tensor<T>> {
    if x.rank() < 2 || i >= x.shape[0] {
        return Err(Error::shape("index", format!("index {i} into {:?}", x.shape())));
    }
    let inner = x.numel() / x.shape[0];
    Tensor::new(x.shape[1..].to_vec(), x.data[i * inner..(i + 1) * inner].to_vec())
}

/// Repeats every leading-axis element `factor` times in place:
/// `[a, b] -> [a, a, .., b, b, ..]`.
pub fn repeat_interleave<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::shape("repeat", "factor must be positive"));
    }
    let inner = x.numel() / x.shape[0];
    let mut data = Vec::with_capacity(x.numel() * factor);
    for chunk in x.data.chunks(inner) {
        for _ in 0..factor {
            data.extend_from_slice(chunk);
        }
    }
    let mut shape = x.shape.clone();
    shape[0] *= factor;
    Tensor::new(shape, data)
}

pub fn repeat_interleave_backward<T: Scalar>(g: &Tensor<T>, factor: usize) -> Tensor<T> {
    let inner = g.numel() / g.shape[0];
    let mut data = vec![T::zero(); g.numel() / factor];
    for (i, chunk) in g.data.chunks(inner).enumerate() {
        let dst = &mut data[(i / factor) * inner..][..inner];
        for (d, &v) in dst.iter_mut().zip(chunk) {
            *d += v;
        }
    }
    let mut shape = g.shape.clone();
    shape[0] /= factor;
    Tensor { shape, data }
}

/// Central `size x size` window of the two trailing axes.
pub fn crop_center<T: Scalar>(x: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let r = x.rank();
    if r < 2 {
        return Err(Error::shape("crop_center", format!("need rank >= 2, got {:?}", x.shape())));
    }
    let (h, w) = (x.shape[r - 2], x.shape[r - 1]);
    if size == 0 || size > h || size > w || (h - size) % 2 != 0 || (w - size) % 2 != 0 {
        return Err(Error::shape(
            "crop_center",
            format!("cannot center a {size}x{size} window in {h}x{w}"),
        ));
    }
    let (oy, ox) = ((h - size) / 2, (w - size) / 2);
    let lead: usize = x.shape[..r - 2].iter().product();
    let mut data = Vec::with_capacity(lead * size * size);
    for l in 0..lead {
        for y in oy..oy + size {
            data.extend_from_slice(&x.data[(l * h + y) * w + ox..][..size]);
        }
    }
    let mut shape = x.shape.clone();
    shape[r - 2] = size;
    shape[r - 1] = size;
    Tensor::new(shape, data)
}

/// Groups `block` consecutive steps of `[T, H, W, C]` along channels,
/// giving `[T / block, H, W, block * C]`.
pub fn block_concat<T: Scalar>(x: &Tensor<T>, block: usize) -> Result<Tensor<T>> {
    let &[t, h, w, c] = x.shape() else {
        return Err(Error::shape("block_concat", format!("need [T,H,W,C], got {:?}", x.shape())));
    };
    if block == 0 || t % block != 0 {
        return Err(Error::shape("block_concat", format!("{t} steps not divisible by {block}")));
    }
    let steps: Vec<Tensor<T>> = (0..t).map(|i| index0(x, i)).collect::<Result<_>>()?;
    let merged: Vec<Tensor<T>> = steps
        .chunks(block)
        .map(|blk| concat(&blk.iter().collect::<Vec<_>>(), 2))
        .collect::<Result<_>>()?;
    let out = stack(&merged.iter().collect::<Vec<_>>())?;
    debug_assert_eq!(out.shape(), [t / block, h, w, block * c]);
    Ok(out)
}

/// Inverse of [`block_concat`].
pub fn block_split<T: Scalar>(x: &Tensor<T>, block: usize) -> Result<Tensor<T>> {
    let &[t, _h, _w, bc] = x.shape() else {
        return Err(Error::shape("block_split", format!("need [T,H,W,C], got {:?}", x.shape())));
    };
    if block == 0 || bc % block != 0 {
        return Err(Error::shape("block_split", format!("{bc} channels not divisible by {block}")));
    }
    let mut steps = Vec::with_capacity(t * block);
    for i in 0..t {
        let s = index0(x, i)?;
        steps.extend(split(&s, 2, &vec![bc / block; block]));
    }
    stack(&steps.iter().collect::<Vec<_>>())
}
