//! Convolutional GRU cell, uni/bidirectional layers, and the dual-state
//! variant used by the decoder.

use rand::Rng;

use super::dropout::{Dropout, Site};
use super::init::{fan_in_uniform, orthogonal_kernel};
use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One set of tied ConvGRU weights.
///
/// Input kernels `w_*` are `[filters, kh, kw, in_channels]`, recurrent
/// kernels `u_*` are `[filters, kh, kw, filters]`, biases are `[filters]`.
#[derive(Clone, Debug)]
pub struct ConvGruCell {
    pub in_channels: usize,
    pub filters: usize,
    pub kernel: (usize, usize),
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_a: ParamId,
    pub u_a: ParamId,
    pub b_a: ParamId,
}

/// Gate activations of one cell step.
#[derive(Clone, Copy, Debug)]
pub struct GateVars {
    pub update: Var,
    pub reset: Var,
    pub candidate: Var,
    pub state: Var,
}

/// Masks applied inside one step; `None` means no dropout at that site.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepMasks {
    pub input: Option<Var>,
    pub recurrent: Option<Var>,
}

impl ConvGruCell {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_channels: usize,
        filters: usize,
        kernel: (usize, usize),
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if in_channels == 0 || filters == 0 || kernel.0 == 0 || kernel.1 == 0 {
            return Err(Error::Config(format!("{prefix}: channels, filters and kernel must be positive")));
        }
        let (kh, kw) = kernel;
        let w_shape = [filters, kh, kw, in_channels];
        let u_shape = [filters, kh, kw, filters];
        let fan_in = kh * kw * in_channels;
        let mut add = |name: &str, t: Tensor<T>| store.add(format!("{prefix}.{name}"), t);
        Ok(ConvGruCell {
            in_channels,
            filters,
            kernel,
            w_z: add("w_z", fan_in_uniform(&w_shape, fan_in, rng))?,
            u_z: add("u_z", orthogonal_kernel(&u_shape, rng))?,
            b_z: add("b_z", Tensor::zeros(vec![filters]))?,
            w_r: add("w_r", fan_in_uniform(&w_shape, fan_in, rng))?,
            u_r: add("u_r", orthogonal_kernel(&u_shape, rng))?,
            b_r: add("b_r", Tensor::zeros(vec![filters]))?,
            w_a: add("w_a", fan_in_uniform(&w_shape, fan_in, rng))?,
            u_a: add("u_a", orthogonal_kernel(&u_shape, rng))?,
            b_a: add("b_a", Tensor::zeros(vec![filters]))?,
        })
    }

    /// Scalar parameter count of a cell: `3 (F K K C + F K K F + F)`.
    pub fn param_count(in_channels: usize, filters: usize, kernel: (usize, usize)) -> usize {
        let kk = kernel.0 * kernel.1;
        3 * (filters * kk * in_channels + filters * kk * filters + filters)
    }

    /// Zero initial state `[h, w, filters]`.
    pub fn zero_state<T: Scalar>(&self, g: &Graph<T>, h: usize, w: usize) -> Var {
        g.input(Tensor::zeros(vec![h, w, self.filters]))
    }

    fn check<T: Scalar>(&self, g: &Graph<T>, prev: Var, input: Var) -> Result<()> {
        let (ps, is) = (g.shape(prev), g.shape(input));
        if ps.len() != 3 || is.len() != 3 || ps[..2] != is[..2] || ps[2] != self.filters || is[2] != self.in_channels {
            return Err(Error::shape(
                "convgru_cell",
                format!(
                    "state {ps:?} / input {is:?} incompatible with {} filters over {} input channels",
                    self.filters, self.in_channels
                ),
            ));
        }
        Ok(())
    }

    /// Gate computation:
    ///
    /// ```text
    /// z = sigmoid(B * W_z + A * U_z + b_z)
    /// r = sigmoid(B * W_r + A * U_r + b_r)
    /// a = tanh(B * W_a + (r . A) * U_a + b_a)
    /// A' = z . A + (1 - z) . a
    /// ```
    pub fn gates<T: Scalar>(&self, g: &Graph<T>, prev: Var, input: Var, masks: StepMasks) -> Result<GateVars> {
        self.check(g, prev, input)?;
        let x = match masks.input {
            Some(m) => g.mul(input, m)?,
            None => input,
        };
        let h = match masks.recurrent {
            Some(m) => g.mul(prev, m)?,
            None => prev,
        };
        let p = |id| g.param(id);
        let pre_z = g.add(g.conv2d(x, p(self.w_z), Some(p(self.b_z)))?, g.conv2d(h, p(self.u_z), None)?)?;
        let pre_r = g.add(g.conv2d(x, p(self.w_r), Some(p(self.b_r)))?, g.conv2d(h, p(self.u_r), None)?)?;
        let update = g.sigmoid(pre_z);
        let reset = g.sigmoid(pre_r);
        let gated = g.mul(reset, h)?;
        let pre_a = g.add(g.conv2d(x, p(self.w_a), Some(p(self.b_a)))?, g.conv2d(gated, p(self.u_a), None)?)?;
        let candidate = g.tanh(pre_a);
        let state = combine(g, update, prev, candidate)?;
        Ok(GateVars { update, reset, candidate, state })
    }

    pub fn step<T: Scalar>(&self, g: &Graph<T>, prev: Var, input: Var, masks: StepMasks) -> Result<Var> {
        Ok(self.gates(g, prev, input, masks)?.state)
    }
}

/// `z . prev + (1 - z) . candidate`.
pub fn combine<T: Scalar>(g: &Graph<T>, z: Var, prev: Var, candidate: Var) -> Result<Var> {
    let keep = g.mul(z, prev)?;
    let fresh = g.mul(g.one_minus(z), candidate)?;
    g.add(keep, fresh)
}

fn check_sequence<T: Scalar>(g: &Graph<T>, inputs: &[Var], op: &'static str) -> Result<(usize, usize)> {
    let first = inputs.first().ok_or_else(|| Error::contract(op, "empty input sequence"))?;
    let shape = g.shape(*first);
    if shape.len() != 3 {
        return Err(Error::shape(op, format!("sequence elements must be [H,W,C], got {shape:?}")));
    }
    if let Some(bad) = inputs.iter().find(|&&v| g.shape(v) != shape) {
        return Err(Error::shape(op, format!("non-uniform sequence: {:?} vs {shape:?}", g.shape(*bad))));
    }
    Ok((shape[0], shape[1]))
}

fn recurrent_mask<T: Scalar>(g: &Graph<T>, dropout: &Dropout, shape: [usize; 3]) -> Option<Var> {
    dropout.mask::<T>(Site::Recurrent, &shape).map(|m| g.input(m))
}

fn input_mask<T: Scalar>(g: &Graph<T>, dropout: &Dropout, v: Var) -> Option<Var> {
    dropout.mask::<T>(Site::Input, &g.shape(v)).map(|m| g.input(m))
}

/// Runs `cell` over `inputs` from a zero state, left to right, or right to
/// left when `reverse` is set (outputs stay aligned with their inputs).
pub fn run_cell<T: Scalar>(
    g: &Graph<T>,
    cell: &ConvGruCell,
    inputs: &[Var],
    reverse: bool,
    dropout: &Dropout,
) -> Result<Vec<Var>> {
    let (h, w) = check_sequence(g, inputs, "convgru_layer")?;
    let rec = recurrent_mask(g, dropout, [h, w, cell.filters]);
    let mut state = cell.zero_state(g, h, w);
    let mut out = vec![state; inputs.len()];
    let order: Vec<usize> = if reverse { (0..inputs.len()).rev().collect() } else { (0..inputs.len()).collect() };
    for i in order {
        let masks = StepMasks { input: input_mask(g, dropout, inputs[i]), recurrent: rec };
        state = cell.step(g, state, inputs[i], masks)?;
        out[i] = state;
    }
    Ok(out)
}

/// A ConvGRU layer; bidirectional layers own a second cell for the
/// reversed pass and concatenate both directions along channels.
#[derive(Clone, Debug)]
pub struct ConvGruLayer {
    pub forward: ConvGruCell,
    pub backward: Option<ConvGruCell>,
}

impl ConvGruLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_channels: usize,
        filters: usize,
        kernel: (usize, usize),
        bidirectional: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let forward = ConvGruCell::new(store, &format!("{prefix}.fw"), in_channels, filters, kernel, rng)?;
        let backward = if bidirectional {
            Some(ConvGruCell::new(store, &format!("{prefix}.bw"), in_channels, filters, kernel, rng)?)
        } else {
            None
        };
        Ok(ConvGruLayer { forward, backward })
    }

    pub fn out_channels(&self) -> usize {
        self.forward.filters * if self.backward.is_some() { 2 } else { 1 }
    }

    /// Per-direction outputs before channel concatenation.
    pub fn directions<T: Scalar>(
        &self,
        g: &Graph<T>,
        inputs: &[Var],
        dropout: &Dropout,
    ) -> Result<(Vec<Var>, Option<Vec<Var>>)> {
        let fw = run_cell(g, &self.forward, inputs, false, dropout)?;
        let bw = match &self.backward {
            Some(cell) => Some(run_cell(g, cell, inputs, true, dropout)?),
            None => None,
        };
        Ok((fw, bw))
    }

    pub fn run<T: Scalar>(&self, g: &Graph<T>, inputs: &[Var], dropout: &Dropout) -> Result<Vec<Var>> {
        let (fw, bw) = self.directions(g, inputs, dropout)?;
        concat_directions(g, fw, bw)
    }
}

pub(crate) fn concat_directions<T: Scalar>(g: &Graph<T>, fw: Vec<Var>, bw: Option<Vec<Var>>) -> Result<Vec<Var>> {
    match bw {
        None => Ok(fw),
        Some(bw) => fw.iter().zip(&bw).map(|(&a, &b)| g.concat(&[a, b], 2)).collect(),
    }
}

/// Dual-state ConvGRU: two input streams, one gate set per stream against
/// a shared previous state, next state the mean of both candidates.
#[derive(Clone, Debug)]
pub struct DsConvGru {
    pub first: ConvGruCell,
    pub second: ConvGruCell,
}

impl DsConvGru {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_channels: (usize, usize),
        filters: usize,
        kernel: (usize, usize),
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(DsConvGru {
            first: ConvGruCell::new(store, &format!("{prefix}.in1"), in_channels.0, filters, kernel, rng)?,
            second: ConvGruCell::new(store, &format!("{prefix}.in2"), in_channels.1, filters, kernel, rng)?,
        })
    }

    pub fn run<T: Scalar>(&self, g: &Graph<T>, first: &[Var], second: &[Var], dropout: &Dropout) -> Result<Vec<Var>> {
        if first.len() != second.len() {
            return Err(Error::contract(
                "dsconvgru_layer",
                format!("input streams have lengths {} and {}", first.len(), second.len()),
            ));
        }
        let (h, w) = check_sequence(g, first, "dsconvgru_layer")?;
        let (h2, w2) = check_sequence(g, second, "dsconvgru_layer")?;
        if (h, w) != (h2, w2) {
            return Err(Error::shape("dsconvgru_layer", format!("spatial {h}x{w} vs {h2}x{w2}")));
        }
        let rec = recurrent_mask(g, dropout, [h, w, self.first.filters]);
        let mut state = self.first.zero_state(g, h, w);
        let mut out = Vec::with_capacity(first.len());
        for (&a, &b) in first.iter().zip(second) {
            let s1 = self.first.step(g, state, a, StepMasks { input: input_mask(g, dropout, a), recurrent: rec })?;
            let s2 = self.second.step(g, state, b, StepMasks { input: input_mask(g, dropout, b), recurrent: rec })?;
            state = g.affine(g.add(s1, s2)?, T::lit(0.5), T::zero());
            out.push(state);
        }
        Ok(out)
    }
}
