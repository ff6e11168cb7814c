//! Fused temporal cross attention: aggregates a window of finer-scale
//! states into one coarser-scale input, queried by the coarser layer's
//! previous state, and the ConvGRU layer that embeds it.
//!
//! Per head `h`:
//!
//! ```text
//! Q   = reshape(pool(A_prev))     . W_Q[h]          (1, d_o)
//! K   = reshape(pool(B_1..T))     . W_K[h]          (T, d_o)
//! S   = softmax(Q (K + a_K)^T / sqrt(d_o))          (1, T)
//! V_b = B_b * W_V1[h]                               (H, W, c_f)
//! O_h = sum_b S_b (V_b + a_V[b])
//! ```
//!
//! and the aggregated input is `concat_h(O_h) * W_V2`.

use rand::Rng;

use super::convgru::{concat_directions, ConvGruCell, StepMasks};
use super::dropout::{Dropout, Site};
use super::init::fan_in_uniform;
use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FtcaConfig {
    pub heads: usize,
    /// Spatial pool size `M`.
    pub pool: usize,
    /// Query/key width `d_o`.
    pub key_dim: usize,
    /// Value-convolution filters `c_f` per head; also the channel count of
    /// the aggregated output.
    pub value_filters: usize,
    /// Window length `T_b`.
    pub window: usize,
}

#[derive(Clone, Debug)]
pub struct FtcaHead {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v1: ParamId,
}

#[derive(Clone, Debug)]
pub struct Ftca {
    pub config: FtcaConfig,
    pub height: usize,
    pub width: usize,
    pub query_channels: usize,
    pub input_channels: usize,
    pub heads: Vec<FtcaHead>,
    pub w_v2: ParamId,
    pub a_k: ParamId,
    pub a_v: ParamId,
}

/// Aggregated input plus the per-head attention weights `(1, T_b)`.
#[derive(Clone, Debug)]
pub struct FtcaOutput {
    pub value: Var,
    pub attention: Vec<Var>,
}

impl Ftca {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: FtcaConfig,
        spatial: (usize, usize),
        query_channels: usize,
        input_channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (h, w) = spatial;
        let FtcaConfig { heads, pool, key_dim, value_filters, window } = config;
        if heads == 0 || key_dim == 0 || value_filters == 0 || window == 0 {
            return Err(Error::Config(format!("{prefix}: heads, key width, value filters and window must be positive")));
        }
        if pool == 0 || h % pool != 0 || w % pool != 0 {
            return Err(Error::Config(format!("{prefix}: pool size {pool} does not divide {h}x{w}")));
        }
        let cells = (h / pool) * (w / pool);
        let (d_a, d_b) = (cells * query_channels, cells * input_channels);
        let mut head_params = Vec::with_capacity(heads);
        for i in 0..heads {
            head_params.push(FtcaHead {
                w_q: store.add(format!("{prefix}.head{i}.w_q"), fan_in_uniform(&[d_a, key_dim], d_a, rng))?,
                w_k: store.add(format!("{prefix}.head{i}.w_k"), fan_in_uniform(&[d_b, key_dim], d_b, rng))?,
                w_v1: store.add(
                    format!("{prefix}.head{i}.w_v1"),
                    fan_in_uniform(&[value_filters, 4, 4, input_channels], 16 * input_channels, rng),
                )?,
            });
        }
        let fused = heads * value_filters;
        Ok(Ftca {
            config,
            height: h,
            width: w,
            query_channels,
            input_channels,
            heads: head_params,
            w_v2: store.add(
                format!("{prefix}.w_v2"),
                fan_in_uniform(&[value_filters, 3, 3, fused], 9 * fused, rng),
            )?,
            a_k: store.add(format!("{prefix}.a_k"), Tensor::zeros(vec![window, key_dim]))?,
            a_v: store.add(format!("{prefix}.a_v"), Tensor::zeros(vec![window, value_filters]))?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.config.value_filters
    }

    /// Aggregates `window` (`T_b` tensors `[H, W, c_b]`) under the query
    /// `prev_state` (`[H, W, c_a]`).
    pub fn aggregate<T: Scalar>(
        &self,
        g: &Graph<T>,
        prev_state: Var,
        window: &[Var],
        dropout: &Dropout,
    ) -> Result<FtcaOutput> {
        let cfg = &self.config;
        if window.len() != cfg.window {
            return Err(Error::contract(
                "ftca_aggregate",
                format!("window has {} steps, expected {}", window.len(), cfg.window),
            ));
        }
        let (h, w, m) = (self.height, self.width, cfg.pool);
        let want_q = [h, w, self.query_channels];
        if g.shape(prev_state) != want_q {
            return Err(Error::shape("ftca_aggregate", format!("query {:?}, expected {want_q:?}", g.shape(prev_state))));
        }
        let want_b = [h, w, self.input_channels];
        if let Some(bad) = window.iter().find(|&&b| g.shape(b) != want_b) {
            return Err(Error::shape("ftca_aggregate", format!("window step {:?}, expected {want_b:?}", g.shape(*bad))));
        }
        let cells = (h / m) * (w / m);
        let a_pf = g.reshape(g.avg_pool(prev_state, m)?, vec![1, cells * self.query_channels])?;
        let stacked = g.stack(window)?;
        let b_pf = g.reshape(g.avg_pool(stacked, m)?, vec![cfg.window, cells * self.input_channels])?;
        let inv_sqrt = T::one() / T::from_usize(cfg.key_dim).unwrap().sqrt();
        let a_k = g.param(self.a_k);
        let a_v = g.param(self.a_v);

        let mut head_out = Vec::with_capacity(self.heads.len());
        let mut attention = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let q = g.matmul(a_pf, g.param(head.w_q))?;
            let k = g.add(g.matmul(b_pf, g.param(head.w_k))?, a_k)?;
            let scores = g.scale(g.matmul(q, g.transpose(k)?)?, inv_sqrt);
            let s = g.softmax(scores);
            attention.push(s);
            let s = match dropout.mask::<T>(Site::Attention, &[1, cfg.window]) {
                Some(mask) => g.mul(s, g.input(mask))?,
                None => s,
            };
            let w_v1 = g.param(head.w_v1);
            let values = window.iter().map(|&b| g.conv2d(b, w_v1, None)).collect::<Result<Vec<_>>>()?;
            let v_mat = g.reshape(g.stack(&values)?, vec![cfg.window, h * w * cfg.value_filters])?;
            let weighted = g.reshape(g.matmul(s, v_mat)?, vec![h, w, cfg.value_filters])?;
            let pos = g.reshape(g.matmul(s, a_v)?, vec![cfg.value_filters])?;
            head_out.push(g.add(weighted, pos)?);
        }
        let fused = if head_out.len() == 1 { head_out[0] } else { g.concat(&head_out, 2)? };
        let value = g.conv2d(fused, g.param(self.w_v2), None)?;
        Ok(FtcaOutput { value, attention })
    }

    pub fn param_count(&self, store: &ParamStore<impl Scalar>) -> usize {
        let mut ids = vec![self.w_v2, self.a_k, self.a_v];
        for h in &self.heads {
            ids.extend([h.w_q, h.w_k, h.w_v1]);
        }
        ids.iter().map(|&id| store.value(id).numel()).sum()
    }
}

/// One direction of a ConvGRU-with-FTCA layer.
#[derive(Clone, Debug)]
pub struct FtcaUnit {
    pub attention: Ftca,
    pub cell: ConvGruCell,
}

/// Attention weights recorded during a layer pass, per unit and head.
pub type AttentionTrace = Vec<Vec<Var>>;

impl FtcaUnit {
    fn run<T: Scalar>(
        &self,
        g: &Graph<T>,
        inputs: &[Var],
        reverse: bool,
        dropout: &Dropout,
        trace: &mut AttentionTrace,
    ) -> Result<Vec<Var>> {
        let tb = self.attention.config.window;
        let n = inputs.len() / tb;
        let (h, w) = (self.attention.height, self.attention.width);
        let rec = dropout.mask::<T>(Site::Recurrent, &[h, w, self.cell.filters]).map(|m| g.input(m));
        let mut state = self.cell.zero_state(g, h, w);
        let mut out = vec![state; n];
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for i in order {
            let agg = self.attention.aggregate(g, state, &inputs[i * tb..(i + 1) * tb], dropout)?;
            trace.push(agg.attention);
            let input = dropout.mask::<T>(Site::Input, &g.shape(agg.value)).map(|m| g.input(m));
            state = self.cell.step(g, state, agg.value, StepMasks { input, recurrent: rec })?;
            out[i] = state;
        }
        Ok(out)
    }
}

/// ConvGRU layer whose unit `i` consumes inputs `[i T_b, (i + 1) T_b)`
/// through FTCA, contracting the sequence length by `T_b`.
#[derive(Clone, Debug)]
pub struct ConvGruFtcaLayer {
    pub forward: FtcaUnit,
    pub backward: Option<FtcaUnit>,
}

impl ConvGruFtcaLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: FtcaConfig,
        spatial: (usize, usize),
        in_channels: usize,
        filters: usize,
        kernel: (usize, usize),
        bidirectional: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut unit = |dir: &str, rng: &mut _| -> Result<FtcaUnit> {
            let p = format!("{prefix}.{dir}");
            let attention = Ftca::new(store, &format!("{p}.ftca"), config, spatial, filters, in_channels, rng)?;
            let cell = ConvGruCell::new(store, &p, attention.out_channels(), filters, kernel, rng)?;
            Ok(FtcaUnit { attention, cell })
        };
        let forward = unit("fw", rng)?;
        let backward = if bidirectional { Some(unit("bw", rng)?) } else { None };
        Ok(ConvGruFtcaLayer { forward, backward })
    }

    pub fn contraction(&self) -> usize {
        self.forward.attention.config.window
    }

    pub fn out_channels(&self) -> usize {
        self.forward.cell.filters * if self.backward.is_some() { 2 } else { 1 }
    }

    pub fn run<T: Scalar>(&self, g: &Graph<T>, inputs: &[Var], dropout: &Dropout) -> Result<Vec<Var>> {
        let mut trace = Vec::new();
        self.run_traced(g, inputs, dropout, &mut trace)
    }

    pub fn run_traced<T: Scalar>(
        &self,
        g: &Graph<T>,
        inputs: &[Var],
        dropout: &Dropout,
        trace: &mut AttentionTrace,
    ) -> Result<Vec<Var>> {
        let tb = self.contraction();
        if inputs.is_empty() || inputs.len() % tb != 0 {
            return Err(Error::contract(
                "convgru_ftca_layer",
                format!("input length {} is not a positive multiple of {tb}", inputs.len()),
            ));
        }
        let fw = self.forward.run(g, inputs, false, dropout, trace)?;
        let bw = match &self.backward {
            Some(u) => Some(u.run(g, inputs, true, dropout, trace)?),
            None => None,
        };
        concat_directions(g, fw, bw)
    }
}
