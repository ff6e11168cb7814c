use rand::Rng;

use super::config::TruNetConfig;
use super::{apply_heads, ForwardOutput, SequenceTrace};
use crate::autograd::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::layers::{ConvGruFtcaLayer, ConvGruLayer, Dropout, DsConvGru, FtcaConfig, HeadActivation, OutputHead};
use crate::scalar::Scalar;

/// Three bidirectional encoder layers at decreasing temporal resolution, a
/// dual-state decoder fed by the second and (repeated) third layers, and
/// per-day output heads.
#[derive(Clone, Debug)]
pub struct TruNet {
    pub config: TruNetConfig,
    pub layer1: ConvGruLayer,
    pub layer2: ConvGruFtcaLayer,
    pub layer3: ConvGruFtcaLayer,
    pub decoder: DsConvGru,
    pub intensity: OutputHead,
    pub rain_prob: Option<OutputHead>,
}

impl TruNet {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, c: &TruNetConfig, rng: &mut impl Rng) -> Result<Self> {
        c.validate()?;
        let [f1, f2, f3] = c.encoder_filters;
        let spatial = (c.stencil, c.stencil);
        let ftca = |i: usize| {
            let a = c.attention[i];
            FtcaConfig {
                heads: a.heads,
                pool: a.pool,
                key_dim: a.key_dim,
                value_filters: c.value_filters(i),
                window: c.factors[i + 1],
            }
        };
        let layer1 = ConvGruLayer::new(store, "enc1", c.input_channels, f1, c.kernel, true, rng)?;
        let layer2 = ConvGruFtcaLayer::new(store, "enc2", ftca(0), spatial, layer1.out_channels(), f2, c.kernel, true, rng)?;
        let layer3 = ConvGruFtcaLayer::new(store, "enc3", ftca(1), spatial, layer2.out_channels(), f3, c.kernel, true, rng)?;
        let decoder = DsConvGru::new(
            store,
            "dec",
            (layer2.out_channels(), layer3.out_channels()),
            c.decoder_filters,
            c.kernel,
            rng,
        )?;
        let intensity = OutputHead::new(store, "head.rain", c.decoder_filters, c.head_hidden, HeadActivation::Intensity, rng)?;
        let rain_prob = if c.cc {
            Some(OutputHead::new(store, "head.prob", c.decoder_filters, c.head_hidden, HeadActivation::Probability, rng)?)
        } else {
            None
        };
        Ok(TruNet { config: c.clone(), layer1, layer2, layer3, decoder, intensity, rain_prob })
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, x: Var, dropout: &Dropout) -> Result<ForwardOutput> {
        let c = &self.config;
        let steps = g.unstack(x)?;
        let e1 = self.layer1.run(g, &steps, dropout)?;
        let e2 = self.layer2.run(g, &e1, dropout)?;
        let e3 = self.layer3.run(g, &e2, dropout)?;
        let expanded = g.unstack(g.repeat_interleave(g.stack(&e3)?, c.factors[2])?)?;
        let latents = self.decoder.run(g, &e2, &expanded, dropout)?;
        let trace = SequenceTrace { input: steps.len(), encoder: vec![e1.len(), e2.len(), e3.len()], decoder: latents.len() };
        if trace.encoder != c.encoder_lengths() || trace.decoder != c.days() {
            return Err(Error::contract("trunet_forward", format!("sequence lengths {trace:?} break the configured contract")));
        }
        let (intensity, rain_prob) = apply_heads(g, &latents, &self.intensity, self.rain_prob.as_ref())?;
        Ok(ForwardOutput { intensity, rain_prob, trace })
    }
}
