use rand::Rng;

use super::config::HcgruConfig;
use super::{apply_heads, ForwardOutput, SequenceTrace};
use crate::autograd::{Graph, ParamStore, Var};
use crate::error::Result;
use crate::layers::{ConvGruLayer, Dropout, HeadActivation, OutputHead};
use crate::scalar::Scalar;

/// Stacked unidirectional ConvGRU layers over block-merged inputs, with
/// additive skips around every layer after the first and the first layer's
/// output concatenated onto the head input.
#[derive(Clone, Debug)]
pub struct Hcgru {
    pub config: HcgruConfig,
    pub layers: Vec<ConvGruLayer>,
    pub intensity: OutputHead,
    pub rain_prob: Option<OutputHead>,
}

impl Hcgru {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, c: &HcgruConfig, rng: &mut impl Rng) -> Result<Self> {
        c.validate()?;
        let mut layers = Vec::with_capacity(c.layers);
        for i in 0..c.layers {
            let cin = if i == 0 { c.block * c.input_channels } else { c.filters };
            layers.push(ConvGruLayer::new(store, &format!("layer{}", i + 1), cin, c.filters, c.kernel, false, rng)?);
        }
        let head_in = if c.layers > 1 { 2 * c.filters } else { c.filters };
        let intensity = OutputHead::new(store, "head.rain", head_in, c.head_hidden, HeadActivation::Intensity, rng)?;
        let rain_prob = if c.cc {
            Some(OutputHead::new(store, "head.prob", head_in, c.head_hidden, HeadActivation::Probability, rng)?)
        } else {
            None
        };
        Ok(Hcgru { config: c.clone(), layers, intensity, rain_prob })
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, x: Var, dropout: &Dropout) -> Result<ForwardOutput> {
        let c = &self.config;
        let steps = g.unstack(x)?;
        let merged = steps
            .chunks(c.block)
            .map(|blk| if blk.len() == 1 { Ok(blk[0]) } else { g.concat(blk, 2) })
            .collect::<Result<Vec<_>>>()?;
        let mut lengths = Vec::with_capacity(self.layers.len());
        let first = self.layers[0].run(g, &merged, dropout)?;
        lengths.push(first.len());
        let mut h = first.clone();
        for layer in &self.layers[1..] {
            let out = layer.run(g, &h, dropout)?;
            lengths.push(out.len());
            h = out.iter().zip(&h).map(|(&o, &i)| g.add(o, i)).collect::<Result<_>>()?;
        }
        let latents = if self.layers.len() > 1 {
            h.iter().zip(&first).map(|(&a, &b)| g.concat(&[a, b], 2)).collect::<Result<Vec<_>>>()?
        } else {
            h
        };
        let trace = SequenceTrace { input: steps.len(), encoder: lengths, decoder: latents.len() };
        let (intensity, rain_prob) = apply_heads(g, &latents, &self.intensity, self.rain_prob.as_ref())?;
        Ok(ForwardOutput { intensity, rain_prob, trace })
    }
}
