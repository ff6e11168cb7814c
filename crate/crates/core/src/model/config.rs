use crate::data::manifest::Manifest;
use crate::error::{Error, Result};
use crate::layers::ConvGruCell;

/// Attention settings of one ConvGRU-with-FTCA encoder layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionSettings {
    pub heads: usize,
    pub pool: usize,
    pub key_dim: usize,
    /// Value-convolution filters; 0 means "same as the layer's filters".
    pub value_filters: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruNetConfig {
    pub input_channels: usize,
    /// Square spatial extent of the input stencil.
    pub stencil: usize,
    /// Input steps per window.
    pub window: usize,
    /// Temporal contraction of each encoder layer. The first must be 1; the
    /// second maps input steps to output days.
    pub factors: [usize; 3],
    pub encoder_filters: [usize; 3],
    pub kernel: (usize, usize),
    pub attention: [AttentionSettings; 2],
    pub decoder_filters: usize,
    pub head_hidden: usize,
    pub cc: bool,
    /// Central target crop.
    pub crop: usize,
}

impl TruNetConfig {
    /// 112 six-hourly steps over a 16x16 stencil, eight heads per FTCA.
    pub fn paper(cc: bool) -> Self {
        let att = AttentionSettings { heads: 8, pool: 4, key_dim: 16, value_filters: 0 };
        TruNetConfig {
            input_channels: 6,
            stencil: 16,
            window: 112,
            factors: [1, 4, 7],
            encoder_filters: [16, 32, 48],
            kernel: (3, 3),
            attention: [att; 2],
            decoder_filters: 32,
            head_hidden: 32,
            cc,
            crop: 4,
        }
    }

    /// Seven days over an 8x8 stencil with narrow layers, for fast training.
    pub fn micro(cc: bool) -> Self {
        let att = AttentionSettings { heads: 2, pool: 2, key_dim: 4, value_filters: 0 };
        TruNetConfig {
            stencil: 8,
            window: 28,
            encoder_filters: [4, 6, 8],
            attention: [att; 2],
            decoder_filters: 6,
            head_hidden: 8,
            ..Self::paper(cc)
        }
    }

    /// Window 8 with factors [1, 2, 2] on a 4x4 stencil.
    pub fn gradcheck(cc: bool) -> Self {
        let att = AttentionSettings { heads: 2, pool: 2, key_dim: 2, value_filters: 2 };
        TruNetConfig {
            stencil: 4,
            window: 8,
            factors: [1, 2, 2],
            encoder_filters: [2, 2, 2],
            attention: [att; 2],
            decoder_filters: 2,
            head_hidden: 2,
            crop: 2,
            ..Self::paper(cc)
        }
    }

    /// Output days: the sequence length after the second encoder layer.
    pub fn days(&self) -> usize {
        self.window / self.factors[1]
    }

    pub fn value_filters(&self, layer: usize) -> usize {
        match self.attention[layer].value_filters {
            0 => self.encoder_filters[layer + 1],
            v => v,
        }
    }

    /// Sequence lengths after each encoder layer.
    pub fn encoder_lengths(&self) -> [usize; 3] {
        let l1 = self.window / self.factors[0];
        let l2 = l1 / self.factors[1];
        [l1, l2, l2 / self.factors[2]]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.factors[0] != 1 {
            return bad(format!("first contraction factor must be 1, got {}", self.factors[0]));
        }
        if self.factors.contains(&0) || self.window % self.factors[1] != 0 || self.days() % self.factors[2] != 0 {
            return bad(format!("factors {:?} do not evenly divide window {}", self.factors, self.window));
        }
        if self.window == 0 || self.input_channels == 0 || self.stencil == 0 {
            return bad("window, input channels and stencil must be positive".into());
        }
        if self.encoder_filters.contains(&0) || self.decoder_filters == 0 || self.head_hidden == 0 {
            return bad("filter counts must be positive".into());
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return bad("kernel extents must be positive".into());
        }
        if self.crop == 0 || self.crop > self.stencil || (self.stencil - self.crop) % 2 != 0 {
            return bad(format!("crop {} cannot be centred in stencil {}", self.crop, self.stencil));
        }
        for a in &self.attention {
            if a.heads == 0 || a.key_dim == 0 || a.pool == 0 || self.stencil % a.pool != 0 {
                return bad(format!("attention settings {a:?} invalid for stencil {}", self.stencil));
            }
        }
        Ok(())
    }

    pub fn to_manifest(&self, m: &mut Manifest) {
        m.set("model", "trunet")
            .set("input_channels", self.input_channels)
            .set("stencil", self.stencil)
            .set("window", self.window)
            .set_list("factors", &self.factors)
            .set_list("encoder_filters", &self.encoder_filters)
            .set_list("kernel", &[self.kernel.0, self.kernel.1])
            .set("decoder_filters", self.decoder_filters)
            .set("head_hidden", self.head_hidden)
            .set("cc", self.cc)
            .set("crop", self.crop);
        for (i, a) in self.attention.iter().enumerate() {
            m.set_list(format!("attention{}", i + 2), &[a.heads, a.pool, a.key_dim, a.value_filters]);
        }
    }

    /// Reads every key present in `m` over `base`.
    pub fn from_manifest(m: &Manifest, base: TruNetConfig) -> Result<Self> {
        let mut c = base;
        if let Some(v) = m.get("input_channels")? {
            c.input_channels = v;
        }
        if let Some(v) = m.get("stencil")? {
            c.stencil = v;
        }
        if let Some(v) = m.get("window")? {
            c.window = v;
        }
        if let Some(v) = m.get_list::<usize>("factors")? {
            c.factors = fixed(&v, "factors")?;
        }
        if let Some(v) = m.get_list::<usize>("encoder_filters")? {
            c.encoder_filters = fixed(&v, "encoder_filters")?;
        }
        if let Some(v) = m.get_list::<usize>("kernel")? {
            let [a, b] = fixed(&v, "kernel")?;
            c.kernel = (a, b);
        }
        if let Some(v) = m.get("decoder_filters")? {
            c.decoder_filters = v;
        }
        if let Some(v) = m.get("head_hidden")? {
            c.head_hidden = v;
        }
        if let Some(v) = m.get("cc")? {
            c.cc = v;
        }
        if let Some(v) = m.get("crop")? {
            c.crop = v;
        }
        for i in 0..2 {
            if let Some(v) = m.get_list::<usize>(&format!("attention{}", i + 2))? {
                let [heads, pool, key_dim, value_filters] = fixed(&v, "attention")?;
                c.attention[i] = AttentionSettings { heads, pool, key_dim, value_filters };
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HcgruConfig {
    pub input_channels: usize,
    pub stencil: usize,
    pub window: usize,
    /// Consecutive steps merged along channels before the first layer.
    pub block: usize,
    pub layers: usize,
    pub filters: usize,
    pub kernel: (usize, usize),
    pub head_hidden: usize,
    pub cc: bool,
    pub crop: usize,
}

impl HcgruConfig {
    /// Four layers of 80 filters with 4x4 kernels.
    pub fn paper(cc: bool) -> Self {
        HcgruConfig {
            input_channels: 6,
            stencil: 16,
            window: 112,
            block: 4,
            layers: 4,
            filters: 80,
            kernel: (4, 4),
            head_hidden: 32,
            cc,
            crop: 4,
        }
    }

    pub fn micro(cc: bool) -> Self {
        HcgruConfig { stencil: 8, window: 28, filters: 8, head_hidden: 8, ..Self::paper(cc) }
    }

    pub fn gradcheck(cc: bool) -> Self {
        HcgruConfig { stencil: 4, window: 8, block: 2, filters: 2, head_hidden: 2, crop: 2, ..Self::paper(cc) }
    }

    pub fn days(&self) -> usize {
        self.window / self.block
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.block == 0 || self.window == 0 || self.window % self.block != 0 {
            return bad(format!("block {} does not divide window {}", self.block, self.window));
        }
        if self.layers == 0 || self.filters == 0 || self.head_hidden == 0 || self.input_channels == 0 {
            return bad("layer, filter and channel counts must be positive".into());
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return bad("kernel extents must be positive".into());
        }
        if self.crop == 0 || self.crop > self.stencil || (self.stencil - self.crop) % 2 != 0 {
            return bad(format!("crop {} cannot be centred in stencil {}", self.crop, self.stencil));
        }
        Ok(())
    }

    /// Closed-form parameter count of the built model.
    pub fn param_count(&self) -> usize {
        let f = self.filters;
        let first = ConvGruCell::param_count(self.block * self.input_channels, f, self.kernel);
        let rest = (self.layers - 1) * ConvGruCell::param_count(f, f, self.kernel);
        let head_in = if self.layers > 1 { 2 * f } else { f };
        let head = self.head_hidden * 9 * head_in + self.head_hidden + 9 * self.head_hidden + 1;
        first + rest + head * if self.cc { 2 } else { 1 }
    }

    /// Copy of `self` with the filter count whose parameter total is closest
    /// to `target`.
    pub fn matched_to(&self, target: usize) -> Self {
        (1..=1024)
            .map(|filters| HcgruConfig { filters, ..self.clone() })
            .min_by_key(|c| c.param_count().abs_diff(target))
            .expect("non-empty range")
    }

    pub fn to_manifest(&self, m: &mut Manifest) {
        m.set("model", "hcgru")
            .set("input_channels", self.input_channels)
            .set("stencil", self.stencil)
            .set("window", self.window)
            .set("block", self.block)
            .set("layers", self.layers)
            .set("filters", self.filters)
            .set_list("kernel", &[self.kernel.0, self.kernel.1])
            .set("head_hidden", self.head_hidden)
            .set("cc", self.cc)
            .set("crop", self.crop);
    }

    pub fn from_manifest(m: &Manifest, base: HcgruConfig) -> Result<Self> {
        let mut c = base;
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = m.get(stringify!($field))? {
                    c.$field = v;
                }
            )*};
        }
        take!(input_channels, stencil, window, block, layers, filters, head_hidden, cc, crop);
        if let Some(v) = m.get_list::<usize>("kernel")? {
            let [a, b] = fixed(&v, "kernel")?;
            c.kernel = (a, b);
        }
        c.validate()?;
        Ok(c)
    }
}

fn fixed<const N: usize>(v: &[usize], key: &str) -> Result<[usize; N]> {
    v.try_into().map_err(|_| Error::Config(format!("{key}: expected {N} values, got {}", v.len())))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelConfig {
    TruNet(TruNetConfig),
    Hcgru(HcgruConfig),
}

impl ModelConfig {
    pub fn cc(&self) -> bool {
        match self {
            ModelConfig::TruNet(c) => c.cc,
            ModelConfig::Hcgru(c) => c.cc,
        }
    }

    pub fn window(&self) -> usize {
        match self {
            ModelConfig::TruNet(c) => c.window,
            ModelConfig::Hcgru(c) => c.window,
        }
    }

    pub fn days(&self) -> usize {
        match self {
            ModelConfig::TruNet(c) => c.days(),
            ModelConfig::Hcgru(c) => c.days(),
        }
    }

    pub fn stencil(&self) -> usize {
        match self {
            ModelConfig::TruNet(c) => c.stencil,
            ModelConfig::Hcgru(c) => c.stencil,
        }
    }

    pub fn crop(&self) -> usize {
        match self {
            ModelConfig::TruNet(c) => c.crop,
            ModelConfig::Hcgru(c) => c.crop,
        }
    }

    pub fn input_channels(&self) -> usize {
        match self {
            ModelConfig::TruNet(c) => c.input_channels,
            ModelConfig::Hcgru(c) => c.input_channels,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::TruNet(_) => "trunet",
            ModelConfig::Hcgru(_) => "hcgru",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::TruNet(c) => c.validate(),
            ModelConfig::Hcgru(c) => c.validate(),
        }
    }

    pub fn to_manifest(&self, m: &mut Manifest) {
        match self {
            ModelConfig::TruNet(c) => c.to_manifest(m),
            ModelConfig::Hcgru(c) => c.to_manifest(m),
        }
    }

    /// Reads the architecture named by the `model` key, starting from the
    /// paper-scale defaults (or `preset=micro` / `preset=gradcheck`).
    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let cc = m.get("cc")?.unwrap_or(true);
        let preset = m.get_str("preset").unwrap_or("paper");
        match m.get_str("model").unwrap_or("trunet") {
            "trunet" => {
                let base = match preset {
                    "paper" => TruNetConfig::paper(cc),
                    "micro" => TruNetConfig::micro(cc),
                    "gradcheck" => TruNetConfig::gradcheck(cc),
                    other => return Err(Error::Config(format!("unknown preset {other}"))),
                };
                Ok(ModelConfig::TruNet(TruNetConfig::from_manifest(m, base)?))
            }
            "hcgru" => {
                let base = match preset {
                    "paper" => HcgruConfig::paper(cc),
                    "micro" => HcgruConfig::micro(cc),
                    "gradcheck" => HcgruConfig::gradcheck(cc),
                    other => return Err(Error::Config(format!("unknown preset {other}"))),
                };
                Ok(ModelConfig::Hcgru(HcgruConfig::from_manifest(m, base)?))
            }
            other => Err(Error::Config(format!("unknown model {other}"))),
        }
    }
}
