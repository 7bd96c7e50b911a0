use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gate::AttentionGate;
use super::layers::{Conv, ConvBnRelu, Ctx, ResBlock};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Var;

/// Shape of one attention U-Net, written φ_{depth, base_filters}.
///
/// `depth` counts resolution levels: the encoder has `depth` residual
/// blocks separated by `depth - 1` max-pool stages, and level `j` carries
/// `base_filters * 2^j` channels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_filters: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub use_attention: bool,
    pub deep_supervision: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_filters: 8,
            in_channels: 3,
            out_channels: 1,
            use_attention: true,
            deep_supervision: false,
        }
    }
}

impl UNetConfig {
    pub fn new(depth: usize, base_filters: usize, in_channels: usize) -> Self {
        Self {
            depth,
            base_filters,
            in_channels,
            ..Self::default()
        }
    }

    pub fn with_attention(mut self, on: bool) -> Self {
        self.use_attention = on;
        self
    }

    pub fn with_deep_supervision(mut self, on: bool) -> Self {
        self.deep_supervision = on;
        self
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_filters << level
    }

    /// Spatial extents must be divisible by this.
    pub fn spatial_divisor(&self) -> usize {
        1 << self.depth.saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_filters == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument(format!("degenerate U-Net config {self:?}")));
        }
        if self.depth > 12 {
            return Err(Error::InvalidArgument(format!("depth {} is too large", self.depth)));
        }
        Ok(())
    }
}

/// Exact number of trainable scalars of a U-Net with this configuration.
pub fn count_parameters(cfg: &UNetConfig) -> usize {
    let ch = |j| cfg.channels(j);
    let mut total = ResBlock::param_count(cfg.in_channels, ch(0));
    for j in 1..cfg.depth {
        total += ResBlock::param_count(ch(j - 1), ch(j));
    }
    for j in (0..cfg.depth.saturating_sub(1)).rev() {
        total += ConvBnRelu::param_count(ch(j + 1), ch(j)) + ResBlock::param_count(2 * ch(j), ch(j));
        if cfg.use_attention {
            total += AttentionGate::param_count(ch(j), ch(j + 1));
        }
    }
    total += Conv::param_count(ch(0), cfg.out_channels, 1);
    if cfg.deep_supervision {
        for j in 1..cfg.depth {
            total += Conv::param_count(ch(j), cfg.out_channels, 1);
        }
    }
    total
}

#[derive(Clone, Debug)]
struct DecoderStage {
    up: ConvBnRelu,
    gate: Option<AttentionGate>,
    block: ResBlock,
}

#[derive(Clone, Debug)]
pub struct UNet {
    cfg: UNetConfig,
    name: String,
    encoder: Vec<ResBlock>,
    /// Indexed by the finer level each stage produces.
    decoder: Vec<DecoderStage>,
    head: Conv,
    /// Auxiliary heads for levels `1..depth`.
    aux_heads: Vec<Conv>,
}

/// Outputs of one U-Net pass.
#[derive(Clone, Debug)]
pub struct UNetOutput {
    /// Sigmoid probabilities at full resolution.
    pub prob: Var,
    /// `(level, probabilities)` from auxiliary heads, coarsest last.
    pub aux: Vec<(usize, Var)>,
    /// Attention coefficients per gated level.
    pub alphas: Vec<(usize, Var)>,
}

impl UNet {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, cfg: UNetConfig) -> Result<Self> {
        cfg.validate()?;
        let ch = |j| cfg.channels(j);
        let mut encoder = Vec::with_capacity(cfg.depth);
        for j in 0..cfg.depth {
            let cin = if j == 0 { cfg.in_channels } else { ch(j - 1) };
            encoder.push(ResBlock::new(store, rng, &format!("{name}.enc{j}"), cin, ch(j)));
        }
        let mut decoder = Vec::with_capacity(cfg.depth.saturating_sub(1));
        for j in 0..cfg.depth - 1 {
            let prefix = format!("{name}.dec{j}");
            let up = ConvBnRelu::new(store, rng, &format!("{prefix}.up"), ch(j + 1), ch(j));
            let gate = cfg
                .use_attention
                .then(|| AttentionGate::new(store, rng, &format!("{prefix}.gate"), ch(j), ch(j + 1)));
            let block = ResBlock::new(store, rng, &format!("{prefix}.block"), 2 * ch(j), ch(j));
            decoder.push(DecoderStage { up, gate, block });
        }
        let head = Conv::new(store, rng, &format!("{name}.head"), ch(0), cfg.out_channels, 1);
        let aux_heads = if cfg.deep_supervision {
            (1..cfg.depth)
                .map(|j| Conv::new(store, rng, &format!("{name}.aux{j}"), ch(j), cfg.out_channels, 1))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            cfg,
            name: name.to_string(),
            encoder,
            decoder,
            head,
            aux_heads,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<UNetOutput> {
        let [_, c, h, w] = ctx.graph.value(x).dims4("unet_forward")?;
        if c != self.cfg.in_channels {
            return Err(Error::shape(
                "unet_forward",
                format!("{} expects {} input channels, got {c}", self.name, self.cfg.in_channels),
            ));
        }
        let div = self.cfg.spatial_divisor();
        if h % div != 0 || w % div != 0 {
            return Err(Error::shape(
                "unet_forward",
                format!("spatial extent {h}x{w} is not divisible by {div}"),
            ));
        }

        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut cur = x;
        for (j, block) in self.encoder.iter().enumerate() {
            if j > 0 {
                cur = ctx.graph.max_pool2d(cur)?;
            }
            cur = block.forward(ctx, cur)?;
            ctx.record(|| format!("{}.enc{j}", self.name), cur);
            skips.push(cur);
        }

        let mut aux = Vec::new();
        let mut alphas = Vec::new();
        for j in (0..self.cfg.depth - 1).rev() {
            let coarse = cur;
            if let Some(head) = self.aux_heads.get(j) {
                // aux head j serves level j + 1
                let logits = head.forward(ctx, coarse)?;
                aux.push((j + 1, ctx.graph.sigmoid(logits)));
            }
            let stage = &self.decoder[j];
            let up = ctx.graph.upsample_nearest(coarse, 2)?;
            let up = stage.up.forward(ctx, up)?;
            let skip = match &stage.gate {
                Some(gate) => {
                    let (gated, alpha) = gate.forward(ctx, skips[j], coarse)?;
                    ctx.record(|| format!("{}.alpha{j}", self.name), alpha);
                    alphas.push((j, alpha));
                    gated
                }
                None => skips[j],
            };
            let merged = ctx.graph.concat_channels(skip, up)?;
            cur = stage.block.forward(ctx, merged)?;
            ctx.record(|| format!("{}.dec{j}", self.name), cur);
        }
        let logits = self.head.forward(ctx, cur)?;
        let prob = ctx.graph.sigmoid(logits);
        aux.reverse();
        Ok(UNetOutput { prob, aux, alphas })
    }
}
