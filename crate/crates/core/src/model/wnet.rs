use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{apply_stat_updates, Ctx};
use super::params::ParamStore;
use super::unet::{count_parameters, UNet, UNetConfig};
use crate::error::{Error, Result};
use crate::preprocess::PreprocessConfig;
use crate::tensor::{Graph, Tensor, Var};

/// Configurations of the two chained U-Nets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WNetConfig {
    pub phi1: UNetConfig,
    pub phi2: UNetConfig,
}

impl Default for WNetConfig {
    fn default() -> Self {
        Self::new(3, 8, true)
    }
}

impl WNetConfig {
    /// Two φ_{depth, base_filters} nets on RGB input; the second also sees
    /// the first one's prediction.
    pub fn new(depth: usize, base_filters: usize, use_attention: bool) -> Self {
        let phi1 = UNetConfig::new(depth, base_filters, 3).with_attention(use_attention);
        let phi2 = UNetConfig {
            in_channels: phi1.in_channels + phi1.out_channels,
            ..phi1.clone()
        };
        Self { phi1, phi2 }
    }

    pub fn with_deep_supervision(mut self, on: bool) -> Self {
        self.phi1.deep_supervision = on;
        self.phi2.deep_supervision = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.phi1.validate()?;
        self.phi2.validate()?;
        if self.phi2.in_channels != self.phi1.in_channels + self.phi1.out_channels {
            return Err(Error::InvalidArgument(format!(
                "second net takes {} channels but image ({}) plus first prediction ({}) give {}",
                self.phi2.in_channels,
                self.phi1.in_channels,
                self.phi1.out_channels,
                self.phi1.in_channels + self.phi1.out_channels
            )));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        count_parameters(&self.phi1) + count_parameters(&self.phi2)
    }
}

/// Graph handles produced by one W-Net pass.
#[derive(Clone, Debug)]
pub struct WNetOutput {
    /// First prediction, `phi1(x)`.
    pub p1: Var,
    /// Final prediction, `phi2(x, p1)`.
    pub p2: Var,
    pub aux1: Vec<(usize, Var)>,
    pub aux2: Vec<(usize, Var)>,
    /// Graph leaf of every store entry, in store order.
    pub param_vars: Vec<Var>,
    /// Named intermediate maps, when recording was requested.
    pub recorded: Vec<(String, Var)>,
}

/// Attention W-Net: `theta(x) = phi2(concat(x, phi1(x)))`.
#[derive(Clone, Debug)]
pub struct WNetModel {
    pub params: ParamStore,
    pub preprocess: PreprocessConfig,
    /// Hold attention coefficients constant during backward.
    pub stop_alpha: bool,
    cfg: WNetConfig,
    phi1: UNet,
    phi2: UNet,
}

impl WNetModel {
    pub fn new(cfg: WNetConfig, preprocess: PreprocessConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let phi1 = UNet::new(&mut params, &mut rng, "phi1", cfg.phi1.clone())?;
        let phi2 = UNet::new(&mut params, &mut rng, "phi2", cfg.phi2.clone())?;
        Ok(Self {
            params,
            preprocess,
            stop_alpha: false,
            cfg,
            phi1,
            phi2,
        })
    }

    pub fn config(&self) -> &WNetConfig {
        &self.cfg
    }

    pub fn phi1(&self) -> &UNet {
        &self.phi1
    }

    pub fn phi2(&self) -> &UNet {
        &self.phi2
    }

    /// Records a full pass on `graph`. In train mode batch-norm running
    /// statistics are updated in `self.params`.
    pub fn forward(&mut self, graph: &mut Graph, input: &Tensor, train: bool) -> Result<WNetOutput> {
        let (out, updates) = self.run(graph, input, train, false)?;
        apply_stat_updates(&mut self.params, updates);
        Ok(out)
    }

    /// Inference-mode pass that also records named intermediate maps.
    pub fn forward_recorded(&self, graph: &mut Graph, input: &Tensor) -> Result<WNetOutput> {
        Ok(self.run(graph, input, false, true)?.0)
    }

    fn run(
        &self,
        graph: &mut Graph,
        input: &Tensor,
        train: bool,
        record: bool,
    ) -> Result<(WNetOutput, Vec<(super::ParamId, crate::tensor::RunningStats)>)> {
        let mut ctx = Ctx::new(graph, &self.params, train).with_recording(record);
        ctx.stop_alpha = self.stop_alpha;
        let x = ctx.graph.input(input.clone());
        let o1 = self.phi1.forward(&mut ctx, x)?;
        let x2 = ctx.graph.concat_channels(x, o1.prob)?;
        let o2 = self.phi2.forward(&mut ctx, x2)?;
        let updates = ctx.take_stat_updates();
        let recorded = ctx.take_recorded();
        let param_vars = ctx.param_vars().to_vec();
        Ok((
            WNetOutput {
                p1: o1.prob,
                p2: o2.prob,
                aux1: o1.aux,
                aux2: o2.aux,
                param_vars,
                recorded,
            },
            updates,
        ))
    }

    /// Eval-mode probabilities `(p1, p2)` for a batch.
    pub fn predict(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut graph = Graph::new();
        let (out, _) = self.run(&mut graph, input, false, false)?;
        Ok((graph.value(out.p1).clone(), graph.value(out.p2).clone()))
    }
}
