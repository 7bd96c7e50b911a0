use rand::Rng;

use super::layers::{Conv, Ctx};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Var;

/// Additive attention gate on a skip connection.
///
/// `alpha = sigmoid(psi(relu(W_x x + up(W_g g))))` is a one-channel map in
/// (0, 1) that scales the skip features `x`. The gating signal `g` is the
/// decoder feature one scale coarser than `x` (or at the same scale).
#[derive(Clone, Debug)]
pub struct AttentionGate {
    pub w_x: Conv,
    pub w_g: Conv,
    pub psi: Conv,
    pub skip_channels: usize,
    pub gate_channels: usize,
    pub inter_channels: usize,
}

/// Intermediate width: half the skip channels, at least one.
pub fn inter_channels(skip_channels: usize) -> usize {
    (skip_channels / 2).max(1)
}

impl AttentionGate {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        skip_channels: usize,
        gate_channels: usize,
    ) -> Self {
        let inter = inter_channels(skip_channels);
        Self {
            w_x: Conv::new(store, rng, &format!("{name}.w_x"), skip_channels, inter, 1),
            w_g: Conv::new(store, rng, &format!("{name}.w_g"), gate_channels, inter, 1),
            psi: Conv::new(store, rng, &format!("{name}.psi"), inter, 1, 1),
            skip_channels,
            gate_channels,
            inter_channels: inter,
        }
    }

    pub fn param_count(skip_channels: usize, gate_channels: usize) -> usize {
        let inter = inter_channels(skip_channels);
        Conv::param_count(skip_channels, inter, 1)
            + Conv::param_count(gate_channels, inter, 1)
            + Conv::param_count(inter, 1, 1)
    }

    /// Returns `(alpha * x, alpha)`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var, g: Var) -> Result<(Var, Var)> {
        let xs = ctx.graph.value(x).dims4("attention_gate")?;
        let gs = ctx.graph.value(g).dims4("attention_gate")?;
        if xs[1] != self.skip_channels || gs[1] != self.gate_channels {
            return Err(Error::shape(
                "attention_gate",
                format!(
                    "gate expects {}/{} channels, got skip {} and gating {}",
                    self.skip_channels, self.gate_channels, xs[1], gs[1]
                ),
            ));
        }
        let theta = self.w_x.forward(ctx, x)?;
        let phi = self.w_g.forward(ctx, g)?;
        let phi = if (gs[2] * 2, gs[3] * 2) == (xs[2], xs[3]) {
            ctx.graph.upsample_nearest(phi, 2)?
        } else if (gs[2], gs[3]) == (xs[2], xs[3]) {
            phi
        } else {
            return Err(Error::shape(
                "attention_gate",
                format!("gating signal {}x{} vs skip {}x{}", gs[2], gs[3], xs[2], xs[3]),
            ));
        };
        let q = ctx.graph.add(theta, phi)?;
        let q = ctx.graph.relu(q);
        let logits = self.psi.forward(ctx, q)?;
        let alpha = ctx.graph.sigmoid(logits);
        let used = if ctx.stop_alpha { ctx.graph.detach(alpha) } else { alpha };
        let gated = ctx.graph.mul(x, used)?;
        Ok((gated, alpha))
    }
}
