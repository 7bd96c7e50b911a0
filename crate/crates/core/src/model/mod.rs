//! Attention U-Net blocks and their W-composition.

mod gate;
mod layers;
mod params;
mod unet;
mod wnet;

pub use gate::{inter_channels, AttentionGate};
pub use layers::{BatchNorm, Conv, ConvBnRelu, Ctx, ResBlock};
pub use params::{Param, ParamId, ParamStore};
pub use unet::{count_parameters, UNet, UNetConfig, UNetOutput};
pub use wnet::{WNetConfig, WNetModel, WNetOutput};

use rand::seq::IteratorRandom;
use rand::Rng;

use crate::error::Result;
use crate::tensor::gradcheck::{relative_error, GradReport};
use crate::tensor::{Graph, Var};

/// Every `(parameter, element)` coordinate of the trainable entries.
pub fn all_coords(store: &ParamStore) -> Vec<(ParamId, usize)> {
    store
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(id, p)| (0..p.value.numel()).map(move |e| (id, e)))
        .collect()
}

/// `count` distinct trainable coordinates drawn uniformly.
pub fn sample_coords<R: Rng>(store: &ParamStore, count: usize, rng: &mut R) -> Vec<(ParamId, usize)> {
    let mut picked = all_coords(store).into_iter().choose_multiple(rng, count);
    picked.sort();
    picked
}

/// Central finite-difference check of the gradient of `build`'s scalar
/// output with respect to the listed parameter coordinates. Batch norm runs
/// in train mode; running statistics are never written back.
pub fn check_param_gradients<F>(
    store: &ParamStore,
    coords: &[(ParamId, usize)],
    h: f64,
    build: F,
) -> Result<GradReport>
where
    F: Fn(&mut Ctx<'_>) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut graph = Graph::new();
        let mut ctx = Ctx::new(&mut graph, s, true);
        let loss = build(&mut ctx)?;
        Ok(graph.value(loss).item())
    };

    let mut graph = Graph::new();
    let mut ctx = Ctx::new(&mut graph, store, true);
    let loss = build(&mut ctx)?;
    let vars = ctx.param_vars().to_vec();
    graph.backward(loss)?;

    let mut report = GradReport {
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
    };
    let mut probe = store.clone();
    for &(id, e) in coords {
        let analytic = graph.grad(vars[id.0]).map_or(0.0, |g| g[e]);
        let orig = store.get(id).value.data()[e];
        probe.value_mut(id).data_mut()[e] = orig + h;
        let up = eval(&probe)?;
        probe.value_mut(id).data_mut()[e] = orig - h;
        let down = eval(&probe)?;
        probe.value_mut(id).data_mut()[e] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = relative_error(analytic, numeric);
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max((analytic - numeric).abs());
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = (id.0, e);
        }
    }
    Ok(report)
}
