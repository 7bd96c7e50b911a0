use rand::Rng;

use super::params::{ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::{BatchNormMode, Graph, RunningStats, Tensor, Var, BN_EPSILON, BN_MOMENTUM};

/// Per-forward binding of a [`ParamStore`] onto a [`Graph`].
pub struct Ctx<'a> {
    pub graph: &'a mut Graph,
    store: &'a ParamStore,
    vars: Vec<Var>,
    pub train: bool,
    /// Treat attention coefficients as constants in the backward pass.
    pub stop_alpha: bool,
    record: bool,
    stat_updates: Vec<(ParamId, RunningStats)>,
    pub(crate) recorded: Vec<(String, Var)>,
}

impl<'a> Ctx<'a> {
    /// Binds every parameter as a graph leaf. With `train`, trainable
    /// parameters track gradients and batch-norm uses batch statistics.
    pub fn new(graph: &'a mut Graph, store: &'a ParamStore, train: bool) -> Self {
        let vars = store
            .iter()
            .map(|(_, p)| {
                if train && p.trainable {
                    graph.leaf(p.value.clone())
                } else {
                    graph.input(p.value.clone())
                }
            })
            .collect();
        Self {
            graph,
            store,
            vars,
            train,
            stop_alpha: false,
            record: false,
            stat_updates: Vec::new(),
            recorded: Vec::new(),
        }
    }

    /// Keep named intermediate maps (block outputs, attention coefficients)
    /// for later inspection.
    pub fn with_recording(mut self, on: bool) -> Self {
        self.record = on;
        self
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    pub(crate) fn record(&mut self, name: impl FnOnce() -> String, v: Var) {
        if self.record {
            self.recorded.push((name(), v));
        }
    }

    /// Running-statistics updates produced by train-mode batch norm.
    pub(crate) fn take_stat_updates(&mut self) -> Vec<(ParamId, RunningStats)> {
        std::mem::take(&mut self.stat_updates)
    }

    pub(crate) fn take_recorded(&mut self) -> Vec<(String, Var)> {
        std::mem::take(&mut self.recorded)
    }
}

/// Writes batch-norm running statistics collected during a train forward.
pub(crate) fn apply_stat_updates(store: &mut ParamStore, updates: Vec<(ParamId, RunningStats)>) {
    for (mean_id, stats) in updates {
        let var_id = ParamId(mean_id.0 + 1);
        store.value_mut(mean_id).data_mut().copy_from_slice(&stats.mean);
        store.value_mut(var_id).data_mut().copy_from_slice(&stats.var);
    }
}

/// He-uniform initialization bound for a given fan-in.
fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, cin: usize, cout: usize, kernel: usize) -> Self {
        let fan_in = cin * kernel * kernel;
        let b = he_bound(fan_in);
        let w: Vec<f64> = (0..cout * fan_in).map(|_| rng.random_range(-b..b)).collect();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::new(vec![cout, cin, kernel, kernel], w).expect("sized"),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]), true);
        Self {
            weight,
            bias,
            in_channels: cin,
            out_channels: cout,
            kernel,
        }
    }

    pub fn param_count(cin: usize, cout: usize, kernel: usize) -> usize {
        cin * cout * kernel * kernel + cout
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.var(self.weight), ctx.var(self.bias));
        ctx.graph.conv2d(x, w, Some(b), 1, self.kernel / 2)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0), true);
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), true);
        let running_mean = store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]), false);
        let running_var = store.add(format!("{name}.running_var"), Tensor::full(&[channels], 1.0), false);
        debug_assert_eq!(running_var.0, running_mean.0 + 1);
        Self {
            gamma,
            beta,
            running_mean,
            running_var,
        }
    }

    pub fn param_count(channels: usize) -> usize {
        2 * channels
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.var(self.gamma), ctx.var(self.beta));
        let mut stats = RunningStats {
            mean: ctx.store.get(self.running_mean).value.data().to_vec(),
            var: ctx.store.get(self.running_var).value.data().to_vec(),
        };
        if ctx.train {
            let y = ctx.graph.batch_norm(
                x,
                g,
                b,
                BatchNormMode::Train {
                    running: &mut stats,
                    momentum: BN_MOMENTUM,
                },
                BN_EPSILON,
            )?;
            ctx.stat_updates.push((self.running_mean, stats));
            Ok(y)
        } else {
            ctx.graph
                .batch_norm(x, g, b, BatchNormMode::Eval { running: &stats }, BN_EPSILON)
        }
    }
}

/// conv3x3 -> batch norm -> relu
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl ConvBnRelu {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            conv: Conv::new(store, rng, &format!("{name}.conv"), cin, cout, 3),
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout),
        }
    }

    pub fn param_count(cin: usize, cout: usize) -> usize {
        Conv::param_count(cin, cout, 3) + BatchNorm::param_count(cout)
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(ctx.graph.relu(y))
    }
}

/// Two conv/batch-norm stages with an additive shortcut:
/// `relu(bn(conv(relu(bn(conv(x))))) + shortcut(x))`, where the shortcut is
/// the identity when channel counts agree and a 1x1 projection otherwise.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub first: ConvBnRelu,
    pub second: Conv,
    pub second_bn: BatchNorm,
    pub projection: Option<Conv>,
}

impl ResBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, cin: usize, cout: usize) -> Self {
        let first = ConvBnRelu::new(store, rng, &format!("{name}.a"), cin, cout);
        let second = Conv::new(store, rng, &format!("{name}.b.conv"), cout, cout, 3);
        let second_bn = BatchNorm::new(store, &format!("{name}.b.bn"), cout);
        let projection = (cin != cout).then(|| Conv::new(store, rng, &format!("{name}.proj"), cin, cout, 1));
        Self {
            first,
            second,
            second_bn,
            projection,
        }
    }

    pub fn param_count(cin: usize, cout: usize) -> usize {
        let proj = if cin != cout { Conv::param_count(cin, cout, 1) } else { 0 };
        ConvBnRelu::param_count(cin, cout) + Conv::param_count(cout, cout, 3) + BatchNorm::param_count(cout) + proj
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let a = self.first.forward(ctx, x)?;
        let b = self.second.forward(ctx, a)?;
        let b = self.second_bn.forward(ctx, b)?;
        let shortcut = match &self.projection {
            Some(p) => p.forward(ctx, x)?,
            None => x,
        };
        let sum = ctx.graph.add(b, shortcut)?;
        Ok(ctx.graph.relu(sum))
    }
}
