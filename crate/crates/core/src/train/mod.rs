//! Mini-batch training with Adam and early stopping.

mod adam;

pub use adam::{adam_step, AdamState};

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::VesselKind;
use crate::loss::{FocalConfig, FocalTargets};
use crate::model::{ParamStore, WNetModel};
use crate::preprocess::PreparedSample;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub vessel_kind: VesselKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Loss weight of each auxiliary head.
    pub aux_weight: f64,
    /// Fraction of samples used for training; the rest validate.
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 6,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            vessel_kind: VesselKind::Artery,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            aux_weight: 0.25,
            train_fraction: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.max_epochs == 0 || self.patience >= self.max_epochs {
            return bad(format!(
                "patience {} must be below max epochs {}",
                self.patience, self.max_epochs
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("Adam betas must lie in [0, 1) and epsilon be positive".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train fraction {} must lie in (0, 1)", self.train_fraction));
        }
        Ok(())
    }
}

/// Indices of a seeded shuffle cut at `floor(fraction * n)`.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Dataset(format!("need at least 2 samples to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((fraction * n as f64).floor() as usize).clamp(1, n - 1);
    let val = idx.split_off(cut);
    Ok((idx, val))
}

/// 80:20 seeded split into (train, validation).
pub fn split_dataset<T: Clone>(samples: &[T], seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (a, b) = split_indices(samples.len(), 0.8, seed)?;
    Ok((
        a.into_iter().map(|i| samples[i].clone()).collect(),
        b.into_iter().map(|i| samples[i].clone()).collect(),
    ))
}

/// One network input with its loss targets.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    /// `[1, 3, H, W]`
    pub input: Tensor,
    pub targets: FocalTargets,
}

impl Example {
    pub fn from_prepared(sample: &PreparedSample, kind: VesselKind, focal: &FocalConfig) -> Result<Self> {
        let label = sample
            .label
            .as_ref()
            .ok_or_else(|| Error::Dataset(format!("sample `{}` has no label", sample.source_id)))?;
        Ok(Self {
            id: sample.source_id.clone(),
            input: sample.input.clone(),
            targets: FocalTargets::from_label(label, sample.fov_mask.as_ref(), kind, focal)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub elapsed_secs: f64,
}

/// Progress of a run. `epochs_since_improvement` never exceeds the
/// configured patience while training continues.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Positive target pixels over all training examples.
    pub train_positive_fraction: f64,
}

impl TrainReport {
    /// `epoch,train_loss,val_loss` rows; identical for identical runs.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for r in &self.log {
            let _ = writeln!(s, "{},{:.17e},{:.17e}", r.epoch, r.train_loss, r.val_loss);
        }
        s
    }

    /// Loss rows with wall-clock time appended.
    pub fn timed_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,elapsed_secs\n");
        for r in &self.log {
            let _ = writeln!(s, "{},{:.8},{:.8},{:.3}", r.epoch, r.train_loss, r.val_loss, r.elapsed_secs);
        }
        s
    }
}

/// Sum of the focal losses of both outputs, plus weighted auxiliary terms.
fn objective(
    graph: &mut Graph,
    p1: Var,
    p2: Var,
    aux: &[(usize, Var)],
    targets: &FocalTargets,
    focal: &FocalConfig,
    aux_weight: f64,
) -> Result<Var> {
    let l1 = graph.focal_loss(p1, targets, focal)?;
    let l2 = graph.focal_loss(p2, targets, focal)?;
    let mut total = graph.add(l1, l2)?;
    for &(level, a) in aux {
        let t = targets.downsample(1 << level)?;
        let l = graph.focal_loss(a, &t, focal)?;
        let l = graph.scale(l, aux_weight);
        total = graph.add(total, l)?;
    }
    Ok(total)
}

fn batch(examples: &[&Example]) -> Result<(Tensor, FocalTargets)> {
    let inputs: Vec<&Tensor> = examples.iter().map(|e| &e.input).collect();
    let targets: Vec<&FocalTargets> = examples.iter().map(|e| &e.targets).collect();
    Ok((Tensor::stack(&inputs)?, FocalTargets::stack(&targets)?))
}

/// Mean eval-mode objective (without auxiliary terms) over `examples`.
pub fn evaluate_loss(model: &WNetModel, examples: &[Example], focal: &FocalConfig) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Dataset("no examples to evaluate".into()));
    }
    let mut total = 0.0;
    for e in examples {
        let (p1, p2) = model.predict(&e.input)?;
        let mut graph = Graph::new();
        let (v1, v2) = (graph.input(p1), graph.input(p2));
        let l = objective(&mut graph, v1, v2, &[], &e.targets, focal, 0.0)?;
        total += graph.value(l).item();
    }
    Ok(total / examples.len() as f64)
}

/// One optimizer step on a mini-batch; returns the batch objective.
fn train_step(
    model: &mut WNetModel,
    examples: &[&Example],
    cfg: &TrainConfig,
    focal: &FocalConfig,
    adam: &mut AdamState,
) -> Result<f64> {
    let (input, targets) = batch(examples)?;
    let mut graph = Graph::new();
    let out = model.forward(&mut graph, &input, true)?;
    let aux: Vec<(usize, Var)> = out.aux1.iter().chain(&out.aux2).copied().collect();
    let loss = objective(&mut graph, out.p1, out.p2, &aux, &targets, focal, cfg.aux_weight)?;
    let value = graph.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("training loss is {value}")));
    }
    graph.backward(loss)?;
    let grads = gradients(&graph, &model.params, &out.param_vars);
    adam_step(&mut model.params, &grads, adam, cfg.learning_rate)?;
    Ok(value)
}

fn gradients(graph: &Graph, store: &ParamStore, vars: &[Var]) -> Vec<(crate::model::ParamId, Vec<f64>)> {
    store
        .trainable_ids()
        .into_iter()
        .map(|id| {
            let g = graph
                .grad(vars[id.index()])
                .map_or_else(|| vec![0.0; store.get(id).value.numel()], <[f64]>::to_vec);
            (id, g)
        })
        .collect()
}

/// Trains `model` in place and leaves it holding the weights of the epoch
/// with the lowest validation loss. `on_epoch` sees each log row as it is
/// produced.
pub fn train_model(
    cfg: &TrainConfig,
    focal: &FocalConfig,
    model: &mut WNetModel,
    train: &[Example],
    val: &[Example],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    focal.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Dataset("validation set is empty".into()));
    }
    let positives: f64 = train.iter().map(|e| e.targets.target.data().iter().sum::<f64>()).sum();
    let pixels: usize = train.iter().map(|e| e.targets.target.numel()).sum();

    let start = Instant::now();
    let mut state = TrainState {
        epoch: 0,
        best_val_loss: f64::INFINITY,
        best_epoch: 0,
        epochs_since_improvement: 0,
        adam: AdamState::new(&model.params, cfg.beta1, cfg.beta2, cfg.epsilon),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let mut best = model.params.clone();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopped_early = false;

    while state.epoch < cfg.max_epochs {
        state.epoch += 1;
        order.shuffle(&mut state.rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let members: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            sum += train_step(model, &members, cfg, focal, &mut state.adam)? * chunk.len() as f64;
        }
        let train_loss = sum / train.len() as f64;
        let val_loss = evaluate_loss(model, val, focal)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("validation loss is {val_loss} at epoch {}", state.epoch)));
        }
        let record = EpochRecord {
            epoch: state.epoch,
            train_loss,
            val_loss,
            elapsed_secs: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.push(record);

        if val_loss < state.best_val_loss {
            state.best_val_loss = val_loss;
            state.best_epoch = state.epoch;
            state.epochs_since_improvement = 0;
            best.clone_from(&model.params);
        } else {
            state.epochs_since_improvement += 1;
            if state.epochs_since_improvement >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    model.params = best;
    Ok(TrainReport {
        log,
        best_epoch: state.best_epoch,
        best_val_loss: state.best_val_loss,
        stopped_early,
        train_positive_fraction: positives / pixels as f64,
    })
}
