//! End-to-end glue: prepare samples, train one model per vessel kind,
//! predict, fuse and score.

use crate::error::{Error, Result};
use crate::fuse::{fuse, FusionConfig};
use crate::label::{LabelMap, VesselKind};
use crate::loss::FocalConfig;
use crate::metrics::{evaluate, EvalOptions, MetricsReport};
use crate::model::{WNetConfig, WNetModel};
use crate::par;
use crate::preprocess::{preprocess, FundusSample, PreparedSample, PreprocessConfig};
use crate::tensor::Tensor;
use crate::train::{split_indices, train_model, EpochRecord, Example, TrainConfig, TrainReport};

pub fn prepare_all(samples: &[FundusSample], cfg: &PreprocessConfig) -> Result<Vec<PreparedSample>> {
    par::map_slice(samples, |s| preprocess(s, cfg)).into_iter().collect()
}

/// Outcome of [`train_vessel_model`].
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: WNetModel,
    pub report: TrainReport,
    /// Indices into the prepared samples, in split order.
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Splits `prepared` with the training seed, builds a fresh model from the
/// same seed and trains it for `train.vessel_kind`.
pub fn train_vessel_model(
    prepared: &[PreparedSample],
    model_cfg: &WNetConfig,
    preprocess_cfg: &PreprocessConfig,
    train: &TrainConfig,
    focal: &FocalConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    train.validate()?;
    preprocess_cfg.validate(model_cfg.phi1.depth)?;
    let (tr, va) = split_indices(prepared.len(), train.train_fraction, train.seed)?;
    let build = |idx: &[usize]| -> Result<Vec<Example>> {
        idx.iter()
            .map(|&i| Example::from_prepared(&prepared[i], train.vessel_kind, focal))
            .collect()
    };
    let (train_set, val_set) = (build(&tr)?, build(&va)?);
    let mut model = WNetModel::new(model_cfg.clone(), preprocess_cfg.clone(), train.seed)?;
    let report = train_model(train, focal, &mut model, &train_set, &val_set, on_epoch)?;
    Ok(TrainedModel {
        model,
        report,
        train_indices: tr,
        val_indices: va,
    })
}

/// Final W-Net probabilities for a single `[1, 3, H, W]` input, row-major.
pub fn probability_map(model: &WNetModel, input: &Tensor) -> Result<Vec<f64>> {
    let [n, _, _, _] = input.dims4("probability_map")?;
    if n != 1 {
        return Err(Error::shape("probability_map", format!("expected one image, got batch {n}")));
    }
    Ok(model.predict(input)?.1.into_data())
}

/// Artery and vein probabilities plus their fusion, at network resolution.
#[derive(Clone, Debug)]
pub struct Segmentation {
    pub width: usize,
    pub height: usize,
    pub p_artery: Vec<f64>,
    pub p_vein: Vec<f64>,
    pub label: LabelMap,
}

pub fn segment(
    artery: &WNetModel,
    vein: &WNetModel,
    sample: &PreparedSample,
    fusion: &FusionConfig,
) -> Result<Segmentation> {
    let [_, _, height, width] = sample.input.dims4("segment")?;
    let p_artery = probability_map(artery, &sample.input)?;
    let p_vein = probability_map(vein, &sample.input)?;
    let label = fuse(&p_artery, &p_vein, width, height, fusion)?;
    Ok(Segmentation {
        width,
        height,
        p_artery,
        p_vein,
        label,
    })
}

/// Segments and scores every labelled sample at network resolution.
pub fn evaluate_models(
    artery: &WNetModel,
    vein: &WNetModel,
    samples: &[PreparedSample],
    fusion: &FusionConfig,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let rows = par::map_slice(samples, |s| -> Result<(String, _)> {
        let truth = s
            .label
            .as_ref()
            .ok_or_else(|| Error::Dataset(format!("sample `{}` has no label", s.source_id)))?;
        let seg = segment(artery, vein, s, fusion)?;
        Ok((s.source_id.clone(), evaluate(&seg.label, truth, s.fov_mask.as_ref(), opts)?))
    });
    Ok(MetricsReport::new(rows.into_iter().collect::<Result<_>>()?))
}

/// Convenience for callers that train both kinds with one configuration.
pub fn with_kind(train: &TrainConfig, kind: VesselKind) -> TrainConfig {
    TrainConfig {
        vessel_kind: kind,
        ..train.clone()
    }
}
