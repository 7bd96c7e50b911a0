use avwnet::data_io::{generate_synthetic, synthesize, Checkpoint, CheckpointMeta, SynthConfig};
use avwnet::fuse::{fuse, FusionConfig};
use avwnet::loss::FocalConfig;
use avwnet::metrics::{evaluate, EvalOptions, Tier};
use avwnet::model::{WNetConfig, WNetModel};
use avwnet::par;
use avwnet::pipeline::{evaluate_models, prepare_all, segment, train_vessel_model, with_kind};
use avwnet::preprocess::{preprocess, PreprocessConfig};
use avwnet::train::{train_model, Example, TrainConfig};
use avwnet::VesselKind;

fn binary_f1(pred: &[f64], target: &[f64]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(target) {
        match (p >= 0.5, t == 1.0) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    2.0 * tp / (2.0 * tp + fp + fn_)
}

#[test]
fn small_wnet_overfits_one_image() {
    let sample = synthesize(&SynthConfig::default(), 0).unwrap().sample;
    let pre = PreprocessConfig::default();
    let prepared = preprocess(&sample, &pre).unwrap();
    let focal = FocalConfig::default();
    let example = Example::from_prepared(&prepared, VesselKind::Artery, &focal).unwrap();
    let mut model = WNetModel::new(WNetConfig::default(), pre, 1).unwrap();
    let cfg = TrainConfig {
        batch_size: 1,
        max_epochs: 150,
        patience: 149,
        ..TrainConfig::default()
    };
    let train = [example.clone()];
    train_model(&cfg, &focal, &mut model, &train, &train, |_| {}).unwrap();
    let (_, p2) = model.predict(&example.input).unwrap();
    let f1 = binary_f1(p2.data(), example.targets.target.data());
    assert!(f1 > 0.95, "overfit F1 {f1}");
}

#[test]
fn parallel_and_sequential_training_agree_bitwise() {
    let cfg = SynthConfig {
        count: 5,
        ..SynthConfig::default()
    };
    let pre = PreprocessConfig::default();
    let prepared = prepare_all(&generate_synthetic(&cfg).unwrap(), &pre).unwrap();
    let train = TrainConfig {
        max_epochs: 2,
        patience: 1,
        ..TrainConfig::default()
    };
    let run = |on: bool| {
        par::set_parallel(on);
        let t = train_vessel_model(&prepared, &WNetConfig::new(2, 4, true), &pre, &train, &FocalConfig::default(), |_| {})
            .unwrap();
        par::set_parallel(true);
        t
    };
    let (a, b) = (run(true), run(false));
    assert_eq!(a.report.loss_csv(), b.report.loss_csv());
    assert_eq!(a.model.params, b.model.params);
}

#[test]
fn checkpointed_models_segment_identically() {
    let cfg = SynthConfig {
        count: 5,
        ..SynthConfig::default()
    };
    let pre = PreprocessConfig::default();
    let prepared = prepare_all(&generate_synthetic(&cfg).unwrap(), &pre).unwrap();
    let train = TrainConfig {
        max_epochs: 2,
        patience: 1,
        ..TrainConfig::default()
    };
    let wnet = WNetConfig::new(2, 4, true);
    let focal = FocalConfig::default();
    let a = train_vessel_model(&prepared, &wnet, &pre, &with_kind(&train, VesselKind::Artery), &focal, |_| {}).unwrap();
    let v = train_vessel_model(&prepared, &wnet, &pre, &with_kind(&train, VesselKind::Vein), &focal, |_| {}).unwrap();
    let reload = |m: &WNetModel| {
        let bytes = Checkpoint::from_model(m, CheckpointMeta::for_model(m, 0)).encode().unwrap();
        Checkpoint::decode(&bytes).unwrap().build_model().unwrap()
    };
    let (ra, rv) = (reload(&a.model), reload(&v.model));
    let fusion = FusionConfig::default();
    for s in &prepared {
        assert_eq!(segment(&a.model, &v.model, s, &fusion).unwrap().label, segment(&ra, &rv, s, &fusion).unwrap().label);
    }
    let report = evaluate_models(&a.model, &v.model, &prepared, &fusion, &EvalOptions::default()).unwrap();
    assert_eq!(report.images.len(), prepared.len());
}

#[test]
fn truth_fused_with_itself_scores_perfectly() {
    let sample = synthesize(&SynthConfig::default(), 3).unwrap().sample;
    let label = sample.label.unwrap();
    let (w, h) = label.dims();
    // probabilities that reproduce the label exactly under the default rule
    let pa: Vec<f64> = label.classes().iter().map(|c| c.code() as f64).map(|k| [0.0, 1.0, 0.0, 0.9][k as usize]).collect();
    let pv: Vec<f64> = label.classes().iter().map(|c| c.code() as f64).map(|k| [0.0, 0.0, 1.0, 0.9][k as usize]).collect();
    let fused = fuse(&pa, &pv, w, h, &FusionConfig::default()).unwrap();
    assert_eq!(fused, label);
    let m = evaluate(&fused, &label, sample.fov_mask.as_ref(), &EvalOptions::default()).unwrap();
    for t in Tier::ALL {
        assert_eq!(m.tier(t).macro_f1, 1.0);
        assert_eq!(m.tier(t).macro_accuracy, 1.0);
    }
}
