use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use avwnet::data_io::{
    digest, generate_synthetic, load_manifest, read_label, read_mask, write_label, write_mask, write_probability,
    write_rgb, Checkpoint, CheckpointMeta, DatasetKind, DatasetManifest, ManifestEntry, IMAGE_DIR, LABEL_DIR,
    MASK_DIR,
};
use avwnet::fuse::fuse;
use avwnet::metrics::{evaluate as score, MetricsReport};
use avwnet::model::WNetModel;
use avwnet::par;
use avwnet::pipeline::{prepare_all, probability_map, train_vessel_model};
use avwnet::preprocess::{preprocess, resize_plane, FundusSample};
use avwnet::tensor::Graph;
use avwnet::VesselKind;
use image::{GrayImage, Luma};
use serde::Serialize;

use crate::config::{RunConfig, CONFIG_FILE};
use crate::exit::CliError;
use crate::{DataArgs, EvaluateArgs, PredictArgs, SynthArgs, TrainArgs};

pub const FUSED_FILE: &str = "fused.png";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PER_IMAGE_FILE: &str = "per_image.csv";
pub const TABLE_FILE: &str = "table.txt";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

/// Progress messages on stderr, gated by verbosity.
struct Log {
    verbosity: u8,
}

impl Log {
    fn info(&self, msg: impl AsRef<str>) {
        if self.verbosity >= 1 {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn debug(&self, msg: impl AsRef<str>) {
        if self.verbosity >= 2 {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn load_dataset(args: &DataArgs) -> Result<(DatasetManifest, Vec<FundusSample>), CliError> {
    let manifest = load_manifest(&args.data, args.kind, args.strict)?;
    let samples = manifest.load_samples()?;
    Ok((manifest, samples))
}

pub fn synth(mut cfg: RunConfig, a: SynthArgs) -> Result<(), CliError> {
    let s = &mut cfg.synth;
    s.seed = a.seed.unwrap_or(s.seed);
    s.count = a.count.unwrap_or(s.count);
    s.size = a.size.unwrap_or(s.size);
    s.trees_per_class = a.trees.unwrap_or(s.trees_per_class);
    s.crossover_probability = a.crossover.unwrap_or(s.crossover_probability);
    s.noise_sigma = a.noise.unwrap_or(s.noise_sigma);
    if s.count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    let log = Log { verbosity: cfg.verbosity };
    let out = cfg.output_dir(a.out.as_deref(), "synth");
    let samples = generate_synthetic(&cfg.synth)?;
    for dir in [IMAGE_DIR, LABEL_DIR, MASK_DIR] {
        create_dir(&out.join(dir))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for s in &samples {
        let file = format!("{}.png", s.source_id);
        let entry = ManifestEntry {
            id: s.source_id.clone(),
            image: Path::new(IMAGE_DIR).join(&file),
            label: Some(Path::new(LABEL_DIR).join(&file)),
            mask: Some(Path::new(MASK_DIR).join(&file)),
        };
        write_rgb(&out.join(&entry.image), &s.rgb)?;
        write_label(&out.join(entry.label.as_ref().expect("set")), s.label.as_ref().expect("generated"))?;
        write_mask(&out.join(entry.mask.as_ref().expect("set")), s.fov_mask.as_ref().expect("generated"))?;
        entries.push(entry);
    }
    DatasetManifest {
        root: out.clone(),
        kind: DatasetKind::Synthetic,
        native_resolution: Some((cfg.synth.size, cfg.synth.size)),
        entries,
    }
    .save()?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml())?;
    log.info(format!("wrote {} synthetic samples to {}", samples.len(), out.display()));
    Ok(())
}

#[derive(Serialize)]
struct Split<'a> {
    train: Vec<&'a str>,
    validation: Vec<&'a str>,
}

pub fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<(), CliError> {
    let t = &mut cfg.train;
    t.vessel_kind = a.vessel;
    t.seed = a.seed.unwrap_or(t.seed);
    t.max_epochs = a.epochs.unwrap_or(t.max_epochs);
    t.patience = a.patience.unwrap_or(t.patience);
    t.learning_rate = a.lr.unwrap_or(t.learning_rate);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    let m = &mut cfg.model;
    m.depth = a.depth.unwrap_or(m.depth);
    m.base_filters = a.filters.unwrap_or(m.base_filters);
    m.attention &= !a.no_attention;
    m.deep_supervision |= a.deep_supervision;
    cfg.preprocess.target_size = a.size.unwrap_or(cfg.preprocess.target_size);
    cfg.validate()?;

    let log = Log { verbosity: cfg.verbosity };
    let out = cfg.output_dir(a.out.as_deref(), "train");
    create_dir(&out)?;
    let vessel = a.vessel.name();
    let effective = cfg.to_toml();
    write_text(&out.join(format!("{vessel}_{CONFIG_FILE}")), &effective)?;
    log.debug(format!("effective configuration:\n{effective}"));

    let (_, samples) = load_dataset(&a.data)?;
    let prepared = prepare_all(&samples, &cfg.preprocess)?;
    let wnet = cfg.model.wnet();
    log.info(format!(
        "training {vessel} model ({} parameters) on {} images at {}x{}",
        wnet.parameter_count(),
        prepared.len(),
        cfg.preprocess.target_size,
        cfg.preprocess.target_size
    ));
    let trained = train_vessel_model(&prepared, &wnet, &cfg.preprocess, &cfg.train, &cfg.focal, |r| {
        log.info(format!(
            "epoch {:>4}  train {:.6}  val {:.6}  {:.1}s",
            r.epoch, r.train_loss, r.val_loss, r.elapsed_secs
        ));
    })?;
    let report = &trained.report;
    if !report.best_val_loss.is_finite() {
        return Err(CliError::from_core(avwnet::Error::Numeric(format!(
            "validation loss diverged to {}",
            report.best_val_loss
        ))));
    }

    let loss_csv = report.loss_csv();
    write_text(&out.join(format!("{vessel}_loss.csv")), &loss_csv)?;
    write_text(&out.join(format!("{vessel}_timed.csv")), &report.timed_csv())?;
    let ids = |idx: &[usize]| idx.iter().map(|&i| prepared[i].source_id.as_str()).collect();
    let split = Split {
        train: ids(&trained.train_indices),
        validation: ids(&trained.val_indices),
    };
    let split_json = serde_json::to_string_pretty(&split).expect("plain data") + "\n";
    write_text(&out.join(format!("{vessel}_split.json")), &split_json)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "vessel,{vessel}");
    let _ = writeln!(summary, "target_positive_fraction,{:.6}", report.train_positive_fraction);
    let _ = writeln!(summary, "epochs_run,{}", report.log.len());
    let _ = writeln!(summary, "best_epoch,{}", report.best_epoch);
    let _ = writeln!(summary, "best_val_loss,{:.17e}", report.best_val_loss);
    let _ = writeln!(summary, "stopped_early,{}", report.stopped_early);
    write_text(&out.join(format!("{vessel}_summary.csv")), &summary)?;

    let meta = CheckpointMeta {
        train: Some(cfg.train.clone()),
        vessel_kind: Some(a.vessel),
        best_epoch: Some(report.best_epoch),
        log_digest: Some(digest(loss_csv.as_bytes())),
        ..CheckpointMeta::for_model(&trained.model, cfg.train.seed)
    };
    let path = out.join(format!("{vessel}.ckpt"));
    Checkpoint::from_model(&trained.model, meta).save(&path)?;
    log.info(format!(
        "best epoch {} (val {:.6}), target positive fraction {:.4}; checkpoint {}",
        report.best_epoch,
        report.best_val_loss,
        report.train_positive_fraction,
        path.display()
    ));
    Ok(())
}

fn load_model(path: &Path, expected: VesselKind) -> Result<WNetModel, CliError> {
    let ckpt = Checkpoint::load(path)?;
    if let Some(kind) = ckpt.meta.vessel_kind {
        if kind != expected {
            return Err(CliError::data(format!(
                "{} holds a {kind} model, not {expected}",
                path.display()
            )));
        }
    }
    Ok(ckpt.build_model()?)
}

/// Probabilities at the photograph's own resolution.
fn native_probabilities(model: &WNetModel, sample: &FundusSample) -> avwnet::Result<Vec<f64>> {
    let prepared = preprocess(sample, &model.preprocess)?;
    let s = model.preprocess.target_size;
    let p = probability_map(model, &prepared.input)?;
    let (w, h) = sample.dims();
    let mut native = if (w, h) == (s, s) { p } else { resize_plane(&p, s, s, w, h) };
    for v in &mut native {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(native)
}

fn to_gray(plane: &[f64], width: usize, height: usize) -> GrayImage {
    let (lo, hi) = plane.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    GrayImage::from_fn(width as u32, height as u32, |x, y| {
        let v = (plane[y as usize * width + x as usize] - lo) / span;
        Luma([(v * 255.0).round() as u8])
    })
}

fn dump_activations(model: &WNetModel, sample: &FundusSample, dir: &Path) -> Result<usize, CliError> {
    let prepared = preprocess(sample, &model.preprocess)?;
    let mut graph = Graph::new();
    let out = model.forward_recorded(&mut graph, &prepared.input)?;
    create_dir(dir)?;
    let mut written = 0;
    for (name, var) in &out.recorded {
        let t = graph.value(*var);
        let [_, c, h, w] = t.dims4("dump")?;
        for k in 0..c {
            let plane = &t.data()[k * h * w..(k + 1) * h * w];
            let path = dir.join(format!("{name}_c{k:02}.png"));
            to_gray(plane, w, h)
                .save(&path)
                .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
            written += 1;
        }
    }
    Ok(written)
}

pub fn predict(mut cfg: RunConfig, a: PredictArgs) -> Result<(), CliError> {
    cfg.fusion.vessel_threshold = a.threshold.unwrap_or(cfg.fusion.vessel_threshold);
    cfg.fusion.uncertainty_band = a.band.unwrap_or(cfg.fusion.uncertainty_band);
    cfg.fusion.validate()?;
    let log = Log { verbosity: cfg.verbosity };
    let artery = load_model(&a.artery, VesselKind::Artery)?;
    let vein = load_model(&a.vein, VesselKind::Vein)?;
    let (_, samples) = load_dataset(&a.data)?;
    let out = cfg.output_dir(a.out.as_deref(), "predict");
    create_dir(&out)?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml())?;

    let results = par::map_slice(&samples, |s| -> Result<(), CliError> {
        let pa = native_probabilities(&artery, s)?;
        let pv = native_probabilities(&vein, s)?;
        let (w, h) = s.dims();
        let fused = fuse(&pa, &pv, w, h, &cfg.fusion)?;
        let dir = out.join(&s.source_id);
        create_dir(&dir)?;
        write_probability(&dir.join("p_artery.png"), &pa, w, h)?;
        write_probability(&dir.join("p_vein.png"), &pv, w, h)?;
        write_label(&dir.join(FUSED_FILE), &fused)?;
        if a.dump_activations {
            dump_activations(&artery, s, &dir.join("activations").join("artery"))?;
            dump_activations(&vein, s, &dir.join("activations").join("vein"))?;
        }
        Ok(())
    });
    for (s, r) in samples.iter().zip(results) {
        r.map_err(|e| CliError {
            message: format!("{}: {}", s.source_id, e.message),
            ..e
        })?;
        log.debug(format!("predicted {}", s.source_id));
    }
    log.info(format!("wrote predictions for {} images to {}", samples.len(), out.display()));
    Ok(())
}

/// `<pred>/<id>/fused.png` for every subdirectory that has one.
pub fn prediction_files(pred: &Path) -> Result<BTreeMap<String, PathBuf>, CliError> {
    let read = fs::read_dir(pred).map_err(|e| CliError::data(format!("cannot read {}: {e}", pred.display())))?;
    let mut out = BTreeMap::new();
    for item in read {
        let dir = item.map_err(|e| CliError::data(e.to_string()))?.path();
        let fused = dir.join(FUSED_FILE);
        if fused.is_file() {
            if let Some(id) = dir.file_name().and_then(|n| n.to_str()) {
                out.insert(id.to_string(), fused);
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::data(format!("no <id>/{FUSED_FILE} predictions under {}", pred.display())));
    }
    Ok(out)
}

pub fn evaluate(mut cfg: RunConfig, a: EvaluateArgs) -> Result<(), CliError> {
    cfg.eval.restrict_centerline_to_detected &= !a.unrestricted_centerline;
    let log = Log { verbosity: cfg.verbosity };
    let preds = prediction_files(&a.pred)?;
    let truth = load_manifest(&a.truth, a.kind, false)?;
    let by_id: BTreeMap<&str, &ManifestEntry> = truth.entries.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut jobs = Vec::with_capacity(preds.len());
    for (id, path) in &preds {
        let entry = by_id
            .get(id.as_str())
            .ok_or_else(|| CliError::data(format!("prediction `{id}` has no ground truth in {}", a.truth.display())))?;
        let label = entry
            .label
            .as_ref()
            .ok_or_else(|| CliError::data(format!("ground truth `{id}` has no label image")))?;
        jobs.push((id.clone(), path.clone(), truth.root.join(label), entry.mask.as_ref().map(|m| truth.root.join(m))));
    }
    let skipped = truth.entries.len() - jobs.len();
    let rows = par::map_slice(&jobs, |(id, pred, label, mask)| -> avwnet::Result<_> {
        let pred = read_label(pred)?;
        let truth = read_label(label)?;
        let fov = mask.as_deref().map(read_mask).transpose()?;
        Ok((id.clone(), score(&pred, &truth, fov.as_ref(), &cfg.eval)?))
    });
    let report = MetricsReport::new(rows.into_iter().collect::<avwnet::Result<_>>()?);
    let out = cfg.output_dir(a.out.as_deref(), "evaluate");
    create_dir(&out)?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml())?;
    write_text(&out.join(SUMMARY_FILE), &report.summary_csv())?;
    write_text(&out.join(PER_IMAGE_FILE), &report.per_image_csv())?;
    let table = report.table();
    write_text(&out.join(TABLE_FILE), &table)?;
    if skipped > 0 {
        log.info(format!("{skipped} ground-truth images have no prediction and were not scored"));
    }
    if cfg.verbosity >= 1 {
        println!("{table}");
    }
    Ok(())
}
