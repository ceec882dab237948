use std::fs;
use std::path::Path;

use serde::Deserialize;

use carloc_core::boxer::{heatmap_to_bbox, load_predictions, save_predictions, to_grayscale, BoxerConfig, Prediction};
use carloc_core::camnet::{
    heatmap_file_stem, load_heatmap, load_heatmap_dir, pretrain_backbone, save_heatmap_pgm, train, Backbone,
    CamWeights, DiskImages, PretextConfig, TrainConfig, PRETEXT_BACKBONE,
};
use carloc_core::evalsuite::{
    compare_runs, evaluate_run, ingest_external_detections, render_table_csv, render_table_text, EvalReport,
};
use carloc_core::ingest::{compcars_adapter, load_manifest, save_manifest, synth_generate, SynthConfig};
use carloc_core::labeling::{
    cluster_to_labels, extract_features, human_labels, kmeans_cluster, merge_labels, random_labels, FeatureTable,
    LabelAssignment, SizeStats,
};
use carloc_core::pipeline::{infer_split, run_pipeline, ModelSection, PipelineConfig};
use carloc_core::viz::{render_cam_panel, render_overlay};
use carloc_core::{CamModelSpec, DatasetManifest, LabelField, Split};

use crate::failure::{config_error, Classify, Failure};

/// The tables a subcommand may read from a config file. Unrelated keys are
/// ignored, so a pipeline config serves every subcommand.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct ToolConfig {
    synth: SynthConfig,
    model: ModelSection,
    train: TrainConfig,
    boxer: BoxerConfig,
    pretext: PretextConfig,
}

fn tool_config(path: Option<&Path>) -> Result<ToolConfig, Failure> {
    let Some(path) = path else {
        return Ok(ToolConfig::default());
    };
    let text = fs::read_to_string(path).config(path.display())?;
    toml::from_str(&text).config(path.display())
}

fn manifest(path: &Path) -> Result<DatasetManifest, Failure> {
    load_manifest(path).config(format!("manifest {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<(), Failure> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(p) => fs::create_dir_all(p).stage(p.display()),
        None => Ok(()),
    }
}

fn save_labels(labels: &LabelAssignment, out: &Path) -> Result<(), Failure> {
    ensure_parent(out)?;
    labels.save(out).stage("writing labels")?;
    println!(
        "{}: {} labels over {} images",
        labels.space_name,
        labels.vocab.len(),
        labels.mapping.len()
    );
    Ok(())
}

pub fn ingest_synth(config: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let cfg = tool_config(config)?.synth;
    cfg.validate().config("synth config")?;
    let dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let m = synth_generate(&cfg, dir).stage("rendering")?;
    save_manifest(&m, out).stage("writing manifest")?;
    println!("{} images written under {}", m.len(), dir.display());
    Ok(())
}

pub fn ingest_compcars(root: &Path, out: &Path) -> Result<(), Failure> {
    let m = compcars_adapter(root).config(format!("CompCars root {}", root.display()))?;
    ensure_parent(out)?;
    save_manifest(&m, out).stage("writing manifest")?;
    println!(
        "{} train, {} test images",
        m.ids_in(Split::Train).len(),
        m.ids_in(Split::Test).len()
    );
    Ok(())
}

pub fn label_human(path: &Path, field: LabelField, out: &Path) -> Result<(), Failure> {
    save_labels(&human_labels(&manifest(path)?, field), out)
}

pub fn label_merge(path: &Path, fields: (LabelField, LabelField), out: &Path) -> Result<(), Failure> {
    let labels = merge_labels(&manifest(path)?, fields).config("label pair")?;
    save_labels(&labels, out)
}

pub fn label_random(path: &Path, n: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    let labels = random_labels(&manifest(path)?, n, seed).config("random labels")?;
    save_labels(&labels, out)
}

pub fn label_extract(path: &Path, backbone: &str, input_size: usize, out: &Path) -> Result<(), Failure> {
    let m = manifest(path)?;
    let bb = Backbone::from_identifier(backbone).config("backbone")?;
    let table = extract_features(&m, &bb, &DiskImages::for_manifest(path), input_size).stage("extracting features")?;
    ensure_parent(out)?;
    table.save(out).stage("writing features")?;
    println!("{} vectors of dimension {}", table.len(), table.dim());
    Ok(())
}

pub fn label_cluster(
    features: &Path,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
    out: &Path,
    clusters: Option<&Path>,
) -> Result<(), Failure> {
    let table = FeatureTable::load(features).config(features.display())?;
    let result = kmeans_cluster(&table, k, seed, max_iter, tol).config("clustering")?;
    if let Some(p) = clusters {
        ensure_parent(p)?;
        let json = serde_json::to_vec_pretty(&result).expect("cluster result serializes");
        fs::write(p, json).stage(p.display())?;
    }
    println!("inertia {:.6} after {} iterations", result.inertia, result.iterations);
    save_labels(&cluster_to_labels(&result, &format!("kmeans:{k}")), out)
}

fn print_sizes(name: &str, sizes: &[usize]) {
    let s = SizeStats::of(sizes);
    println!(
        "{name:<6} mean {:>9.2}  max {:>6}  min {:>6}  std {:>9.2}",
        s.mean, s.max, s.min, s.std
    );
}

pub fn label_stats(labels: &Path, manifest_path: Option<&Path>) -> Result<(), Failure> {
    let labels = LabelAssignment::load(labels).config(labels.display())?;
    println!("{} ({} classes)", labels.space_name, labels.vocab.len());
    print_sizes("all", &labels.counts());
    if let Some(p) = manifest_path {
        let m = manifest(p)?;
        for split in [Split::Train, Split::Test] {
            print_sizes(&split.to_string(), &labels.restricted_to(&m, split).counts());
        }
    }
    Ok(())
}

/// A backbone identifier usable by training; `pretext` is pretrained here.
fn resolve_backbone(id: &str, pretext: &PretextConfig, next_to: &Path) -> Result<String, Failure> {
    if id != PRETEXT_BACKBONE {
        return Ok(id.to_string());
    }
    pretext.validate().config("pretext config")?;
    let path = next_to.with_extension("pretext.bkb");
    log::info!("pretraining backbone into {}", path.display());
    pretrain_backbone(pretext)
        .stage("pretraining")?
        .save(&path)
        .stage(path.display())?;
    Ok(format!("file:{}", path.display()))
}

pub fn camnet_train(path: &Path, labels: &Path, config: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let cfg = tool_config(config)?;
    let m = manifest(path)?;
    let labels = LabelAssignment::load(labels).config(labels.display())?;
    cfg.train.validate().config("train config")?;
    ensure_parent(out)?;
    let spec = CamModelSpec {
        backbone: resolve_backbone(&cfg.model.backbone, &cfg.pretext, out)?,
        truncate_after: cfg.model.truncate_after,
        num_classes: labels.vocab.len(),
        frozen_stages: cfg.model.frozen_stages.clone(),
        cam_bias: cfg.model.cam_bias,
    };
    spec.validate().config("model config")?;
    let weights = train(&m, &labels, &spec, &cfg.train, &DiskImages::for_manifest(path)).stage("training")?;
    weights.save(out).stage("writing checkpoint")?;
    if let Some(acc) = weights.meta.epoch_accuracy.last() {
        println!("final train accuracy {acc:.4}");
    }
    Ok(())
}

pub fn camnet_infer(weights: &Path, path: &Path, split: Split, out: &Path, pgm: bool) -> Result<(), Failure> {
    let w = CamWeights::load(weights).config(weights.display())?;
    let m = manifest(path)?;
    infer_split(&w, &m, split, &DiskImages::for_manifest(path), out)?;
    let maps = load_heatmap_dir(out).stage("reading heatmaps back")?;
    if pgm {
        for h in &maps {
            let p = out.join(format!("{}.pgm", heatmap_file_stem(&h.image_id)));
            save_heatmap_pgm(h, &p).stage(p.display())?;
        }
    }
    println!("{} heatmaps in {}", maps.len(), out.display());
    Ok(())
}

pub fn camnet_pretrain(config: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let cfg = tool_config(config)?.pretext;
    cfg.validate().config("pretext config")?;
    ensure_parent(out)?;
    pretrain_backbone(&cfg)
        .stage("pretraining")?
        .save(out)
        .stage(out.display())?;
    println!("backbone written; use it as file:{}", out.display());
    Ok(())
}

pub fn boxer_run(heatmaps: &Path, config: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let cfg = tool_config(config)?.boxer;
    cfg.validate().config("boxer config")?;
    let maps = load_heatmap_dir(heatmaps).config(heatmaps.display())?;
    let preds: Vec<Prediction> = maps
        .iter()
        .map(|h| Prediction {
            image_id: h.image_id.clone(),
            bbox: heatmap_to_bbox(h, &cfg),
        })
        .collect();
    ensure_parent(out)?;
    save_predictions(&preds, out).stage("writing predictions")?;
    println!("{} boxes", preds.len());
    Ok(())
}

pub fn eval_run(
    predictions: &Path,
    path: &Path,
    split: Split,
    name: &str,
    config_digest: &str,
    out: &Path,
) -> Result<(), Failure> {
    let preds = load_predictions(predictions).config(predictions.display())?;
    let m = manifest(path)?;
    let report = evaluate_run(&preds, &m, split, name, config_digest).stage("evaluation")?;
    ensure_parent(out)?;
    report.save(out).stage("writing report")?;
    println!("{name}: mIoU {:.4} over {} images", report.miou, report.n_images);
    Ok(())
}

pub fn eval_compare(reports: &[std::path::PathBuf], csv: Option<&Path>) -> Result<(), Failure> {
    let loaded = reports
        .iter()
        .map(|p| EvalReport::load(p).config(p.display()))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = compare_runs(&loaded).config("comparison")?;
    print!("{}", render_table_text(&rows));
    if let Some(p) = csv {
        ensure_parent(p)?;
        fs::write(p, render_table_csv(&rows)).stage(p.display())?;
    }
    Ok(())
}

pub fn eval_ingest_yolo(detections: &Path, path: &Path, class: &str, out: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(detections).config(detections.display())?;
    let m = manifest(path)?;
    let preds = ingest_external_detections(&text, class, &m).config(detections.display())?;
    ensure_parent(out)?;
    save_predictions(&preds, out).stage("writing predictions")?;
    println!("{} boxes", preds.len());
    Ok(())
}

pub fn viz_overlay(
    path: &Path,
    predictions: &Path,
    out_dir: &Path,
    limit: Option<usize>,
    with_gt: bool,
) -> Result<(), Failure> {
    let m = manifest(path)?;
    let preds = load_predictions(predictions).config(predictions.display())?;
    let images = DiskImages::for_manifest(path);
    fs::create_dir_all(out_dir).stage(out_dir.display())?;
    let n = limit.unwrap_or(preds.len()).min(preds.len());
    for p in &preds[..n] {
        let im = m
            .image(&p.image_id)
            .ok_or_else(|| config_error(format!("{} is not in the manifest", p.image_id)))?;
        let img = carloc_core::camnet::ImageSource::load(&images, im).stage(&p.image_id)?;
        let gt = m.gt_box(&p.image_id).filter(|_| with_gt);
        let drawn = render_overlay(&img, &p.bbox, gt.as_ref()).config(&p.image_id)?;
        let file = out_dir.join(format!("{}.png", heatmap_file_stem(&p.image_id)));
        drawn.save(&file).stage(file.display())?;
    }
    println!("{n} overlays in {}", out_dir.display());
    Ok(())
}

pub fn viz_panel(heatmaps: &[std::path::PathBuf], columns: usize, out: &Path) -> Result<(), Failure> {
    let grays = heatmaps
        .iter()
        .map(|p| load_heatmap(p).config(p.display()).map(|h| to_grayscale(&h)))
        .collect::<Result<Vec<_>, _>>()?;
    let panel = render_cam_panel(&grays, columns).config("panel")?;
    ensure_parent(out)?;
    panel.save(out).stage(out.display())?;
    println!("{}x{} panel of {} maps", panel.width(), panel.height(), grays.len());
    Ok(())
}

pub fn pipeline_run(config: &Path) -> Result<(), Failure> {
    let cfg = PipelineConfig::load(config)?;
    let out = run_pipeline(&cfg)?;
    for s in &out.stages {
        println!("{:<9} {:?}", s.stage, s.status);
    }
    println!(
        "{}: mIoU {:.4} over {} images",
        out.report.run_name, out.report.miou, out.report.n_images
    );
    Ok(())
}
