//! End-to-end experiment runner: labels, training, heatmaps, boxes, scores.
//!
//! Every stage writes its artifact under the output directory together with a
//! digest of its inputs (`stages/<stage>.digest`). A rerun skips a stage when
//! the artifact exists and the recorded digest matches. Pretrained backbones and
//! feature tables go to a cache root shared between runs: `$CARLOC_CACHE_DIR`
//! if set, else the config's `cache_dir`, else `<output_dir>/cache`.
//!
//! The backbone identifier `pretext` (for the model or the extractor) is
//! resolved by a `pretext` stage that pretrains the built-in network on the
//! corpus described by the `[pretext]` section.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::boxer::{heatmap_to_bbox, save_predictions, BoxerConfig, Prediction};
use crate::camnet::{
    infer_heatmap, load_heatmap_dir, pretrain_backbone, save_heatmap, train, Backbone, CamModelSpec, CamWeights,
    DiskImages, ImageSource, PretextConfig, TrainConfig, PRETEXT_BACKBONE,
};
use crate::evalsuite::{evaluate_run, EvalReport};
use crate::ingest::{load_manifest, manifest_digest, DatasetManifest, LabelField, Split};
use crate::labeling::{
    cluster_to_labels, extract_features, human_labels, kmeans_cluster, merge_labels, random_labels, ClusterResult,
    FeatureTable, LabelAssignment, DEFAULT_RANDOM_LABELS,
};

pub const CACHE_ENV: &str = "CARLOC_CACHE_DIR";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

fn stage_err<E: std::error::Error + Send + Sync + 'static>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: Box::new(e),
    }
}

/// Which label space to train on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSelector {
    Field(LabelField),
    Merged(LabelField, LabelField),
    Random(usize),
    KMeans(usize),
}

impl FromStr for LabelSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let count = |v: &str| {
            v.parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| format!("bad count in selector {s:?}"))
        };
        if let Some(n) = s.strip_prefix("random:") {
            return Ok(LabelSelector::Random(count(n)?));
        }
        if s == "random" {
            return Ok(LabelSelector::Random(DEFAULT_RANDOM_LABELS));
        }
        if let Some(k) = s.strip_prefix("kmeans:") {
            return Ok(LabelSelector::KMeans(count(k)?));
        }
        match s {
            "make-year" => Ok(LabelSelector::Merged(LabelField::Make, LabelField::Year)),
            "model-year" => Ok(LabelSelector::Merged(LabelField::Model, LabelField::Year)),
            other => other
                .parse()
                .map(LabelSelector::Field)
                .map_err(|_| format!("unknown label space {other:?}")),
        }
    }
}

impl fmt::Display for LabelSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelSelector::Field(x) => write!(f, "{x}"),
            LabelSelector::Merged(a, b) => write!(f, "{a}-{b}"),
            LabelSelector::Random(n) => write!(f, "random:{n}"),
            LabelSelector::KMeans(k) => write!(f, "kmeans:{k}"),
        }
    }
}

fn default_backbone() -> String {
    PRETEXT_BACKBONE.into()
}
fn default_truncate() -> usize {
    4
}
fn default_frozen() -> Vec<usize> {
    vec![1]
}
fn yes() -> bool {
    true
}

/// Network layout; the class count comes from the label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_backbone")]
    pub backbone: String,
    #[serde(default = "default_truncate")]
    pub truncate_after: usize,
    #[serde(default = "default_frozen")]
    pub frozen_stages: Vec<usize>,
    #[serde(default = "yes")]
    pub cam_bias: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            backbone: default_backbone(),
            truncate_after: default_truncate(),
            frozen_stages: default_frozen(),
            cam_bias: true,
        }
    }
}

/// Embedding extraction and clustering settings for `kmeans:k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    /// Backbone identifier; the model backbone when absent.
    pub extractor: Option<String>,
    pub input_size: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureSection {
            extractor: None,
            input_size: 224,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

fn default_split() -> Split {
    Split::Test
}

/// One experiment. Relative paths are resolved against the config file's
/// directory when loaded with [`PipelineConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub label_space: String,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub run_name: Option<String>,
    #[serde(default = "default_split")]
    pub eval_split: Split,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub boxer: BoxerConfig,
    #[serde(default)]
    pub features: FeatureSection,
    #[serde(default)]
    pub pretext: PretextConfig,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.manifest, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(c) = cfg.cache_dir.as_mut().filter(|c| c.is_relative()) {
            *c = base.join(&*c);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn selector(&self) -> Result<LabelSelector, PipelineError> {
        self.label_space.parse().map_err(PipelineError::Config)
    }

    pub fn run_name(&self) -> String {
        self.run_name.clone().unwrap_or_else(|| self.label_space.clone())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg_err = |e: &dyn fmt::Display| PipelineError::Config(e.to_string());
        self.selector()?;
        self.train.validate().map_err(|e| cfg_err(&e))?;
        self.boxer.validate().map_err(|e| cfg_err(&e))?;
        let probe = CamModelSpec {
            num_classes: 2,
            ..self.model_spec(2)
        };
        probe.validate().map_err(|e| cfg_err(&e))?;
        for id in [Some(&self.model.backbone), self.features.extractor.as_ref()]
            .into_iter()
            .flatten()
        {
            if id == PRETEXT_BACKBONE {
                self.pretext.validate().map_err(|e| cfg_err(&e))?;
            } else {
                Backbone::from_identifier(id).map_err(|e| cfg_err(&e))?;
            }
        }
        if self.features.input_size < 8 {
            return Err(PipelineError::Config("features.input_size must be at least 8".into()));
        }
        Ok(())
    }

    pub fn model_spec(&self, num_classes: usize) -> CamModelSpec {
        CamModelSpec {
            backbone: self.model.backbone.clone(),
            truncate_after: self.model.truncate_after,
            num_classes,
            frozen_stages: self.model.frozen_stages.clone(),
            cam_bias: self.model.cam_bias,
        }
    }

    /// Digest of the whole configuration.
    pub fn digest(&self) -> String {
        sha_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Feature extractor identifier before `pretext` resolution.
    pub fn extractor(&self) -> &str {
        self.features.extractor.as_deref().unwrap_or(&self.model.backbone)
    }

    pub fn cache_root(&self) -> PathBuf {
        std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .or_else(|| self.cache_dir.clone())
            .unwrap_or_else(|| self.output_dir.join("cache"))
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String, std::io::Error> {
    Ok(sha_hex(&fs::read(path)?))
}

fn dir_digest(dir: &Path) -> Result<String, std::io::Error> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        h.update(p.file_name().unwrap_or_default().as_encoded_bytes());
        h.update(Sha256::digest(fs::read(&p)?));
    }
    Ok(hex::encode(h.finalize()))
}

/// Content digest for `file:` backbones, the identifier itself otherwise.
fn backbone_digest(id: &str) -> Result<String, std::io::Error> {
    match id.strip_prefix("file:") {
        Some(p) => file_digest(Path::new(p)),
        None => Ok(id.to_string()),
    }
}

fn key(parts: &[&str]) -> String {
    sha_hex(parts.join("\u{1f}").as_bytes())
}

/// Whether a stage ran or was served from its recorded output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Cached,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    pub digest: String,
}

/// Report plus the stages in execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub report: EvalReport,
    pub stages: Vec<StageRecord>,
}

/// Artifact locations under an output directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn labels(&self) -> PathBuf {
        self.root.join("labels.json")
    }
    pub fn clusters(&self) -> PathBuf {
        self.root.join("clusters.json")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }
    pub fn heatmaps(&self) -> PathBuf {
        self.root.join("heatmaps")
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.jsonl")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn stage_log(&self) -> PathBuf {
        self.root.join("stage_log.jsonl")
    }
    fn digest_file(&self, stage: &str) -> PathBuf {
        self.root.join("stages").join(format!("{stage}.digest"))
    }
}

struct Runner {
    layout: RunLayout,
    log: Vec<StageRecord>,
}

impl Runner {
    /// Runs `work` unless `artifact` exists and was produced under `digest`.
    fn stage<F>(
        &mut self,
        name: &'static str,
        digest: String,
        artifact: &Path,
        marker: &Path,
        work: F,
    ) -> Result<(), PipelineError>
    where
        F: FnOnce() -> Result<(), PipelineError>,
    {
        let cached = artifact.exists() && fs::read_to_string(marker).is_ok_and(|d| d.trim() == digest);
        let status = if cached {
            log::info!("stage {name}: cached");
            StageStatus::Cached
        } else {
            log::info!("stage {name}: running");
            let _ = fs::remove_file(marker);
            work()?;
            if let Some(p) = marker.parent() {
                fs::create_dir_all(p).map_err(stage_err(name))?;
            }
            fs::write(marker, &digest).map_err(stage_err(name))?;
            StageStatus::Ran
        };
        let rec = StageRecord {
            stage: name.into(),
            status,
            digest,
        };
        let mut line = serde_json::to_string(&rec).expect("stage record serializes");
        line.push('\n');
        use std::io::Write;
        fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.layout.stage_log())
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(stage_err(name))?;
        self.log.push(rec);
        Ok(())
    }
}

/// Runs one experiment end to end.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    cfg.validate()?;
    let selector = cfg.selector()?;
    let manifest = load_manifest(&cfg.manifest).map_err(|e| PipelineError::Config(e.to_string()))?;
    let images = DiskImages::for_manifest(&cfg.manifest);
    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", cfg.output_dir.display())))?;
    let layout = RunLayout {
        root: cfg.output_dir.clone(),
    };
    let mut run = Runner {
        layout: layout.clone(),
        log: Vec::new(),
    };
    let m_digest = manifest_digest(&manifest);
    let seed = cfg.seed.to_string();

    let mut pretext_file = None;
    if cfg.model.backbone == PRETEXT_BACKBONE || cfg.extractor() == PRETEXT_BACKBONE {
        let p_key = key(&[
            "pretext",
            &serde_json::to_string(&cfg.pretext).expect("pretext section serializes"),
        ]);
        let path = cfg.cache_root().join("backbones").join(format!("{p_key}.bkb"));
        let marker = path.with_extension("digest");
        run.stage("pretext", p_key, &path, &marker, || {
            let bb = pretrain_backbone(&cfg.pretext).map_err(stage_err("pretext"))?;
            fs::create_dir_all(path.parent().expect("cache subdir")).map_err(stage_err("pretext"))?;
            bb.save(&path).map_err(stage_err("pretext"))
        })?;
        pretext_file = Some(format!("file:{}", path.display()));
    }
    let resolve = |id: &str| match &pretext_file {
        Some(f) if id == PRETEXT_BACKBONE => f.clone(),
        _ => id.to_string(),
    };
    let backbone = resolve(&cfg.model.backbone);

    // Labels, with embedding and clustering stages first for pseudo-labels.
    let label_inputs = if let LabelSelector::KMeans(k) = selector {
        let extractor = resolve(cfg.extractor());
        let extractor_digest = backbone_digest(&extractor).map_err(stage_err("features"))?;
        let f_key = key(&[
            "features",
            &m_digest,
            &extractor_digest,
            &cfg.features.input_size.to_string(),
        ]);
        let f_path = cfg.cache_root().join("features").join(format!("{f_key}.bin"));
        let f_marker = f_path.with_extension("digest");
        run.stage("features", f_key.clone(), &f_path, &f_marker, || {
            let bb = Backbone::from_identifier(&extractor).map_err(stage_err("features"))?;
            let table =
                extract_features(&manifest, &bb, &images, cfg.features.input_size).map_err(stage_err("features"))?;
            fs::create_dir_all(f_path.parent().expect("cache subdir")).map_err(stage_err("features"))?;
            table.save(&f_path).map_err(stage_err("features"))
        })?;
        let c_key = key(&[
            "cluster",
            &f_key,
            &k.to_string(),
            &seed,
            &cfg.features.max_iter.to_string(),
            &cfg.features.tol.to_string(),
        ]);
        run.stage(
            "cluster",
            c_key.clone(),
            &layout.clusters(),
            &layout.digest_file("cluster"),
            || {
                let table = FeatureTable::load(&f_path).map_err(stage_err("cluster"))?;
                let r = kmeans_cluster(&table, k, cfg.seed, cfg.features.max_iter, cfg.features.tol)
                    .map_err(stage_err("cluster"))?;
                fs::write(
                    layout.clusters(),
                    serde_json::to_vec_pretty(&r).expect("cluster result serializes"),
                )
                .map_err(stage_err("cluster"))
            },
        )?;
        c_key
    } else {
        String::new()
    };
    let l_key = key(&["labels", &m_digest, &selector.to_string(), &seed, &label_inputs]);
    run.stage("labels", l_key, &layout.labels(), &layout.digest_file("labels"), || {
        let labels = build_labels(selector, &manifest, cfg.seed, &layout)?;
        labels.save(&layout.labels()).map_err(stage_err("labels"))
    })?;

    let labels_digest = file_digest(&layout.labels()).map_err(stage_err("labels"))?;
    let backbone_key = backbone_digest(&backbone).map_err(stage_err("train"))?;
    let t_key = key(&[
        "train",
        &m_digest,
        &labels_digest,
        &backbone_key,
        &serde_json::to_string(&cfg.model).expect("model section serializes"),
        &serde_json::to_string(&cfg.train).expect("train section serializes"),
    ]);
    run.stage(
        "train",
        t_key,
        &layout.checkpoint(),
        &layout.digest_file("train"),
        || {
            let labels = LabelAssignment::load(&layout.labels()).map_err(stage_err("train"))?;
            let spec = CamModelSpec {
                backbone: backbone.clone(),
                ..cfg.model_spec(labels.vocab.len())
            };
            let w = train(&manifest, &labels, &spec, &cfg.train, &images).map_err(stage_err("train"))?;
            w.save(&layout.checkpoint()).map_err(stage_err("train"))
        },
    )?;

    let ckpt_digest = file_digest(&layout.checkpoint()).map_err(stage_err("train"))?;
    let split = cfg.eval_split.to_string();
    let i_key = key(&["infer", &m_digest, &ckpt_digest, &split]);
    run.stage("infer", i_key, &layout.heatmaps(), &layout.digest_file("infer"), || {
        let w = CamWeights::load(&layout.checkpoint()).map_err(stage_err("infer"))?;
        infer_split(&w, &manifest, cfg.eval_split, &images, &layout.heatmaps())
    })?;

    let h_digest = dir_digest(&layout.heatmaps()).map_err(stage_err("infer"))?;
    let b_key = key(&[
        "boxer",
        &h_digest,
        &serde_json::to_string(&cfg.boxer).expect("boxer section serializes"),
    ]);
    run.stage(
        "boxer",
        b_key,
        &layout.predictions(),
        &layout.digest_file("boxer"),
        || {
            let maps = load_heatmap_dir(&layout.heatmaps()).map_err(stage_err("boxer"))?;
            let preds: Vec<Prediction> = maps
                .par_iter()
                .map(|h| Prediction {
                    image_id: h.image_id.clone(),
                    bbox: heatmap_to_bbox(h, &cfg.boxer),
                })
                .collect();
            save_predictions(&preds, &layout.predictions()).map_err(stage_err("boxer"))
        },
    )?;

    let p_digest = file_digest(&layout.predictions()).map_err(stage_err("boxer"))?;
    let run_name = cfg.run_name();
    let config_digest = cfg.digest();
    let e_key = key(&["eval", &m_digest, &p_digest, &split, &run_name, &config_digest]);
    run.stage("eval", e_key, &layout.report(), &layout.digest_file("eval"), || {
        let preds = crate::boxer::load_predictions(&layout.predictions()).map_err(stage_err("eval"))?;
        let report =
            evaluate_run(&preds, &manifest, cfg.eval_split, &run_name, &config_digest).map_err(stage_err("eval"))?;
        report.save(&layout.report()).map_err(stage_err("eval"))
    })?;

    let report = EvalReport::load(&layout.report()).map_err(stage_err("eval"))?;
    Ok(PipelineOutcome {
        report,
        stages: run.log,
    })
}

fn build_labels(
    selector: LabelSelector,
    manifest: &DatasetManifest,
    seed: u64,
    layout: &RunLayout,
) -> Result<LabelAssignment, PipelineError> {
    Ok(match selector {
        LabelSelector::Field(f) => human_labels(manifest, f),
        LabelSelector::Merged(a, b) => merge_labels(manifest, (a, b)).map_err(stage_err("labels"))?,
        LabelSelector::Random(n) => random_labels(manifest, n, seed).map_err(stage_err("labels"))?,
        LabelSelector::KMeans(k) => {
            let bytes = fs::read(layout.clusters()).map_err(stage_err("labels"))?;
            let r: ClusterResult = serde_json::from_slice(&bytes).map_err(stage_err("labels"))?;
            cluster_to_labels(&r, &format!("kmeans{k}"))
        }
    })
}

/// Heatmaps for every image of `split`, written into `dir` (replaced).
pub fn infer_split(
    weights: &CamWeights,
    manifest: &DatasetManifest,
    split: Split,
    images: &dyn ImageSource,
    dir: &Path,
) -> Result<(), PipelineError> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(stage_err("infer"))?;
    }
    fs::create_dir_all(dir).map_err(stage_err("infer"))?;
    let ids = manifest.ids_in(split);
    ids.par_iter().try_for_each(|id| {
        let im = manifest.image(id).expect("split ids are in the manifest");
        let img = images.load(im).map_err(stage_err("infer"))?;
        let h = infer_heatmap(weights, &img, id).map_err(stage_err("infer"))?;
        save_heatmap(&h, dir).map(|_| ()).map_err(stage_err("infer"))
    })
}
