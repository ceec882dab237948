//! Car localization from image-level labels.
//!
//! A small convolutional classifier is trained on one label space (human
//! make/model/year labels, merged pairs, random labels, or k-means
//! pseudo-labels over backbone embeddings). Its class activation map for each
//! test image is thresholded, closed and reduced to the bounding rectangle of
//! the largest connected region, and scored by mean IoU.
//!
//! ```no_run
//! use carloc_core::pipeline::{run_pipeline, PipelineConfig};
//!
//! let cfg = PipelineConfig::load(std::path::Path::new("exp.toml"))?;
//! let out = run_pipeline(&cfg)?;
//! println!("{} mIoU {:.4}", out.report.run_name, out.report.miou);
//! # Ok::<(), carloc_core::pipeline::PipelineError>(())
//! ```

pub mod boxer;
pub mod camnet;
pub mod evalsuite;
pub mod geometry;
pub mod ingest;
pub mod labeling;
pub mod pipeline;
pub mod raster;
pub mod tensorfile;
pub mod viz;

pub use boxer::{BoxerConfig, Prediction};
pub use camnet::{CamModelSpec, CamWeights, Heatmap, TrainConfig};
pub use evalsuite::EvalReport;
pub use geometry::{bbox_iou, BBox, ImageRef};
pub use ingest::{DatasetManifest, LabelField, Split};
pub use labeling::{ClusterResult, FeatureTable, LabelAssignment, LabelKind};
pub use pipeline::{run_pipeline, PipelineConfig};
