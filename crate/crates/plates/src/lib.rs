//! Synthetic license plates and the plate-reading evaluation pipeline.

pub mod font;
pub mod image_ops;
pub mod lpr;
pub mod synth;

pub use image_ops::Image;
pub use lpr::{cer, box_overlap, evaluate_pipeline, PipelineReport, TemplateRecognizer};
pub use synth::{center_crop, overlay, random_spec, render, BoundingBox, PlateConfig, PlateSpec};
