//! Data pipeline: annotations, rasterization, edge maps, sample assembly,
//! and the synthetic dataset generator.

pub mod annotations;
pub mod dataset;
pub mod edge;
pub mod font;
pub mod raster;
pub mod sample;
pub mod synth;

pub use annotations::{parse_annotations, write_annotations, Annotation};
pub use dataset::{load_dataset, write_dataset, THREADS_ENV};
pub use sample::{
    build_sample, filter_regions, min_dim_for, replacement_content, replacement_masks, Sample,
};
pub use synth::{generate_image, generate_synthetic, SynthImage, SynthSpec};
