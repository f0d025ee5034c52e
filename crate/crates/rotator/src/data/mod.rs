//! Procedural rotating-object datasets: generation, on-disk container,
//! and sequence sampling.

pub mod dataset;
pub mod geometry;
pub mod render;
pub mod sampler;

pub use dataset::{generate, load, Dataset, GenConfig, Manifest};
pub use geometry::{GeometryMode, ViewGeometry};
pub use render::{render_object, ObjectSpec};
pub use sampler::{enumerate_sequences, sample_sequences, DirectionPolicy, RotationSequence};
