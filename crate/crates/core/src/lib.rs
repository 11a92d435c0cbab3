//! Visual-similarity retrieval over generated and filtered imagery.
//!
//! * [`imagegen`] renders abstract images from expression-tree particle systems.
//! * [`filtertree`] builds and applies random image-filter trees.
//! * [`features`] turns images into unit-norm embedding vectors.
//! * [`annforest`] indexes embeddings in a forest of random partition trees.
//! * [`corpus`] assembles datasets, manifests and the on-disk index.
//! * [`evalkit`] holds the trial generator and evaluation statistics.

pub mod annforest;
pub mod corpus;
pub mod evalkit;
pub mod features;
pub mod filtertree;
pub mod imagegen;
pub mod raster;
pub mod seeds;
pub mod sexpr;

pub use raster::{RasterImage, Rgb};
