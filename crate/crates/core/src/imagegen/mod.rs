//! Abstract image generation: expression-tree particle systems, line
//! transforms, coordinate-function images and coverage-based curation.

mod expr;
mod genome;
mod render;
mod transform;

use thiserror::Error;

pub use expr::{
    eval_expr, BinaryOp, Bindings, ExprNode, ExpressionTree, Grammar, Symbol, UnaryOp, MAX_TREE_DEPTH,
};
pub use genome::{mutate_genome, random_coordinate_trees, random_genome, ParticleGenome, INIT_INPUTS, UPDATE_INPUTS};
pub use render::{
    background_color, coverage_score, render_coordinate_image, render_particle_image, Background,
    CanvasSpec, CurationThresholds, COVERAGE_THRESHOLD,
};
pub use transform::{apply_line_transform, LineTransform, Point, Primitive, Segment};


#[derive(Debug, Error)]
pub enum ImageGenError {
    #[error("input `{0}` is not bound")]
    UnboundInput(Symbol),
    #[error("tree depth {depth} exceeds limit {max}")]
    DepthExceeded { depth: usize, max: usize },
    #[error("segment has non-finite coordinates")]
    InvalidSegment,
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error("invalid canvas: {0}")]
    InvalidCanvas(String),
    #[error("invalid grammar: {0}")]
    InvalidGrammar(String),
    #[error("invalid genome: {0}")]
    InvalidGenome(String),
    #[error("mutation rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("parse error: {0}")]
    Parse(String),
}
