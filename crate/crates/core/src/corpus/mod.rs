//! Dataset construction, manifests and corpus-level indexing.

mod config;
mod datasets;
mod index;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::annforest::IndexError;
use crate::features::FeatureError;
use crate::filtertree::FilterError;
use crate::imagegen::ImageGenError;
use crate::raster::{RasterError, RasterImage};

pub use config::{build_corpus, AbstractSection, CorpusConfig, ExternalSection, FilteredSection, PaletteSection};
pub use datasets::{
    build_abstract_dataset, build_filtered_dataset, build_palette_dataset, import_external_dataset, palette_thumbnail,
    parse_palettes, random_palettes, synthetic_sources, AbstractParams, ExternalImport, Palette, BORDER_CROP,
    PALETTE_HEIGHT, PALETTE_WIDTH,
};
pub use index::{index_corpus, CorpusIndex, EmbeddingSource, INDEX_FILE, MANIFEST_FILE};
pub use manifest::{DatasetManifest, ImageRecord};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("only {made} of {wanted} images survived curation in {attempts} attempts")]
    BudgetExhausted { wanted: usize, made: usize, attempts: usize },
    #[error("no embedding for `{0}`")]
    MissingEmbedding(String),
    #[error("unknown image `{0}`")]
    UnknownImage(String),
    #[error("duplicate image id `{0}`")]
    DuplicateId(String),
    #[error("crop fraction {0} outside [0, 0.25]")]
    InvalidCrop(f64),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("invalid corpus input: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: RasterError },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    ImageGen(#[from] ImageGenError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DatasetTag {
    Abstract,
    Filtered,
    WikiartLikeExternal,
    ArchiveLikeExternal,
    Palette,
}

impl DatasetTag {
    pub const ALL: [DatasetTag; 5] = [
        DatasetTag::Abstract,
        DatasetTag::Filtered,
        DatasetTag::WikiartLikeExternal,
        DatasetTag::ArchiveLikeExternal,
        DatasetTag::Palette,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetTag::Abstract => "abstract",
            DatasetTag::Filtered => "filtered",
            DatasetTag::WikiartLikeExternal => "wikiart-like-external",
            DatasetTag::ArchiveLikeExternal => "archive-like-external",
            DatasetTag::Palette => "palette",
        }
    }

    /// Short form used in image ids and directory names.
    pub fn prefix(self) -> &'static str {
        match self {
            DatasetTag::Abstract => "abstract",
            DatasetTag::Filtered => "filtered",
            DatasetTag::WikiartLikeExternal => "wikiart",
            DatasetTag::ArchiveLikeExternal => "archive",
            DatasetTag::Palette => "palette",
        }
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetTag {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DatasetTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| CorpusError::Invalid(format!("unknown dataset tag `{s}`")))
    }
}

/// Removes `floor(fraction * dim)` pixels from each side.
pub fn crop_border(img: &RasterImage, fraction: f64) -> Result<RasterImage, CorpusError> {
    if !(0.0..=0.25).contains(&fraction) {
        return Err(CorpusError::InvalidCrop(fraction));
    }
    let dx = (fraction * img.width() as f64).floor() as u32;
    let dy = (fraction * img.height() as f64).floor() as u32;
    if dx == 0 && dy == 0 {
        return Ok(img.clone());
    }
    Ok(img.sub_image(dx, dy, img.width() - 2 * dx, img.height() - 2 * dy))
}
