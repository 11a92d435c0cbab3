use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{
    build_abstract_dataset, build_filtered_dataset, build_palette_dataset, import_external_dataset, index_corpus,
    parse_palettes, random_palettes, synthetic_sources, AbstractParams, CorpusError, DatasetManifest, DatasetTag,
    EmbeddingSource,
};
use crate::annforest::{ForestParams, RpForest};
use crate::features::{load_external_embeddings, DescriptorConfig};
use crate::filtertree::random_filter_library_for;
use crate::imagegen::{Background, CanvasSpec, CurationThresholds, LineTransform};
use crate::raster::RasterImage;

/// Corpus description read from TOML. Relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    #[serde(default)]
    pub descriptor: DescriptorConfig,
    #[serde(default)]
    pub forest: ForestParams,
    /// `<id> <f1> ... <fD>` file used instead of the built-in descriptor.
    pub embeddings: Option<PathBuf>,
    #[serde(rename = "abstract")]
    pub abstract_art: Option<AbstractSection>,
    pub filtered: Option<FilteredSection>,
    pub palette: Option<PaletteSection>,
    #[serde(default)]
    pub external: Vec<ExternalSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractSection {
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_canvas_edge")]
    pub width: u32,
    #[serde(default = "default_canvas_edge")]
    pub height: u32,
    #[serde(default = "default_particles")]
    pub particles: u32,
    #[serde(default = "default_timesteps")]
    pub timesteps: u32,
    #[serde(default = "default_blur")]
    pub blur_radius: u32,
    /// `kind[:param]` names; defaults to all seven transforms.
    #[serde(default)]
    pub transforms: Vec<String>,
    /// One weight per transform; equal weights if omitted.
    #[serde(default)]
    pub weights: Vec<f64>,
    pub bordered_share: Option<f64>,
    pub min_coverage: Option<f64>,
    pub max_coverage: Option<f64>,
    pub max_depth: Option<usize>,
}

fn default_canvas_edge() -> u32 {
    256
}
fn default_particles() -> u32 {
    1000
}
fn default_timesteps() -> u32 {
    100
}
fn default_blur() -> u32 {
    1
}
fn default_source_size() -> u32 {
    128
}
fn default_filter_depth() -> usize {
    5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilteredSection {
    pub filters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_filter_depth")]
    pub max_depth: usize,
    /// Directory of source photographs; synthetic sources are generated when absent.
    pub sources_dir: Option<PathBuf>,
    #[serde(default)]
    pub synthetic_sources: usize,
    #[serde(default = "default_source_size")]
    pub source_size: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaletteSection {
    /// Number of random palettes; ignored when `file` is given.
    #[serde(default)]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSection {
    pub tag: String,
    pub dir: PathBuf,
}

impl CorpusConfig {
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        toml::from_str(text).map_err(|e| CorpusError::Invalid(format!("corpus config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

impl AbstractSection {
    pub fn params(&self) -> Result<AbstractParams, CorpusError> {
        let mut p = AbstractParams {
            count: self.count,
            seed: self.seed,
            canvas: CanvasSpec {
                width: self.width,
                height: self.height,
                particle_count: self.particles,
                timesteps: self.timesteps,
                blur_radius: self.blur_radius,
                background: Background::RandomMonotone,
            },
            ..AbstractParams::default()
        };
        if !self.transforms.is_empty() {
            let weights = if self.weights.is_empty() {
                vec![1.0; self.transforms.len()]
            } else if self.weights.len() == self.transforms.len() {
                self.weights.clone()
            } else {
                return Err(CorpusError::Invalid("abstract.weights must match abstract.transforms".into()));
            };
            p.transforms = self
                .transforms
                .iter()
                .zip(weights)
                .map(|(t, w)| Ok((t.parse::<LineTransform>()?, w)))
                .collect::<Result<_, CorpusError>>()?;
        }
        if let Some(b) = self.bordered_share {
            p.bordered_share = b;
        }
        let d = CurationThresholds::default();
        p.curation = CurationThresholds {
            min_coverage: self.min_coverage.unwrap_or(d.min_coverage),
            max_coverage: self.max_coverage.unwrap_or(d.max_coverage),
        };
        if let Some(depth) = self.max_depth {
            p.grammar.max_depth = depth;
        }
        Ok(p)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_sources(dir: &Path) -> Result<Vec<RasterImage>, CorpusError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|path| RasterImage::open(&path).map_err(|source| CorpusError::Image { path, source }))
        .collect()
}

/// Builds every configured dataset under `out`, then indexes the result.
/// Datasets are laid out in canonical tag order so that offsets, and
/// therefore the index bytes, depend only on the config.
pub fn build_corpus(
    cfg: &CorpusConfig,
    config_dir: &Path,
    out: &Path,
) -> Result<(DatasetManifest, RpForest), CorpusError> {
    std::fs::create_dir_all(out)?;
    let mut m = DatasetManifest::default();

    if let Some(a) = &cfg.abstract_art {
        m.seeds.insert("abstract".into(), a.seed);
        m.extend(build_abstract_dataset(out, &a.params()?)?)?;
    }
    if let Some(f) = &cfg.filtered {
        let sources = match &f.sources_dir {
            Some(dir) => load_sources(&resolve(config_dir, dir))?,
            None => synthetic_sources(f.synthetic_sources, f.seed, f.source_size)?,
        };
        let library = random_filter_library_for(f.seed, f.filters, f.max_depth, &sources)?;
        m.seeds.insert("filtered".into(), f.seed);
        m.extend(build_filtered_dataset(out, &sources, &library)?)?;
    }
    let mut externals: Vec<(DatasetTag, PathBuf)> = cfg
        .external
        .iter()
        .map(|e| Ok((e.tag.parse::<DatasetTag>()?, resolve(config_dir, &e.dir))))
        .collect::<Result<_, CorpusError>>()?;
    externals.sort_by_key(|(t, _)| *t);
    for (tag, dir) in externals {
        let imported = import_external_dataset(out, &dir, tag)?;
        if imported.skipped > 0 {
            tracing::warn!(tag = %tag, skipped = imported.skipped, "some external images were skipped");
        }
        m.extend(imported.records)?;
    }
    if let Some(p) = &cfg.palette {
        let palettes = match &p.file {
            Some(file) => parse_palettes(&std::fs::read_to_string(resolve(config_dir, file))?)?,
            None => random_palettes(p.count, p.seed),
        };
        m.seeds.insert("palette".into(), p.seed);
        m.extend(build_palette_dataset(out, &palettes)?)?;
    }

    let forest = match &cfg.embeddings {
        Some(path) => {
            let emb = load_external_embeddings(&resolve(config_dir, path))?;
            index_corpus(out, &mut m, EmbeddingSource::External(&emb), &cfg.forest)?
        }
        None => index_corpus(out, &mut m, EmbeddingSource::Descriptor(cfg.descriptor), &cfg.forest)?,
    };
    Ok((m, forest))
}
