use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use tracing::warn;

use super::{CorpusError, DatasetTag, ImageRecord};
use crate::filtertree::{apply_filter, FilterLibrary};
use crate::imagegen::{
    background_color, coverage_score, random_coordinate_trees, random_genome, render_coordinate_image,
    render_particle_image, CanvasSpec, CurationThresholds, Grammar, LineTransform,
};
use crate::raster::{RasterImage, Rgb};
use crate::seeds;

/// Crop applied at indexing time to abstract images drawn with a border.
pub const BORDER_CROP: f64 = 0.08;
pub const PALETTE_WIDTH: u32 = 100;
pub const PALETTE_HEIGHT: u32 = 60;

const BORDER_COLOR: Rgb = [255, 255, 255];
const ATTEMPT_FACTOR: usize = 20;

pub type Palette = [Rgb; 5];

#[derive(Debug, Clone)]
pub struct AbstractParams {
    pub count: usize,
    pub seed: u64,
    /// Transform mix for unbordered images, sampled by weight.
    pub transforms: Vec<(LineTransform, f64)>,
    pub canvas: CanvasSpec,
    pub grammar: Grammar,
    pub curation: CurationThresholds,
    /// Share of attempts rendered untransformed with a border frame.
    pub bordered_share: f64,
}

impl Default for AbstractParams {
    fn default() -> Self {
        let t = |s: &str| s.parse::<LineTransform>().expect("builtin transform");
        Self {
            count: 100,
            seed: 0,
            transforms: ["diamond", "grid", "kaleidoscope", "necklace", "oval", "polar", "tron"]
                .into_iter()
                .map(|k| (t(k), 1.0))
                .collect(),
            canvas: CanvasSpec::default(),
            grammar: Grammar::default(),
            curation: CurationThresholds::default(),
            bordered_share: 2500.0 / 9519.0,
        }
    }
}

impl AbstractParams {
    fn validate(&self) -> Result<(), CorpusError> {
        if self.count == 0 {
            return Err(CorpusError::Invalid("abstract count must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.bordered_share) {
            return Err(CorpusError::Invalid("bordered_share must lie in [0, 1]".into()));
        }
        let weights: Vec<f64> = self.transforms.iter().map(|(_, w)| *w).collect();
        if self.bordered_share < 1.0 && !(weights.iter().all(|w| *w >= 0.0) && weights.iter().sum::<f64>() > 0.0) {
            return Err(CorpusError::Invalid("transform weights must be non-negative with a positive sum".into()));
        }
        for (t, _) in &self.transforms {
            t.validate()?;
        }
        self.canvas.validate()?;
        self.grammar.validate()?;
        Ok(())
    }
}

struct Attempt {
    image: RasterImage,
    genome_text: String,
    transform: LineTransform,
    bordered: bool,
}

fn render_attempt(p: &AbstractParams, attempt: u64) -> Result<Option<Attempt>, CorpusError> {
    let mut rng = seeds::rng_for(p.seed, attempt);
    let bordered = rng.gen::<f64>() < p.bordered_share;
    let transform = if bordered {
        LineTransform::Identity
    } else {
        let weights: Vec<f64> = p.transforms.iter().map(|(_, w)| *w).collect();
        let mut x = rng.gen::<f64>() * weights.iter().sum::<f64>();
        let mut pick = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
        for (i, w) in weights.iter().enumerate() {
            if x < *w {
                pick = i;
                break;
            }
            x -= w;
        }
        p.transforms[pick].0
    };
    let genome = random_genome(rng.gen(), &p.grammar)?;
    let mut image = render_particle_image(&genome, &p.canvas, &transform)?;
    let coverage = coverage_score(&image, background_color(&genome, &p.canvas));
    if !p.curation.accepts(coverage) {
        return Ok(None);
    }
    if bordered {
        draw_border(&mut image, BORDER_CROP);
    }
    Ok(Some(Attempt {
        image,
        genome_text: genome.to_string(),
        transform,
        bordered,
    }))
}

/// Paints a frame exactly as wide as [`super::crop_border`] removes.
fn draw_border(img: &mut RasterImage, fraction: f64) {
    let dx = (fraction * img.width() as f64).floor() as u32;
    let dy = (fraction * img.height() as f64).floor() as u32;
    for y in 0..img.height() {
        for x in 0..img.width() {
            if x < dx || y < dy || x >= img.width() - dx || y >= img.height() - dy {
                img.put(x, y, BORDER_COLOR);
            }
        }
    }
}

fn ensure_dir(root: &Path, tag: DatasetTag) -> Result<(), CorpusError> {
    fs::create_dir_all(root.join(tag.prefix()))?;
    Ok(())
}

fn write_png(root: &Path, rel: &str, img: &RasterImage) -> Result<(), CorpusError> {
    let path = root.join(rel);
    img.save_png(&path).map_err(|source| CorpusError::Image { path, source })
}

/// Renders particle images until `count` pass curation, writing PNGs and
/// genome sidecars under `root/abstract/`.
///
/// Attempt `i` depends only on `(seed, i)`, so the output does not depend on
/// how attempts are scheduled.
pub fn build_abstract_dataset(root: &Path, p: &AbstractParams) -> Result<Vec<ImageRecord>, CorpusError> {
    p.validate()?;
    ensure_dir(root, DatasetTag::Abstract)?;
    let budget = ATTEMPT_FACTOR * p.count;
    let mut records = Vec::with_capacity(p.count);
    let mut next = 0usize;
    while records.len() < p.count && next < budget {
        let want = p.count - records.len();
        let batch = (want + want / 4 + 8).min(budget - next);
        let results: Vec<Result<Option<Attempt>, CorpusError>> =
            (next..next + batch).into_par_iter().map(|i| render_attempt(p, i as u64)).collect();
        next += batch;
        let survivors: Vec<Attempt> = results
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .flatten()
            .take(want)
            .collect();
        let base = records.len();
        let written: Vec<ImageRecord> = survivors
            .into_par_iter()
            .enumerate()
            .map(|(j, a)| {
                let id = format!("abstract_{}_{}", p.seed, base + j);
                let rel = format!("{}/{id}.png", DatasetTag::Abstract.prefix());
                write_png(root, &rel, &a.image)?;
                let mut sidecar = format!("# transform {}\n", a.transform);
                if a.bordered {
                    sidecar.push_str("# bordered\n");
                }
                sidecar.push_str(&a.genome_text);
                fs::write(root.join(format!("{}/{id}.genome", DatasetTag::Abstract.prefix())), sidecar)?;
                Ok(ImageRecord {
                    id,
                    tag: DatasetTag::Abstract,
                    path: rel,
                    crop_fraction: if a.bordered { BORDER_CROP } else { 0.0 },
                    offset: None,
                })
            })
            .collect::<Result<_, CorpusError>>()?;
        records.extend(written);
    }
    if records.len() < p.count {
        return Err(CorpusError::BudgetExhausted {
            wanted: p.count,
            made: records.len(),
            attempts: budget,
        });
    }
    Ok(records)
}

/// Applies every filter to every source; ids are `filtered_s<source>_f<filter>`.
pub fn build_filtered_dataset(
    root: &Path,
    sources: &[RasterImage],
    library: &FilterLibrary,
) -> Result<Vec<ImageRecord>, CorpusError> {
    if sources.is_empty() {
        return Err(CorpusError::Invalid("at least one source image is required".into()));
    }
    ensure_dir(root, DatasetTag::Filtered)?;
    fs::write(root.join("filtered/filters.txt"), library.to_sidecar())?;
    let pairs: Vec<(usize, usize)> = (0..sources.len())
        .flat_map(|s| (0..library.len()).map(move |f| (s, f)))
        .collect();
    pairs
        .into_par_iter()
        .map(|(s, f)| {
            let img = apply_filter(&library.filters[f], &sources[s])?;
            let id = format!("filtered_s{s:02}_f{f:04}");
            let rel = format!("filtered/{id}.png");
            write_png(root, &rel, &img)?;
            Ok(ImageRecord {
                id,
                tag: DatasetTag::Filtered,
                path: rel,
                crop_fraction: 0.0,
                offset: None,
            })
        })
        .collect()
}

/// Coordinate-function images standing in for source photographs.
pub fn synthetic_sources(count: usize, seed: u64, size: u32) -> Result<Vec<RasterImage>, CorpusError> {
    let grammar = Grammar::with_max_depth(4);
    (0..count as u64)
        .map(|i| {
            let [r, g, b] = random_coordinate_trees(seeds::derive_seed(seed, i), &grammar)?;
            Ok(render_coordinate_image(&r, &g, &b, size, size)?)
        })
        .collect()
}

/// Five equal-width vertical stripes.
pub fn palette_thumbnail(p: &Palette) -> RasterImage {
    let stripe = PALETTE_WIDTH / 5;
    RasterImage::from_fn(PALETTE_WIDTH, PALETTE_HEIGHT, |x, _| p[(x / stripe).min(4) as usize])
}

pub fn build_palette_dataset(root: &Path, palettes: &[Palette]) -> Result<Vec<ImageRecord>, CorpusError> {
    ensure_dir(root, DatasetTag::Palette)?;
    palettes
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let id = format!("palette_{i:05}");
            let rel = format!("palette/{id}.png");
            write_png(root, &rel, &palette_thumbnail(p))?;
            Ok(ImageRecord {
                id,
                tag: DatasetTag::Palette,
                path: rel,
                crop_fraction: 0.0,
                offset: None,
            })
        })
        .collect()
}

pub fn random_palettes(count: usize, seed: u64) -> Vec<Palette> {
    let mut rng = seeds::rng(seed);
    (0..count).map(|_| std::array::from_fn(|_| rng.gen::<[u8; 3]>())).collect()
}

/// One palette per line: five `#rrggbb` colours separated by whitespace.
/// Blank lines and `#` comments (a `#` followed by a space) are skipped.
pub fn parse_palettes(text: &str) -> Result<Vec<Palette>, CorpusError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("# ") {
            continue;
        }
        let bad = || CorpusError::Invalid(format!("palette line {}: expected five #rrggbb colours", n + 1));
        let colors: Vec<Rgb> = line
            .split_whitespace()
            .map(|c| {
                let hex = c.strip_prefix('#').filter(|h| h.len() == 6).ok_or_else(bad)?;
                let v = u32::from_str_radix(hex, 16).map_err(|_| bad())?;
                Ok([(v >> 16) as u8, (v >> 8) as u8, v as u8])
            })
            .collect::<Result<_, CorpusError>>()?;
        out.push(colors.try_into().map_err(|_| bad())?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalImport {
    pub records: Vec<ImageRecord>,
    /// Files that could not be decoded.
    pub skipped: usize,
}

fn sanitize(stem: &str) -> String {
    stem.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Imports every decodable file in `dir` (not recursive, sorted by name),
/// re-encoding it as PNG under `root/<prefix>/`.
pub fn import_external_dataset(root: &Path, dir: &Path, tag: DatasetTag) -> Result<ExternalImport, CorpusError> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    ensure_dir(root, tag)?;
    let decoded: Vec<Option<(String, RasterImage)>> = files
        .par_iter()
        .map(|path| match RasterImage::open(path) {
            Ok(img) => {
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                Some((sanitize(&stem), img))
            }
            Err(e) => {
                warn!(path = %path.display(), error = %e, "skipping undecodable file");
                None
            }
        })
        .collect();
    let skipped = decoded.iter().filter(|d| d.is_none()).count();
    let mut used = std::collections::HashSet::new();
    let mut records = Vec::new();
    for (stem, img) in decoded.into_iter().flatten() {
        let mut id = format!("{}_{stem}", tag.prefix());
        let mut k = 1;
        while !used.insert(id.clone()) {
            k += 1;
            id = format!("{}_{stem}_{k}", tag.prefix());
        }
        let rel = format!("{}/{id}.png", tag.prefix());
        write_png(root, &rel, &img)?;
        records.push(ImageRecord {
            id,
            tag,
            path: rel,
            crop_fraction: 0.0,
            offset: None,
        });
    }
    Ok(ExternalImport { records, skipped })
}
