//! Image descriptors and the cosine metric used for retrieval.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use image::imageops::{self, FilterType};
use thiserror::Error;

use crate::raster::RasterImage;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("image {width}x{height} is smaller than 16x16")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("vector has zero norm or non-finite entries")]
    Degenerate,
    #[error("invalid descriptor config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: dimension {found}, expected {expected}")]
    InconsistentDimension { line: usize, expected: usize, found: usize },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A unit-length feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Scales `values` to unit length.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, FeatureError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::Degenerate);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return Err(FeatureError::Degenerate);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&v| v as f32).collect()
    }
}

/// `1 - a·b`, clamped into `[0, 2]` against rounding.
pub fn cosine_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, FeatureError> {
    if a.dim() != b.dim() {
        return Err(FeatureError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorConfig {
    pub grid: u32,
    pub color_bins: u32,
    pub gradient_bins: u32,
    pub resize_edge: u32,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            grid: 4,
            color_bins: 8,
            gradient_bins: 8,
            resize_edge: 128,
        }
    }
}

impl DescriptorConfig {
    pub fn dimension(&self) -> usize {
        (self.grid * self.grid * (3 * self.color_bins + self.gradient_bins)) as usize
    }

    fn cell_len(&self) -> usize {
        (3 * self.color_bins + self.gradient_bins) as usize
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::InvalidConfig(m.into()));
        if self.grid == 0 || self.color_bins == 0 || self.gradient_bins == 0 {
            return bad("grid and bin counts must be >= 1");
        }
        if self.color_bins > 256 {
            return bad("at most 256 colour bins");
        }
        if self.resize_edge < self.grid {
            return bad("resize_edge must be at least the grid size");
        }
        Ok(())
    }
}

fn resize_for(img: &RasterImage, edge: u32) -> RasterImage {
    let (w, h) = (img.width(), img.height());
    let short = w.min(h);
    if short == edge {
        return img.clone();
    }
    let scale = |v: u32| ((v as u64 * edge as u64 + short as u64 / 2) / short as u64).max(1) as u32;
    let (nw, nh) = if w <= h { (edge, scale(h)) } else { (scale(w), edge) };
    RasterImage::from_rgb_image(imageops::resize(&img.to_rgb_image(), nw, nh, FilterType::Triangle))
}

/// Grid of colour and gradient-orientation histograms.
///
/// Layout is cell-major (row by row); each cell holds the red, green and blue
/// histograms followed by the orientation histogram. The colour and gradient
/// parts are scaled to unit length separately before the whole vector is.
pub fn extract_descriptor(img: &RasterImage, cfg: &DescriptorConfig) -> Result<EmbeddingVector, FeatureError> {
    cfg.validate()?;
    if img.width() < 16 || img.height() < 16 {
        return Err(FeatureError::ImageTooSmall {
            width: img.width(),
            height: img.height(),
        });
    }
    let img = resize_for(img, cfg.resize_edge);
    let (w, h) = (img.width() as usize, img.height() as usize);
    let px = img.pixels();
    let luma: Vec<f64> = px
        .chunks_exact(3)
        .map(|c| 0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64)
        .collect();

    let grid = cfg.grid as usize;
    let (cb, gb) = (cfg.color_bins as usize, cfg.gradient_bins as usize);
    let cell_len = cfg.cell_len();
    let mut out = vec![0.0f64; cfg.dimension()];

    for cy in 0..grid {
        let (y0, y1) = (cy * h / grid, (cy + 1) * h / grid);
        for cx in 0..grid {
            let (x0, x1) = (cx * w / grid, (cx + 1) * w / grid);
            let cell = &mut out[(cy * grid + cx) * cell_len..][..cell_len];
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            for y in y0..y1 {
                for x in x0..x1 {
                    let i = y * w + x;
                    for ch in 0..3 {
                        let bin = px[3 * i + ch] as usize * cb / 256;
                        cell[ch * cb + bin] += 1.0 / count;
                    }
                    let gx = luma[y * w + (x + 1).min(w - 1)] - luma[y * w + x.saturating_sub(1)];
                    let gy = luma[(y + 1).min(h - 1) * w + x] - luma[y.saturating_sub(1) * w + x];
                    let mag = gx.hypot(gy);
                    if mag > 0.0 {
                        let theta = gy.atan2(gx).rem_euclid(PI);
                        let bin = ((theta / PI * gb as f64) as usize).min(gb - 1);
                        cell[3 * cb + bin] += mag;
                    }
                }
            }
        }
    }

    let is_color = |i: usize| i % cell_len < 3 * cb;
    for part in [true, false] {
        let norm = out
            .iter()
            .enumerate()
            .filter(|(i, _)| is_color(*i) == part)
            .map(|(_, v)| v * v)
            .sum::<f64>()
            .sqrt();
        if norm > 1e-12 {
            out.iter_mut()
                .enumerate()
                .filter(|(i, _)| is_color(*i) == part)
                .for_each(|(_, v)| *v /= norm);
        }
    }
    EmbeddingVector::normalized(out)
}

/// Reads `<id> <f1> ... <fD>` rows. Blank lines are ignored.
pub fn load_external_embeddings(path: &Path) -> Result<BTreeMap<String, EmbeddingVector>, FeatureError> {
    parse_external_embeddings(&std::fs::read_to_string(path)?)
}

pub fn parse_external_embeddings(text: &str) -> Result<BTreeMap<String, EmbeddingVector>, FeatureError> {
    let mut out = BTreeMap::new();
    let mut dim = None;
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let mut fields = line.split_whitespace();
        let Some(id) = fields.next() else { continue };
        let values = fields
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| FeatureError::MalformedRow {
                line: line_no,
                reason: e.to_string(),
            })?;
        if values.is_empty() {
            return Err(FeatureError::MalformedRow {
                line: line_no,
                reason: "no values".into(),
            });
        }
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected {
            return Err(FeatureError::InconsistentDimension {
                line: line_no,
                expected,
                found: values.len(),
            });
        }
        let v = EmbeddingVector::normalized(values).map_err(|_| FeatureError::MalformedRow {
            line: line_no,
            reason: "zero or non-finite vector".into(),
        })?;
        if out.insert(id.to_string(), v).is_some() {
            return Err(FeatureError::DuplicateId(id.to_string()));
        }
    }
    Ok(out)
}
