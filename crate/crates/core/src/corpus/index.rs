use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{crop_border, CorpusError, DatasetManifest, DatasetTag, ImageRecord};
use crate::annforest::{self, build_forest_flat, ForestParams, QueryResult, RpForest};
use crate::features::{extract_descriptor, DescriptorConfig, EmbeddingVector};
use crate::raster::RasterImage;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const INDEX_FILE: &str = "index.cobs";

pub enum EmbeddingSource<'a> {
    Descriptor(DescriptorConfig),
    External(&'a BTreeMap<String, EmbeddingVector>),
}

fn embed_record(root: &Path, r: &ImageRecord, cfg: &DescriptorConfig) -> Result<EmbeddingVector, CorpusError> {
    let path = root.join(&r.path);
    let img = RasterImage::open(&path).map_err(|source| CorpusError::Image { path, source })?;
    Ok(extract_descriptor(&crop_border(&img, r.crop_fraction)?, cfg)?)
}

/// Embeds every record (after its border crop), builds the forest, assigns
/// offsets in record order and writes `manifest.txt` and `index.cobs` under
/// `root`.
pub fn index_corpus(
    root: &Path,
    manifest: &mut DatasetManifest,
    source: EmbeddingSource,
    params: &ForestParams,
) -> Result<RpForest, CorpusError> {
    if manifest.records.is_empty() {
        return Err(CorpusError::Invalid("manifest has no records".into()));
    }
    let vectors: Vec<EmbeddingVector> = match source {
        EmbeddingSource::Descriptor(cfg) => {
            manifest.descriptor = cfg;
            manifest
                .records
                .par_iter()
                .map(|r| embed_record(root, r, &cfg))
                .collect::<Result<_, _>>()?
        }
        EmbeddingSource::External(map) => manifest
            .records
            .iter()
            .map(|r| map.get(&r.id).cloned().ok_or_else(|| CorpusError::MissingEmbedding(r.id.clone())))
            .collect::<Result<_, _>>()?,
    };
    let dim = vectors[0].dim();
    let mut flat = Vec::with_capacity(vectors.len() * dim);
    for v in &vectors {
        if v.dim() != dim {
            return Err(annforest::IndexError::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            }
            .into());
        }
        flat.extend(v.to_f32());
    }
    let mut forest = build_forest_flat(dim, flat, params)?;
    for (i, r) in manifest.records.iter_mut().enumerate() {
        r.offset = Some(i as u32);
    }
    manifest.seeds.insert("forest".into(), params.seed);
    forest.set_manifest_ref(MANIFEST_FILE);
    annforest::save_index(&forest, MANIFEST_FILE, &root.join(INDEX_FILE))?;
    manifest.save(&root.join(MANIFEST_FILE))?;
    Ok(forest)
}

/// A loaded corpus: manifest, index and the mapping between them.
#[derive(Debug)]
pub struct CorpusIndex {
    root: PathBuf,
    manifest: DatasetManifest,
    forest: RpForest,
    by_offset: Vec<usize>,
    by_id: HashMap<String, usize>,
}

impl CorpusIndex {
    pub fn open(root: &Path) -> Result<Self, CorpusError> {
        Self::open_files(root, &root.join(MANIFEST_FILE), &root.join(INDEX_FILE))
    }

    /// Image paths in the manifest resolve against `root`.
    pub fn open_files(root: &Path, manifest: &Path, index: &Path) -> Result<Self, CorpusError> {
        let m = DatasetManifest::load(manifest)?;
        let f = annforest::load_index(index)?;
        Self::from_parts(root, m, f)
    }

    pub fn from_parts(root: &Path, manifest: DatasetManifest, forest: RpForest) -> Result<Self, CorpusError> {
        if manifest.records.len() != forest.len() {
            return Err(CorpusError::Invalid(format!(
                "manifest has {} records but index has {} items",
                manifest.records.len(),
                forest.len()
            )));
        }
        let mut by_offset = vec![usize::MAX; forest.len()];
        let mut by_id = HashMap::with_capacity(manifest.records.len());
        for (i, r) in manifest.records.iter().enumerate() {
            let o = r
                .offset
                .filter(|&o| (o as usize) < forest.len() && by_offset[o as usize] == usize::MAX)
                .ok_or_else(|| CorpusError::Invalid(format!("record `{}` has a missing or clashing offset", r.id)))?;
            by_offset[o as usize] = i;
            by_id.insert(r.id.clone(), i);
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            forest,
            by_offset,
            by_id,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn forest(&self) -> &RpForest {
        &self.forest
    }

    pub fn len(&self) -> usize {
        self.by_offset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_offset.is_empty()
    }

    pub fn record(&self, id: &str) -> Option<&ImageRecord> {
        self.by_id.get(id).map(|&i| &self.manifest.records[i])
    }

    pub fn record_at(&self, offset: u32) -> &ImageRecord {
        &self.manifest.records[self.by_offset[offset as usize]]
    }

    pub fn offset_of(&self, id: &str) -> Option<u32> {
        self.record(id).and_then(|r| r.offset)
    }

    /// Tags present in the corpus, in canonical order.
    pub fn datasets(&self) -> Vec<(DatasetTag, usize)> {
        self.manifest.counts().into_iter().collect()
    }

    pub fn image_path(&self, id: &str) -> Option<PathBuf> {
        self.record(id).map(|r| self.root.join(&r.path))
    }

    /// Descriptor of an arbitrary image with the corpus configuration.
    pub fn embed(&self, img: &RasterImage) -> Result<Vec<f32>, CorpusError> {
        let v = extract_descriptor(img, &self.manifest.descriptor)?;
        if v.dim() != self.forest.dim() {
            return Err(CorpusError::Invalid(format!(
                "descriptor dimension {} does not match index dimension {}",
                v.dim(),
                self.forest.dim()
            )));
        }
        Ok(v.to_f32())
    }

    /// Embedding of an indexed record exactly as its index entry was built.
    pub fn embed_record(&self, id: &str) -> Result<Vec<f32>, CorpusError> {
        let r = self.record(id).ok_or_else(|| CorpusError::UnknownImage(id.to_string()))?;
        Ok(embed_record(&self.root, r, &self.manifest.descriptor)?.to_f32())
    }

    /// The stored image with its border crop applied.
    pub fn analysed_image(&self, id: &str) -> Result<RasterImage, CorpusError> {
        let r = self.record(id).ok_or_else(|| CorpusError::UnknownImage(id.to_string()))?;
        let path = self.root.join(&r.path);
        let img = RasterImage::open(&path).map_err(|source| CorpusError::Image { path, source })?;
        crop_border(&img, r.crop_fraction)
    }

    pub fn stored_vector(&self, id: &str) -> Option<&[f32]> {
        self.offset_of(id).map(|o| self.forest.vector(o))
    }

    pub fn query(&self, q: &[f32], k: usize, search_k: usize) -> Result<Vec<(&ImageRecord, QueryResult)>, CorpusError> {
        self.query_where(q, k, search_k, |_| true)
    }

    pub fn query_where(
        &self,
        q: &[f32],
        k: usize,
        search_k: usize,
        keep: impl Fn(&ImageRecord) -> bool,
    ) -> Result<Vec<(&ImageRecord, QueryResult)>, CorpusError> {
        let hits = self.forest.query_filtered(q, k, search_k, |o| keep(self.record_at(o)))?;
        Ok(hits.into_iter().map(|h| (self.record_at(h.id), h)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_palette_dataset, random_palettes};

    fn palette_corpus(n: usize) -> (tempfile::TempDir, DatasetManifest) {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DatasetManifest::default();
        m.extend(build_palette_dataset(dir.path(), &random_palettes(n, 3)).unwrap()).unwrap();
        (dir, m)
    }

    fn small_params() -> ForestParams {
        ForestParams {
            n_trees: 8,
            leaf_size: 8,
            seed: 1,
        }
    }

    #[test]
    fn self_retrieval_and_reload() {
        let (dir, mut m) = palette_corpus(60);
        index_corpus(dir.path(), &mut m, EmbeddingSource::Descriptor(DescriptorConfig::default()), &small_params())
            .unwrap();
        let c = CorpusIndex::open(dir.path()).unwrap();
        assert_eq!(c.len(), 60);
        for r in &c.manifest().records {
            let img = RasterImage::open(&dir.path().join(&r.path)).unwrap();
            let hits = c.query(&c.embed(&img).unwrap(), 1, 200).unwrap();
            assert_eq!(hits[0].0.id, r.id);
            assert!(hits[0].1.distance < 1e-6);
        }
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let (dir, mut m) = palette_corpus(30);
        let cfg = DescriptorConfig::default();
        index_corpus(dir.path(), &mut m, EmbeddingSource::Descriptor(cfg), &small_params()).unwrap();
        let first = std::fs::read(dir.path().join(INDEX_FILE)).unwrap();
        let first_m = std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        index_corpus(dir.path(), &mut m, EmbeddingSource::Descriptor(cfg), &small_params()).unwrap();
        assert_eq!(std::fs::read(dir.path().join(INDEX_FILE)).unwrap(), first);
        assert_eq!(std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), first_m);
    }

    #[test]
    fn external_embeddings() {
        let (dir, mut m) = palette_corpus(5);
        let mut emb: BTreeMap<String, EmbeddingVector> = m
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let v = (0..8).map(|j| if j == i { 1.0 } else { 0.1 }).collect();
                (r.id.clone(), EmbeddingVector::normalized(v).unwrap())
            })
            .collect();
        let f = index_corpus(dir.path(), &mut m, EmbeddingSource::External(&emb), &small_params()).unwrap();
        assert_eq!(f.dim(), 8);
        emb.remove(&m.records[2].id);
        assert!(matches!(
            index_corpus(dir.path(), &mut m, EmbeddingSource::External(&emb), &small_params()),
            Err(CorpusError::MissingEmbedding(id)) if id == m.records[2].id
        ));
    }

    #[test]
    fn cropped_records_are_served_full_size() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("abstract")).unwrap();
        let img = RasterImage::from_fn(50, 50, |x, y| [(x * 5) as u8, (y * 5) as u8, 40]);
        img.save_png(&dir.path().join("abstract/a.png")).unwrap();
        let mut m = DatasetManifest::default();
        m.extend(vec![ImageRecord {
            id: "a".into(),
            tag: DatasetTag::Abstract,
            path: "abstract/a.png".into(),
            crop_fraction: 0.08,
            offset: None,
        }])
        .unwrap();
        index_corpus(dir.path(), &mut m, EmbeddingSource::Descriptor(DescriptorConfig::default()), &small_params())
            .unwrap();
        let c = CorpusIndex::open(dir.path()).unwrap();
        let served = RasterImage::open(&c.image_path("a").unwrap()).unwrap();
        let analysed = crop_border(&served, 0.08).unwrap();
        assert!(served.width() > analysed.width() && served.height() > analysed.height());
        let stored = c.stored_vector("a").unwrap();
        assert_eq!(c.embed_record("a").unwrap(), stored);
        assert_ne!(c.embed(&served).unwrap(), stored);
    }
}
