use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use obscura_core::annforest::DEFAULT_SEARCH_K;
use obscura_core::corpus::{CorpusIndex, DatasetTag};
use obscura_core::RasterImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boards::{BoardStore, Pin};
use crate::ServiceError;

pub const RESULTS_PER_SET: usize = 10;
pub const HISTORY_CAPACITY: usize = 50;
/// Prefix of content-addressed upload references.
pub const UPLOAD_PREFIX: &str = "sha256:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeedRef {
    Upload { hash: String },
    Image { id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub id: String,
    pub dataset: String,
    pub distance: f32,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSet {
    pub seed: SeedRef,
    /// Grouped by dataset in canonical order, nearest first within a group.
    pub results: Vec<ResultEntry>,
    /// Fewer than this many results means the corpus could not fill the set.
    pub requested: usize,
    pub timestamp_ms: u64,
}

impl RetrievalSet {
    pub fn ids(&self) -> Vec<&str> {
        self.results.iter().map(|r| r.id.as_str()).collect()
    }
}

#[derive(Debug, Default)]
struct Session {
    current: Option<RetrievalSet>,
    history: VecDeque<RetrievalSet>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetInfo {
    pub dataset: String,
    pub count: usize,
    /// Boxes this dataset gets in a full result set.
    pub slots: usize,
}

/// How many of `total` boxes each of `m` datasets gets: `total / m` each,
/// the remainder going to the first datasets in canonical order.
pub fn allocation(total: usize, m: usize) -> Vec<usize> {
    if m == 0 {
        return Vec::new();
    }
    (0..m).map(|i| total / m + usize::from(i < total % m)).collect()
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(UPLOAD_PREFIX.len() + 64);
    s.push_str(UPLOAD_PREFIX);
    for b in digest.iter() {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn hash_is_valid(r: &str) -> bool {
    r.strip_prefix(UPLOAD_PREFIX)
        .is_some_and(|h| h.len() == 64 && h.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')))
}

/// Search, history, pin and upload state shared by all requests.
pub struct Engine {
    index: Option<Arc<CorpusIndex>>,
    /// Hash of each stored file whose indexed vector was built from a crop,
    /// so a byte-identical upload reuses the indexed vector.
    cropped_files: HashMap<String, String>,
    uploads_dir: PathBuf,
    boards: BoardStore,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    search_k: usize,
}

impl Engine {
    /// `index` may be absent, in which case searches fail with
    /// [`ServiceError::IndexUnavailable`] while boards keep working.
    pub fn new(index: Option<CorpusIndex>, boards_dir: &Path) -> Result<Self, ServiceError> {
        let uploads_dir = boards_dir.join("uploads");
        std::fs::create_dir_all(&uploads_dir)?;
        let mut cropped_files = HashMap::new();
        if let Some(ix) = &index {
            for r in ix.manifest().records.iter().filter(|r| r.crop_fraction > 0.0) {
                let bytes = std::fs::read(ix.root().join(&r.path))?;
                cropped_files.insert(content_hash(&bytes), r.id.clone());
            }
        }
        Ok(Self {
            index: index.map(Arc::new),
            cropped_files,
            uploads_dir,
            boards: BoardStore::open(boards_dir)?,
            sessions: Mutex::new(HashMap::new()),
            search_k: DEFAULT_SEARCH_K,
        })
    }

    pub fn with_search_k(mut self, search_k: usize) -> Self {
        self.search_k = search_k.max(1);
        self
    }

    fn index(&self) -> Result<&CorpusIndex, ServiceError> {
        self.index.as_deref().ok_or(ServiceError::IndexUnavailable)
    }

    pub fn boards(&self) -> &BoardStore {
        &self.boards
    }

    pub fn datasets(&self) -> Result<Vec<DatasetInfo>, ServiceError> {
        let ds = self.index()?.datasets();
        let slots = allocation(RESULTS_PER_SET, ds.len());
        Ok(ds
            .into_iter()
            .zip(slots)
            .map(|((tag, count), slots)| DatasetInfo {
                dataset: tag.to_string(),
                count,
                slots,
            })
            .collect())
    }

    /// Nearest images per dataset under the fixed allocation. A dataset with
    /// fewer images than its share leaves boxes that go to the nearest
    /// remaining candidates of any dataset.
    pub fn retrieve(&self, q: &[f32], exclude: Option<&str>) -> Result<Vec<ResultEntry>, ServiceError> {
        let ix = self.index()?;
        let datasets: Vec<DatasetTag> = ix.datasets().into_iter().map(|(t, _)| t).collect();
        let slots = allocation(RESULTS_PER_SET, datasets.len());
        let mut per: Vec<Vec<(f32, String)>> = Vec::with_capacity(datasets.len());
        for &tag in &datasets {
            let hits = ix.query_where(q, RESULTS_PER_SET, self.search_k, |r| {
                r.tag == tag && Some(r.id.as_str()) != exclude
            })?;
            per.push(hits.into_iter().map(|(r, h)| (h.distance, r.id.clone())).collect());
        }
        let mut take: Vec<usize> = per.iter().zip(&slots).map(|(hits, &s)| s.min(hits.len())).collect();
        let mut missing = RESULTS_PER_SET - take.iter().sum::<usize>();
        while missing > 0 {
            let next = per
                .iter()
                .enumerate()
                .filter(|(d, hits)| take[*d] < hits.len())
                .min_by(|(da, a), (db, b)| a[take[*da]].0.total_cmp(&b[take[*db]].0).then(da.cmp(db)));
            let Some((d, _)) = next else { break };
            take[d] += 1;
            missing -= 1;
        }
        let mut out = Vec::new();
        for ((tag, hits), n) in datasets.iter().zip(per).zip(take) {
            for (distance, id) in hits.into_iter().take(n) {
                out.push(ResultEntry {
                    url: format!("/api/image/{id}"),
                    id,
                    dataset: tag.to_string(),
                    distance,
                });
            }
        }
        Ok(out)
    }

    fn session(&self, id: &str) -> Arc<Mutex<Session>> {
        let mut s = self.sessions.lock().expect("session map poisoned");
        Arc::clone(s.entry(id.to_string()).or_default())
    }

    fn record(&self, session: &str, set: RetrievalSet) -> usize {
        let s = self.session(session);
        let mut s = s.lock().expect("session poisoned");
        if let Some(prev) = s.current.replace(set) {
            if s.history.len() == HISTORY_CAPACITY {
                s.history.pop_front();
            }
            s.history.push_back(prev);
        }
        s.history.len()
    }

    /// Searches with an uploaded image and stores the bytes under their hash.
    pub fn search_upload(&self, session: &str, bytes: &[u8]) -> Result<(RetrievalSet, usize), ServiceError> {
        let ix = self.index()?;
        let img = RasterImage::decode(bytes).map_err(|e| ServiceError::UndecodableImage(e.to_string()))?;
        let hash = content_hash(bytes);
        let q = match self.cropped_files.get(&hash).and_then(|id| ix.stored_vector(id)) {
            Some(v) => v.to_vec(),
            None => ix.embed(&img)?,
        };
        self.store_upload(&hash, bytes)?;
        let set = RetrievalSet {
            seed: SeedRef::Upload { hash },
            results: self.retrieve(&q, None)?,
            requested: RESULTS_PER_SET,
            timestamp_ms: now_ms(),
        };
        let depth = self.record(session, set.clone());
        Ok((set, depth))
    }

    /// Searches with an indexed image's stored vector; that image is left out.
    pub fn search_image(&self, session: &str, id: &str) -> Result<(RetrievalSet, usize), ServiceError> {
        let ix = self.index()?;
        let q = ix.stored_vector(id).ok_or_else(|| ServiceError::UnknownImage(id.to_string()))?.to_vec();
        let set = RetrievalSet {
            seed: SeedRef::Image { id: id.to_string() },
            results: self.retrieve(&q, Some(id))?,
            requested: RESULTS_PER_SET,
            timestamp_ms: now_ms(),
        };
        let depth = self.record(session, set.clone());
        Ok((set, depth))
    }

    /// Restores the previous set; the current one is dropped.
    pub fn undo(&self, session: &str) -> Result<(RetrievalSet, usize), ServiceError> {
        let s = self.session(session);
        let mut s = s.lock().expect("session poisoned");
        let prev = s.history.pop_back().ok_or(ServiceError::HistoryEmpty)?;
        s.current = Some(prev.clone());
        Ok((prev, s.history.len()))
    }

    pub fn history_depth(&self, session: &str) -> usize {
        self.session(session).lock().expect("session poisoned").history.len()
    }

    fn upload_path(&self, hash: &str) -> PathBuf {
        self.uploads_dir.join(hash.trim_start_matches(UPLOAD_PREFIX))
    }

    fn store_upload(&self, hash: &str, bytes: &[u8]) -> Result<(), ServiceError> {
        let path = self.upload_path(hash);
        if !path.exists() {
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, bytes)?;
            std::fs::rename(tmp, path)?;
        }
        Ok(())
    }

    pub fn is_known_ref(&self, r: &str) -> bool {
        if hash_is_valid(r) {
            return self.upload_path(r).is_file();
        }
        self.index.as_deref().is_some_and(|ix| ix.record(r).is_some())
    }

    /// Bytes of an indexed image (uncropped) or a stored upload.
    pub fn image_bytes(&self, r: &str) -> Result<Vec<u8>, ServiceError> {
        let path = if hash_is_valid(r) {
            self.upload_path(r)
        } else {
            self.index()?
                .image_path(r)
                .ok_or_else(|| ServiceError::UnknownImage(r.to_string()))?
        };
        std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ServiceError::UnknownImage(r.to_string()),
            _ => e.into(),
        })
    }

    pub fn pin(&self, session: &str, board: &str, image_ref: &str) -> Result<Vec<Pin>, ServiceError> {
        if !self.is_known_ref(image_ref) {
            return Err(ServiceError::UnknownImage(image_ref.to_string()));
        }
        self.boards.append(
            board,
            Pin {
                image_ref: image_ref.to_string(),
                timestamp_ms: now_ms(),
                session: session.to_string(),
            },
        )
    }

}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_examples() {
        assert_eq!(allocation(10, 5), vec![2; 5]);
        assert_eq!(allocation(10, 3), vec![4, 3, 3]);
        assert_eq!(allocation(10, 1), vec![10]);
        assert_eq!(allocation(10, 4), vec![3, 3, 2, 2]);
        assert!(allocation(10, 0).is_empty());
    }

    #[test]
    fn hashes() {
        let h = content_hash(b"abc");
        assert_eq!(h, "sha256:ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert!(hash_is_valid(&h));
        assert!(!hash_is_valid("sha256:xyz"));
        assert!(!hash_is_valid("abstract_1_2"));
    }
}
