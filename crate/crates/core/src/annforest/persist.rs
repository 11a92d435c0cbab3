//! Binary index layout, little-endian throughout:
//!
//! ```text
//! "COBS"  version:u32  dim:u32  count:u64  n_trees:u32
//! vectors: count*dim f32
//! per tree: node_count:u32, then node_count tagged records
//!   0  a:u32 b:u32 inv_norm:f32 offset:f32 left:u32 right:u32
//!   1  len:u32 ids:len*u32
//! 2  leaf_size:u32 build_seed:u64 ref_len:u32 ref:utf8
//! crc32 of everything above
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{IndexError, Node, RpForest, Tree};

pub const MAGIC: &[u8; 4] = b"COBS";
pub const FORMAT_VERSION: u32 = 1;

const TAG_SPLIT: u8 = 0;
const TAG_LEAF: u8 = 1;
const TAG_META: u8 = 2;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 4;

impl RpForest {
    pub fn to_bytes(&self) -> Vec<u8> {
        self.encode(&self.manifest_ref)
    }

    fn encode(&self, manifest_ref: &str) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.vectors.len() * 4 + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.trees.len() as u32).to_le_bytes());
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for tree in &self.trees {
            out.extend_from_slice(&(tree.nodes.len() as u32).to_le_bytes());
            for node in &tree.nodes {
                match *node {
                    Node::Split {
                        a,
                        b,
                        inv_norm,
                        offset,
                        left,
                        right,
                    } => {
                        out.push(TAG_SPLIT);
                        for w in [a, b, inv_norm.to_bits(), offset.to_bits(), left, right] {
                            out.extend_from_slice(&w.to_le_bytes());
                        }
                    }
                    Node::Leaf { start, len } => {
                        out.push(TAG_LEAF);
                        out.extend_from_slice(&len.to_le_bytes());
                        for id in &tree.items[start as usize..(start + len) as usize] {
                            out.extend_from_slice(&id.to_le_bytes());
                        }
                    }
                }
            }
        }
        out.push(TAG_META);
        out.extend_from_slice(&(self.leaf_size as u32).to_le_bytes());
        out.extend_from_slice(&self.build_seed.to_le_bytes());
        out.extend_from_slice(&(manifest_ref.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest_ref.as_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        if bytes.len() < 4 {
            return Err(IndexError::TruncatedFile);
        }
        if &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        if bytes.len() < HEADER_LEN {
            return Err(IndexError::TruncatedFile);
        }
        let mut r = Reader { buf: bytes, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let n_trees = r.u32()? as usize;
        if dim == 0 || count == 0 || n_trees == 0 || count > u32::MAX as usize {
            return Err(corrupt("empty or oversized header fields"));
        }
        let vec_bytes = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| corrupt("vector block size overflows"))?;
        if bytes.len() < HEADER_LEN + vec_bytes + 4 {
            return Err(IndexError::TruncatedFile);
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }

        let mut r = Reader {
            buf: body,
            pos: HEADER_LEN,
        };
        let vectors: Vec<f32> = r
            .take(vec_bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let mut trees = Vec::with_capacity(n_trees);
        for t in 0..n_trees {
            trees.push(read_tree(&mut r, count).map_err(|e| match e {
                IndexError::CorruptIndex(m) => corrupt(&format!("tree {t}: {m}")),
                other => other,
            })?);
        }
        if r.u8()? != TAG_META {
            return Err(corrupt("missing metadata record"));
        }
        let leaf_size = r.u32()? as usize;
        let build_seed = r.u64()?;
        let ref_len = r.u32()? as usize;
        let manifest_ref = String::from_utf8(r.take(ref_len)?.to_vec()).map_err(|_| corrupt("manifest ref is not utf-8"))?;
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        if leaf_size == 0 {
            return Err(corrupt("zero leaf size"));
        }
        Ok(RpForest {
            dim,
            vectors,
            trees,
            leaf_size,
            build_seed,
            manifest_ref,
        })
    }
}

fn corrupt(msg: &str) -> IndexError {
    IndexError::CorruptIndex(msg.to_string())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(IndexError::TruncatedFile)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, IndexError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Reads one tree and checks that children follow their parent and that
/// the leaves partition `0..count`.
fn read_tree(r: &mut Reader, count: usize) -> Result<Tree, IndexError> {
    let node_count = r.u32()? as usize;
    if node_count == 0 || node_count > 2 * count {
        return Err(corrupt("bad node count"));
    }
    let mut nodes = Vec::with_capacity(node_count);
    let mut items = Vec::with_capacity(count);
    let mut seen = vec![false; count];
    let mut referenced = vec![false; node_count];
    for idx in 0..node_count {
        match r.u8()? {
            TAG_SPLIT => {
                let a = r.u32()?;
                let b = r.u32()?;
                let inv_norm = f32::from_bits(r.u32()?);
                let offset = f32::from_bits(r.u32()?);
                let left = r.u32()?;
                let right = r.u32()?;
                if a as usize >= count || b as usize >= count {
                    return Err(corrupt("pivot out of range"));
                }
                for c in [left, right] {
                    let c = c as usize;
                    if c <= idx || c >= node_count || referenced[c] {
                        return Err(corrupt("bad child link"));
                    }
                    referenced[c] = true;
                }
                nodes.push(Node::Split {
                    a,
                    b,
                    inv_norm,
                    offset,
                    left,
                    right,
                });
            }
            TAG_LEAF => {
                let len = r.u32()? as usize;
                let start = items.len();
                for _ in 0..len {
                    let id = r.u32()? as usize;
                    if id >= count || std::mem::replace(&mut seen[id], true) {
                        return Err(corrupt("leaf id out of range or repeated"));
                    }
                    items.push(id as u32);
                }
                nodes.push(Node::Leaf {
                    start: start as u32,
                    len: len as u32,
                });
            }
            tag => return Err(corrupt(&format!("unknown node tag {tag}"))),
        }
    }
    if referenced.iter().skip(1).any(|&x| !x) || items.len() != count {
        return Err(corrupt("nodes do not form a tree over all items"));
    }
    Ok(Tree { nodes, items })
}

/// Writes the index atomically next to `path` and renames it into place.
pub fn save_index(forest: &RpForest, manifest_ref: &str, path: &Path) -> Result<(), IndexError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&forest.encode(manifest_ref))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<RpForest, IndexError> {
    RpForest::from_bytes(&fs::read(path)?)
}
