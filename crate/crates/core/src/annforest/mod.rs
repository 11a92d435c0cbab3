//! Forest of random partition trees for approximate cosine k-NN search.
//!
//! Items are identified by their insertion index. Vectors are expected to be
//! unit length; distances are reported as cosine distance `1 - a·b`, computed
//! as `|a - b|² / 2` so that an exact match scores exactly zero.

mod persist;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::features::EmbeddingVector;
use crate::seeds;

pub use persist::{load_index, save_index, FORMAT_VERSION, MAGIC};

/// Candidate pairs tried before an unsplittable subset becomes a leaf.
const SPLIT_ATTEMPTS: usize = 4;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("no vectors to index")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("index file truncated")]
    TruncatedFile,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub leaf_size: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 50,
            leaf_size: 16,
            seed: 0,
        }
    }
}

pub const DEFAULT_SEARCH_K: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryResult {
    pub id: u32,
    pub distance: f32,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Node {
    /// Hyperplane bisecting items `a` and `b`: an item goes left when
    /// `v·(a - b) * inv_norm - offset > 0`.
    Split {
        a: u32,
        b: u32,
        inv_norm: f32,
        offset: f32,
        left: u32,
        right: u32,
    },
    /// Range into the tree's `items`.
    Leaf { start: u32, len: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tree {
    pub(crate) nodes: Vec<Node>,
    pub(crate) items: Vec<u32>,
}

impl Tree {
    pub fn leaves(&self) -> impl Iterator<Item = &[u32]> {
        self.nodes.iter().filter_map(|n| match *n {
            Node::Leaf { start, len } => Some(&self.items[start as usize..(start + len) as usize]),
            Node::Split { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpForest {
    dim: usize,
    vectors: Vec<f32>,
    trees: Vec<Tree>,
    leaf_size: usize,
    build_seed: u64,
    manifest_ref: String,
}

#[inline]
fn half_sq_dist(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc * 0.5
}

#[inline]
fn plane_dot(v: &[f32], a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for i in 0..v.len() {
        acc += v[i] * (a[i] - b[i]);
    }
    acc
}

fn cmp_result(x: &(f32, u32), y: &(f32, u32)) -> Ordering {
    x.0.total_cmp(&y.0).then(x.1.cmp(&y.1))
}

fn ranked(mut scored: Vec<(f32, u32)>, k: usize) -> Vec<QueryResult> {
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, cmp_result);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp_result);
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (distance, id))| QueryResult {
            id,
            distance,
            rank: i + 1,
        })
        .collect()
}

#[derive(Clone, Copy)]
struct Pending {
    priority: f32,
    tree: u32,
    node: u32,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // Max-heap on priority; lower (tree, node) first among equals.
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then(other.tree.cmp(&self.tree))
            .then(other.node.cmp(&self.node))
    }
}

/// Builds a forest over `vectors`; item `i` is `vectors[i]`.
pub fn build_forest(vectors: &[EmbeddingVector], params: &ForestParams) -> Result<RpForest, IndexError> {
    let dim = vectors.first().ok_or(IndexError::EmptyInput)?.dim();
    let mut flat = Vec::with_capacity(vectors.len() * dim);
    for v in vectors {
        if v.dim() != dim {
            return Err(IndexError::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
        flat.extend(v.values().iter().map(|&x| x as f32));
    }
    build_forest_flat(dim, flat, params)
}

/// As [`build_forest`], over a row-major `count × dim` buffer.
pub fn build_forest_flat(dim: usize, vectors: Vec<f32>, params: &ForestParams) -> Result<RpForest, IndexError> {
    if dim == 0 || vectors.is_empty() {
        return Err(IndexError::EmptyInput);
    }
    if vectors.len() % dim != 0 {
        return Err(IndexError::DimensionMismatch {
            expected: dim,
            found: vectors.len() % dim,
        });
    }
    if params.n_trees == 0 || params.leaf_size == 0 {
        return Err(IndexError::InvalidParams("n_trees and leaf_size must be >= 1".into()));
    }
    let count = vectors.len() / dim;
    if count > u32::MAX as usize {
        return Err(IndexError::InvalidParams("too many items".into()));
    }
    let trees = (0..params.n_trees as u64)
        .into_par_iter()
        .map(|t| build_tree(&vectors, dim, count, params.leaf_size, seeds::derive_seed(params.seed, t)))
        .collect();
    Ok(RpForest {
        dim,
        vectors,
        trees,
        leaf_size: params.leaf_size,
        build_seed: params.seed,
        manifest_ref: String::new(),
    })
}

fn build_tree(vectors: &[f32], dim: usize, count: usize, leaf_size: usize, seed: u64) -> Tree {
    let mut rng = seeds::rng(seed);
    let mut items: Vec<u32> = (0..count as u32).collect();
    let mut nodes = vec![Node::Leaf { start: 0, len: 0 }];
    let mut stack = vec![(0usize, 0usize, count)];
    let mut margins = Vec::new();
    let mut scratch = Vec::new();
    let row = |i: u32| &vectors[i as usize * dim..][..dim];

    while let Some((node, start, end)) = stack.pop() {
        let n = end - start;
        let mut split = None;
        if n > leaf_size {
            for _ in 0..SPLIT_ATTEMPTS {
                let i = rng.gen_range(start..end);
                let mut j = rng.gen_range(start..end - 1);
                if j >= i {
                    j += 1;
                }
                let (a, b) = (items[i], items[j]);
                let norm = 2.0 * half_sq_dist(row(a), row(b));
                if !(norm > 0.0) {
                    continue;
                }
                let inv_norm = 1.0 / norm.sqrt();
                let mid: Vec<f32> = row(a).iter().zip(row(b)).map(|(x, y)| (x + y) * 0.5).collect();
                let offset = plane_dot(&mid, row(a), row(b)) * inv_norm;
                margins.clear();
                margins.extend(
                    items[start..end]
                        .iter()
                        .map(|&it| plane_dot(row(it), row(a), row(b)) * inv_norm - offset > 0.0),
                );
                let left = margins.iter().filter(|&&m| m).count();
                if left == 0 || left == n {
                    continue;
                }
                // Stable partition keeps the layout independent of swap order.
                scratch.clear();
                scratch.extend(items[start..end].iter().zip(&margins).filter(|(_, &m)| m).map(|(&i, _)| i));
                scratch.extend(items[start..end].iter().zip(&margins).filter(|(_, &m)| !m).map(|(&i, _)| i));
                items[start..end].copy_from_slice(&scratch);
                split = Some((a, b, inv_norm, offset, left));
                break;
            }
        }
        match split {
            None => {
                nodes[node] = Node::Leaf {
                    start: start as u32,
                    len: n as u32,
                }
            }
            Some((a, b, inv_norm, offset, left)) => {
                let l = nodes.len();
                nodes.push(Node::Leaf { start: 0, len: 0 });
                nodes.push(Node::Leaf { start: 0, len: 0 });
                nodes[node] = Node::Split {
                    a,
                    b,
                    inv_norm,
                    offset,
                    left: l as u32,
                    right: l as u32 + 1,
                };
                stack.push((l + 1, start + left, end));
                stack.push((l, start, start + left));
            }
        }
    }
    Tree { nodes, items }
}

impl RpForest {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn build_seed(&self) -> u64 {
        self.build_seed
    }

    /// Free-form pointer to the manifest the index was built from.
    pub fn manifest_ref(&self) -> &str {
        &self.manifest_ref
    }

    pub fn set_manifest_ref(&mut self, r: impl Into<String>) {
        self.manifest_ref = r.into();
    }

    pub fn vector(&self, id: u32) -> &[f32] {
        &self.vectors[id as usize * self.dim..][..self.dim]
    }

    /// Item ids of each leaf of tree `t`, in node order.
    pub fn tree_leaves(&self, t: usize) -> Vec<&[u32]> {
        self.trees[t].leaves().collect()
    }

    fn check_dim(&self, q: &[f32]) -> Result<(), IndexError> {
        if q.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                found: q.len(),
            });
        }
        Ok(())
    }

    fn check_k(k: usize, search_k: usize) -> Result<(), IndexError> {
        if k == 0 || search_k < k {
            return Err(IndexError::InvalidParams(format!("need 1 <= k <= search_k, got k={k} search_k={search_k}")));
        }
        Ok(())
    }

    /// Approximate top-`k` by cosine distance, examining leaves best-first
    /// across all trees until `search_k` distinct items are collected.
    pub fn query(&self, q: &[f32], k: usize, search_k: usize) -> Result<Vec<QueryResult>, IndexError> {
        self.query_filtered(q, k, search_k, |_| true)
    }

    /// As [`RpForest::query`], counting and returning only items accepted by `keep`.
    pub fn query_filtered(
        &self,
        q: &[f32],
        k: usize,
        search_k: usize,
        keep: impl Fn(u32) -> bool,
    ) -> Result<Vec<QueryResult>, IndexError> {
        self.check_dim(q)?;
        Self::check_k(k, search_k)?;
        let mut seen = vec![false; self.len()];
        let mut candidates: Vec<u32> = Vec::with_capacity(search_k + 2 * self.leaf_size);
        let mut heap: BinaryHeap<Pending> = (0..self.trees.len() as u32)
            .map(|t| Pending {
                priority: f32::INFINITY,
                tree: t,
                node: 0,
            })
            .collect();

        while let Some(p) = heap.pop() {
            if candidates.len() >= search_k {
                break;
            }
            let tree = &self.trees[p.tree as usize];
            match tree.nodes[p.node as usize] {
                Node::Split {
                    a,
                    b,
                    inv_norm,
                    offset,
                    left,
                    right,
                } => {
                    let m = plane_dot(q, self.vector(a), self.vector(b)) * inv_norm - offset;
                    heap.push(Pending {
                        priority: p.priority.min(m),
                        tree: p.tree,
                        node: left,
                    });
                    heap.push(Pending {
                        priority: p.priority.min(-m),
                        tree: p.tree,
                        node: right,
                    });
                }
                Node::Leaf { start, len } => {
                    for &id in &tree.items[start as usize..(start + len) as usize] {
                        if !seen[id as usize] {
                            seen[id as usize] = true;
                            if keep(id) {
                                candidates.push(id);
                            }
                        }
                    }
                }
            }
        }
        let scored = candidates.into_iter().map(|id| (half_sq_dist(q, self.vector(id)), id)).collect();
        Ok(ranked(scored, k))
    }

    /// Runs [`RpForest::query`] for each row of `queries` in parallel.
    pub fn query_batch(
        &self,
        queries: &[Vec<f32>],
        k: usize,
        search_k: usize,
    ) -> Result<Vec<Vec<QueryResult>>, IndexError> {
        queries.par_iter().map(|q| self.query(q, k, search_k)).collect()
    }

    /// Exact top-`k` over the indexed vectors.
    pub fn brute_force(&self, q: &[f32], k: usize) -> Result<Vec<QueryResult>, IndexError> {
        self.check_dim(q)?;
        Self::check_k(k, k)?;
        let scored = (0..self.len() as u32).map(|id| (half_sq_dist(q, self.vector(id)), id)).collect();
        Ok(ranked(scored, k))
    }
}

/// Exact top-`k` of `q` among `vectors`, ties broken by ascending id.
pub fn brute_force_knn(vectors: &[Vec<f32>], q: &[f32], k: usize) -> Result<Vec<QueryResult>, IndexError> {
    if k == 0 {
        return Err(IndexError::InvalidParams("k must be >= 1".into()));
    }
    let mut scored = Vec::with_capacity(vectors.len());
    for (id, v) in vectors.iter().enumerate() {
        if v.len() != q.len() {
            return Err(IndexError::DimensionMismatch {
                expected: q.len(),
                found: v.len(),
            });
        }
        scored.push((half_sq_dist(q, v), id as u32));
    }
    Ok(ranked(scored, k))
}

/// Share of the exact top-`k` ids found in the approximate top-`k`.
pub fn recall_at_k(approx: &[QueryResult], exact: &[QueryResult], k: usize) -> f64 {
    let exact: Vec<u32> = exact.iter().take(k).map(|r| r.id).collect();
    if exact.is_empty() {
        return 1.0;
    }
    let hits = approx.iter().take(k).filter(|r| exact.contains(&r.id)).count();
    hits as f64 / exact.len() as f64
}

#[cfg(test)]
mod tests;
