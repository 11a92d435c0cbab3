use super::*;
use rand::Rng;

/// Uniform points on the unit sphere via normalized Box-Muller normals.
pub(crate) fn unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = seeds::rng(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim)
                .map(|_| {
                    let u1: f64 = 1.0 - rng.gen::<f64>();
                    let u2: f64 = rng.gen();
                    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                })
                .collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| (x / n) as f32).collect()
        })
        .collect()
}

fn forest_of(vs: &[Vec<f32>], n_trees: usize, leaf_size: usize, seed: u64) -> RpForest {
    let dim = vs[0].len();
    let flat = vs.iter().flatten().copied().collect();
    build_forest_flat(dim, flat, &ForestParams { n_trees, leaf_size, seed }).unwrap()
}

#[test]
fn single_vector() {
    let f = forest_of(&[vec![1.0, 0.0]], 5, 3, 1);
    for t in 0..5 {
        assert_eq!(f.tree_leaves(t), vec![&[0u32][..]]);
    }
    let r = f.query(&[1.0, 0.0], 3, 3).unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!((r[0].id, r[0].distance, r[0].rank), (0, 0.0, 1));
}

#[test]
fn leaves_partition_ids() {
    let vs = unit_vectors(1000, 16, 3);
    let f = forest_of(&vs, 8, 10, 7);
    for t in 0..f.n_trees() {
        let mut all: Vec<u32> = Vec::new();
        for leaf in f.tree_leaves(t) {
            assert!(!leaf.is_empty() && leaf.len() <= 10);
            all.extend_from_slice(leaf);
        }
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }
}

#[test]
fn duplicates_become_forced_leaf() {
    let vs = vec![vec![0.6f32, 0.8]; 40];
    let f = forest_of(&vs, 2, 4, 0);
    assert_eq!(f.tree_leaves(0).len(), 1);
    assert_eq!(f.tree_leaves(0)[0].len(), 40);
}

#[test]
fn deterministic_bytes() {
    let vs = unit_vectors(500, 12, 5);
    assert_eq!(forest_of(&vs, 6, 8, 11).to_bytes(), forest_of(&vs, 6, 8, 11).to_bytes());
    assert_ne!(forest_of(&vs, 6, 8, 11).to_bytes(), forest_of(&vs, 6, 8, 12).to_bytes());
}

#[test]
fn two_vector_exact_match() {
    let vs = vec![vec![1.0f32, 0.0], vec![0.0, 1.0]];
    let f = forest_of(&vs, 3, 1, 0);
    let r = f.query(&[0.0, 1.0], 1, 1).unwrap();
    assert_eq!((r[0].id, r[0].distance), (1, 0.0));
}

#[test]
fn brute_force_examples() {
    let vs = vec![vec![1.0f32, 0.0], vec![0.0, 1.0]];
    let r = brute_force_knn(&vs, &[1.0, 0.0], 2).unwrap();
    assert_eq!(r.iter().map(|x| x.distance).collect::<Vec<_>>(), vec![0.0, 1.0]);
    assert_eq!(r.iter().map(|x| x.rank).collect::<Vec<_>>(), vec![1, 2]);
    assert_eq!(brute_force_knn(&vs, &[1.0, 0.0], 10).unwrap().len(), 2);
    assert!(brute_force_knn(&vs, &[1.0, 0.0, 0.0], 1).is_err());
}

#[test]
fn brute_force_ties_by_id() {
    let vs = vec![vec![0.0f32, 1.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    let ids: Vec<u32> = brute_force_knn(&vs, &[1.0, 0.0], 4).unwrap().iter().map(|r| r.id).collect();
    assert_eq!(ids, vec![1, 3, 0, 2]);
}

#[test]
fn exhaustive_equals_brute_force() {
    let vs = unit_vectors(800, 24, 9);
    let f = forest_of(&vs, 5, 7, 2);
    for q in unit_vectors(30, 24, 10) {
        assert_eq!(f.query(&q, 10, 800).unwrap(), brute_force_knn(&vs, &q, 10).unwrap());
        assert_eq!(f.query(&q, 10, 800).unwrap(), f.brute_force(&q, 10).unwrap());
    }
}

#[test]
fn exhaustive_with_duplicate_distances() {
    // quantized vectors produce many exact distance ties
    let vs: Vec<Vec<f32>> = (0..300)
        .map(|i| {
            let a = (i % 7) as f32 / 7.0;
            let (s, c) = a.sin_cos();
            vec![c, s]
        })
        .collect();
    let f = forest_of(&vs, 4, 5, 3);
    let q = [1.0f32, 0.0];
    assert_eq!(f.query(&q, 50, 300).unwrap(), brute_force_knn(&vs, &q, 50).unwrap());
}

#[test]
fn results_sorted_and_ranked() {
    let vs = unit_vectors(400, 8, 1);
    let f = forest_of(&vs, 4, 8, 1);
    let r = f.query(&vs[17], 10, 50).unwrap();
    assert_eq!(r[0].id, 17);
    assert_eq!(r[0].distance, 0.0);
    for w in r.windows(2) {
        assert!(w[0].distance <= w[1].distance);
        assert_eq!(w[0].rank + 1, w[1].rank);
    }
    let mut ids: Vec<u32> = r.iter().map(|x| x.id).collect();
    ids.dedup();
    assert_eq!(ids.len(), 10);
}

#[test]
fn argument_errors() {
    let f = forest_of(&unit_vectors(10, 4, 1), 1, 2, 0);
    assert!(matches!(f.query(&[1.0; 3], 1, 1), Err(IndexError::DimensionMismatch { .. })));
    assert!(f.query(&[0.5; 4], 0, 1).is_err());
    assert!(f.query(&[0.5; 4], 5, 4).is_err());
    assert!(matches!(
        build_forest(&[], &ForestParams::default()),
        Err(IndexError::EmptyInput)
    ));
    let e = |v: Vec<f64>| EmbeddingVector::normalized(v).unwrap();
    assert!(matches!(
        build_forest(&[e(vec![1.0, 0.0]), e(vec![1.0, 0.0, 0.0])], &ForestParams::default()),
        Err(IndexError::DimensionMismatch { .. })
    ));
}

#[test]
fn filtered_query_respects_predicate() {
    let vs = unit_vectors(300, 8, 4);
    let f = forest_of(&vs, 4, 8, 4);
    let r = f.query_filtered(&vs[3], 10, 300, |id| id % 2 == 0).unwrap();
    assert!(r.iter().all(|x| x.id % 2 == 0));
    let even: Vec<Vec<f32>> = vs.iter().step_by(2).cloned().collect();
    let exact: Vec<u32> = brute_force_knn(&even, &vs[3], 10).unwrap().iter().map(|x| x.id * 2).collect();
    assert_eq!(r.iter().map(|x| x.id).collect::<Vec<_>>(), exact);
}

#[test]
fn recall_definition() {
    let mk = |ids: &[u32]| -> Vec<QueryResult> {
        ids.iter()
            .enumerate()
            .map(|(i, &id)| QueryResult {
                id,
                distance: i as f32,
                rank: i + 1,
            })
            .collect()
    };
    let exact = mk(&(0..10).collect::<Vec<_>>());
    assert_eq!(recall_at_k(&exact, &exact, 10), 1.0);
    assert_eq!(recall_at_k(&mk(&(10..20).collect::<Vec<_>>()), &exact, 10), 0.0);
    assert!((recall_at_k(&mk(&[0, 1, 2, 3, 4, 5, 6, 97, 98, 99]), &exact, 10) - 0.7).abs() < 1e-12);
}

#[test]
fn recall_grows_with_budget() {
    let vs = unit_vectors(3000, 32, 21);
    let f = forest_of(&vs, 20, 16, 21);
    let qs = unit_vectors(100, 32, 22);
    let mean = |sk: usize| {
        qs.iter()
            .map(|q| recall_at_k(&f.query(q, 10, sk).unwrap(), &f.brute_force(q, 10).unwrap(), 10))
            .sum::<f64>()
            / qs.len() as f64
    };
    let (a, b, c) = (mean(100), mean(400), mean(1600));
    assert!(b + 0.02 >= a && c + 0.02 >= b, "{a} {b} {c}");
    assert!(c > a);
}

#[test]
fn recall_grows_with_trees() {
    let vs = unit_vectors(3000, 32, 31);
    let qs = unit_vectors(100, 32, 32);
    let mean = |t: usize| {
        let f = forest_of(&vs, t, 16, 31);
        qs.iter()
            .map(|q| recall_at_k(&f.query(q, 10, 400).unwrap(), &f.brute_force(q, 10).unwrap(), 10))
            .sum::<f64>()
            / qs.len() as f64
    };
    let (a, b, c) = (mean(2), mean(8), mean(32));
    assert!(b + 0.02 >= a && c + 0.02 >= b, "{a} {b} {c}");
}

#[test]
fn batch_matches_single() {
    let vs = unit_vectors(500, 16, 8);
    let f = forest_of(&vs, 6, 8, 8);
    let qs = unit_vectors(20, 16, 9);
    let batch = f.query_batch(&qs, 5, 60).unwrap();
    for (q, r) in qs.iter().zip(batch) {
        assert_eq!(f.query(q, 5, 60).unwrap(), r);
    }
}

#[test]
fn save_load_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.idx");
    let vs = unit_vectors(600, 20, 12);
    let f = forest_of(&vs, 7, 9, 12);
    save_index(&f, "manifest.txt", &path).unwrap();
    let g = load_index(&path).unwrap();
    assert_eq!(g.manifest_ref(), "manifest.txt");
    assert_eq!(g.n_trees(), 7);
    for q in unit_vectors(100, 20, 13) {
        assert_eq!(f.query(&q, 10, 90).unwrap(), g.query(&q, 10, 90).unwrap());
    }
}

#[test]
fn load_rejects_damage() {
    let vs = unit_vectors(50, 4, 2);
    let bytes = forest_of(&vs, 2, 4, 0).to_bytes();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(RpForest::from_bytes(&bad), Err(IndexError::CorruptIndex(_))));

    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(RpForest::from_bytes(&bad), Err(IndexError::CorruptIndex(_))));

    let mut bad = bytes.clone();
    let mid = bytes.len() / 2;
    bad[mid] ^= 0x40;
    assert!(matches!(RpForest::from_bytes(&bad), Err(IndexError::CorruptIndex(_))));

    // cut inside the vector block
    assert!(matches!(RpForest::from_bytes(&bytes[..24 + 100]), Err(IndexError::TruncatedFile)));
    assert!(matches!(RpForest::from_bytes(&bytes[..10]), Err(IndexError::TruncatedFile)));
    assert!(RpForest::from_bytes(&bytes).is_ok());
}
