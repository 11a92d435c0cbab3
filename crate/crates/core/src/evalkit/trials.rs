use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::annforest::DEFAULT_SEARCH_K;
use crate::corpus::{CorpusIndex, DatasetTag};
use crate::features::{cosine_distance, extract_descriptor, DescriptorConfig};
use crate::seeds;

/// Participant id written for machine-judged responses.
pub const PROXY_PARTICIPANT: &str = "machine-proxy";

/// Descriptor used by the machine judge. It differs from the index default so
/// that the judge is not simply re-ranking with the retrieval metric.
pub const PROXY_JUDGE: DescriptorConfig = DescriptorConfig {
    grid: 2,
    color_bins: 6,
    gradient_bins: 6,
    resize_edge: 96,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: u32,
    pub seed_id: String,
    /// Dataset the retrieved and random images are drawn from.
    pub dataset: String,
    pub retrieved_id: String,
    pub random_id: String,
    pub is_control: bool,
    pub retrieved_distance: f64,
}

impl Trial {
    pub fn tag(&self) -> Result<DatasetTag, EvalError> {
        Ok(self.dataset.parse()?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub participant_id: String,
    pub trial_id: u32,
    #[serde(with = "bit")]
    pub chose_retrieved: bool,
}

mod bit {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*v as u8)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(D::Error::custom(format!("chose_retrieved must be 0 or 1, got {v}"))),
        }
    }
}

/// An indexed seed image and the dataset its trial draws from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialSeed {
    pub id: String,
    pub target: DatasetTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialConfig {
    pub rng_seed: u64,
    /// Share of control trials among every 100 trials.
    pub controls_per_100: u32,
    pub search_k: usize,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            controls_per_100: 4,
            search_k: DEFAULT_SEARCH_K,
        }
    }
}

/// Builds one retrieved-vs-random trial per seed plus
/// `round(n * c / (100 - c))` controls, shuffled into a fixed order.
///
/// The retrieved image is the nearest record of the target dataset other
/// than the seed itself. Controls pair a seed with its own image at distance
/// zero.
pub fn generate_trials(index: &CorpusIndex, seeds: &[TrialSeed], cfg: &TrialConfig) -> Result<Vec<Trial>, EvalError> {
    if cfg.controls_per_100 >= 100 {
        return Err(EvalError::InvalidParams("controls_per_100 must be below 100".into()));
    }
    if seeds.is_empty() {
        return Err(EvalError::InvalidParams("no seeds".into()));
    }
    let mut members: HashMap<DatasetTag, Vec<&str>> = HashMap::new();
    for r in &index.manifest().records {
        members.entry(r.tag).or_default().push(&r.id);
    }
    let pool = |t: DatasetTag| -> Result<&Vec<&str>, EvalError> {
        members.get(&t).filter(|m| m.len() >= 2).ok_or(EvalError::DatasetTooSmall(t))
    };
    let draw_other = |ids: &[&str], not: &str, stream: u64| -> String {
        let mut rng = seeds::rng_for(cfg.rng_seed, stream);
        let others: Vec<&str> = ids.iter().copied().filter(|&i| i != not).collect();
        others[rng.gen_range(0..others.len())].to_string()
    };

    let mut trials = Vec::new();
    for (i, s) in seeds.iter().enumerate() {
        let ids = pool(s.target)?;
        let q = index
            .stored_vector(&s.id)
            .ok_or_else(|| crate::corpus::CorpusError::UnknownImage(s.id.clone()))?
            .to_vec();
        let hit = index
            .query_where(&q, 1, cfg.search_k, |r| r.tag == s.target && r.id != s.id)?
            .into_iter()
            .next()
            .ok_or(EvalError::DatasetTooSmall(s.target))?;
        let retrieved_id = hit.0.id.clone();
        trials.push(Trial {
            trial_id: 0,
            seed_id: s.id.clone(),
            dataset: s.target.to_string(),
            random_id: draw_other(ids, &retrieved_id, i as u64),
            retrieved_id,
            is_control: false,
            retrieved_distance: hit.1.distance as f64,
        });
    }

    let n = seeds.len() as u64;
    let c = cfg.controls_per_100 as u64;
    let controls = ((n * c) as f64 / (100 - c) as f64).round() as usize;
    let mut order: Vec<usize> = (0..seeds.len()).collect();
    order.shuffle(&mut seeds::rng_for(cfg.rng_seed, u64::MAX));
    for k in 0..controls {
        let s = &seeds[order[k % order.len()]];
        let ids = pool(s.target)?;
        trials.push(Trial {
            trial_id: 0,
            seed_id: s.id.clone(),
            dataset: s.target.to_string(),
            retrieved_id: s.id.clone(),
            random_id: draw_other(ids, &s.id, n + k as u64),
            is_control: true,
            retrieved_distance: 0.0,
        });
    }
    trials.shuffle(&mut seeds::rng_for(cfg.rng_seed, u64::MAX - 1));
    for (i, t) in trials.iter_mut().enumerate() {
        t.trial_id = i as u32;
    }
    Ok(trials)
}

/// Answers every trial with a descriptor judge: the retrieved image is chosen
/// when it is strictly closer to the seed than the random one under `judge`.
/// These responses are labelled [`PROXY_PARTICIPANT`] and are not human data.
pub fn machine_proxy_responses(
    index: &CorpusIndex,
    trials: &[Trial],
    judge: &DescriptorConfig,
) -> Result<Vec<Response>, EvalError> {
    judge.validate().map_err(|e| EvalError::InvalidParams(e.to_string()))?;
    let mut emb = HashMap::new();
    for t in trials {
        for id in [&t.seed_id, &t.retrieved_id, &t.random_id] {
            if !emb.contains_key(id.as_str()) {
                let v = extract_descriptor(&index.analysed_image(id)?, judge).map_err(|e| EvalError::Corpus(e.into()))?;
                emb.insert(id.as_str(), v);
            }
        }
    }
    let dist = |a: &str, b: &str| cosine_distance(&emb[a], &emb[b]).map_err(|e| EvalError::Corpus(e.into()));
    let mut out = Vec::with_capacity(trials.len());
    for t in trials {
        out.push(Response {
            participant_id: PROXY_PARTICIPANT.into(),
            trial_id: t.trial_id,
            chose_retrieved: dist(&t.seed_id, &t.retrieved_id)? < dist(&t.seed_id, &t.random_id)?,
        });
    }
    Ok(out)
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn from_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, EvalError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn trials_to_csv(trials: &[Trial]) -> Result<String, EvalError> {
    to_csv(trials)
}

pub fn parse_trials(text: &str) -> Result<Vec<Trial>, EvalError> {
    let trials: Vec<Trial> = from_csv(text)?;
    for t in &trials {
        t.tag()?;
        if !t.is_control && t.retrieved_id == t.random_id {
            return Err(EvalError::InvalidParams(format!("trial {}: retrieved equals random", t.trial_id)));
        }
    }
    Ok(trials)
}

pub fn load_trials(path: &Path) -> Result<Vec<Trial>, EvalError> {
    parse_trials(&std::fs::read_to_string(path)?)
}

/// CSV with header `participant_id,trial_id,chose_retrieved`.
pub fn responses_to_csv(responses: &[Response]) -> Result<String, EvalError> {
    to_csv(responses)
}

pub fn parse_responses(text: &str) -> Result<Vec<Response>, EvalError> {
    from_csv(text)
}

pub fn load_responses(path: &Path) -> Result<Vec<Response>, EvalError> {
    parse_responses(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annforest::ForestParams;
    use crate::corpus::{
        build_palette_dataset, index_corpus, random_palettes, DatasetManifest, EmbeddingSource,
    };

    fn corpus(n: usize) -> (tempfile::TempDir, CorpusIndex) {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DatasetManifest::default();
        m.extend(build_palette_dataset(dir.path(), &random_palettes(n, 21)).unwrap()).unwrap();
        let params = ForestParams {
            n_trees: 6,
            leaf_size: 8,
            seed: 2,
        };
        index_corpus(dir.path(), &mut m, EmbeddingSource::Descriptor(DescriptorConfig::default()), &params).unwrap();
        let c = CorpusIndex::open(dir.path()).unwrap();
        (dir, c)
    }

    fn seeds_of(c: &CorpusIndex, n: usize) -> Vec<TrialSeed> {
        c.manifest()
            .records
            .iter()
            .take(n)
            .map(|r| TrialSeed {
                id: r.id.clone(),
                target: r.tag,
            })
            .collect()
    }

    #[test]
    fn ninety_six_seeds_give_a_hundred_trials() {
        let (_d, c) = corpus(120);
        let trials = generate_trials(&c, &seeds_of(&c, 96), &TrialConfig::default()).unwrap();
        assert_eq!(trials.len(), 100);
        assert_eq!(trials.iter().filter(|t| t.is_control).count(), 4);
        for (i, t) in trials.iter().enumerate() {
            assert_eq!(t.trial_id as usize, i);
            assert_ne!(t.retrieved_id, t.random_id);
            if t.is_control {
                assert_eq!(t.retrieved_id, t.seed_id);
                assert_eq!(t.retrieved_distance, 0.0);
            } else {
                assert_ne!(t.retrieved_id, t.seed_id);
                let exact = c
                    .forest()
                    .brute_force(c.stored_vector(&t.seed_id).unwrap(), 2)
                    .unwrap();
                // Rank 0 is the seed itself.
                assert!((t.retrieved_distance - exact[1].distance as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn controls_can_be_disabled_and_output_is_deterministic() {
        let (_d, c) = corpus(40);
        let cfg = TrialConfig {
            controls_per_100: 0,
            ..TrialConfig::default()
        };
        let a = generate_trials(&c, &seeds_of(&c, 30), &cfg).unwrap();
        assert_eq!(a.len(), 30);
        assert!(a.iter().all(|t| !t.is_control));
        assert_eq!(a, generate_trials(&c, &seeds_of(&c, 30), &cfg).unwrap());
        let other = TrialConfig { rng_seed: 9, ..cfg };
        assert_ne!(a, generate_trials(&c, &seeds_of(&c, 30), &other).unwrap());
    }

    #[test]
    fn two_image_dataset_forces_the_random_pick() {
        let (_d, c) = corpus(2);
        let s = seeds_of(&c, 1);
        let cfg = TrialConfig {
            controls_per_100: 0,
            ..TrialConfig::default()
        };
        for seed in 0..10 {
            let t = &generate_trials(&c, &s, &TrialConfig { rng_seed: seed, ..cfg }).unwrap()[0];
            assert_eq!(t.retrieved_id, c.manifest().records[1].id);
            assert_eq!(t.random_id, s[0].id);
        }
    }

    #[test]
    fn too_small_dataset() {
        let (_d, c) = corpus(1);
        let s = seeds_of(&c, 1);
        assert!(matches!(
            generate_trials(&c, &s, &TrialConfig::default()),
            Err(EvalError::DatasetTooSmall(DatasetTag::Palette))
        ));
        let abstract_seed = [TrialSeed {
            id: s[0].id.clone(),
            target: DatasetTag::Abstract,
        }];
        assert!(matches!(
            generate_trials(&c, &abstract_seed, &TrialConfig::default()),
            Err(EvalError::DatasetTooSmall(DatasetTag::Abstract))
        ));
    }

    #[test]
    fn csv_roundtrips() {
        let (_d, c) = corpus(20);
        let trials = generate_trials(&c, &seeds_of(&c, 12), &TrialConfig::default()).unwrap();
        assert_eq!(parse_trials(&trials_to_csv(&trials).unwrap()).unwrap(), trials);
        let responses = machine_proxy_responses(&c, &trials, &PROXY_JUDGE).unwrap();
        let text = responses_to_csv(&responses).unwrap();
        assert!(text.starts_with("participant_id,trial_id,chose_retrieved\n"));
        assert_eq!(parse_responses(&text).unwrap(), responses);
        assert!(parse_responses("participant_id,trial_id,chose_retrieved\np,1,2\n").is_err());
    }

    #[test]
    fn proxy_always_picks_exact_controls() {
        let (_d, c) = corpus(30);
        let trials = generate_trials(&c, &seeds_of(&c, 24), &TrialConfig::default()).unwrap();
        let r = machine_proxy_responses(&c, &trials, &PROXY_JUDGE).unwrap();
        for (t, r) in trials.iter().zip(&r) {
            assert_eq!(r.participant_id, PROXY_PARTICIPANT);
            if t.is_control {
                assert!(r.chose_retrieved);
            }
        }
    }
}
