use std::collections::{BTreeMap, HashMap};
use std::fmt;

use super::{binomial_test, fmt_fixed, pearson, EvalError, Response, Trial};
use crate::corpus::DatasetTag;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinomialSummary {
    pub successes: u64,
    pub n: u64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub dataset: String,
    pub images: usize,
    /// Mean of per-image accuracies, in [0, 1].
    pub accuracy: f64,
    /// Mean per-image seed-to-retrieved cosine distance.
    pub avg_distance: f64,
    /// Correlation of per-image distance with incorrect-selection count;
    /// `None` when either series is constant or has fewer than two points.
    pub pearson: Option<f64>,
    /// Share (percent) of each accuracy quartile made up of this dataset.
    pub quartiles: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub rows: Vec<DatasetRow>,
    pub overall: DatasetRow,
    /// Every non-control response is one Bernoulli trial.
    pub per_trial: BinomialSummary,
    /// Every seed image is one trial, a success when most of its responses
    /// chose the retrieved image (ties count as failures).
    pub per_image: BinomialSummary,
    /// Share of control responses that picked the exact match.
    pub control_accuracy: Option<f64>,
}

struct ImageStats {
    dataset: DatasetTag,
    id: String,
    distance_sum: f64,
    trials: usize,
    correct: u64,
    total: u64,
}

impl ImageStats {
    fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    fn distance(&self) -> f64 {
        self.distance_sum / self.trials as f64
    }
}

fn row(dataset: String, images: &[&ImageStats], quartiles: [f64; 4]) -> DatasetRow {
    let n = images.len() as f64;
    let xs: Vec<f64> = images.iter().map(|s| s.distance()).collect();
    let ys: Vec<f64> = images.iter().map(|s| (s.total - s.correct) as f64).collect();
    DatasetRow {
        dataset,
        images: images.len(),
        accuracy: images.iter().map(|s| s.accuracy()).sum::<f64>() / n,
        avg_distance: xs.iter().sum::<f64>() / n,
        pearson: pearson(&xs, &ys).ok(),
        quartiles,
    }
}

/// Aggregates responses per seed image and dataset. Control trials only feed
/// `control_accuracy`.
///
/// Quartiles rank all images by ascending accuracy, ties broken by ascending
/// seed id, and assign position `i` of `n` to quartile `floor(4i / n)`.
pub fn accuracy_report(trials: &[Trial], responses: &[Response]) -> Result<AccuracyReport, EvalError> {
    let by_id: HashMap<u32, &Trial> = trials.iter().map(|t| (t.trial_id, t)).collect();
    let mut images: BTreeMap<(DatasetTag, String), ImageStats> = BTreeMap::new();
    let mut per_trial: HashMap<u32, (u64, u64)> = HashMap::new();
    let (mut control_ok, mut control_n) = (0u64, 0u64);
    for r in responses {
        let t = by_id.get(&r.trial_id).ok_or(EvalError::UnknownTrial(r.trial_id))?;
        if t.is_control {
            control_n += 1;
            control_ok += r.chose_retrieved as u64;
            continue;
        }
        let e = per_trial.entry(t.trial_id).or_default();
        e.0 += r.chose_retrieved as u64;
        e.1 += 1;
    }
    let mut answered: Vec<&Trial> = trials.iter().filter(|t| per_trial.contains_key(&t.trial_id)).collect();
    answered.sort_by_key(|t| t.trial_id);
    for t in answered {
        let (correct, total) = per_trial[&t.trial_id];
        let tag = t.tag()?;
        let s = images.entry((tag, t.seed_id.clone())).or_insert_with(|| ImageStats {
            dataset: tag,
            id: t.seed_id.clone(),
            distance_sum: 0.0,
            trials: 0,
            correct: 0,
            total: 0,
        });
        s.distance_sum += t.retrieved_distance;
        s.trials += 1;
        s.correct += correct;
        s.total += total;
    }
    if images.is_empty() {
        return Err(EvalError::EmptyResponses);
    }

    let mut ranked: Vec<&ImageStats> = images.values().collect();
    ranked.sort_by(|a, b| a.accuracy().total_cmp(&b.accuracy()).then_with(|| a.id.cmp(&b.id)));
    let n = ranked.len();
    let quartile_of = |i: usize| 4 * i / n;
    let mut sizes = [0usize; 4];
    let mut counts: BTreeMap<DatasetTag, [usize; 4]> = BTreeMap::new();
    for (i, s) in ranked.iter().enumerate() {
        sizes[quartile_of(i)] += 1;
        counts.entry(s.dataset).or_default()[quartile_of(i)] += 1;
    }
    let pct = |c: [usize; 4]| std::array::from_fn(|q| if sizes[q] == 0 { 0.0 } else { 100.0 * c[q] as f64 / sizes[q] as f64 });

    let rows = counts
        .iter()
        .map(|(&tag, &c)| {
            let members: Vec<&ImageStats> = images.values().filter(|s| s.dataset == tag).collect();
            row(tag.to_string(), &members, pct(c))
        })
        .collect();
    let all: Vec<&ImageStats> = images.values().collect();
    let overall = row("All".into(), &all, pct(sizes));

    let successes: u64 = all.iter().map(|s| s.correct).sum();
    let total: u64 = all.iter().map(|s| s.total).sum();
    let majority = all.iter().filter(|s| 2 * s.correct > s.total).count() as u64;
    Ok(AccuracyReport {
        rows,
        overall,
        per_trial: BinomialSummary {
            successes,
            n: total,
            p_value: binomial_test(successes, total, 0.5)?,
        },
        per_image: BinomialSummary {
            successes: majority,
            n: all.len() as u64,
            p_value: binomial_test(majority, all.len() as u64, 0.5)?,
        },
        control_accuracy: (control_n > 0).then(|| control_ok as f64 / control_n as f64),
    })
}

fn write_row(f: &mut fmt::Formatter<'_>, r: &DatasetRow) -> fmt::Result {
    let pearson = r.pearson.map_or("n/a".to_string(), |p| fmt_fixed(p, 2));
    write!(
        f,
        "{:<22} {:>9} {:>9} {:>8}",
        r.dataset,
        format!("{}%", fmt_fixed(100.0 * r.accuracy, 2)),
        fmt_fixed(r.avg_distance, 3),
        pearson
    )?;
    for q in r.quartiles {
        write!(f, " {:>6}", fmt_fixed(q, 1))?;
    }
    writeln!(f)
}

impl fmt::Display for AccuracyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<22} {:>9} {:>9} {:>8} {:>6} {:>6} {:>6} {:>6}",
            "Dataset", "Avg Acc.", "Avg Dist.", "Pearson", "Q1(%)", "Q2(%)", "Q3(%)", "Q4(%)"
        )?;
        for r in &self.rows {
            write_row(f, r)?;
        }
        write_row(f, &self.overall)?;
        let b = &self.per_trial;
        writeln!(f, "binomial per response: {}/{} p = {:.3e}", b.successes, b.n, b.p_value)?;
        let b = &self.per_image;
        writeln!(f, "binomial per image:    {}/{} p = {:.3e}", b.successes, b.n, b.p_value)?;
        if let Some(c) = self.control_accuracy {
            writeln!(f, "control accuracy: {}%", fmt_fixed(100.0 * c, 2))?;
        }
        Ok(())
    }
}
