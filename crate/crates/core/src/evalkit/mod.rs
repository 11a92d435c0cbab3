//! Evaluation statistics: retrieved-vs-random trials, binomial and Pearson
//! statistics, accuracy reports and pilot-session yields.

mod pilot;
mod report;
mod stats;
mod trials;

use thiserror::Error;

use crate::corpus::{CorpusError, DatasetTag};

pub use pilot::{
    format_duration, load_session_logs, parse_duration, parse_session_logs, pilot_summary, session_yield,
    PilotSummary, PinCounts, SessionLog,
};
pub use report::{accuracy_report, AccuracyReport, BinomialSummary, DatasetRow};
pub use stats::{binomial_test, pearson};
pub use trials::{
    generate_trials, load_responses, load_trials, machine_proxy_responses, parse_responses, parse_trials,
    responses_to_csv, trials_to_csv, Response, Trial, TrialConfig, TrialSeed, PROXY_JUDGE, PROXY_PARTICIPANT,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset `{0}` has fewer than two images")]
    DatasetTooSmall(DatasetTag),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("series lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("at least two points are needed")]
    InsufficientData,
    #[error("series is constant")]
    ConstantSeries,
    #[error("no non-control responses")]
    EmptyResponses,
    #[error("response references unknown trial {0}")]
    UnknownTrial(u32),
    #[error("session has no retrieval actions")]
    NoRetrievals,
    #[error("session log line {line}: {reason}")]
    InvalidLog { line: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rounds half away from zero at `decimals` places. Values that are exact
/// halves in decimal but not quite in binary (0.125 is exact, 1.005 is not)
/// are nudged by a relative 1e-9 first.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let s = x * scale;
    (s + s.signum() * s.abs().max(1.0) * 1e-9).round() / scale
}

/// `round_half_up` rendered with exactly `decimals` places.
pub fn fmt_fixed(x: f64, decimals: u32) -> String {
    format!("{:.*}", decimals as usize, round_half_up(x, decimals))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_up_rounding() {
        assert_eq!(fmt_fixed(23.375, 2), "23.38");
        assert_eq!(fmt_fixed(14.125, 2), "14.13");
        assert_eq!(fmt_fixed(0.875, 2), "0.88");
        assert_eq!(fmt_fixed(2.5, 0), "3");
        assert_eq!(fmt_fixed(-2.5, 0), "-3");
        assert_eq!(fmt_fixed(1.005, 2), "1.01");
        assert_eq!(fmt_fixed(0.0, 2), "0.00");
        assert_eq!(fmt_fixed(0.8333, 2), "0.83");
    }
}
