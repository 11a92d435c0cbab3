use std::fmt;
use std::path::Path;

use serde::Deserialize;

use super::{fmt_fixed, EvalError};

/// Pins per source dataset in one session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PinCounts {
    pub abstract_art: u64,
    pub archive: u64,
    pub camera: u64,
    pub filtered: u64,
    pub palette: u64,
    pub wikiart: u64,
}

impl PinCounts {
    pub fn as_array(&self) -> [u64; 6] {
        [self.abstract_art, self.archive, self.camera, self.filtered, self.palette, self.wikiart]
    }

    pub fn total(&self) -> u64 {
        self.as_array().iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionLog {
    pub participant: String,
    pub duration_secs: u64,
    pub external_seeds: u64,
    pub internal_seeds: u64,
    pub pins: u64,
    pub per_dataset: PinCounts,
}

impl SessionLog {
    /// Rejects logs whose per-dataset pins do not add up to `pins` or that
    /// record no retrieval at all.
    pub fn new(
        participant: impl Into<String>,
        duration_secs: u64,
        external_seeds: u64,
        internal_seeds: u64,
        pins: u64,
        per_dataset: PinCounts,
    ) -> Result<Self, EvalError> {
        let participant = participant.into();
        if per_dataset.total() != pins {
            return Err(EvalError::InvalidParams(format!(
                "participant {participant}: dataset pins sum to {} but pins is {pins}",
                per_dataset.total()
            )));
        }
        if external_seeds + internal_seeds == 0 {
            return Err(EvalError::NoRetrievals);
        }
        Ok(Self {
            participant,
            duration_secs,
            external_seeds,
            internal_seeds,
            pins,
            per_dataset,
        })
    }

    pub fn yield_value(&self) -> f64 {
        self.pins as f64 / (self.external_seeds + self.internal_seeds) as f64
    }
}

/// Images pinned per retrieval action.
pub fn session_yield(external_seeds: u64, internal_seeds: u64, pins: u64) -> Result<f64, EvalError> {
    let actions = external_seeds + internal_seeds;
    if actions == 0 {
        return Err(EvalError::NoRetrievals);
    }
    Ok(pins as f64 / actions as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotSummary {
    pub rows: Vec<SessionLog>,
    pub mean_duration_secs: f64,
    pub mean_external: f64,
    pub mean_internal: f64,
    pub mean_pins: f64,
    /// Mean pins over mean retrieval actions, i.e. pooled over sessions.
    pub mean_yield: f64,
    /// Same order as [`PinCounts::as_array`].
    pub mean_per_dataset: [f64; 6],
}

/// Per-session rows plus a mean row. The mean yield is the yield of the mean
/// session (total pins over total retrieval actions), not the mean of the
/// per-session yields.
pub fn pilot_summary(logs: &[SessionLog]) -> Result<PilotSummary, EvalError> {
    if logs.is_empty() {
        return Err(EvalError::InvalidParams("no session logs".into()));
    }
    let n = logs.len() as f64;
    let mean = |f: &dyn Fn(&SessionLog) -> u64| logs.iter().map(f).sum::<u64>() as f64 / n;
    let mean_external = mean(&|l| l.external_seeds);
    let mean_internal = mean(&|l| l.internal_seeds);
    let mean_pins = mean(&|l| l.pins);
    Ok(PilotSummary {
        rows: logs.to_vec(),
        mean_duration_secs: mean(&|l| l.duration_secs),
        mean_external,
        mean_internal,
        mean_pins,
        mean_yield: mean_pins / (mean_external + mean_internal),
        mean_per_dataset: std::array::from_fn(|i| mean(&|l| l.per_dataset.as_array()[i])),
    })
}

/// `5m41s`, `1h02m03s`, `90s` or a bare number of seconds.
pub fn parse_duration(s: &str) -> Option<u64> {
    let s = s.trim();
    if let Ok(v) = s.parse() {
        return Some(v);
    }
    let mut total = 0u64;
    let mut num = String::new();
    let mut last_unit = 0u64;
    for c in s.chars() {
        if c.is_ascii_digit() {
            num.push(c);
            continue;
        }
        let unit = match c {
            'h' => 3600,
            'm' => 60,
            's' => 1,
            _ => return None,
        };
        if num.is_empty() || (last_unit != 0 && unit >= last_unit) {
            return None;
        }
        total += num.parse::<u64>().ok()? * unit;
        num.clear();
        last_unit = unit;
    }
    num.is_empty().then_some(total).filter(|_| last_unit != 0)
}

pub fn format_duration(secs: u64) -> String {
    let (h, m, s) = (secs / 3600, secs / 60 % 60, secs % 60);
    if h > 0 {
        format!("{h}h{m:02}m{s:02}s")
    } else {
        format!("{m}m{s:02}s")
    }
}

#[derive(Deserialize)]
struct LogRow {
    #[serde(alias = "Part.")]
    participant: String,
    #[serde(alias = "Duration")]
    duration: String,
    #[serde(alias = "Ext.Seeds")]
    ext_seeds: u64,
    #[serde(alias = "Int.Seeds")]
    int_seeds: u64,
    #[serde(alias = "Pins")]
    pins: u64,
    #[serde(alias = "Abs.")]
    abs: u64,
    #[serde(alias = "Arch.")]
    arch: u64,
    #[serde(alias = "Cam.")]
    cam: u64,
    #[serde(alias = "Fil.")]
    fil: u64,
    #[serde(alias = "Pal.")]
    pal: u64,
    #[serde(alias = "WikiArt")]
    wikiart: u64,
}

/// Reads the pilot CSV. Columns follow the summary table (a `yield` column
/// is accepted and ignored, since it is derived); a row whose participant is
/// `Avg` is skipped.
pub fn parse_session_logs(text: &str) -> Result<Vec<SessionLog>, EvalError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    let mut logs = Vec::new();
    for (i, record) in r.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.get(0).is_some_and(|p| p.eq_ignore_ascii_case("avg")) {
            continue;
        }
        let row: LogRow = record.deserialize(Some(&headers))?;
        let duration_secs = parse_duration(&row.duration).ok_or_else(|| EvalError::InvalidLog {
            line,
            reason: format!("bad duration `{}`", row.duration),
        })?;
        let pins = PinCounts {
            abstract_art: row.abs,
            archive: row.arch,
            camera: row.cam,
            filtered: row.fil,
            palette: row.pal,
            wikiart: row.wikiart,
        };
        let log = SessionLog::new(row.participant, duration_secs, row.ext_seeds, row.int_seeds, row.pins, pins)
            .map_err(|e| EvalError::InvalidLog {
                line,
                reason: e.to_string(),
            })?;
        logs.push(log);
    }
    Ok(logs)
}

pub fn load_session_logs(path: &Path) -> Result<Vec<SessionLog>, EvalError> {
    parse_session_logs(&std::fs::read_to_string(path)?)
}

const HEADERS: [&str; 12] = [
    "Part.", "Duration", "Ext.Seeds", "Int.Seeds", "Pins", "Yield", "Abs.", "Arch.", "Cam.", "Fil.", "Pal.", "WikiArt",
];

fn write_cells(f: &mut fmt::Formatter<'_>, cells: &[String]) -> fmt::Result {
    for (i, c) in cells.iter().enumerate() {
        if i > 0 {
            f.write_str(" ")?;
        }
        write!(f, "{c:>w$}", w = HEADERS[i].len().max(8))?;
    }
    writeln!(f)
}

impl fmt::Display for PilotSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_cells(f, &HEADERS.map(String::from))?;
        for l in &self.rows {
            let mut cells = vec![
                l.participant.clone(),
                format_duration(l.duration_secs),
                l.external_seeds.to_string(),
                l.internal_seeds.to_string(),
                l.pins.to_string(),
                fmt_fixed(l.yield_value(), 2),
            ];
            cells.extend(l.per_dataset.as_array().map(|v| v.to_string()));
            write_cells(f, &cells)?;
        }
        let mut cells = vec![
            "Avg".to_string(),
            format_duration(self.mean_duration_secs.round() as u64),
            fmt_fixed(self.mean_external, 2),
            fmt_fixed(self.mean_internal, 2),
            fmt_fixed(self.mean_pins, 2),
            fmt_fixed(self.mean_yield, 2),
        ];
        cells.extend(self.mean_per_dataset.map(|v| fmt_fixed(v, 2)));
        write_cells(f, &cells)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yield_examples() {
        assert_eq!(fmt_fixed(session_yield(19, 5, 20).unwrap(), 2), "0.83");
        assert_eq!(fmt_fixed(session_yield(29, 14, 59).unwrap(), 2), "1.37");
        assert_eq!(fmt_fixed(session_yield(1, 0, 0).unwrap(), 2), "0.00");
        assert!(matches!(session_yield(0, 0, 3), Err(EvalError::NoRetrievals)));
    }

    #[test]
    fn durations() {
        assert_eq!(parse_duration("5m41s"), Some(341));
        assert_eq!(parse_duration("20m37s"), Some(1237));
        assert_eq!(parse_duration("1h02m03s"), Some(3723));
        assert_eq!(parse_duration("75"), Some(75));
        assert_eq!(parse_duration("90s"), Some(90));
        assert_eq!(parse_duration("5s41m"), None);
        assert_eq!(parse_duration("m"), None);
        assert_eq!(parse_duration("5m4"), None);
        assert_eq!(parse_duration(""), None);
        for s in [0, 59, 341, 3599, 3723] {
            assert_eq!(parse_duration(&format_duration(s)), Some(s));
        }
    }

    #[test]
    fn single_log_mean_equals_row() {
        let pins = PinCounts {
            abstract_art: 2,
            camera: 1,
            ..PinCounts::default()
        };
        let log = SessionLog::new("1", 100, 3, 1, 3, pins).unwrap();
        let s = pilot_summary(std::slice::from_ref(&log)).unwrap();
        assert_eq!(s.mean_external, 3.0);
        assert_eq!(s.mean_internal, 1.0);
        assert_eq!(s.mean_pins, 3.0);
        assert_eq!(s.mean_yield, log.yield_value());
        assert_eq!(s.mean_per_dataset, [2.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.mean_duration_secs, 100.0);
        assert!(pilot_summary(&[]).is_err());
    }

    #[test]
    fn inconsistent_logs_are_rejected() {
        assert!(SessionLog::new("1", 1, 1, 1, 3, PinCounts::default()).is_err());
        assert!(matches!(
            SessionLog::new("1", 1, 0, 0, 0, PinCounts::default()),
            Err(EvalError::NoRetrievals)
        ));
        let text = "participant,duration,ext_seeds,int_seeds,pins,abs,arch,cam,fil,pal,wikiart\n1,5m,1,1,4,1,1,1,0,0,0\n";
        assert!(matches!(parse_session_logs(text), Err(EvalError::InvalidLog { line: 2, .. })));
    }

    #[test]
    fn table_headers_and_avg_row() {
        let text = "Part.,Duration,Ext.Seeds,Int.Seeds,Pins,Yield,Abs.,Arch.,Cam.,Fil.,Pal.,WikiArt\n\
                    1,5m41s,19,5,20,0.83,2,3,10,4,0,1\n\
                    8,8m53s,11,2,14,1.08,1,3,3,3,1,3\n\
                    Avg,7m17s,15,3.5,17,0.92,1.5,3,6.5,3.5,0.5,2\n";
        let logs = parse_session_logs(text).unwrap();
        assert_eq!(logs.len(), 2);
        assert_eq!(logs[1].duration_secs, 533);
        let s = pilot_summary(&logs).unwrap();
        assert_eq!(fmt_fixed(s.mean_yield, 2), "0.92");
        let shown = s.to_string();
        assert_eq!(shown.lines().count(), 4);
        assert!(shown.lines().last().unwrap().trim_start().starts_with("Avg"));
        assert!(shown.contains("7m17s"));
    }
}
