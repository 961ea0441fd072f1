//! Plain-text exchange formats.
//!
//! Every file starts with one header line `# key=value key=value ...`
//! carrying parameters and seeds, followed by a CSV table with a column row.
//! Floats are written in shortest round-trip form, so writing is a pure
//! function of the data.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::envelope::TargetProfile;
use crate::sim::{Direction, JumpEvent};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("missing header line")]
    MissingHeader,
    #[error("malformed header entry '{0}'")]
    BadHeader(String),
    #[error("expected columns '{expected}', found '{found}'")]
    BadColumns { expected: String, found: String },
    #[error("line {line}: {message}")]
    BadRecord { line: usize, message: String },
    #[error("header is missing key '{0}'")]
    MissingKey(String),
}

/// Ordered `key=value` pairs of a header line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Header(pub BTreeMap<String, String>);

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.insert(key.to_string(), value.to_string());
        self
    }

    /// Adds every `key=value` token of a space-separated fragment.
    pub fn with_fragment(mut self, fragment: &str) -> Result<Self, FormatError> {
        for token in fragment.split_whitespace() {
            let (k, v) = token
                .split_once('=')
                .filter(|(k, _)| !k.is_empty())
                .ok_or_else(|| FormatError::BadHeader(token.to_string()))?;
            self.0.insert(k.to_string(), v.to_string());
        }
        Ok(self)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, FormatError> {
        self.get(key).ok_or_else(|| FormatError::MissingKey(key.to_string()))
    }

    pub fn line(&self) -> String {
        let body: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("# {}", body.join(" "))
    }

    pub fn parse(line: &str) -> Result<Self, FormatError> {
        let body = line.strip_prefix('#').ok_or(FormatError::MissingHeader)?;
        Self::new().with_fragment(body)
    }
}

/// Writes a header, a column row and rows of pre-formatted cells.
pub fn write_table<I, R>(header: &Header, columns: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut out = header.line();
    out.push('\n');
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Splits a file into its header and raw records, checking the column row.
/// Returned records carry their 1-based line number.
pub fn read_table<'a>(
    text: &'a str,
    columns: &[&str],
) -> Result<(Header, Vec<(usize, Vec<&'a str>)>), FormatError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(FormatError::MissingHeader)?;
    let header = Header::parse(first)?;
    let expected = columns.join(",");
    let found = lines.next().map(|(_, l)| l.trim()).unwrap_or("");
    if found != expected {
        return Err(FormatError::BadColumns {
            expected,
            found: found.to_string(),
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns.len() {
            return Err(FormatError::BadRecord {
                line: i + 1,
                message: format!("expected {} fields, found {}", columns.len(), cells.len()),
            });
        }
        records.push((i + 1, cells));
    }
    Ok((header, records))
}

fn field<T: std::str::FromStr>(line: usize, cell: &str, name: &str) -> Result<T, FormatError> {
    cell.parse().map_err(|_| FormatError::BadRecord {
        line,
        message: format!("cannot parse {name} from '{cell}'"),
    })
}

fn finite(line: usize, cell: &str, name: &str) -> Result<f64, FormatError> {
    let v: f64 = field(line, cell, name)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(FormatError::BadRecord {
            line,
            message: format!("{name} is not finite"),
        })
    }
}

const EVENT_COLUMNS: [&str; 4] = ["time", "from", "to", "boundary"];

pub fn write_event_log(header: &Header, events: &[JumpEvent]) -> String {
    write_table(
        header,
        &EVENT_COLUMNS,
        events.iter().map(|e| {
            [
                e.time.to_string(),
                e.from.to_string(),
                e.to.to_string(),
                e.crossing.to_string(),
            ]
        }),
    )
}

/// Reads an event log; the header must carry `n`.
pub fn parse_event_log(text: &str) -> Result<(Header, Vec<JumpEvent>), FormatError> {
    let (header, records) = read_table(text, &EVENT_COLUMNS)?;
    let n: usize = field(1, header.require("n")?, "n")?;
    if n < 2 {
        return Err(FormatError::BadHeader(format!("n={n}")));
    }
    let mut events = Vec::with_capacity(records.len());
    let mut last = f64::NEG_INFINITY;
    for (line, cells) in records {
        let time = finite(line, cells[0], "time")?;
        let from: usize = field(line, cells[1], "from")?;
        let to: usize = field(line, cells[2], "to")?;
        let crossing: i8 = field(line, cells[3], "boundary")?;
        if time < last {
            return Err(FormatError::BadRecord {
                line,
                message: "times are not non-decreasing".into(),
            });
        }
        last = time;
        let direction = if from < n && to == (from + 1) % n {
            Direction::Right
        } else if from < n && to == (from + n - 1) % n {
            Direction::Left
        } else {
            return Err(FormatError::BadRecord {
                line,
                message: format!("{from} -> {to} is not a nearest-neighbour jump on {n} sites"),
            });
        };
        let event = JumpEvent::new(time, from, direction, n);
        if event.crossing != crossing {
            return Err(FormatError::BadRecord {
                line,
                message: format!("boundary flag {crossing} inconsistent with the jump"),
            });
        }
        events.push(event);
    }
    Ok((header, events))
}

const SNAPSHOT_COLUMNS: [&str; 2] = ["site", "occupancy"];

pub fn write_snapshot(header: &Header, occupancy: &[u32]) -> String {
    write_table(
        header,
        &SNAPSHOT_COLUMNS,
        occupancy
            .iter()
            .enumerate()
            .map(|(x, k)| [x.to_string(), k.to_string()]),
    )
}

/// Reads a configuration snapshot; sites must be listed as `0, 1, ..`.
pub fn parse_snapshot(text: &str) -> Result<(Header, Vec<u32>), FormatError> {
    let (header, records) = read_table(text, &SNAPSHOT_COLUMNS)?;
    let mut eta = Vec::with_capacity(records.len());
    for (line, cells) in records {
        let site: usize = field(line, cells[0], "site")?;
        if site != eta.len() {
            return Err(FormatError::BadRecord {
                line,
                message: format!("expected site {}, found {site}", eta.len()),
            });
        }
        eta.push(field(line, cells[1], "occupancy")?);
    }
    Ok((header, eta))
}

pub fn write_heights(header: &Header, values: &[f64]) -> String {
    let n = values.len().saturating_sub(1).max(1);
    write_table(
        header,
        &["x", "H"],
        values
            .iter()
            .enumerate()
            .map(|(i, v)| [(i as f64 / n as f64).to_string(), v.to_string()]),
    )
}

/// One row of a field time series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldRow {
    pub time: f64,
    pub value: f64,
    /// Fourier index; negative for the sine mode.
    pub mode: i32,
    pub seed: u64,
}

pub fn write_field_series(header: &Header, rows: &[FieldRow]) -> String {
    write_table(
        header,
        &["T", "value", "k", "seed"],
        rows.iter().map(|r| {
            [
                r.time.to_string(),
                r.value.to_string(),
                r.mode.to_string(),
                r.seed.to_string(),
            ]
        }),
    )
}

pub fn write_profile(header: &Header, profile: &TargetProfile) -> String {
    write_table(
        header,
        &["x", "value"],
        profile
            .points()
            .map(|(x, v)| [x.to_string(), v.to_string()]),
    )
}

/// Reads a target profile: abscissae strictly increasing in `[0, 1)`.
pub fn parse_profile(text: &str) -> Result<(Header, TargetProfile), FormatError> {
    let (header, records) = read_table(text, &["x", "value"])?;
    let mut xs = Vec::with_capacity(records.len());
    let mut vs = Vec::with_capacity(records.len());
    for (line, cells) in records {
        xs.push(finite(line, cells[0], "x")?);
        vs.push(finite(line, cells[1], "value")?);
    }
    let profile = TargetProfile::new(xs, vs).map_err(|e| FormatError::BadRecord {
        line: 0,
        message: e.to_string(),
    })?;
    Ok((header, profile))
}

/// One row of an entropy scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyRow {
    pub n: usize,
    pub epsilon: f64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub h_hat: f64,
}

pub fn write_entropy_scan(header: &Header, rows: &[EntropyRow]) -> String {
    write_table(
        header,
        &["N", "epsilon", "p_hat", "CI_low", "CI_high", "H_hat"],
        rows.iter().map(|r| {
            [
                r.n.to_string(),
                r.epsilon.to_string(),
                r.p_hat.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
                r.h_hat.to_string(),
            ]
        }),
    )
}

/// One sandwich violation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViolationRow {
    pub run: usize,
    pub event: u64,
    pub site: usize,
    pub slack: f64,
}

pub fn write_violations(header: &Header, rows: &[ViolationRow]) -> String {
    write_table(
        header,
        &["run", "event", "site", "slack"],
        rows.iter().map(|r| {
            [
                r.run.to_string(),
                r.event.to_string(),
                r.site.to_string(),
                r.slack.to_string(),
            ]
        }),
    )
}

/// `(t, index, value)` samples of a continuum trajectory.
pub fn write_trajectory(header: &Header, rows: &[(f64, usize, f64)]) -> String {
    write_table(
        header,
        &["t", "index", "value"],
        rows.iter()
            .map(|(t, i, v)| [t.to_string(), i.to_string(), v.to_string()]),
    )
}

/// Fixed-width histogram of `values` over `[lo, hi)` as `bin_low,bin_high,count`.
pub fn write_histogram(header: &Header, values: &[f64], lo: f64, hi: f64, bins: usize) -> String {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in values {
        if v >= lo && v < hi {
            counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
        }
    }
    write_table(
        header,
        &["bin_low", "bin_high", "count"],
        counts.iter().enumerate().map(|(i, c)| {
            [
                (lo + i as f64 * width).to_string(),
                (lo + (i + 1) as f64 * width).to_string(),
                c.to_string(),
            ]
        }),
    )
}

/// Formats `(key, value)` pairs as a header fragment.
pub fn fragment(pairs: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        if !s.is_empty() {
            s.push(' ');
        }
        let _ = write!(s, "{k}={v}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::{build_measure, Configuration, ModelParams, RateFunction, Simulation};
    use crate::sim::EventLog;
    use proptest::prelude::*;

    #[test]
    fn event_log_round_trip() {
        let params = ModelParams::new(8, 1.0, 0.5, 1.0, RateFunction::constant()).unwrap();
        let config = Configuration::new(vec![1, 2, 0, 1, 3, 0, 0, 1], &RateFunction::constant()).unwrap();
        let mut sim = Simulation::new(config, &params).unwrap();
        let mut log = EventLog::default();
        sim.run_until(0.2, &mut stream(1, 0), &mut log).unwrap();
        assert!(log.events.iter().any(|e| e.crossing != 0));
        let header = Header::new().with_fragment(&params.header()).unwrap().with("seed", 1);
        let text = write_event_log(&header, &log.events);
        let (h, events) = parse_event_log(&text).unwrap();
        assert_eq!(h, header);
        assert_eq!(events, log.events);
        assert_eq!(write_event_log(&h, &events), text);
    }

    #[test]
    fn event_log_rejects_bad_records() {
        let head = "# n=4 seed=1\ntime,from,to,boundary\n";
        assert!(parse_event_log(&format!("{head}0.1,0,2,0\n")).is_err());
        assert!(parse_event_log(&format!("{head}0.1,3,0,0\n")).is_err());
        assert!(parse_event_log(&format!("{head}0.2,1,2,0\n0.1,1,2,0\n")).is_err());
        assert!(parse_event_log(&format!("{head}0.1,3,0,-1\n0.2,0,3,1\n")).is_ok());
        assert!(parse_event_log("# seed=1\ntime,from,to,boundary\n").is_err());
    }

    #[test]
    fn snapshot_and_profile_round_trip() {
        let rate = RateFunction::constant();
        let m = build_measure(&rate, 0.5, 1 << 16).unwrap();
        let mut rng = stream(2, 0);
        let eta: Vec<u32> = (0..32).map(|_| m.sample(&mut rng)).collect();
        let h = Header::new().with("seed", 2);
        let (h2, back) = parse_snapshot(&write_snapshot(&h, &eta)).unwrap();
        assert_eq!((h2, back), (h.clone(), eta));

        let profile = TargetProfile::from_fn(16, |x| (6.0 * x).sin() / 3.0).unwrap();
        let (_, p2) = parse_profile(&write_profile(&h, &profile)).unwrap();
        assert_eq!(p2, profile);
        assert!(parse_profile("# a=1\nx,value\n0.5,1\n0.25,2\n").is_err());
        assert!(parse_profile("# a=1\nx,value\n0.0,NaN\n").is_err());
    }

    #[test]
    fn histogram_counts_in_range_values() {
        let text = write_histogram(&Header::new(), &[0.0, 0.1, 0.55, 0.99, 1.0, -0.1], 0.0, 1.0, 2);
        assert!(text.ends_with("0,0.5,2\n0.5,1,2\n"), "{text}");
    }

    proptest! {
        #[test]
        fn header_round_trip(pairs in proptest::collection::btree_map("[a-z_]{1,8}", "[a-zA-Z0-9.:;_-]{0,12}", 0..6)) {
            let h = Header(pairs);
            prop_assert_eq!(Header::parse(&h.line()).unwrap(), h);
        }

        #[test]
        fn snapshot_round_trip(eta in proptest::collection::vec(0u32..1000, 0..64)) {
            let h = Header::new().with("n", eta.len());
            let (_, back) = parse_snapshot(&write_snapshot(&h, &eta)).unwrap();
            prop_assert_eq!(back, eta);
        }

        #[test]
        fn parsers_never_panic(s in "\\PC{0,200}") {
            let _ = parse_event_log(&s);
            let _ = parse_snapshot(&s);
            let _ = parse_profile(&s);
        }
    }
}
