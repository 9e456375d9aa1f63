//! Per-port probing-rate series.
//!
//! Buckets are aligned to whole multiples of the resolution since the Unix
//! epoch (UTC), so a 6-hour series always starts at 00:00, 06:00, 12:00 or
//! 18:00. A bucket's value is the raw SYN count inside it.

use std::fmt::{self, Write as _};
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ProbeEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Resolution {
    #[serde(rename = "1h")]
    H1,
    #[serde(rename = "3h")]
    H3,
    #[serde(rename = "6h")]
    H6,
    #[serde(rename = "12h")]
    H12,
    #[serde(rename = "24h")]
    H24,
}

impl Resolution {
    pub const ALL: [Resolution; 5] = [Resolution::H1, Resolution::H3, Resolution::H6, Resolution::H12, Resolution::H24];

    pub fn seconds(self) -> i64 {
        3600 * match self {
            Resolution::H1 => 1,
            Resolution::H3 => 3,
            Resolution::H6 => 6,
            Resolution::H12 => 12,
            Resolution::H24 => 24,
        }
    }

    pub fn from_seconds(secs: i64) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.seconds() == secs)
    }

    pub fn label(self) -> &'static str {
        match self {
            Resolution::H1 => "1h",
            Resolution::H3 => "3h",
            Resolution::H6 => "6h",
            Resolution::H12 => "12h",
            Resolution::H24 => "24h",
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Resolution {
    type Err = SeriesError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1h" | "1" => Ok(Resolution::H1),
            "3h" | "3" => Ok(Resolution::H3),
            "6h" | "6" => Ok(Resolution::H6),
            "12h" | "12" => Ok(Resolution::H12),
            "24h" | "24" | "1d" => Ok(Resolution::H24),
            other => Err(SeriesError::BadResolution(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("unsupported resolution {0:?} (expected 1h, 3h, 6h, 12h or 24h)")]
    BadResolution(String),
    #[error("cannot resample {from} to {to}: target must be an integer multiple")]
    NotAMultiple { from: Resolution, to: Resolution },
    #[error("no ports requested")]
    NoPorts,
    #[error("series {index} does not match origin, resolution or length of the first series")]
    Misaligned { index: usize },
    #[error("series file line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSeries {
    pub dst_port: u16,
    pub resolution: Resolution,
    /// Start of bucket 0, seconds since the epoch.
    pub origin: i64,
    pub values: Vec<u64>,
}

impl RateSeries {
    pub fn total(&self) -> u64 {
        self.values.iter().sum()
    }
}

/// Aligned per-port series: index `t` of every series covers the same
/// wall-clock interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateMatrix {
    pub ports: Vec<u16>,
    pub resolution: Resolution,
    pub origin: i64,
    pub series: Vec<RateSeries>,
    /// The last bucket reaches past the end of the observed capture.
    pub trailing_partial: bool,
}

impl RateMatrix {
    pub fn new(series: Vec<RateSeries>, trailing_partial: bool) -> Result<Self, SeriesError> {
        let first = series.first().ok_or(SeriesError::NoPorts)?;
        let (resolution, origin, len) = (first.resolution, first.origin, first.values.len());
        for (i, s) in series.iter().enumerate() {
            if s.resolution != resolution || s.origin != origin || s.values.len() != len {
                return Err(SeriesError::Misaligned { index: i });
            }
        }
        Ok(RateMatrix {
            ports: series.iter().map(|s| s.dst_port).collect(),
            resolution,
            origin,
            series,
            trailing_partial,
        })
    }

    pub fn len(&self) -> usize {
        self.series.first().map_or(0, |s| s.values.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bucket_start(&self, t: usize) -> i64 {
        self.origin + t as i64 * self.resolution.seconds()
    }

    pub fn port_index(&self, port: u16) -> Option<usize> {
        self.ports.iter().position(|&p| p == port)
    }

    /// Series values as reals, one column per port.
    pub fn columns_f64(&self) -> Vec<Vec<f64>> {
        self.series.iter().map(|s| s.values.iter().map(|&v| v as f64).collect()).collect()
    }

    /// Drops the trailing partial bucket, if flagged.
    pub fn without_partial_tail(mut self) -> Self {
        if self.trailing_partial && !self.is_empty() {
            for s in &mut self.series {
                s.values.pop();
            }
            self.trailing_partial = false;
        }
        self
    }
}

/// Floor of `ts` to a multiple of `res` seconds.
fn align_down(ts: f64, res: i64) -> i64 {
    (ts / res as f64).floor() as i64 * res
}

fn bucket_index(ts: f64, origin: i64, res: i64) -> usize {
    ((ts - origin as f64) / res as f64).floor() as usize
}

/// Counts events per bucket for each of `ports`.
///
/// The span runs from the earliest to the latest event over *all* events,
/// so every port's series has the same length; ports without traffic get an
/// all-zero series. An empty event set gives zero-length series.
pub fn bucketize(events: &[ProbeEvent], resolution: Resolution, ports: &[u16]) -> Result<RateMatrix, SeriesError> {
    if ports.is_empty() {
        return Err(SeriesError::NoPorts);
    }
    let res = resolution.seconds();
    let (lo, hi) = events.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
        (lo.min(e.timestamp), hi.max(e.timestamp))
    });
    let (origin, len) = if events.is_empty() {
        (0, 0)
    } else {
        let origin = align_down(lo, res);
        (origin, bucket_index(hi, origin, res) + 1)
    };

    let mut slot = vec![usize::MAX; 1 << 16];
    for (i, &p) in ports.iter().enumerate() {
        slot[p as usize] = i;
    }
    let mut values = vec![vec![0u64; len]; ports.len()];
    for e in events {
        let i = slot[e.dst_port as usize];
        if i != usize::MAX {
            values[i][bucket_index(e.timestamp, origin, res)] += 1;
        }
    }
    let trailing_partial = len > 0 && (origin + len as i64 * res) as f64 > hi;
    let series = ports
        .iter()
        .zip(values)
        .map(|(&dst_port, values)| RateSeries {
            dst_port,
            resolution,
            origin,
            values,
        })
        .collect();
    RateMatrix::new(series, trailing_partial)
}

/// Sums fine buckets into coarser ones aligned to the coarse resolution's
/// UTC boundaries.
pub fn resample(m: &RateMatrix, coarser: Resolution) -> Result<RateMatrix, SeriesError> {
    let fine = m.resolution.seconds();
    let coarse = coarser.seconds();
    if coarse < fine || coarse % fine != 0 {
        return Err(SeriesError::NotAMultiple {
            from: m.resolution,
            to: coarser,
        });
    }
    let origin = m.origin.div_euclid(coarse) * coarse;
    let len = if m.is_empty() {
        0
    } else {
        ((m.bucket_start(m.len() - 1) - origin) / coarse) as usize + 1
    };
    let series = m
        .series
        .iter()
        .map(|s| {
            let mut values = vec![0u64; len];
            for (t, &v) in s.values.iter().enumerate() {
                values[((m.bucket_start(t) - origin) / coarse) as usize] += v;
            }
            RateSeries {
                dst_port: s.dst_port,
                resolution: coarser,
                origin: if m.is_empty() { m.origin } else { origin },
                values,
            }
        })
        .collect();
    RateMatrix::new(series, m.trailing_partial)
}

/// Writes `bucket_start,port_23,port_80,...` with integer counts.
pub fn to_csv(m: &RateMatrix) -> String {
    let mut out = String::from("bucket_start");
    for p in &m.ports {
        let _ = write!(out, ",port_{p}");
    }
    out.push('\n');
    for t in 0..m.len() {
        let _ = write!(out, "{}", m.bucket_start(t));
        for s in &m.series {
            let _ = write!(out, ",{}", s.values[t]);
        }
        out.push('\n');
    }
    out
}

/// Real-valued series as read back from a series file.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    pub ports: Vec<u16>,
    pub bucket_starts: Vec<i64>,
    pub resolution: Option<Resolution>,
    /// One column per port.
    pub columns: Vec<Vec<f64>>,
}

impl SeriesTable {
    pub fn from_matrix(m: &RateMatrix) -> Self {
        SeriesTable {
            ports: m.ports.clone(),
            bucket_starts: (0..m.len()).map(|t| m.bucket_start(t)).collect(),
            resolution: Some(m.resolution),
            columns: m.columns_f64(),
        }
    }

    pub fn len(&self) -> usize {
        self.bucket_starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bucket_starts.is_empty()
    }

    pub fn port_index(&self, port: u16) -> Option<usize> {
        self.ports.iter().position(|&p| p == port)
    }

    /// Sums rows into buckets of a coarser resolution aligned to its UTC
    /// boundaries, as [`resample`] does. A last coarse bucket that the rows
    /// do not cover completely is dropped.
    pub fn resample(&self, coarser: Resolution) -> Result<SeriesTable, SeriesError> {
        let from = self
            .resolution
            .ok_or_else(|| SeriesError::BadResolution("unknown (fewer than two rows or irregular spacing)".into()))?;
        let (fine, coarse) = (from.seconds(), coarser.seconds());
        if coarse < fine || coarse % fine != 0 {
            return Err(SeriesError::NotAMultiple { from, to: coarser });
        }
        let mut bucket_starts: Vec<i64> = Vec::new();
        let mut columns = vec![Vec::new(); self.ports.len()];
        for (t, &start) in self.bucket_starts.iter().enumerate() {
            let b = start.div_euclid(coarse) * coarse;
            if bucket_starts.last() != Some(&b) {
                bucket_starts.push(b);
                columns.iter_mut().for_each(|c| c.push(0.0));
            }
            for (c, src) in columns.iter_mut().zip(&self.columns) {
                *c.last_mut().expect("row pushed above") += src[t];
            }
        }
        if let (Some(&b), Some(&last)) = (bucket_starts.last(), self.bucket_starts.last()) {
            if last + fine < b + coarse {
                bucket_starts.pop();
                columns.iter_mut().for_each(|c| {
                    c.pop();
                });
            }
        }
        Ok(SeriesTable {
            ports: self.ports.clone(),
            bucket_starts,
            resolution: Some(coarser),
            columns,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket_start");
        for p in &self.ports {
            let _ = write!(out, ",port_{p}");
        }
        out.push('\n');
        for (t, start) in self.bucket_starts.iter().enumerate() {
            let _ = write!(out, "{start}");
            for c in &self.columns {
                let _ = write!(out, ",{}", c[t]);
            }
            out.push('\n');
        }
        out
    }
}

/// Reads a series file. The resolution is inferred from the spacing of the
/// first two rows when it is one of the supported values.
pub fn read_series_csv<R: BufRead>(reader: R) -> Result<SeriesTable, SeriesError> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or(SeriesError::Csv {
        line: 1,
        reason: "empty file".into(),
    })??;
    let mut cols = header.trim().split(',');
    if cols.next().map(str::trim) != Some("bucket_start") {
        return Err(SeriesError::Csv {
            line: 1,
            reason: "header must start with bucket_start".into(),
        });
    }
    let ports = cols
        .map(|c| {
            let c = c.trim();
            c.strip_prefix("port_")
                .unwrap_or(c)
                .parse::<u16>()
                .map_err(|_| SeriesError::Csv {
                    line: 1,
                    reason: format!("bad column {c:?}"),
                })
        })
        .collect::<Result<Vec<u16>, _>>()?;
    if ports.is_empty() {
        return Err(SeriesError::NoPorts);
    }

    let mut bucket_starts = Vec::new();
    let mut columns = vec![Vec::new(); ports.len()];
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let bad = |reason: String| SeriesError::Csv { line: line_no, reason };
        let start = fields
            .next()
            .and_then(|f| f.trim().parse::<i64>().ok())
            .ok_or_else(|| bad("bad bucket_start".into()))?;
        bucket_starts.push(start);
        for col in columns.iter_mut() {
            let v = fields
                .next()
                .and_then(|f| f.trim().parse::<f64>().ok())
                .ok_or_else(|| bad("missing or non-numeric value".into()))?;
            col.push(v);
        }
        if fields.next().is_some() {
            return Err(bad("too many fields".into()));
        }
    }
    let resolution = match bucket_starts.as_slice() {
        [a, b, ..] => Resolution::from_seconds(b - a),
        _ => None,
    };
    Ok(SeriesTable {
        ports,
        bucket_starts,
        resolution,
        columns,
    })
}
