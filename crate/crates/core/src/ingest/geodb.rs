//! Range-based IPv4 → country lookup backed by a local CSV snapshot.

use std::fmt;
use std::io::Read;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// ISO 3166-1 alpha-2 code. `"??"` is reserved for addresses with no match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct CountryCode([u8; 2]);

impl CountryCode {
    pub const UNKNOWN: CountryCode = CountryCode(*b"??");

    pub fn as_str(&self) -> &str {
        // Only ASCII bytes are ever stored.
        std::str::from_utf8(&self.0).unwrap_or("??")
    }
}

impl FromStr for CountryCode {
    type Err = GeoDbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let b = s.as_bytes();
        if s == "??" {
            return Ok(CountryCode::UNKNOWN);
        }
        if b.len() != 2 || !b.iter().all(u8::is_ascii_alphabetic) {
            return Err(GeoDbError::BadCountry(s.to_string()));
        }
        Ok(CountryCode([b[0].to_ascii_uppercase(), b[1].to_ascii_uppercase()]))
    }
}

impl TryFrom<String> for CountryCode {
    type Error = GeoDbError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<CountryCode> for String {
    fn from(c: CountryCode) -> String {
        c.as_str().to_string()
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeoRange {
    pub start: u32,
    pub end: u32,
    pub country: CountryCode,
}

#[derive(Debug, Error)]
pub enum GeoDbError {
    #[error("invalid country code {0:?}")]
    BadCountry(String),
    #[error("row {row}: invalid address bound {value:?}")]
    BadBound { row: usize, value: String },
    #[error("row {row}: expected range_start,range_end,country")]
    BadRow { row: usize },
    #[error("range {start}-{end} has start > end")]
    Inverted { start: Ipv4Addr, end: Ipv4Addr },
    #[error("ranges {0} and {1} overlap")]
    Overlap(Ipv4Addr, Ipv4Addr),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Immutable after construction; share it freely across threads.
#[derive(Debug, Clone, Default)]
pub struct GeoDb {
    ranges: Vec<GeoRange>,
}

impl GeoDb {
    /// Builds a database from ranges in any order. Overlapping or inverted
    /// ranges are rejected.
    pub fn from_ranges(mut ranges: Vec<GeoRange>) -> Result<Self, GeoDbError> {
        for r in &ranges {
            if r.start > r.end {
                return Err(GeoDbError::Inverted {
                    start: r.start.into(),
                    end: r.end.into(),
                });
            }
        }
        ranges.sort_by_key(|r| r.start);
        for w in ranges.windows(2) {
            if w[1].start <= w[0].end {
                return Err(GeoDbError::Overlap(w[0].start.into(), w[1].start.into()));
            }
        }
        Ok(GeoDb { ranges })
    }

    /// Reads `range_start,range_end,country` rows. Bounds may be dotted quads or
    /// plain u32 integers; a header row is skipped when its first bound does not parse.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, GeoDbError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut ranges = Vec::new();
        for (idx, row) in rdr.records().enumerate() {
            let row = row?;
            let row_no = idx + 1;
            if row.len() < 3 {
                if row.iter().all(str::is_empty) {
                    continue;
                }
                return Err(GeoDbError::BadRow { row: row_no });
            }
            let start = match parse_bound(&row[0]) {
                Some(v) => v,
                None if idx == 0 => continue,
                None => {
                    return Err(GeoDbError::BadBound {
                        row: row_no,
                        value: row[0].to_string(),
                    })
                }
            };
            let end = parse_bound(&row[1]).ok_or_else(|| GeoDbError::BadBound {
                row: row_no,
                value: row[1].to_string(),
            })?;
            ranges.push(GeoRange {
                start,
                end,
                country: row[2].parse()?,
            });
        }
        Self::from_ranges(ranges)
    }

    pub fn ranges(&self) -> &[GeoRange] {
        &self.ranges
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Binary search for the range containing `ip`.
    pub fn geolocate(&self, ip: Ipv4Addr) -> Option<CountryCode> {
        let key = u32::from(ip);
        let idx = self.ranges.partition_point(|r| r.start <= key);
        let candidate = self.ranges.get(idx.checked_sub(1)?)?;
        (key <= candidate.end).then_some(candidate.country)
    }

    /// Like [`GeoDb::geolocate`] but maps misses to [`CountryCode::UNKNOWN`].
    pub fn country_or_unknown(&self, ip: Ipv4Addr) -> CountryCode {
        self.geolocate(ip).unwrap_or(CountryCode::UNKNOWN)
    }
}

fn parse_bound(raw: &str) -> Option<u32> {
    if let Ok(ip) = raw.parse::<Ipv4Addr>() {
        return Some(ip.into());
    }
    raw.parse::<u32>().ok()
}
