//! Packet-log ingestion: canonical CSV parsing, SYN filtering and geolocation.
//!
//! The log format is one record per line,
//! `timestamp,src_ip,dst_ip,src_port,dst_port,flags`, where `flags` is the
//! raw TCP flag byte in decimal. A header line is recognised by a non-numeric
//! first field on line 1.

mod geodb;
mod record;

use std::io::{self, BufRead};

use rayon::prelude::*;
use thiserror::Error;

pub use geodb::{CountryCode, GeoDb, GeoDbError, GeoRange};
pub use record::{
    filter_syn, is_header_line, parse_record, PacketRecord, ParseError, ProbeEvent, SynAckPolicy,
    TcpFlags, CSV_HEADER,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
}

/// What to do with a line that fails to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OnInvalid {
    #[default]
    Fail,
    Skip,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub lines: u64,
    pub records: u64,
    pub probes: u64,
    pub skipped_invalid: u64,
}

impl IngestStats {
    fn merge(&mut self, other: &IngestStats) {
        self.lines += other.lines;
        self.records += other.records;
        self.probes += other.probes;
        self.skipped_invalid += other.skipped_invalid;
    }
}

/// Streaming reader over a packet log. Blank lines are ignored.
pub struct RecordReader<R> {
    inner: R,
    buf: String,
    line_no: usize,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(inner: R) -> Self {
        RecordReader {
            inner,
            buf: String::new(),
            line_no: 0,
        }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<PacketRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line_no += 1;
            let line = self.buf.trim();
            if line.is_empty() || (self.line_no == 1 && is_header_line(line)) {
                continue;
            }
            return Some(parse_record(line, self.line_no).map_err(Into::into));
        }
    }
}

const CHUNK_BYTES: usize = 4 << 20;

/// Parses and SYN-filters a packet log, folding the resulting events into
/// per-worker accumulators that are merged at the end.
///
/// The input is cut into newline-aligned chunks; up to `jobs` chunks are
/// folded in parallel at a time. Because `merge` is applied in chunk order
/// the result is deterministic for commutative aggregations.
pub fn fold_probes<R, A, I, F, M>(
    mut reader: R,
    policy: SynAckPolicy,
    on_invalid: OnInvalid,
    jobs: usize,
    init: I,
    fold: F,
    merge: M,
) -> Result<(A, IngestStats), IngestError>
where
    R: BufRead,
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, ProbeEvent) + Sync,
    M: Fn(&mut A, A),
{
    let jobs = jobs.max(1);
    let mut acc = init();
    let mut stats = IngestStats::default();
    let mut line_base = 0usize;
    let mut carry: Vec<u8> = Vec::new();
    let mut eof = false;

    while !eof {
        let mut batch: Vec<(usize, Vec<u8>)> = Vec::with_capacity(jobs);
        while batch.len() < jobs && !eof {
            let mut chunk = std::mem::take(&mut carry);
            eof = fill_chunk(&mut reader, &mut chunk)?;
            if !eof {
                // Hand the partial trailing line to the next chunk.
                let cut = chunk.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                carry = chunk.split_off(cut);
            }
            if chunk.is_empty() {
                continue;
            }
            let lines = chunk.iter().filter(|&&b| b == b'\n').count() + usize::from(chunk.last() != Some(&b'\n'));
            batch.push((line_base, chunk));
            line_base += lines;
        }

        let partials: Vec<Result<(A, IngestStats), IngestError>> = batch
            .into_par_iter()
            .map(|(base, chunk)| {
                let mut part = init();
                let mut st = IngestStats::default();
                fold_chunk(&chunk, base, policy, on_invalid, &mut part, &mut st, &fold)?;
                Ok((part, st))
            })
            .collect();
        for p in partials {
            let (part, st) = p?;
            merge(&mut acc, part);
            stats.merge(&st);
        }
    }
    Ok((acc, stats))
}

/// Reads until `chunk` holds at least `CHUNK_BYTES` and ends on a newline, or
/// the input is exhausted. Returns true at end of input.
fn fill_chunk<R: BufRead>(reader: &mut R, chunk: &mut Vec<u8>) -> io::Result<bool> {
    while chunk.len() < CHUNK_BYTES {
        let buf = reader.fill_buf()?;
        if buf.is_empty() {
            return Ok(true);
        }
        let n = buf.len();
        chunk.extend_from_slice(buf);
        reader.consume(n);
    }
    Ok(false)
}

fn fold_chunk<A, F>(
    chunk: &[u8],
    line_base: usize,
    policy: SynAckPolicy,
    on_invalid: OnInvalid,
    acc: &mut A,
    stats: &mut IngestStats,
    fold: &F,
) -> Result<(), IngestError>
where
    F: Fn(&mut A, ProbeEvent),
{
    for (offset, raw) in chunk.split(|&b| b == b'\n').enumerate() {
        let line_no = line_base + offset + 1;
        let line = match std::str::from_utf8(raw) {
            Ok(s) => s.trim(),
            Err(_) => {
                let err = ParseError {
                    line: line_no,
                    field: "timestamp",
                    reason: "line is not valid UTF-8".into(),
                };
                match on_invalid {
                    OnInvalid::Fail => return Err(err.into()),
                    OnInvalid::Skip => {
                        stats.skipped_invalid += 1;
                        continue;
                    }
                }
            }
        };
        if line.is_empty() {
            continue;
        }
        stats.lines += 1;
        if line_no == 1 && is_header_line(line) {
            continue;
        }
        match parse_record(line, line_no) {
            Ok(record) => {
                stats.records += 1;
                if policy.accepts(record.flags) {
                    stats.probes += 1;
                    fold(acc, ProbeEvent::from(&record));
                }
            }
            Err(e) => match on_invalid {
                OnInvalid::Fail => return Err(e.into()),
                OnInvalid::Skip => stats.skipped_invalid += 1,
            },
        }
    }
    Ok(())
}

/// Reads a whole log into memory as probe events, in file order.
pub fn read_probes<R: BufRead>(
    reader: R,
    policy: SynAckPolicy,
    on_invalid: OnInvalid,
) -> Result<(Vec<ProbeEvent>, IngestStats), IngestError> {
    fold_probes(
        reader,
        policy,
        on_invalid,
        1,
        Vec::new,
        |v: &mut Vec<ProbeEvent>, e| v.push(e),
        |a, mut b| a.append(&mut b),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOG: &str = "timestamp,src_ip,dst_ip,src_port,dst_port,flags\n\
        1415836800.25,203.0.113.7,192.0.2.10,44321,23,2\n\
        \n\
        1415836801,203.0.113.7,192.0.2.11,44322,80,18\n\
        1415836802,198.51.100.1,192.0.2.12,5000,22,2\n";

    #[test]
    fn reader_skips_header_and_blank_lines() {
        let recs: Vec<_> = RecordReader::new(LOG.as_bytes()).collect::<Result<_, _>>().unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[2].dst_port, 22);
    }

    #[test]
    fn reader_reports_line_numbers() {
        let text = "1,1.1.1.1,2.2.2.2,1,2,2\n1,1.1.1.1,2.2.2.2,1,99999,2\n";
        let err = RecordReader::new(text.as_bytes()).nth(1).unwrap().unwrap_err();
        match err {
            IngestError::Parse(e) => {
                assert_eq!(e.line, 2);
                assert_eq!(e.field, "dst_port");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn read_probes_filters_and_counts() {
        let (events, stats) = read_probes(LOG.as_bytes(), SynAckPolicy::Exclude, OnInvalid::Fail).unwrap();
        assert_eq!(events.iter().map(|e| e.dst_port).collect::<Vec<_>>(), vec![23, 22]);
        assert_eq!(stats.records, 3);
        assert_eq!(stats.probes, 2);
    }

    #[test]
    fn invalid_lines_fail_or_skip() {
        let text = "1,1.1.1.1,2.2.2.2,1,2,2\ngarbage\n3,1.1.1.1,2.2.2.2,1,2,2";
        let err = read_probes(text.as_bytes(), SynAckPolicy::Exclude, OnInvalid::Fail).unwrap_err();
        assert!(matches!(err, IngestError::Parse(ParseError { line: 2, .. })));
        let (events, stats) = read_probes(text.as_bytes(), SynAckPolicy::Exclude, OnInvalid::Skip).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(stats.skipped_invalid, 1);
    }

    #[test]
    fn parallel_fold_matches_sequential_reader() {
        // Big enough to span several chunks.
        let mut text = String::from(CSV_HEADER);
        text.push('\n');
        for i in 0..300_000u32 {
            let flags = [2u8, 18, 4, 2][(i % 4) as usize];
            text.push_str(&format!(
                "{}.5,10.0.{}.{},192.0.2.1,4000,{},{}\n",
                1_000_000 + i,
                (i / 251) % 256,
                i % 251,
                i % 1000,
                flags
            ));
        }
        let sequential: u64 = RecordReader::new(text.as_bytes())
            .map(|r| r.unwrap())
            .filter(|r| SynAckPolicy::Exclude.accepts(r.flags))
            .map(|r| r.dst_port as u64)
            .sum();
        let (sum, stats) = fold_probes(
            text.as_bytes(),
            SynAckPolicy::Exclude,
            OnInvalid::Fail,
            3,
            || 0u64,
            |a, e| *a += e.dst_port as u64,
            |a, b| *a += b,
        )
        .unwrap();
        assert_eq!(sum, sequential);
        assert_eq!(stats.records, 300_000);
        assert_eq!(stats.probes, 150_000);

        // Errors deep in the file still carry the right line number.
        let mut bad = text.clone();
        bad.push_str("1,1.1.1.1,2.2.2.2,1,70000,2\n");
        let err = fold_probes(bad.as_bytes(), SynAckPolicy::Exclude, OnInvalid::Fail, 2, || (), |_, _| {}, |_, _| {})
            .unwrap_err();
        assert!(matches!(err, IngestError::Parse(ParseError { line: 300_002, .. })), "{err}");
    }
}
