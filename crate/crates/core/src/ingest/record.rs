use std::fmt;
use std::net::{IpAddr, Ipv4Addr};

use bitflags::bitflags;
use serde::{Deserialize, Serialize};
use thiserror::Error;

bitflags! {
    /// Raw TCP flag byte.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct TcpFlags: u8 {
        const FIN = 0x01;
        const SYN = 0x02;
        const RST = 0x04;
        const PSH = 0x08;
        const ACK = 0x10;
        const URG = 0x20;
        const ECE = 0x40;
        const CWR = 0x80;
    }
}

/// One packet header as recorded by the telescope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketRecord {
    /// Seconds since the Unix epoch, with fractional part.
    pub timestamp: f64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub flags: TcpFlags,
}

/// The (timestamp, source, destination port) projection every analysis runs on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeEvent {
    pub timestamp: f64,
    pub src_ip: Ipv4Addr,
    pub dst_port: u16,
}

impl From<&PacketRecord> for ProbeEvent {
    fn from(r: &PacketRecord) -> Self {
        ProbeEvent {
            timestamp: r.timestamp,
            src_ip: r.src_ip,
            dst_port: r.dst_port,
        }
    }
}

/// Which SYN packets count as probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynAckPolicy {
    /// SYN set and ACK clear: SYN-ACK backscatter is dropped.
    #[default]
    Exclude,
    /// Any packet with SYN set.
    Include,
}

impl SynAckPolicy {
    pub fn accepts(self, flags: TcpFlags) -> bool {
        match self {
            SynAckPolicy::Exclude => flags.contains(TcpFlags::SYN) && !flags.contains(TcpFlags::ACK),
            SynAckPolicy::Include => flags.contains(TcpFlags::SYN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: invalid {field}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub field: &'static str,
    pub reason: String,
}

impl ParseError {
    fn new(line: usize, field: &'static str, reason: impl Into<String>) -> Self {
        ParseError {
            line,
            field,
            reason: reason.into(),
        }
    }
}

const FIELDS: [&str; 6] = ["timestamp", "src_ip", "dst_ip", "src_port", "dst_port", "flags"];

/// Parses one line of the canonical header log:
/// `timestamp,src_ip,dst_ip,src_port,dst_port,flags`.
///
/// `line_no` is only used to annotate errors.
pub fn parse_record(line: &str, line_no: usize) -> Result<PacketRecord, ParseError> {
    let line = line.trim_end_matches(['\r', '\n']);
    let mut parts = line.split(',');
    let mut next = |idx: usize| -> Result<&str, ParseError> {
        parts
            .next()
            .map(str::trim)
            .ok_or_else(|| ParseError::new(line_no, FIELDS[idx], "missing field"))
    };

    let ts_raw = next(0)?;
    let timestamp: f64 = ts_raw
        .parse()
        .map_err(|_| ParseError::new(line_no, "timestamp", format!("not a number: {ts_raw:?}")))?;
    if !(timestamp.is_finite() && timestamp > 0.0) {
        return Err(ParseError::new(line_no, "timestamp", "must be finite and positive"));
    }
    let src_ip = parse_ipv4(next(1)?, line_no, "src_ip")?;
    let dst_ip = parse_ipv4(next(2)?, line_no, "dst_ip")?;
    let src_port = parse_port(next(3)?, line_no, "src_port")?;
    let dst_port = parse_port(next(4)?, line_no, "dst_port")?;
    let flags_raw = next(5)?;
    let flags: u8 = flags_raw
        .parse()
        .map_err(|_| ParseError::new(line_no, "flags", format!("not a flag byte: {flags_raw:?}")))?;
    if parts.next().is_some() {
        return Err(ParseError::new(line_no, "flags", "trailing fields"));
    }

    Ok(PacketRecord {
        timestamp,
        src_ip,
        dst_ip,
        src_port,
        dst_port,
        flags: TcpFlags::from_bits_retain(flags),
    })
}

fn parse_ipv4(raw: &str, line: usize, field: &'static str) -> Result<Ipv4Addr, ParseError> {
    match raw.parse::<IpAddr>() {
        Ok(IpAddr::V4(ip)) => Ok(ip),
        Ok(IpAddr::V6(_)) => Err(ParseError::new(line, field, "IPv6 addresses are not supported")),
        Err(_) => Err(ParseError::new(line, field, format!("not an IPv4 address: {raw:?}"))),
    }
}

fn parse_port(raw: &str, line: usize, field: &'static str) -> Result<u16, ParseError> {
    let value: u64 = raw
        .parse()
        .map_err(|_| ParseError::new(line, field, format!("not a port number: {raw:?}")))?;
    u16::try_from(value).map_err(|_| ParseError::new(line, field, format!("{value} is outside 0-65535")))
}

/// True when the first field of `line` is not numeric, i.e. the line is a header.
pub fn is_header_line(line: &str) -> bool {
    let first = line.split(',').next().unwrap_or("").trim();
    first.parse::<f64>().is_err()
}

impl fmt::Display for PacketRecord {
    /// Canonical CSV form; parses back to an identical record.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{}",
            self.timestamp,
            self.src_ip,
            self.dst_ip,
            self.src_port,
            self.dst_port,
            self.flags.bits()
        )
    }
}

pub const CSV_HEADER: &str = "timestamp,src_ip,dst_ip,src_port,dst_port,flags";

/// Keeps the probe records (per `policy`) and projects them to [`ProbeEvent`]s,
/// preserving input order.
pub fn filter_syn<I>(records: I, policy: SynAckPolicy) -> impl Iterator<Item = ProbeEvent>
where
    I: IntoIterator<Item = PacketRecord>,
{
    records
        .into_iter()
        .filter(move |r| policy.accepts(r.flags))
        .map(|r| ProbeEvent::from(&r))
}
