//! The ns-2 style trace line grammar.
//!
//! One event per line, twelve space-separated fields:
//!
//! ```text
//! <event> <time> <from> <to> <ptype> <size> <flags> <fid> <src_addr> <dst_addr> <seq> <pkt_id>
//! ```
//!
//! where `<event>` is `+` (enqueue), `-` (dequeue) or `r` (receive), `<time>`
//! is fixed-point seconds with six decimals, addresses are `<node>.<port>`,
//! and `<flags>` is a seven-character field (`-------` when unset).
//!
//! Timestamps are stored as integer microseconds so that formatting and
//! parsing round-trip exactly; [`parse_trace_line`] accepts any decimal
//! seconds value (extra digits are rounded to microseconds) so traces from a
//! real ns-2 run stay ingestible.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const MICROS_PER_SEC: u64 = 1_000_000;

/// Identifier of a node in the simulated topology.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// What happened to the packet at this hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Enqueue,
    Dequeue,
    Receive,
}

impl EventKind {
    pub fn code(self) -> &'static str {
        match self {
            EventKind::Enqueue => "+",
            EventKind::Dequeue => "-",
            EventKind::Receive => "r",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "+" => Some(EventKind::Enqueue),
            "-" => Some(EventKind::Dequeue),
            "r" => Some(EventKind::Receive),
            _ => None,
        }
    }
}

/// Agent address, printed as `<node>.<port>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Addr {
    pub node: NodeId,
    pub port: u32,
}

impl Addr {
    pub fn new(node: u32, port: u32) -> Self {
        Addr { node: NodeId(node), port }
    }
}

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.node, self.port)
    }
}

/// One parsed line of a trace file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEvent {
    pub kind: EventKind,
    /// Event time in integer microseconds.
    pub time_us: u64,
    pub from: NodeId,
    pub to: NodeId,
    pub protocol: String,
    pub size: u32,
    /// Seven-character flag field, kept verbatim.
    pub flags: String,
    pub flow_id: u32,
    pub src_addr: Addr,
    pub dst_addr: Addr,
    pub seq: u32,
    pub pkt_id: u64,
}

impl TraceEvent {
    pub fn time_secs(&self) -> f64 {
        self.time_us as f64 / MICROS_PER_SEC as f64
    }

    /// Formats the event as one trace line (no trailing newline).
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {} {} {} {} {} {} {} {}",
            self.kind.code(),
            format_time(self.time_us),
            self.from,
            self.to,
            self.protocol,
            self.size,
            self.flags,
            self.flow_id,
            self.src_addr,
            self.dst_addr,
            self.seq,
            self.pkt_id,
        )
    }
}

/// Fixed-point seconds with six decimals.
pub fn format_time(time_us: u64) -> String {
    format!("{}.{:06}", time_us / MICROS_PER_SEC, time_us % MICROS_PER_SEC)
}

/// Error raised by [`parse_trace_line`]; `column` is the 1-based byte
/// position of the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty line")]
    Empty,
    #[error("missing field `{field}` at column {column}")]
    MissingField { field: &'static str, column: usize },
    #[error("invalid {field} `{value}` at column {column}")]
    InvalidField { field: &'static str, value: String, column: usize },
    #[error("unknown event code `{code}` at column {column}")]
    UnknownEvent { code: String, column: usize },
    #[error("trailing data at column {column}")]
    TrailingData { column: usize },
}

impl ParseError {
    pub fn column(&self) -> usize {
        match self {
            ParseError::Empty => 1,
            ParseError::MissingField { column, .. }
            | ParseError::InvalidField { column, .. }
            | ParseError::UnknownEvent { column, .. }
            | ParseError::TrailingData { column } => *column,
        }
    }
}

struct Fields<'a> {
    line: &'a str,
    pos: usize,
}

impl<'a> Fields<'a> {
    fn new(line: &'a str) -> Self {
        Fields { line, pos: 0 }
    }

    fn skip_spaces(&mut self) {
        let rest = &self.line[self.pos..];
        self.pos += rest.len() - rest.trim_start_matches(' ').len();
    }

    fn next(&mut self, field: &'static str) -> Result<(usize, &'a str), ParseError> {
        self.skip_spaces();
        if self.pos >= self.line.len() {
            return Err(ParseError::MissingField { field, column: self.pos + 1 });
        }
        let start = self.pos;
        let token = self.line[start..].split(' ').next().unwrap();
        self.pos = start + token.len();
        Ok((start + 1, token))
    }

    fn finish(&mut self) -> Result<(), ParseError> {
        self.skip_spaces();
        if self.pos < self.line.len() {
            Err(ParseError::TrailingData { column: self.pos + 1 })
        } else {
            Ok(())
        }
    }
}

fn parse_int<T: std::str::FromStr>(
    field: &'static str,
    column: usize,
    value: &str,
) -> Result<T, ParseError> {
    value.parse().map_err(|_| ParseError::InvalidField {
        field,
        value: value.to_string(),
        column,
    })
}

/// Parses decimal seconds into microseconds; digits beyond the sixth decimal
/// place are rounded (half up).
fn parse_time(field: &'static str, column: usize, value: &str) -> Result<u64, ParseError> {
    let invalid = || ParseError::InvalidField {
        field,
        value: value.to_string(),
        column,
    };
    let (int_part, frac_part) = match value.split_once('.') {
        Some((i, f)) => (i, f),
        None => (value, ""),
    };
    if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(invalid());
    }
    if !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(invalid());
    }
    let secs: u64 = int_part.parse().map_err(|_| invalid())?;
    let mut micros: u64 = 0;
    if !frac_part.is_empty() {
        let keep = frac_part.len().min(6);
        micros = frac_part[..keep].parse().map_err(|_| invalid())?;
        micros *= 10u64.pow(6 - keep as u32);
        if frac_part.len() > 6 && frac_part.as_bytes()[6] >= b'5' {
            micros += 1;
        }
    }
    secs.checked_mul(MICROS_PER_SEC)
        .and_then(|s| s.checked_add(micros))
        .ok_or_else(invalid)
}

fn parse_addr(field: &'static str, column: usize, value: &str) -> Result<Addr, ParseError> {
    let invalid = || ParseError::InvalidField {
        field,
        value: value.to_string(),
        column,
    };
    let (node, port) = value.split_once('.').ok_or_else(invalid)?;
    Ok(Addr {
        node: NodeId(node.parse().map_err(|_| invalid())?),
        port: port.parse().map_err(|_| invalid())?,
    })
}

/// Parses one trace line into a [`TraceEvent`].
pub fn parse_trace_line(line: &str) -> Result<TraceEvent, ParseError> {
    if line.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let mut fields = Fields::new(line);

    let (col, code) = fields.next("event")?;
    let kind = EventKind::from_code(code).ok_or_else(|| ParseError::UnknownEvent {
        code: code.to_string(),
        column: col,
    })?;
    let (col, tok) = fields.next("time")?;
    let time_us = parse_time("time", col, tok)?;
    let (col, tok) = fields.next("from")?;
    let from = NodeId(parse_int("from", col, tok)?);
    let (col, tok) = fields.next("to")?;
    let to = NodeId(parse_int("to", col, tok)?);
    let (_, protocol) = fields.next("ptype")?;
    let (col, tok) = fields.next("size")?;
    let size = parse_int("size", col, tok)?;
    let (col, flags) = fields.next("flags")?;
    if flags.len() != 7 {
        return Err(ParseError::InvalidField {
            field: "flags",
            value: flags.to_string(),
            column: col,
        });
    }
    let (col, tok) = fields.next("fid")?;
    let flow_id = parse_int("fid", col, tok)?;
    let (col, tok) = fields.next("src_addr")?;
    let src_addr = parse_addr("src_addr", col, tok)?;
    let (col, tok) = fields.next("dst_addr")?;
    let dst_addr = parse_addr("dst_addr", col, tok)?;
    let (col, tok) = fields.next("seq")?;
    let seq = parse_int("seq", col, tok)?;
    let (col, tok) = fields.next("pkt_id")?;
    let pkt_id = parse_int("pkt_id", col, tok)?;
    fields.finish()?;

    Ok(TraceEvent {
        kind,
        time_us,
        from,
        to,
        protocol: protocol.to_string(),
        size,
        flags: flags.to_string(),
        flow_id,
        src_addr,
        dst_addr,
        seq,
        pkt_id,
    })
}
