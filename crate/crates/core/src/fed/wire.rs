//! Length-prefixed binary framing for federation messages.
//!
//! ```text
//! "AJFW" | version 0x01 | kind u8 | body length u32 LE | body
//! body = round u32 LE | rank u32 LE | n_samples u64 LE | metric f64 LE | tag u8 | payload
//! tag 0: empty
//! tag 1: count u32 LE, then count f64 LE
//! tag 2: count u32 LE, then count × (length u32 BE, magnitude BE)
//! ```

use std::io::{Read, Write};

use num_bigint::BigUint;
use thiserror::Error;

use crate::model::{decode_f64s, encode_f64s};
use crate::paillier::{decode_magnitude, encode_magnitude};

pub const MAGIC: [u8; 4] = *b"AJFW";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 10;
/// Frames larger than this are refused by [`read_frame`] before allocation.
pub const DEFAULT_MAX_BODY: usize = 1 << 28;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated frame: {0}")]
    Truncated(String),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("unknown payload tag {0}")]
    UnknownTag(u8),
    #[error("frame body of {0} bytes exceeds limit")]
    Oversize(usize),
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    Hello = 1,
    GlobalModel = 2,
    LocalUpdate = 3,
    EncUpdate = 4,
    Bye = 5,
}

impl MessageKind {
    pub fn from_byte(b: u8) -> Result<Self, WireError> {
        Ok(match b {
            1 => MessageKind::Hello,
            2 => MessageKind::GlobalModel,
            3 => MessageKind::LocalUpdate,
            4 => MessageKind::EncUpdate,
            5 => MessageKind::Bye,
            other => return Err(WireError::UnknownKind(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    None,
    Params(Vec<f64>),
    Ciphers(Vec<BigUint>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedMessage {
    pub kind: MessageKind,
    pub round: u32,
    pub rank: u32,
    pub n_samples: u64,
    /// Scalar side channel: a loss value, or NaN when unused.
    pub metric: f64,
    pub payload: Payload,
}

impl FedMessage {
    pub fn new(kind: MessageKind, round: u32, rank: u32) -> Self {
        Self {
            kind,
            round,
            rank,
            n_samples: 0,
            metric: f64::NAN,
            payload: Payload::None,
        }
    }

    pub fn hello(rank: u32) -> Self {
        Self::new(MessageKind::Hello, 0, rank)
    }

    pub fn with_samples(mut self, n: u64) -> Self {
        self.n_samples = n;
        self
    }

    pub fn with_metric(mut self, m: f64) -> Self {
        self.metric = m;
        self
    }

    pub fn with_payload(mut self, p: Payload) -> Self {
        self.payload = p;
        self
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let mut body = Vec::new();
        body.extend_from_slice(&self.round.to_le_bytes());
        body.extend_from_slice(&self.rank.to_le_bytes());
        body.extend_from_slice(&self.n_samples.to_le_bytes());
        body.extend_from_slice(&self.metric.to_le_bytes());
        match &self.payload {
            Payload::None => body.push(0),
            Payload::Params(v) => {
                if v.len() > u32::MAX as usize {
                    return Err(WireError::Oversize(v.len()));
                }
                body.push(1);
                body.extend_from_slice(&encode_f64s(v));
            }
            Payload::Ciphers(cs) => {
                if cs.len() > u32::MAX as usize {
                    return Err(WireError::Oversize(cs.len()));
                }
                body.push(2);
                body.extend_from_slice(&(cs.len() as u32).to_le_bytes());
                for c in cs {
                    body.extend_from_slice(&encode_magnitude(c));
                }
            }
        }
        if body.len() > u32::MAX as usize {
            return Err(WireError::Oversize(body.len()));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + body.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.kind as u8);
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
        Ok(out)
    }

    /// Decodes exactly one frame; any extra bytes are an error.
    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let (kind, body_len) = parse_header(bytes)?;
        let body = &bytes[HEADER_LEN..];
        if body.len() < body_len {
            return Err(WireError::Truncated(format!(
                "body has {} of {body_len} bytes",
                body.len()
            )));
        }
        if body.len() > body_len {
            return Err(WireError::Trailing(body.len() - body_len));
        }
        decode_body(kind, body)
    }
}

fn parse_header(bytes: &[u8]) -> Result<(MessageKind, usize), WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated(format!(
            "header has {} bytes",
            bytes.len()
        )));
    }
    if bytes[..4] != MAGIC {
        return Err(WireError::BadMagic);
    }
    if bytes[4] != VERSION {
        return Err(WireError::BadVersion(bytes[4]));
    }
    let kind = MessageKind::from_byte(bytes[5])?;
    let len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    Ok((kind, len))
}

fn take<'a>(body: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8], WireError> {
    if body.len() < n {
        return Err(WireError::Truncated(what.to_string()));
    }
    let (head, rest) = body.split_at(n);
    *body = rest;
    Ok(head)
}

fn decode_body(kind: MessageKind, mut body: &[u8]) -> Result<FedMessage, WireError> {
    let round = u32::from_le_bytes(take(&mut body, 4, "round")?.try_into().expect("4"));
    let rank = u32::from_le_bytes(take(&mut body, 4, "rank")?.try_into().expect("4"));
    let n_samples = u64::from_le_bytes(take(&mut body, 8, "n_samples")?.try_into().expect("8"));
    let metric = f64::from_le_bytes(take(&mut body, 8, "metric")?.try_into().expect("8"));
    let tag = take(&mut body, 1, "payload tag")?[0];
    let payload = match tag {
        0 => Payload::None,
        1 => {
            let (values, used) =
                decode_f64s(body).map_err(|e| WireError::Truncated(e.to_string()))?;
            body = &body[used..];
            Payload::Params(values)
        }
        2 => {
            let count =
                u32::from_le_bytes(take(&mut body, 4, "cipher count")?.try_into().expect("4"));
            let mut cs = Vec::new();
            for _ in 0..count {
                let (v, used) =
                    decode_magnitude(body).map_err(|e| WireError::Malformed(e.to_string()))?;
                body = &body[used..];
                cs.push(v);
            }
            Payload::Ciphers(cs)
        }
        other => return Err(WireError::UnknownTag(other)),
    };
    if !body.is_empty() {
        return Err(WireError::Trailing(body.len()));
    }
    Ok(FedMessage {
        kind,
        round,
        rank,
        n_samples,
        metric,
        payload,
    })
}

/// Reads one whole frame from a stream.
pub fn read_frame(r: &mut impl Read, max_body: usize) -> Result<Vec<u8>, WireError> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|e| WireError::Io(e.to_string()))?;
    let (_, len) = parse_header(&header)?;
    if len > max_body {
        return Err(WireError::Oversize(len));
    }
    let mut frame = header.to_vec();
    frame.resize(HEADER_LEN + len, 0);
    r.read_exact(&mut frame[HEADER_LEN..])
        .map_err(|e| WireError::Io(e.to_string()))?;
    Ok(frame)
}

pub fn write_frame(w: &mut impl Write, msg: &FedMessage) -> Result<(), WireError> {
    let bytes = msg.encode()?;
    w.write_all(&bytes)
        .map_err(|e| WireError::Io(e.to_string()))?;
    w.flush().map_err(|e| WireError::Io(e.to_string()))
}
