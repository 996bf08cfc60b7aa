//! Wire format for the four ranging frames.
//!
//! Layout: byte 0 kind, byte 1 sequence number, byte 2 source id, byte 3
//! destination id, then a kind-dependent payload. FINAL carries the three
//! tag-side timestamps as 5-byte little-endian 40-bit counters; REPORT carries
//! the tag id, anchor id, and the computed distance in millimeters.

use crate::model::{DeviceId, TickTimestamp};
use thiserror::Error;

pub const KIND_POLL: u8 = 0x01;
pub const KIND_RESPONSE: u8 = 0x02;
pub const KIND_FINAL: u8 = 0x03;
pub const KIND_REPORT: u8 = 0x04;

const HEADER_LEN: usize = 4;
const FINAL_LEN: usize = HEADER_LEN + 15;
const REPORT_LEN: usize = HEADER_LEN + 6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("malformed frame: truncated header ({0} bytes)")]
    TruncatedHeader(usize),
    #[error("malformed frame: unknown kind byte 0x{0:02x}")]
    UnknownKind(u8),
    #[error("malformed frame: {kind} expects {expected} bytes, got {actual}")]
    WrongLength {
        kind: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("malformed frame: report frames must be addressed to broadcast")]
    ReportNotBroadcast,
}

/// Kind-dependent frame payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameBody {
    Poll,
    Response,
    /// Tag-side timestamps of the exchange: poll tx, response rx, final tx.
    Final {
        t_sp: TickTimestamp,
        t_rr: TickTimestamp,
        t_sf: TickTimestamp,
    },
    /// Broadcast ranging result computed by the anchor.
    Report {
        tag: DeviceId,
        anchor: DeviceId,
        distance_mm: u32,
    },
}

/// One protocol message on the air.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frame {
    pub seq: u8,
    pub src: DeviceId,
    pub dst: DeviceId,
    pub body: FrameBody,
}

impl Frame {
    pub fn poll(seq: u8, src: DeviceId, dst: DeviceId) -> Self {
        Self {
            seq,
            src,
            dst,
            body: FrameBody::Poll,
        }
    }

    pub fn response(seq: u8, src: DeviceId, dst: DeviceId) -> Self {
        Self {
            seq,
            src,
            dst,
            body: FrameBody::Response,
        }
    }

    pub fn final_msg(
        seq: u8,
        src: DeviceId,
        dst: DeviceId,
        t_sp: TickTimestamp,
        t_rr: TickTimestamp,
        t_sf: TickTimestamp,
    ) -> Self {
        Self {
            seq,
            src,
            dst,
            body: FrameBody::Final { t_sp, t_rr, t_sf },
        }
    }

    /// Reports are always broadcast, so no destination parameter.
    pub fn report(seq: u8, src: DeviceId, tag: DeviceId, anchor: DeviceId, distance_mm: u32) -> Self {
        Self {
            seq,
            src,
            dst: DeviceId::BROADCAST,
            body: FrameBody::Report {
                tag,
                anchor,
                distance_mm,
            },
        }
    }

    pub fn kind_byte(&self) -> u8 {
        match self.body {
            FrameBody::Poll => KIND_POLL,
            FrameBody::Response => KIND_RESPONSE,
            FrameBody::Final { .. } => KIND_FINAL,
            FrameBody::Report { .. } => KIND_REPORT,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.body {
            FrameBody::Poll => "POLL",
            FrameBody::Response => "RESPONSE",
            FrameBody::Final { .. } => "FINAL",
            FrameBody::Report { .. } => "REPORT",
        }
    }
}

fn put_ticks40(out: &mut Vec<u8>, t: TickTimestamp) {
    let v = t.ticks();
    out.extend_from_slice(&v.to_le_bytes()[..5]);
}

fn get_ticks40(bytes: &[u8]) -> TickTimestamp {
    let mut buf = [0u8; 8];
    buf[..5].copy_from_slice(&bytes[..5]);
    TickTimestamp::new(u64::from_le_bytes(buf))
}

/// Serializes a frame to its wire bytes.
pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(FINAL_LEN);
    out.push(frame.kind_byte());
    out.push(frame.seq);
    out.push(frame.src.0);
    out.push(frame.dst.0);
    match frame.body {
        FrameBody::Poll | FrameBody::Response => {}
        FrameBody::Final { t_sp, t_rr, t_sf } => {
            put_ticks40(&mut out, t_sp);
            put_ticks40(&mut out, t_rr);
            put_ticks40(&mut out, t_sf);
        }
        FrameBody::Report {
            tag,
            anchor,
            distance_mm,
        } => {
            out.push(tag.0);
            out.push(anchor.0);
            out.extend_from_slice(&distance_mm.to_le_bytes());
        }
    }
    out
}

/// Parses wire bytes back into a frame. `decode_frame(encode_frame(f)) == f`
/// for every valid frame.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, CodecError> {
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::TruncatedHeader(bytes.len()));
    }
    let kind = bytes[0];
    let seq = bytes[1];
    let src = DeviceId(bytes[2]);
    let dst = DeviceId(bytes[3]);
    let expect_len = |name: &'static str, expected: usize| -> Result<(), CodecError> {
        if bytes.len() != expected {
            Err(CodecError::WrongLength {
                kind: name,
                expected,
                actual: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    let body = match kind {
        KIND_POLL => {
            expect_len("POLL", HEADER_LEN)?;
            FrameBody::Poll
        }
        KIND_RESPONSE => {
            expect_len("RESPONSE", HEADER_LEN)?;
            FrameBody::Response
        }
        KIND_FINAL => {
            expect_len("FINAL", FINAL_LEN)?;
            FrameBody::Final {
                t_sp: get_ticks40(&bytes[4..9]),
                t_rr: get_ticks40(&bytes[9..14]),
                t_sf: get_ticks40(&bytes[14..19]),
            }
        }
        KIND_REPORT => {
            expect_len("REPORT", REPORT_LEN)?;
            if !dst.is_broadcast() {
                return Err(CodecError::ReportNotBroadcast);
            }
            FrameBody::Report {
                tag: DeviceId(bytes[4]),
                anchor: DeviceId(bytes[5]),
                distance_mm: u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]),
            }
        }
        other => return Err(CodecError::UnknownKind(other)),
    };
    Ok(Frame {
        seq,
        src,
        dst,
        body,
    })
}
