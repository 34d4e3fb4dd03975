//! Canonical value encoding and length-prefixed frames.
//!
//! Every value kind has a one-byte tag:
//!
//! | tag  | kind    | body                                      |
//! |------|---------|-------------------------------------------|
//! | 0x00 | nil     |                                           |
//! | 0x01 | false   |                                           |
//! | 0x02 | true    |                                           |
//! | 0x03 | int     | 8-byte big-endian two's complement        |
//! | 0x04 | string  | 4-byte big-endian length, UTF-8 bytes     |
//! | 0x05 | atom    | as string                                 |
//! | 0x06 | tuple   | 4-byte big-endian count, elements         |
//! | 0x07 | list    | as tuple                                  |
//! | 0x08 | funcref | name as string body, 1-byte arity         |
//!
//! A message is the tuple `{type-atom, civ, payload}` where `civ` is `nil`
//! or `{session-hex, {site, epoch}, sender-atom, receiver-atom}`. A frame is
//! a 4-byte big-endian length followed by that many bytes of message.

use std::sync::OnceLock;

use thiserror::Error;

use super::{CivToken, Message, MessageType, SessionToken};
use crate::lang::ast::{Role, SiteId};
use crate::value::Value;

pub const DEFAULT_MAX_FRAME: usize = 16 * 1024 * 1024;

const T_NIL: u8 = 0x00;
const T_FALSE: u8 = 0x01;
const T_TRUE: u8 = 0x02;
const T_INT: u8 = 0x03;
const T_STR: u8 = 0x04;
const T_ATOM: u8 = 0x05;
const T_TUPLE: u8 = 0x06;
const T_LIST: u8 = 0x07;
const T_FUNC: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame of {len} bytes exceeds the {max}-byte limit")]
    OversizeFrame { len: usize, max: usize },
    #[error("malformed frame at byte {offset}: {reason}")]
    MalformedFrame { offset: usize, reason: String },
    #[error("incomplete frame: {needed} more bytes needed")]
    NeedMoreBytes { needed: usize },
}

/// Frame size cap; `CHOREX_MAX_FRAME` overrides the 16 MiB default.
pub fn max_frame() -> usize {
    static MAX: OnceLock<usize> = OnceLock::new();
    *MAX.get_or_init(|| {
        std::env::var("CHOREX_MAX_FRAME").ok().and_then(|s| s.trim().parse().ok()).unwrap_or(DEFAULT_MAX_FRAME)
    })
}

pub fn encode_value(v: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    write_value(&mut out, v);
    out
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn write_value(out: &mut Vec<u8>, v: &Value) {
    match v {
        Value::Nil => out.push(T_NIL),
        Value::Bool(false) => out.push(T_FALSE),
        Value::Bool(true) => out.push(T_TRUE),
        Value::Int(i) => {
            out.push(T_INT);
            out.extend_from_slice(&i.to_be_bytes());
        }
        Value::Str(s) => {
            out.push(T_STR);
            write_str(out, s);
        }
        Value::Atom(a) => {
            out.push(T_ATOM);
            write_str(out, a);
        }
        Value::Tuple(items) | Value::List(items) => {
            out.push(if matches!(v, Value::Tuple(_)) { T_TUPLE } else { T_LIST });
            out.extend_from_slice(&(items.len() as u32).to_be_bytes());
            for i in items {
                write_value(out, i);
            }
        }
        Value::FuncRef { name, arity } => {
            out.push(T_FUNC);
            write_str(out, name);
            out.push(*arity);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    /// Offset of `buf[0]` within the enclosing frame, for error reports.
    base: usize,
}

impl Reader<'_> {
    fn malformed(&self, reason: impl Into<String>) -> FrameError {
        FrameError::MalformedFrame { offset: self.base + self.pos, reason: reason.into() }
    }

    fn take(&mut self, n: usize) -> Result<&[u8], FrameError> {
        if self.buf.len() - self.pos < n {
            return Err(self.malformed(format!("value truncated, {n} bytes expected")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, FrameError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String, FrameError> {
        let len = self.u32()?;
        let at = self.pos;
        let bytes = self.take(len)?.to_vec();
        String::from_utf8(bytes)
            .map_err(|_| FrameError::MalformedFrame { offset: self.base + at, reason: "invalid UTF-8".into() })
    }

    fn value(&mut self, depth: usize) -> Result<Value, FrameError> {
        if depth > 512 {
            return Err(self.malformed("nesting too deep"));
        }
        let tag = self.take(1)?[0];
        Ok(match tag {
            T_NIL => Value::Nil,
            T_FALSE => Value::Bool(false),
            T_TRUE => Value::Bool(true),
            T_INT => {
                let b = self.take(8)?;
                Value::Int(i64::from_be_bytes(b.try_into().expect("8 bytes")))
            }
            T_STR => Value::Str(self.string()?),
            T_ATOM => Value::Atom(self.string()?),
            T_TUPLE | T_LIST => {
                let n = self.u32()?;
                // Every element needs at least one byte.
                if n > self.buf.len() - self.pos {
                    return Err(self.malformed(format!("element count {n} exceeds remaining bytes")));
                }
                let mut items = Vec::with_capacity(n);
                for _ in 0..n {
                    items.push(self.value(depth + 1)?);
                }
                if tag == T_TUPLE {
                    Value::Tuple(items)
                } else {
                    Value::List(items)
                }
            }
            T_FUNC => {
                let name = self.string()?;
                let arity = self.take(1)?[0];
                Value::FuncRef { name, arity }
            }
            other => {
                self.pos -= 1;
                return Err(self.malformed(format!("unknown tag 0x{other:02x}")));
            }
        })
    }
}

/// Decode exactly one canonically encoded value.
pub fn decode_value(bytes: &[u8]) -> Result<Value, FrameError> {
    let mut r = Reader { buf: bytes, pos: 0, base: 0 };
    let v = r.value(0)?;
    if r.pos != bytes.len() {
        return Err(r.malformed("trailing bytes after value"));
    }
    Ok(v)
}

fn civ_to_value(c: &CivToken) -> Value {
    Value::Tuple(vec![
        Value::Str(c.session.to_string()),
        Value::Tuple(vec![Value::Int(c.site.0 as i64), Value::Int(c.epoch as i64)]),
        Value::Atom(c.sender.0.clone()),
        Value::Atom(c.receiver.0.clone()),
    ])
}

fn civ_from_value(v: &Value) -> Option<CivToken> {
    let [Value::Str(s), Value::Tuple(meta), Value::Atom(from), Value::Atom(to)] = v.as_tuple()? else {
        return None;
    };
    let [Value::Int(site), Value::Int(epoch)] = meta.as_slice() else { return None };
    if s.len() != 32 {
        return None;
    }
    Some(CivToken {
        session: SessionToken(u128::from_str_radix(s, 16).ok()?),
        site: SiteId(u32::try_from(*site).ok()?),
        epoch: u32::try_from(*epoch).ok()?,
        sender: Role(from.clone()),
        receiver: Role(to.clone()),
    })
}

pub fn message_to_value(m: &Message) -> Value {
    Value::Tuple(vec![
        Value::Atom(m.mtype.name().into()),
        m.civ.as_ref().map(civ_to_value).unwrap_or(Value::Nil),
        m.payload.clone(),
    ])
}

pub fn message_from_value(v: &Value) -> Result<Message, String> {
    let [Value::Atom(t), civ, payload] = v.as_tuple().ok_or("message is not a tuple")? else {
        return Err("message is not a 3-tuple headed by an atom".into());
    };
    let mtype = MessageType::from_name(t).ok_or_else(|| format!("unknown message type :{t}"))?;
    let civ = match civ {
        Value::Nil => None,
        other => Some(civ_from_value(other).ok_or("malformed CIV token")?),
    };
    if civ.is_none() != (mtype == MessageType::Revive) {
        return Err(format!("{} message with wrong CIV presence", mtype.name()));
    }
    if mtype == MessageType::Choice && !matches!(payload, Value::Bool(_)) {
        return Err("choice payload must be a boolean".into());
    }
    Ok(Message { mtype, civ, payload: payload.clone() })
}

/// Encode a message as a length-prefixed frame.
pub fn encode_frame(m: &Message) -> Result<Vec<u8>, FrameError> {
    encode_frame_with_limit(m, max_frame())
}

pub fn encode_frame_with_limit(m: &Message, max: usize) -> Result<Vec<u8>, FrameError> {
    let mut out = vec![0u8; 4];
    write_value(&mut out, &message_to_value(m));
    let len = out.len() - 4;
    if len > max {
        return Err(FrameError::OversizeFrame { len, max });
    }
    out[..4].copy_from_slice(&(len as u32).to_be_bytes());
    Ok(out)
}

/// Decode one frame from the front of `bytes`, returning the message and the
/// number of bytes consumed.
pub fn decode_frame_prefix(bytes: &[u8]) -> Result<(Message, usize), FrameError> {
    decode_frame_prefix_with_limit(bytes, max_frame())
}

pub fn decode_frame_prefix_with_limit(bytes: &[u8], max: usize) -> Result<(Message, usize), FrameError> {
    if bytes.len() < 4 {
        return Err(FrameError::NeedMoreBytes { needed: 4 - bytes.len() });
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len > max {
        return Err(FrameError::OversizeFrame { len, max });
    }
    if bytes.len() - 4 < len {
        return Err(FrameError::NeedMoreBytes { needed: len - (bytes.len() - 4) });
    }
    let mut r = Reader { buf: &bytes[4..4 + len], pos: 0, base: 4 };
    let v = r.value(0)?;
    if r.pos != len {
        return Err(r.malformed("trailing bytes inside frame"));
    }
    let m = message_from_value(&v).map_err(|reason| FrameError::MalformedFrame { offset: 4, reason })?;
    Ok((m, 4 + len))
}

/// Decode a buffer holding exactly one frame.
pub fn decode_frame(bytes: &[u8]) -> Result<Message, FrameError> {
    let (m, used) = decode_frame_prefix(bytes)?;
    if used != bytes.len() {
        return Err(FrameError::MalformedFrame { offset: used, reason: "bytes after end of frame".into() });
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nil_and_int_vectors() {
        assert_eq!(encode_value(&Value::Nil), vec![0x00]);
        assert_eq!(encode_value(&Value::Int(42)), vec![0x03, 0, 0, 0, 0, 0, 0, 0, 0x2a]);
        assert_eq!(encode_value(&Value::Int(-1)), [vec![0x03], vec![0xff; 8]].concat());
    }

    #[test]
    fn funcref_layout() {
        let v = Value::FuncRef { name: "f".into(), arity: 2 };
        assert_eq!(encode_value(&v), vec![0x08, 0, 0, 0, 1, b'f', 2]);
        assert_eq!(decode_value(&encode_value(&v)).unwrap(), v);
    }

    #[test]
    fn truncated_frames_need_more_bytes() {
        let m = Message { mtype: MessageType::Revive, civ: None, payload: Value::Int(7) };
        let f = encode_frame(&m).unwrap();
        assert_eq!(decode_frame(&f[..2]), Err(FrameError::NeedMoreBytes { needed: 2 }));
        assert_eq!(decode_frame(&f[..f.len() - 3]), Err(FrameError::NeedMoreBytes { needed: 3 }));
        assert_eq!(decode_frame(&f).unwrap(), m);
    }

    #[test]
    fn unknown_tag_reports_offset() {
        // frame of length 1 containing tag 0x09
        let err = decode_frame(&[0, 0, 0, 1, 0x09]).unwrap_err();
        assert_eq!(err, FrameError::MalformedFrame { offset: 4, reason: "unknown tag 0x09".into() });
    }

    #[test]
    fn oversize_rejected_both_ways() {
        let m = Message { mtype: MessageType::Revive, civ: None, payload: Value::Str("x".repeat(100)) };
        assert!(matches!(encode_frame_with_limit(&m, 16), Err(FrameError::OversizeFrame { .. })));
        let f = encode_frame(&m).unwrap();
        assert!(matches!(decode_frame_prefix_with_limit(&f, 16), Err(FrameError::OversizeFrame { .. })));
    }

    #[test]
    fn civ_presence_enforced() {
        let bad = Value::Tuple(vec![Value::atom("chorex"), Value::Nil, Value::Nil]);
        assert!(message_from_value(&bad).is_err());
    }
}
