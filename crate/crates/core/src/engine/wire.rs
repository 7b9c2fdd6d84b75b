//! Binary framing between device and edge.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "GCDE"
//! 4       1     version (1)
//! 5       1     msg_type (0 CONFIG, 1 TENSORS, 2 RESULT, 3 ACK, 4 SHUTDOWN)
//! 6       8     frame_id, u64 little-endian
//! 14      1     flags (bit 0: payload is zlib/DEFLATE compressed)
//! 15      4     payload_len, u32 little-endian
//! 19      n     payload
//! ```
//!
//! Tensor payloads: `count: u16`, then per tensor `ndims: u8`, `dims: u32 x
//! ndims`, `dtype: u8` (0 f32, 1 i32) and the raw little-endian data.

use std::io::{self, Read, Write};

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;

use super::tensor::{DType, Tensor, TensorData};

pub const MAGIC: [u8; 4] = *b"GCDE";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 19;
pub const FLAG_COMPRESSED: u8 = 0x01;
/// Frames larger than this are treated as malformed.
pub const MAX_PAYLOAD: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Config = 0,
    Tensors = 1,
    Result = 2,
    Ack = 3,
    Shutdown = 4,
}

impl MsgType {
    pub fn from_code(code: u8) -> Option<MsgType> {
        Some(match code {
            0 => MsgType::Config,
            1 => MsgType::Tensors,
            2 => MsgType::Result,
            3 => MsgType::Ack,
            4 => MsgType::Shutdown,
            _ => return None,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0}")]
    BadMsgType(u8),
    #[error("unknown flag bits {0:#04x}")]
    BadFlags(u8),
    #[error("truncated header: {got} of {HEADER_LEN} bytes")]
    TruncatedHeader { got: usize },
    #[error("truncated payload: {got} of {expected} bytes")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("payload of {0} bytes exceeds the frame limit")]
    PayloadTooLarge(usize),
    #[error("malformed tensor payload: {0}")]
    BadTensorPayload(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub msg_type: MsgType,
    pub frame_id: u64,
    pub flags: u8,
    /// Payload exactly as carried on the wire (compressed when the flag is set).
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn new(msg_type: MsgType, frame_id: u64, payload: Vec<u8>) -> WireMessage {
        WireMessage { msg_type, frame_id, flags: 0, payload }
    }

    pub fn control(msg_type: MsgType, frame_id: u64) -> WireMessage {
        WireMessage::new(msg_type, frame_id, Vec::new())
    }

    /// Tensor message. With `compress`, the payload is deflated unless that
    /// would not make it smaller, in which case the flag stays clear.
    pub fn with_tensors(msg_type: MsgType, frame_id: u64, tensors: &[&Tensor], compress: bool) -> WireMessage {
        WireMessage::from_tensor_payload(msg_type, frame_id, encode_tensors(tensors), compress)
    }

    /// Same as [`WireMessage::with_tensors`] for an already encoded payload.
    pub fn from_tensor_payload(msg_type: MsgType, frame_id: u64, raw: Vec<u8>, compress: bool) -> WireMessage {
        if compress {
            let packed = deflate(&raw);
            if packed.len() < raw.len() {
                return WireMessage { msg_type, frame_id, flags: FLAG_COMPRESSED, payload: packed };
            }
        }
        WireMessage { msg_type, frame_id, flags: 0, payload: raw }
    }

    pub fn is_compressed(&self) -> bool {
        self.flags & FLAG_COMPRESSED != 0
    }

    /// Payload with compression undone.
    pub fn raw_payload(&self) -> Result<Vec<u8>, WireError> {
        if self.is_compressed() {
            inflate(&self.payload)
        } else {
            Ok(self.payload.clone())
        }
    }

    pub fn tensors(&self) -> Result<Vec<Tensor>, WireError> {
        decode_tensors(&self.raw_payload()?)
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }
}

pub fn encode_message(msg: &WireMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(msg.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.msg_type as u8);
    out.extend_from_slice(&msg.frame_id.to_le_bytes());
    out.push(msg.flags);
    out.extend_from_slice(&(msg.payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&msg.payload);
    out
}

struct Header {
    msg_type: MsgType,
    frame_id: u64,
    flags: u8,
    payload_len: usize,
}

fn parse_header(h: &[u8; HEADER_LEN]) -> Result<Header, WireError> {
    let magic: [u8; 4] = h[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if h[4] != VERSION {
        return Err(WireError::BadVersion(h[4]));
    }
    let msg_type = MsgType::from_code(h[5]).ok_or(WireError::BadMsgType(h[5]))?;
    let frame_id = u64::from_le_bytes(h[6..14].try_into().expect("8 bytes"));
    let flags = h[14];
    if flags & !FLAG_COMPRESSED != 0 {
        return Err(WireError::BadFlags(flags));
    }
    let payload_len = u32::from_le_bytes(h[15..19].try_into().expect("4 bytes")) as usize;
    if payload_len > MAX_PAYLOAD {
        return Err(WireError::PayloadTooLarge(payload_len));
    }
    Ok(Header { msg_type, frame_id, flags, payload_len })
}

/// Decodes one message from the front of `bytes`; returns it with the number
/// of bytes consumed.
pub fn decode_message(bytes: &[u8]) -> Result<(WireMessage, usize), WireError> {
    let head: &[u8; HEADER_LEN] = bytes
        .get(..HEADER_LEN)
        .and_then(|h| h.try_into().ok())
        .ok_or(WireError::TruncatedHeader { got: bytes.len() })?;
    let h = parse_header(head)?;
    let end = HEADER_LEN + h.payload_len;
    let payload = bytes
        .get(HEADER_LEN..end)
        .ok_or(WireError::TruncatedPayload { expected: h.payload_len, got: bytes.len() - HEADER_LEN })?;
    let msg = WireMessage { msg_type: h.msg_type, frame_id: h.frame_id, flags: h.flags, payload: payload.to_vec() };
    Ok((msg, end))
}

pub fn write_message(w: &mut impl Write, msg: &WireMessage) -> io::Result<()> {
    w.write_all(&encode_message(msg))
}

/// Blocking read of one message. `Ok(None)` on a clean end of stream before
/// any header byte.
pub fn read_message(r: &mut impl Read) -> Result<Option<WireMessage>, WireError> {
    let mut head = [0u8; HEADER_LEN];
    let got = read_full(r, &mut head)?;
    if got == 0 {
        return Ok(None);
    }
    if got < HEADER_LEN {
        return Err(WireError::TruncatedHeader { got });
    }
    let h = parse_header(&head)?;
    let mut payload = vec![0u8; h.payload_len];
    let got = read_full(r, &mut payload)?;
    if got < h.payload_len {
        return Err(WireError::TruncatedPayload { expected: h.payload_len, got });
    }
    Ok(Some(WireMessage { msg_type: h.msg_type, frame_id: h.frame_id, flags: h.flags, payload }))
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub fn deflate(raw: &[u8]) -> Vec<u8> {
    let mut enc = ZlibEncoder::new(Vec::with_capacity(raw.len() / 2), Compression::fast());
    enc.write_all(raw).expect("in-memory write");
    enc.finish().expect("in-memory write")
}

pub fn inflate(packed: &[u8]) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::new();
    ZlibDecoder::new(packed)
        .read_to_end(&mut out)
        .map_err(|e| WireError::BadTensorPayload(format!("inflate failed: {e}")))?;
    Ok(out)
}

pub fn encode_tensors(tensors: &[&Tensor]) -> Vec<u8> {
    assert!(tensors.len() <= u16::MAX as usize);
    let bytes: usize = tensors.iter().map(|t| 2 + 4 * t.dims().len() + 4 * t.len()).sum();
    let mut out = Vec::with_capacity(2 + bytes);
    out.extend_from_slice(&(tensors.len() as u16).to_le_bytes());
    for t in tensors {
        out.push(t.dims().len() as u8);
        for &d in t.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(t.dtype().code());
        match t.data() {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    out
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<Tensor>, WireError> {
    let bad = |what: &str| WireError::BadTensorPayload(what.to_string());
    let mut cur = bytes;
    let mut take = |n: usize| -> Result<&[u8], WireError> {
        if cur.len() < n {
            return Err(bad("payload ends mid-tensor"));
        }
        let (head, rest) = cur.split_at(n);
        cur = rest;
        Ok(head)
    };
    let count = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let ndims = take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize);
        }
        let dtype = DType::from_code(take(1)?[0]).ok_or_else(|| bad("unknown dtype"))?;
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&l| l <= MAX_PAYLOAD / 4)
            .ok_or_else(|| bad("tensor too large"))?;
        let raw = take(4 * len)?;
        let words = raw.chunks_exact(4).map(|c| <[u8; 4]>::try_from(c).expect("4 bytes"));
        let data = match dtype {
            DType::F32 => TensorData::F32(words.map(f32::from_le_bytes).collect()),
            DType::I32 => TensorData::I32(words.map(i32::from_le_bytes).collect()),
        };
        out.push(Tensor::new(dims, data));
    }
    if !cur.is_empty() {
        return Err(bad("trailing bytes after tensors"));
    }
    Ok(out)
}
