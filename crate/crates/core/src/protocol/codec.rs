//! Frame codec.
//!
//! ```text
//! frame   := len:u32be payload            (len = payload size in bytes)
//! payload := version:u8 (=1) tag:u8 body
//! string  := len:u16be utf8-bytes
//! ```
//!
//! | tag | message    | body                                              |
//! |-----|------------|---------------------------------------------------|
//! | 1   | Request    | app_id:string function_id:string                  |
//! | 2   | Response   | flag:u8 (0 x86, 1 ARM, 2 FPGA)                    |
//! | 3   | Completion | app_id:string target:u8 exec_us:u64be load:u32be  |
//! | 4   | KernelQuery| (empty)                                           |
//! | 5   | KernelList | count:u16be string*count                          |
//! | 6   | Shutdown   | (empty)                                           |
//! | 7   | Ack        | (empty)                                           |

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::platform::{Micros, TargetKind};
use crate::threshold::ExecutionRecord;

pub const VERSION: u8 = 1;
pub const MAX_PAYLOAD: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    Request { app_id: String, function_id: String },
    Response { target: TargetKind },
    Completion(ExecutionRecord),
    KernelQuery,
    KernelList { kernel_ids: Vec<String> },
    Shutdown,
    Ack,
}

impl WireMessage {
    fn tag(&self) -> u8 {
        match self {
            WireMessage::Request { .. } => 1,
            WireMessage::Response { .. } => 2,
            WireMessage::Completion(_) => 3,
            WireMessage::KernelQuery => 4,
            WireMessage::KernelList { .. } => 5,
            WireMessage::Shutdown => 6,
            WireMessage::Ack => 7,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("frame too short: need {needed} bytes, have {have}")]
    ShortFrame { needed: usize, have: usize },
    #[error("length prefix says {declared} bytes but {actual} follow")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("payload of {0} bytes exceeds the frame limit")]
    TooLarge(usize),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("malformed payload: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    let bytes = s.as_bytes();
    let len = u16::try_from(bytes.len()).expect("wire strings are limited to 65535 bytes");
    buf.extend_from_slice(&len.to_be_bytes());
    buf.extend_from_slice(bytes);
}

/// Serializes `msg` as a complete frame, length prefix included.
pub fn encode(msg: &WireMessage) -> Vec<u8> {
    let mut payload = vec![VERSION, msg.tag()];
    match msg {
        WireMessage::Request {
            app_id,
            function_id,
        } => {
            put_str(&mut payload, app_id);
            put_str(&mut payload, function_id);
        }
        WireMessage::Response { target } => payload.push(target.flag()),
        WireMessage::Completion(rec) => {
            put_str(&mut payload, &rec.app_id);
            payload.push(rec.target.flag());
            payload.extend_from_slice(&rec.exec_time.0.to_be_bytes());
            payload.extend_from_slice(&rec.load_at_start.to_be_bytes());
        }
        WireMessage::KernelList { kernel_ids } => {
            let n = u16::try_from(kernel_ids.len()).expect("at most 65535 kernels per list");
            payload.extend_from_slice(&n.to_be_bytes());
            for id in kernel_ids {
                put_str(&mut payload, id);
            }
        }
        WireMessage::KernelQuery | WireMessage::Shutdown | WireMessage::Ack => {}
    }
    let mut frame = Vec::with_capacity(4 + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.extend_from_slice(&payload);
    frame
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.buf.len() < n {
            return Err(CodecError::Malformed("truncated field"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CodecError> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CodecError::Malformed("invalid UTF-8"))
    }

    fn target(&mut self) -> Result<TargetKind, CodecError> {
        TargetKind::from_flag(self.u8()?).ok_or(CodecError::Malformed("flag outside 0..=2"))
    }
}

/// Decodes a payload (the bytes after the length prefix).
pub fn decode_payload(payload: &[u8]) -> Result<WireMessage, CodecError> {
    if payload.len() < 2 {
        return Err(CodecError::ShortFrame {
            needed: 2,
            have: payload.len(),
        });
    }
    if payload[0] != VERSION {
        return Err(CodecError::BadVersion(payload[0]));
    }
    let mut c = Cursor { buf: &payload[2..] };
    let msg = match payload[1] {
        1 => WireMessage::Request {
            app_id: c.string()?,
            function_id: c.string()?,
        },
        2 => WireMessage::Response {
            target: c.target()?,
        },
        3 => WireMessage::Completion(ExecutionRecord {
            app_id: c.string()?,
            target: c.target()?,
            exec_time: Micros(c.u64()?),
            load_at_start: c.u32()?,
        }),
        4 => WireMessage::KernelQuery,
        5 => {
            let n = c.u16()?;
            let kernel_ids = (0..n).map(|_| c.string()).collect::<Result<_, _>>()?;
            WireMessage::KernelList { kernel_ids }
        }
        6 => WireMessage::Shutdown,
        7 => WireMessage::Ack,
        tag => return Err(CodecError::UnknownTag(tag)),
    };
    if !c.buf.is_empty() {
        return Err(CodecError::Malformed("trailing bytes"));
    }
    Ok(msg)
}

/// Decodes one complete frame.
pub fn decode(frame: &[u8]) -> Result<WireMessage, CodecError> {
    if frame.len() < 4 {
        return Err(CodecError::ShortFrame {
            needed: 4,
            have: frame.len(),
        });
    }
    let declared = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
    if declared > MAX_PAYLOAD {
        return Err(CodecError::TooLarge(declared));
    }
    let payload = &frame[4..];
    if payload.len() != declared {
        return Err(CodecError::LengthMismatch {
            declared,
            actual: payload.len(),
        });
    }
    decode_payload(payload)
}

pub fn write_frame<W: Write>(w: &mut W, msg: &WireMessage) -> io::Result<()> {
    w.write_all(&encode(msg))?;
    w.flush()
}

/// Reads one frame. `Ok(None)` on a clean end of stream before any byte.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<WireMessage>, FrameError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => {
                return Err(CodecError::ShortFrame {
                    needed: 4,
                    have: got,
                }
                .into())
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let declared = u32::from_be_bytes(len) as usize;
    if declared > MAX_PAYLOAD {
        return Err(CodecError::TooLarge(declared).into());
    }
    let mut payload = vec![0u8; declared];
    r.read_exact(&mut payload)?;
    Ok(Some(decode_payload(&payload)?))
}
