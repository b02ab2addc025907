//! Byte layouts, all integers little-endian.
//!
//! ```text
//! FrameMessage   "LCF1" | width u16 | height u16 | format u8 | payload_len u32 | payload
//! CommandMessage "LCC1" | v_left i16 | v_right i16 | action u8 | inference_us u32
//! ErrorMessage   "LCE1" | code u8 | message_len u16 | message (UTF-8)
//! ```
//!
//! Wheel values are fixed point: the wire integer divided by 10000.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const FRAME_MAGIC: [u8; 4] = *b"LCF1";
pub const COMMAND_MAGIC: [u8; 4] = *b"LCC1";
pub const ERROR_MAGIC: [u8; 4] = *b"LCE1";
pub const FORMAT_RGB24: u8 = 0;
pub const WHEEL_SCALE: f64 = 10_000.0;
const FRAME_HEADER: usize = 13;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported pixel format {0}")]
    UnsupportedFormat(u8),
    #[error("payload length {found} does not match {expected} for the frame size")]
    LengthMismatch { expected: usize, found: usize },
    #[error("frame payload of {found} bytes exceeds the {limit}-byte limit")]
    Oversized { found: usize, limit: usize },
    #[error("message is not valid UTF-8")]
    Utf8,
    #[error("truncated message")]
    Truncated,
    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for WireError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            WireError::Truncated
        } else {
            WireError::Io(e)
        }
    }
}

impl WireError {
    /// Code sent back in an error reply.
    pub fn code(&self) -> u8 {
        match self {
            WireError::BadMagic(_) => 1,
            WireError::LengthMismatch { .. } | WireError::Truncated => 2,
            WireError::Oversized { .. } => 3,
            WireError::UnsupportedFormat(_) => 4,
            WireError::Utf8 | WireError::Io(_) => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMessage {
    pub width: u16,
    pub height: u16,
    pub format: u8,
    pub payload: Vec<u8>,
}

impl FrameMessage {
    pub fn rgb24(width: u16, height: u16, payload: Vec<u8>) -> Self {
        Self { width, height, format: FORMAT_RGB24, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER + self.payload.len());
        out.extend_from_slice(&FRAME_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.push(self.format);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Read one frame. `Ok(None)` on a clean end of stream before any byte.
    /// The header is validated before the payload is allocated.
    pub fn read<R: Read>(r: &mut R, max_payload: usize) -> Result<Option<Self>, WireError> {
        let mut magic = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            match r.read(&mut magic[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => return Err(WireError::Truncated),
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        if magic != FRAME_MAGIC {
            return Err(WireError::BadMagic(magic));
        }
        let mut head = [0u8; FRAME_HEADER - 4];
        r.read_exact(&mut head)?;
        let width = u16::from_le_bytes([head[0], head[1]]);
        let height = u16::from_le_bytes([head[2], head[3]]);
        let format = head[4];
        let len = u32::from_le_bytes([head[5], head[6], head[7], head[8]]) as usize;
        if format != FORMAT_RGB24 {
            return Err(WireError::UnsupportedFormat(format));
        }
        let expected = 3 * width as usize * height as usize;
        if len != expected {
            return Err(WireError::LengthMismatch { expected, found: len });
        }
        if len > max_payload {
            return Err(WireError::Oversized { found: len, limit: max_payload });
        }
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload)?;
        Ok(Some(Self { width, height, format, payload }))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut cur = bytes;
        let f = Self::read(&mut cur, usize::MAX)?.ok_or(WireError::Truncated)?;
        if !cur.is_empty() {
            return Err(WireError::LengthMismatch { expected: bytes.len() - cur.len(), found: bytes.len() });
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommandMessage {
    pub v_left: i16,
    pub v_right: i16,
    pub action: u8,
    pub inference_us: u32,
}

/// Fixed-point wheel value, clamped to `[-1, 1]`.
pub fn encode_wheel(v: f64) -> i16 {
    (v.clamp(-1.0, 1.0) * WHEEL_SCALE).round() as i16
}

pub fn decode_wheel(v: i16) -> f64 {
    (v as f64 / WHEEL_SCALE).clamp(-1.0, 1.0)
}

impl CommandMessage {
    pub const LEN: usize = 13;

    pub fn new(left: f64, right: f64, action: u8, inference_us: u32) -> Self {
        Self { v_left: encode_wheel(left), v_right: encode_wheel(right), action, inference_us }
    }

    pub fn wheels(&self) -> (f64, f64) {
        (decode_wheel(self.v_left), decode_wheel(self.v_right))
    }

    pub fn encode(&self) -> [u8; Self::LEN] {
        let mut out = [0u8; Self::LEN];
        out[..4].copy_from_slice(&COMMAND_MAGIC);
        out[4..6].copy_from_slice(&self.v_left.to_le_bytes());
        out[6..8].copy_from_slice(&self.v_right.to_le_bytes());
        out[8] = self.action;
        out[9..].copy_from_slice(&self.inference_us.to_le_bytes());
        out
    }

    fn from_body(b: &[u8; Self::LEN - 4]) -> Self {
        Self {
            v_left: i16::from_le_bytes([b[0], b[1]]),
            v_right: i16::from_le_bytes([b[2], b[3]]),
            action: b[4],
            inference_us: u32::from_le_bytes([b[5], b[6], b[7], b[8]]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorMessage {
    pub code: u8,
    pub message: String,
}

impl ErrorMessage {
    pub fn encode(&self) -> Vec<u8> {
        let msg = self.message.as_bytes();
        let n = msg.len().min(u16::MAX as usize);
        let mut out = Vec::with_capacity(7 + n);
        out.extend_from_slice(&ERROR_MAGIC);
        out.push(self.code);
        out.extend_from_slice(&(n as u16).to_le_bytes());
        out.extend_from_slice(&msg[..n]);
        out
    }
}

/// What the server sends back for one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Command(CommandMessage),
    Error(ErrorMessage),
}

impl Reply {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Reply::Command(c) => c.encode().to_vec(),
            Reply::Error(e) => e.encode(),
        }
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self, WireError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        match magic {
            COMMAND_MAGIC => {
                let mut body = [0u8; CommandMessage::LEN - 4];
                r.read_exact(&mut body)?;
                Ok(Reply::Command(CommandMessage::from_body(&body)))
            }
            ERROR_MAGIC => {
                let mut head = [0u8; 3];
                r.read_exact(&mut head)?;
                let n = u16::from_le_bytes([head[1], head[2]]) as usize;
                let mut msg = vec![0u8; n];
                r.read_exact(&mut msg)?;
                let message = String::from_utf8(msg).map_err(|_| WireError::Utf8)?;
                Ok(Reply::Error(ErrorMessage { code: head[0], message }))
            }
            other => Err(WireError::BadMagic(other)),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut cur = bytes;
        let r = Self::read(&mut cur)?;
        if !cur.is_empty() {
            return Err(WireError::LengthMismatch { expected: bytes.len() - cur.len(), found: bytes.len() });
        }
        Ok(r)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.encode())?;
        w.flush()
    }
}
