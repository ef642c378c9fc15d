use std::io::{Read, Write};

use super::WireError;
use crate::fl::{ClientReport, CommValue};

pub const HELLO: u8 = 0x01;
pub const GLOBAL_MODEL: u8 = 0x02;
pub const REPORT: u8 = 0x03;
pub const MODEL_REQUEST: u8 = 0x04;
pub const MODEL_UPLOAD: u8 = 0x05;
pub const ROUND_DONE: u8 = 0x06;
pub const ERROR: u8 = 0x7F;

/// Frames larger than this are rejected before allocation.
pub const MAX_FRAME: u32 = 64 << 20;

const FLAG_BOOTSTRAP: u8 = 0x01;

/// Codes carried by [`Message::Error`].
pub mod code {
    pub const MALFORMED: u16 = 1;
    pub const UNEXPECTED: u16 = 2;
    pub const DUPLICATE_CLIENT: u16 = 3;
    pub const REJECTED: u16 = 4;
    pub const INTERNAL: u16 = 5;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello {
        client_id: u16,
        sample_count: u32,
    },
    GlobalModel {
        round: u32,
        n_clients: u16,
        params: Vec<f64>,
    },
    Report {
        client_id: u16,
        round: u32,
        /// `None` for a bootstrap report.
        value: Option<f64>,
        grad_sq_norm: f64,
        local_acc: f64,
        sample_count: u32,
    },
    ModelRequest {
        round: u32,
    },
    ModelUpload {
        client_id: u16,
        round: u32,
        params: Vec<f64>,
    },
    RoundDone {
        round: u32,
        terminal: bool,
    },
    Error {
        code: u16,
        message: String,
    },
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        match self {
            Message::Hello { .. } => HELLO,
            Message::GlobalModel { .. } => GLOBAL_MODEL,
            Message::Report { .. } => REPORT,
            Message::ModelRequest { .. } => MODEL_REQUEST,
            Message::ModelUpload { .. } => MODEL_UPLOAD,
            Message::RoundDone { .. } => ROUND_DONE,
            Message::Error { .. } => ERROR,
        }
    }

    pub fn from_report(r: &ClientReport) -> Result<Self, WireError> {
        Ok(Message::Report {
            client_id: r.client_id,
            round: narrow(r.round_index, "round")?,
            value: r.value.finite(),
            grad_sq_norm: r.grad_sq_norm,
            local_acc: r.local_acc,
            sample_count: narrow(r.sample_count, "sample count")?,
        })
    }

    /// The report carried by a `Report` message.
    pub fn to_report(&self) -> Option<ClientReport> {
        match *self {
            Message::Report {
                client_id,
                round,
                value,
                grad_sq_norm,
                local_acc,
                sample_count,
            } => Some(ClientReport {
                client_id,
                value: value.map_or(CommValue::Bootstrap, CommValue::Value),
                grad_sq_norm,
                local_acc,
                sample_count: sample_count as u64,
                round_index: round as u64,
            }),
            _ => None,
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        let mut p = Vec::new();
        match self {
            Message::Hello {
                client_id,
                sample_count,
            } => {
                p.extend_from_slice(&client_id.to_be_bytes());
                p.extend_from_slice(&sample_count.to_be_bytes());
            }
            Message::GlobalModel {
                round,
                n_clients,
                params,
            } => {
                p.reserve(6 + 8 * params.len());
                p.extend_from_slice(&round.to_be_bytes());
                p.extend_from_slice(&n_clients.to_be_bytes());
                put_reals(&mut p, params);
            }
            Message::Report {
                client_id,
                round,
                value,
                grad_sq_norm,
                local_acc,
                sample_count,
            } => {
                p.extend_from_slice(&client_id.to_be_bytes());
                p.extend_from_slice(&round.to_be_bytes());
                p.push(if value.is_none() { FLAG_BOOTSTRAP } else { 0 });
                put_reals(&mut p, &[value.unwrap_or(0.0), *grad_sq_norm, *local_acc]);
                p.extend_from_slice(&sample_count.to_be_bytes());
            }
            Message::ModelRequest { round } => p.extend_from_slice(&round.to_be_bytes()),
            Message::ModelUpload {
                client_id,
                round,
                params,
            } => {
                p.reserve(6 + 8 * params.len());
                p.extend_from_slice(&client_id.to_be_bytes());
                p.extend_from_slice(&round.to_be_bytes());
                put_reals(&mut p, params);
            }
            Message::RoundDone { round, terminal } => {
                p.extend_from_slice(&round.to_be_bytes());
                p.push(*terminal as u8);
            }
            Message::Error { code, message } => {
                p.extend_from_slice(&code.to_be_bytes());
                p.extend_from_slice(message.as_bytes());
            }
        }
        p
    }

    /// Length prefix, type byte and payload.
    pub fn encode(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut out = Vec::with_capacity(5 + payload.len());
        out.extend_from_slice(&(payload.len() as u32 + 1).to_be_bytes());
        out.push(self.msg_type());
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(msg_type: u8, payload: &[u8]) -> Result<Self, WireError> {
        let mut c = Cursor { buf: payload, pos: 0 };
        let msg = match msg_type {
            HELLO => Message::Hello {
                client_id: c.u16()?,
                sample_count: c.u32()?,
            },
            GLOBAL_MODEL => Message::GlobalModel {
                round: c.u32()?,
                n_clients: c.u16()?,
                params: c.reals()?,
            },
            REPORT => {
                let client_id = c.u16()?;
                let round = c.u32()?;
                let flags = c.u8()?;
                if flags & !FLAG_BOOTSTRAP != 0 {
                    return Err(WireError::Malformed(format!("report flags {flags:#04x}")));
                }
                let value = c.f64()?;
                Message::Report {
                    client_id,
                    round,
                    value: (flags & FLAG_BOOTSTRAP == 0).then_some(value),
                    grad_sq_norm: c.f64()?,
                    local_acc: c.f64()?,
                    sample_count: c.u32()?,
                }
            }
            MODEL_REQUEST => Message::ModelRequest { round: c.u32()? },
            MODEL_UPLOAD => Message::ModelUpload {
                client_id: c.u16()?,
                round: c.u32()?,
                params: c.reals()?,
            },
            ROUND_DONE => {
                let round = c.u32()?;
                let terminal = match c.u8()? {
                    0 => false,
                    1 => true,
                    other => return Err(WireError::Malformed(format!("terminal flag {other}"))),
                };
                Message::RoundDone { round, terminal }
            }
            ERROR => {
                let code = c.u16()?;
                let message = String::from_utf8(c.rest().to_vec())
                    .map_err(|_| WireError::Malformed("error text is not utf-8".into()))?;
                Message::Error { code, message }
            }
            other => return Err(WireError::UnknownType(other)),
        };
        c.finish()?;
        Ok(msg)
    }
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<(), WireError> {
    w.write_all(&msg.encode())?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. A clean end of stream before the length prefix yields
/// `Ok(None)`.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>, WireError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len);
    if len == 0 {
        return Err(WireError::Malformed("zero-length frame".into()));
    }
    if len > MAX_FRAME {
        return Err(WireError::TooLarge(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    Message::decode(body[0], &body[1..]).map(Some)
}

fn put_reals(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn narrow<T: TryFrom<u64>>(v: u64, what: &str) -> Result<T, WireError> {
    T::try_from(v).map_err(|_| WireError::Malformed(format!("{what} {v} does not fit the frame field")))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(WireError::Malformed(format!(
                "payload of {} bytes truncated at {}",
                self.buf.len(),
                self.pos
            )));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn reals(&mut self) -> Result<Vec<f64>, WireError> {
        let rest = self.rest();
        if !rest.len().is_multiple_of(8) {
            return Err(WireError::Malformed(format!(
                "{} bytes is not a real array",
                rest.len()
            )));
        }
        Ok(rest
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    fn finish(&self) -> Result<(), WireError> {
        if self.pos != self.buf.len() {
            return Err(WireError::Malformed(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
