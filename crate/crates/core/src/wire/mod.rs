//! Framed TCP transport running the federated rounds across processes.
//!
//! Every frame is a big-endian `u32` length (payload size plus one), a type
//! byte and the payload. Client ids are `u16`, counts and rounds `u32`, both
//! big-endian; reals are little-endian IEEE-754 doubles.

mod client;
mod frame;
mod server;

pub use client::{client_main, ClientOptions, ClientSetup, ClientSummary};
pub use frame::{code, read_message, write_message, Message, MAX_FRAME};
pub use frame::{ERROR, GLOBAL_MODEL, HELLO, MODEL_REQUEST, MODEL_UPLOAD, REPORT, ROUND_DONE};
pub use server::{serve, ServeOptions};

use crate::fl::FlError;
use crate::nn::NnError;
use crate::sim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(u32),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("peer reported error {code}: {message}")]
    Remote { code: u16, message: String },
    #[error("connection closed before the session finished")]
    ConnectionLost,
    #[error("timed out waiting for {0}")]
    Timeout(String),
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl WireError {
    /// Errors worth reconnecting over.
    pub fn is_transient(&self) -> bool {
        matches!(self, WireError::Io(_) | WireError::ConnectionLost)
    }
}
