//! The uniform `Target` interface, the guarded-buffer memory oracle and the
//! agent wire protocol for out-of-process targets.

pub mod agent;
mod fault;
mod guarded;
mod watchdog;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet::Proto;

pub use fault::{checked_div, checked_sub, FaultKind, FaultReport, FaultSignature};
pub use guarded::{Access, FrameTooLarge, GuardedBuffer};
pub use watchdog::{Expired, Watchdog, DEFAULT_STEP_BUDGET};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("syscall {call} failed: {reason}")]
    Syscall { call: String, reason: String },
    #[error("unknown inspect key {0:?}")]
    UnknownKey(String),
    #[error("agent protocol error: {0}")]
    Protocol(String),
    #[error("target unreachable: {0}")]
    Unreachable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// POSIX-style socket operations a scenario can ask the target to perform.
/// Each target test holds at most one application socket.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Syscall {
    Socket(Proto),
    Bind(u16),
    Listen,
    Accept,
    Connect(u16),
    Close,
}

impl fmt::Display for Syscall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Syscall::Socket(p) => write!(f, "socket {p}"),
            Syscall::Bind(port) => write!(f, "bind {port}"),
            Syscall::Listen => f.write_str("listen"),
            Syscall::Accept => f.write_str("accept"),
            Syscall::Connect(port) => write!(f, "connect {port}"),
            Syscall::Close => f.write_str("close"),
        }
    }
}

/// What the target did with one delivered frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeliveryResult {
    Processed,
    Dropped(String),
    Fault(FaultReport),
    Timeout { site: String },
}

impl DeliveryResult {
    /// The fault this outcome represents, if any. Timeouts are hangs at the
    /// last site entered.
    pub fn fault(&self) -> Option<FaultReport> {
        match self {
            DeliveryResult::Fault(f) => Some(f.clone()),
            DeliveryResult::Timeout { site } => Some(FaultReport::new(FaultKind::Hang, site.clone(), "deadline exceeded")),
            _ => None,
        }
    }
}

/// A network stack under test.
pub trait Target: Send {
    /// Drops every socket and pending fault.
    fn reset(&mut self) -> Result<(), HarnessError>;
    fn syscall(&mut self, call: &Syscall) -> Result<i64, HarnessError>;
    fn deliver(&mut self, frame: &[u8]) -> Result<DeliveryResult, HarnessError>;
    /// Frames the target has emitted since the last drain.
    fn drain_outbound(&mut self) -> Result<Vec<Vec<u8>>, HarnessError>;
    fn inspect(&mut self, key: &str) -> Result<String, HarnessError> {
        Err(HarnessError::UnknownKey(key.to_string()))
    }
    /// Marks the end of one test case.
    fn end_test(&mut self) -> Result<(), HarnessError> {
        Ok(())
    }
}

impl<T: Target + ?Sized> Target for Box<T> {
    fn reset(&mut self) -> Result<(), HarnessError> {
        (**self).reset()
    }
    fn syscall(&mut self, call: &Syscall) -> Result<i64, HarnessError> {
        (**self).syscall(call)
    }
    fn deliver(&mut self, frame: &[u8]) -> Result<DeliveryResult, HarnessError> {
        (**self).deliver(frame)
    }
    fn drain_outbound(&mut self) -> Result<Vec<Vec<u8>>, HarnessError> {
        (**self).drain_outbound()
    }
    fn inspect(&mut self, key: &str) -> Result<String, HarnessError> {
        (**self).inspect(key)
    }
    fn end_test(&mut self) -> Result<(), HarnessError> {
        (**self).end_test()
    }
}
