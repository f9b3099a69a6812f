//! Agent wire protocol.
//!
//! Every message is `length (u32 BE) ‖ opcode (u8) ‖ payload`, where the
//! length counts the opcode byte plus the payload. The tester sends INIT,
//! SYSCALL, PACKET and END_TEST; the agent answers each with any frames the
//! target emitted (as PACKET messages) followed by exactly one RESULT or
//! FAULT.
//!
//! Payloads:
//! - SYSCALL: op id, then TLVs `type (u8) ‖ len (u8) ‖ value`.
//!   Ops: 1 socket (TLV 1, IP protocol number), 2 bind (TLV 2, port u16),
//!   3 listen, 4 accept, 5 connect (TLV 2), 6 close, 0x10 inspect (TLV 3, key).
//! - RESULT: tag, then data. 0x00 processed, 0x01 dropped (reason),
//!   0x02 timeout (site), 0x10 ok (i64 BE), 0x11 error (message),
//!   0x12 value (text), 0x13 unknown inspect key, 0x14 acknowledged.
//! - FAULT: the fault report as JSON.

use std::io::{ErrorKind, Read, Write};
use std::net::TcpListener;

use thiserror::Error;

use super::{DeliveryResult, FaultReport, HarnessError, Syscall, Target};
use crate::packet::Proto;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Opcode {
    Init = 0x01,
    Syscall = 0x02,
    Packet = 0x03,
    Result = 0x04,
    Fault = 0x05,
    EndTest = 0x06,
}

impl TryFrom<u8> for Opcode {
    type Error = CodecError;

    fn try_from(b: u8) -> Result<Self, CodecError> {
        Ok(match b {
            0x01 => Opcode::Init,
            0x02 => Opcode::Syscall,
            0x03 => Opcode::Packet,
            0x04 => Opcode::Result,
            0x05 => Opcode::Fault,
            0x06 => Opcode::EndTest,
            other => return Err(CodecError::UnknownOpcode(other)),
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("short frame: need {need} bytes, have {have}")]
    ShortFrame { need: usize, have: usize },
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("malformed payload: {0}")]
    Payload(String),
}

impl From<CodecError> for HarnessError {
    fn from(e: CodecError) -> Self {
        HarnessError::Protocol(e.to_string())
    }
}

pub fn encode_frame(opcode: Opcode, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + payload.len());
    out.extend_from_slice(&(payload.len() as u32 + 1).to_be_bytes());
    out.push(opcode as u8);
    out.extend_from_slice(payload);
    out
}

/// Decodes one frame from the front of `bytes`, returning the opcode, the
/// payload and the number of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Opcode, &[u8], usize), CodecError> {
    if bytes.len() < 5 {
        return Err(CodecError::ShortFrame { need: 5, have: bytes.len() });
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len == 0 {
        return Err(CodecError::ShortFrame { need: 5, have: 4 });
    }
    let total = 4 + len;
    if bytes.len() < total {
        return Err(CodecError::ShortFrame { need: total, have: bytes.len() });
    }
    let op = Opcode::try_from(bytes[4])?;
    Ok((op, &bytes[5..total], total))
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<(Opcode, Vec<u8>)>, HarnessError> {
    let mut head = [0u8; 4];
    match r.read_exact(&mut head) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(head) as usize;
    if len == 0 {
        return Err(CodecError::ShortFrame { need: 5, have: 4 }.into());
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    let op = Opcode::try_from(body[0])?;
    body.remove(0);
    Ok(Some((op, body)))
}

pub fn write_frame<W: Write>(w: &mut W, opcode: Opcode, payload: &[u8]) -> Result<(), HarnessError> {
    w.write_all(&encode_frame(opcode, payload))?;
    w.flush()?;
    Ok(())
}

mod op {
    pub const SOCKET: u8 = 1;
    pub const BIND: u8 = 2;
    pub const LISTEN: u8 = 3;
    pub const ACCEPT: u8 = 4;
    pub const CONNECT: u8 = 5;
    pub const CLOSE: u8 = 6;
    pub const INSPECT: u8 = 0x10;
}

mod tlv {
    pub const PROTO: u8 = 1;
    pub const PORT: u8 = 2;
    pub const KEY: u8 = 3;
}

mod tag {
    pub const PROCESSED: u8 = 0x00;
    pub const DROPPED: u8 = 0x01;
    pub const TIMEOUT: u8 = 0x02;
    pub const OK: u8 = 0x10;
    pub const ERROR: u8 = 0x11;
    pub const VALUE: u8 = 0x12;
    pub const UNKNOWN_KEY: u8 = 0x13;
    pub const ACK: u8 = 0x14;
}

/// A SYSCALL message body.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Request {
    Call(Syscall),
    Inspect(String),
}

fn push_tlv(out: &mut Vec<u8>, t: u8, value: &[u8]) {
    out.push(t);
    out.push(value.len() as u8);
    out.extend_from_slice(value);
}

pub fn encode_request(req: &Request) -> Vec<u8> {
    let mut out = Vec::new();
    match req {
        Request::Call(Syscall::Socket(p)) => {
            out.push(op::SOCKET);
            push_tlv(&mut out, tlv::PROTO, &[p.ip_number().unwrap_or(0)]);
        }
        Request::Call(Syscall::Bind(port)) => {
            out.push(op::BIND);
            push_tlv(&mut out, tlv::PORT, &port.to_be_bytes());
        }
        Request::Call(Syscall::Listen) => out.push(op::LISTEN),
        Request::Call(Syscall::Accept) => out.push(op::ACCEPT),
        Request::Call(Syscall::Connect(port)) => {
            out.push(op::CONNECT);
            push_tlv(&mut out, tlv::PORT, &port.to_be_bytes());
        }
        Request::Call(Syscall::Close) => out.push(op::CLOSE),
        Request::Inspect(key) => {
            out.push(op::INSPECT);
            push_tlv(&mut out, tlv::KEY, key.as_bytes());
        }
    }
    out
}

pub fn decode_request(payload: &[u8]) -> Result<Request, CodecError> {
    let (&id, mut rest) = payload.split_first().ok_or(CodecError::ShortFrame { need: 1, have: 0 })?;
    let mut tlvs = Vec::new();
    while !rest.is_empty() {
        if rest.len() < 2 || rest.len() < 2 + rest[1] as usize {
            return Err(CodecError::Payload("truncated TLV".into()));
        }
        let len = rest[1] as usize;
        tlvs.push((rest[0], &rest[2..2 + len]));
        rest = &rest[2 + len..];
    }
    let find = |t: u8| {
        tlvs.iter()
            .find(|(ty, _)| *ty == t)
            .map(|(_, v)| *v)
            .ok_or_else(|| CodecError::Payload(format!("missing TLV {t}")))
    };
    let port = || -> Result<u16, CodecError> {
        let v = find(tlv::PORT)?;
        <[u8; 2]>::try_from(v).map(u16::from_be_bytes).map_err(|_| CodecError::Payload("port TLV".into()))
    };
    Ok(match id {
        op::SOCKET => {
            let p = match find(tlv::PROTO)? {
                [6] => Proto::Tcp,
                [17] => Proto::Udp,
                other => return Err(CodecError::Payload(format!("socket protocol {other:?}"))),
            };
            Request::Call(Syscall::Socket(p))
        }
        op::BIND => Request::Call(Syscall::Bind(port()?)),
        op::LISTEN => Request::Call(Syscall::Listen),
        op::ACCEPT => Request::Call(Syscall::Accept),
        op::CONNECT => Request::Call(Syscall::Connect(port()?)),
        op::CLOSE => Request::Call(Syscall::Close),
        op::INSPECT => Request::Inspect(
            String::from_utf8(find(tlv::KEY)?.to_vec()).map_err(|_| CodecError::Payload("key is not utf-8".into()))?,
        ),
        other => return Err(CodecError::Payload(format!("unknown syscall op {other}"))),
    })
}

fn tagged(t: u8, data: &[u8]) -> Vec<u8> {
    let mut v = Vec::with_capacity(1 + data.len());
    v.push(t);
    v.extend_from_slice(data);
    v
}

/// Serves one tester connection until it closes.
pub fn serve<T: Target + ?Sized, S: Read + Write>(target: &mut T, stream: &mut S) -> Result<(), HarnessError> {
    while let Some((opcode, payload)) = read_frame(stream)? {
        match opcode {
            Opcode::Init => {
                target.reset()?;
                write_frame(stream, Opcode::Result, &[tag::ACK])?;
            }
            Opcode::EndTest => {
                target.end_test()?;
                write_frame(stream, Opcode::Result, &[tag::ACK])?;
            }
            Opcode::Syscall => {
                let reply = match decode_request(&payload)? {
                    Request::Call(call) => match target.syscall(&call) {
                        Ok(v) => tagged(tag::OK, &v.to_be_bytes()),
                        Err(e) => tagged(tag::ERROR, e.to_string().as_bytes()),
                    },
                    Request::Inspect(key) => match target.inspect(&key) {
                        Ok(v) => tagged(tag::VALUE, v.as_bytes()),
                        Err(HarnessError::UnknownKey(k)) => tagged(tag::UNKNOWN_KEY, k.as_bytes()),
                        Err(e) => tagged(tag::ERROR, e.to_string().as_bytes()),
                    },
                };
                for frame in target.drain_outbound()? {
                    write_frame(stream, Opcode::Packet, &frame)?;
                }
                write_frame(stream, Opcode::Result, &reply)?;
            }
            Opcode::Packet => {
                let result = target.deliver(&payload)?;
                for frame in target.drain_outbound()? {
                    write_frame(stream, Opcode::Packet, &frame)?;
                }
                match result {
                    DeliveryResult::Processed => write_frame(stream, Opcode::Result, &[tag::PROCESSED])?,
                    DeliveryResult::Dropped(r) => write_frame(stream, Opcode::Result, &tagged(tag::DROPPED, r.as_bytes()))?,
                    DeliveryResult::Timeout { site } => {
                        write_frame(stream, Opcode::Result, &tagged(tag::TIMEOUT, site.as_bytes()))?
                    }
                    DeliveryResult::Fault(f) => {
                        let json = serde_json::to_vec(&f).map_err(|e| HarnessError::Protocol(e.to_string()))?;
                        write_frame(stream, Opcode::Fault, &json)?
                    }
                }
            }
            Opcode::Result | Opcode::Fault => {
                return Err(HarnessError::Protocol(format!("agent received {opcode:?}")));
            }
        }
    }
    Ok(())
}

/// Accepts tester connections and serves each on its own thread with a fresh
/// target from `make`. Stops after `limit` connections when given.
pub fn serve_listener<T, F>(listener: TcpListener, make: F, limit: Option<usize>) -> Result<(), HarnessError>
where
    T: Target + 'static,
    F: Fn() -> T,
{
    let mut handles = Vec::new();
    for (i, conn) in listener.incoming().enumerate() {
        let mut stream = conn?;
        stream.set_nodelay(true).ok();
        let mut target = make();
        handles.push(std::thread::spawn(move || {
            if let Err(e) = serve(&mut target, &mut stream) {
                log::warn!("agent connection ended: {e}");
            }
        }));
        if limit.is_some_and(|l| i + 1 >= l) {
            break;
        }
    }
    for h in handles {
        h.join().ok();
    }
    Ok(())
}

enum Reply {
    Tagged(u8, Vec<u8>),
    Fault(FaultReport),
}

/// A [`Target`] reached over the agent protocol.
pub struct AgentClient<S> {
    stream: S,
    outbound: Vec<Vec<u8>>,
}

impl<S: Read + Write + Send> AgentClient<S> {
    pub fn new(stream: S) -> Self {
        AgentClient { stream, outbound: Vec::new() }
    }

    pub fn into_inner(self) -> S {
        self.stream
    }

    fn exchange(&mut self, opcode: Opcode, payload: &[u8]) -> Result<Reply, HarnessError> {
        write_frame(&mut self.stream, opcode, payload)?;
        loop {
            let (op, body) = read_frame(&mut self.stream)?
                .ok_or_else(|| HarnessError::Unreachable("agent closed the connection".into()))?;
            match op {
                Opcode::Packet => self.outbound.push(body),
                Opcode::Result => {
                    let (&t, rest) = body.split_first().ok_or(CodecError::ShortFrame { need: 1, have: 0 })?;
                    return Ok(Reply::Tagged(t, rest.to_vec()));
                }
                Opcode::Fault => {
                    let f = serde_json::from_slice(&body).map_err(|e| HarnessError::Protocol(e.to_string()))?;
                    return Ok(Reply::Fault(f));
                }
                other => return Err(HarnessError::Protocol(format!("tester received {other:?}"))),
            }
        }
    }

    fn expect_ack(&mut self, opcode: Opcode) -> Result<(), HarnessError> {
        match self.exchange(opcode, &[])? {
            Reply::Tagged(tag::ACK, _) => Ok(()),
            Reply::Tagged(tag::ERROR, m) => Err(HarnessError::Protocol(String::from_utf8_lossy(&m).into_owned())),
            _ => Err(HarnessError::Protocol(format!("unexpected reply to {opcode:?}"))),
        }
    }
}

fn text(bytes: Vec<u8>) -> String {
    String::from_utf8_lossy(&bytes).into_owned()
}

impl<S: Read + Write + Send> Target for AgentClient<S> {
    fn reset(&mut self) -> Result<(), HarnessError> {
        self.outbound.clear();
        self.expect_ack(Opcode::Init)
    }

    fn syscall(&mut self, call: &Syscall) -> Result<i64, HarnessError> {
        match self.exchange(Opcode::Syscall, &encode_request(&Request::Call(call.clone())))? {
            Reply::Tagged(tag::OK, v) => {
                let b = <[u8; 8]>::try_from(v.as_slice()).map_err(|_| CodecError::Payload("syscall value".into()))?;
                Ok(i64::from_be_bytes(b))
            }
            Reply::Tagged(tag::ERROR, m) => Err(HarnessError::Syscall { call: call.to_string(), reason: text(m) }),
            _ => Err(HarnessError::Protocol("unexpected syscall reply".into())),
        }
    }

    fn deliver(&mut self, frame: &[u8]) -> Result<DeliveryResult, HarnessError> {
        match self.exchange(Opcode::Packet, frame)? {
            Reply::Fault(f) => Ok(DeliveryResult::Fault(f)),
            Reply::Tagged(tag::PROCESSED, _) => Ok(DeliveryResult::Processed),
            Reply::Tagged(tag::DROPPED, r) => Ok(DeliveryResult::Dropped(text(r))),
            Reply::Tagged(tag::TIMEOUT, s) => Ok(DeliveryResult::Timeout { site: text(s) }),
            _ => Err(HarnessError::Protocol("unexpected delivery reply".into())),
        }
    }

    fn drain_outbound(&mut self) -> Result<Vec<Vec<u8>>, HarnessError> {
        Ok(std::mem::take(&mut self.outbound))
    }

    fn inspect(&mut self, key: &str) -> Result<String, HarnessError> {
        match self.exchange(Opcode::Syscall, &encode_request(&Request::Inspect(key.to_string())))? {
            Reply::Tagged(tag::VALUE, v) => Ok(text(v)),
            Reply::Tagged(tag::UNKNOWN_KEY, k) => Err(HarnessError::UnknownKey(text(k))),
            Reply::Tagged(tag::ERROR, m) => Err(HarnessError::Protocol(text(m))),
            _ => Err(HarnessError::Protocol("unexpected inspect reply".into())),
        }
    }

    fn end_test(&mut self) -> Result<(), HarnessError> {
        self.expect_ack(Opcode::EndTest)
    }
}
