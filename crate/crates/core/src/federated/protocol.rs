//! Request/response messages between clients and the coordinator.
//!
//! On a socket every message is one frame: a 4-byte little-endian length,
//! then a kind byte and the payload. The length counts kind and payload.

use std::io::{ErrorKind, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use thiserror::Error;

use super::codec::{deserialize_params, serialize_params};
use crate::model::ModelParams;
use crate::train::ClientUpdate;

/// Frames above this size are rejected before any allocation.
pub const MAX_FRAME: usize = 1 << 30;

pub mod kind {
    pub const GET_GLOBAL: u8 = 1;
    pub const GLOBAL_PARAMS: u8 = 2;
    pub const NOT_READY: u8 = 3;
    pub const PUSH_UPDATE: u8 = 4;
    pub const ACK: u8 = 5;
    pub const GET_STATUS: u8 = 6;
    pub const STATUS: u8 = 7;
    pub const REPORT_FAILURE: u8 = 8;
    pub const ERROR: u8 = 9;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ErrorCode {
    Malformed = 1,
    Rejected = 2,
    Aborted = 3,
}

impl ErrorCode {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Self::Malformed),
            2 => Some(Self::Rejected),
            3 => Some(Self::Aborted),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Status {
    /// Round currently accepting updates (1-based).
    pub round: usize,
    pub expected: usize,
    pub received: Vec<usize>,
    pub finished: bool,
}

#[derive(Debug, Clone)]
pub enum Message {
    GetGlobal { round: usize, client_id: usize },
    GlobalParams { round: usize, params: ModelParams },
    NotReady { current_round: usize },
    PushUpdate { round: usize, update: ClientUpdate },
    Ack { round: usize },
    GetStatus,
    Status(Status),
    ReportFailure { round: usize, client_id: usize, message: String },
    Error { code: ErrorCode, message: String },
}

impl Message {
    pub fn kind(&self) -> u8 {
        match self {
            Message::GetGlobal { .. } => kind::GET_GLOBAL,
            Message::GlobalParams { .. } => kind::GLOBAL_PARAMS,
            Message::NotReady { .. } => kind::NOT_READY,
            Message::PushUpdate { .. } => kind::PUSH_UPDATE,
            Message::Ack { .. } => kind::ACK,
            Message::GetStatus => kind::GET_STATUS,
            Message::Status(_) => kind::STATUS,
            Message::ReportFailure { .. } => kind::REPORT_FAILURE,
            Message::Error { .. } => kind::ERROR,
        }
    }

    /// The client a request speaks for, if it names one.
    pub fn client_id(&self) -> Option<usize> {
        match self {
            Message::GetGlobal { client_id, .. } | Message::ReportFailure { client_id, .. } => Some(*client_id),
            Message::PushUpdate { update, .. } => Some(update.client_id),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("timed out waiting for the peer")]
    Timeout,
    #[error("connection refused by {0}")]
    ConnectionRefused(String),
    #[error("peer disconnected")]
    Disconnected,
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("peer replied {code:?}: {message}")]
    Remote { code: ErrorCode, message: String },
    #[error("unexpected reply: {0}")]
    Unexpected(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl TransportError {
    /// Whether repeating the same request may succeed.
    pub fn retryable(&self) -> bool {
        matches!(
            self,
            TransportError::Timeout | TransportError::ConnectionRefused(_) | TransportError::Disconnected
        )
    }

    fn from_io(e: std::io::Error) -> Self {
        match e.kind() {
            ErrorKind::TimedOut | ErrorKind::WouldBlock => TransportError::Timeout,
            ErrorKind::ConnectionRefused => TransportError::ConnectionRefused(e.to_string()),
            ErrorKind::UnexpectedEof
            | ErrorKind::ConnectionReset
            | ErrorKind::ConnectionAborted
            | ErrorKind::BrokenPipe => TransportError::Disconnected,
            _ => TransportError::Io(e.to_string()),
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

/// Kind byte followed by the payload.
pub fn encode_body(msg: &Message) -> Vec<u8> {
    let mut out = vec![msg.kind()];
    match msg {
        Message::GetGlobal { round, client_id } => {
            put_u32(&mut out, *round);
            put_u32(&mut out, *client_id);
        }
        Message::GlobalParams { round, params } => {
            put_u32(&mut out, *round);
            out.extend_from_slice(&serialize_params(params));
        }
        Message::NotReady { current_round } => put_u32(&mut out, *current_round),
        Message::PushUpdate { round, update } => {
            put_u32(&mut out, *round);
            put_u32(&mut out, update.client_id);
            out.extend_from_slice(&(update.sample_count as u64).to_le_bytes());
            out.extend_from_slice(&update.mean_train_loss.to_le_bytes());
            out.extend_from_slice(&update.mean_test_loss.to_le_bytes());
            out.extend_from_slice(&serialize_params(&update.params));
        }
        Message::Ack { round } => put_u32(&mut out, *round),
        Message::GetStatus => {}
        Message::Status(s) => {
            put_u32(&mut out, s.round);
            put_u32(&mut out, s.expected);
            out.push(u8::from(s.finished));
            put_u32(&mut out, s.received.len());
            for &c in &s.received {
                put_u32(&mut out, c);
            }
        }
        Message::ReportFailure {
            round,
            client_id,
            message,
        } => {
            put_u32(&mut out, *round);
            put_u32(&mut out, *client_id);
            out.extend_from_slice(message.as_bytes());
        }
        Message::Error { code, message } => {
            out.push(*code as u8);
            out.extend_from_slice(message.as_bytes());
        }
    }
    out
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], TransportError> {
        if self.0.len() < n {
            return Err(TransportError::Malformed(format!("payload ends {} bytes early", n - self.0.len())));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize, TransportError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64, TransportError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn rest(&mut self) -> &[u8] {
        std::mem::take(&mut self.0)
    }

    fn text(&mut self) -> Result<String, TransportError> {
        String::from_utf8(self.rest().to_vec()).map_err(|_| TransportError::Malformed("text is not UTF-8".into()))
    }

    fn params(&mut self) -> Result<ModelParams, TransportError> {
        deserialize_params(self.rest()).map_err(|e| TransportError::Malformed(e.to_string()))
    }

    fn done(&self) -> Result<(), TransportError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(TransportError::Malformed(format!("{} unexpected trailing bytes", self.0.len())))
        }
    }
}

pub fn decode_body(body: &[u8]) -> Result<Message, TransportError> {
    let (&k, payload) = body
        .split_first()
        .ok_or_else(|| TransportError::Malformed("empty frame".into()))?;
    let mut c = Cursor(payload);
    let msg = match k {
        kind::GET_GLOBAL => Message::GetGlobal {
            round: c.u32()?,
            client_id: c.u32()?,
        },
        kind::GLOBAL_PARAMS => Message::GlobalParams {
            round: c.u32()?,
            params: c.params()?,
        },
        kind::NOT_READY => Message::NotReady { current_round: c.u32()? },
        kind::PUSH_UPDATE => {
            let round = c.u32()?;
            let client_id = c.u32()?;
            let sample_count = u64::from_le_bytes(c.take(8)?.try_into().expect("8 bytes")) as usize;
            let mean_train_loss = c.f64()?;
            let mean_test_loss = c.f64()?;
            Message::PushUpdate {
                round,
                update: ClientUpdate {
                    client_id,
                    params: c.params()?,
                    sample_count,
                    mean_train_loss,
                    mean_test_loss,
                },
            }
        }
        kind::ACK => Message::Ack { round: c.u32()? },
        kind::GET_STATUS => Message::GetStatus,
        kind::STATUS => {
            let round = c.u32()?;
            let expected = c.u32()?;
            let finished = match c.take(1)?[0] {
                0 => false,
                1 => true,
                b => return Err(TransportError::Malformed(format!("bad flag {b}"))),
            };
            let n = c.u32()?;
            if n > c.0.len() / 4 {
                return Err(TransportError::Malformed(format!("status lists {n} clients")));
            }
            let received = (0..n).map(|_| c.u32()).collect::<Result<_, _>>()?;
            Message::Status(Status {
                round,
                expected,
                received,
                finished,
            })
        }
        kind::REPORT_FAILURE => Message::ReportFailure {
            round: c.u32()?,
            client_id: c.u32()?,
            message: c.text()?,
        },
        kind::ERROR => {
            let raw = c.take(1)?[0];
            let code = ErrorCode::from_u8(raw).ok_or_else(|| TransportError::Malformed(format!("unknown error code {raw}")))?;
            Message::Error {
                code,
                message: c.text()?,
            }
        }
        other => return Err(TransportError::Malformed(format!("unknown message kind {other}"))),
    };
    c.done()?;
    Ok(msg)
}

pub fn write_frame(w: &mut impl Write, body: &[u8]) -> Result<(), TransportError> {
    let len = u32::try_from(body.len())
        .ok()
        .filter(|&l| (l as usize) <= MAX_FRAME)
        .ok_or_else(|| TransportError::Malformed(format!("frame of {} bytes is too large", body.len())))?;
    w.write_all(&len.to_le_bytes()).map_err(TransportError::from_io)?;
    w.write_all(body).map_err(TransportError::from_io)?;
    w.flush().map_err(TransportError::from_io)
}

/// Reads one frame body. `Ok(None)` is a clean end of stream between frames;
/// ending inside a frame is [`TransportError::Disconnected`]. An oversized
/// length prefix cannot be skipped, so it leaves the stream unusable.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>, TransportError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(TransportError::Disconnected),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(TransportError::from_io(e)),
        }
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(TransportError::Malformed(format!("frame length {len} exceeds limit")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(TransportError::from_io)?;
    Ok(Some(body))
}

/// One side of a request/response conversation with the coordinator.
pub trait Endpoint {
    fn exchange(&mut self, request: Message) -> Result<Message, TransportError>;
}

pub struct TcpEndpoint {
    stream: TcpStream,
}

impl TcpEndpoint {
    pub fn connect(address: impl ToSocketAddrs, timeout: Option<Duration>) -> Result<Self, TransportError> {
        let stream = TcpStream::connect(address).map_err(TransportError::from_io)?;
        stream.set_read_timeout(timeout).map_err(TransportError::from_io)?;
        stream.set_write_timeout(timeout).map_err(TransportError::from_io)?;
        stream.set_nodelay(true).map_err(TransportError::from_io)?;
        Ok(Self { stream })
    }

    /// Retries refused connections until `attempts` run out, for servers
    /// that are still starting.
    pub fn connect_with_retry(
        address: impl ToSocketAddrs + Clone,
        timeout: Option<Duration>,
        attempts: usize,
    ) -> Result<Self, TransportError> {
        let mut last = TransportError::ConnectionRefused("no attempt made".into());
        for i in 0..attempts.max(1) {
            match Self::connect(address.clone(), timeout) {
                Ok(ep) => return Ok(ep),
                Err(e) if e.retryable() => {
                    last = e;
                    std::thread::sleep(Duration::from_millis(10 << i.min(6)));
                }
                Err(e) => return Err(e),
            }
        }
        Err(last)
    }
}

impl Endpoint for TcpEndpoint {
    fn exchange(&mut self, request: Message) -> Result<Message, TransportError> {
        write_frame(&mut self.stream, &encode_body(&request))?;
        let body = read_frame(&mut self.stream)?.ok_or(TransportError::Disconnected)?;
        decode_body(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;

    fn update() -> ClientUpdate {
        ClientUpdate {
            client_id: 3,
            params: ModelParams::init(ModelDims::new(6, 6, 2, 3), 1).unwrap(),
            sample_count: 800,
            mean_train_loss: 0.25,
            mean_test_loss: 0.5,
        }
    }

    fn round_trip(msg: &Message) -> Message {
        let mut wire = Vec::new();
        write_frame(&mut wire, &encode_body(msg)).unwrap();
        let mut r = wire.as_slice();
        let body = read_frame(&mut r).unwrap().unwrap();
        assert!(read_frame(&mut r).unwrap().is_none());
        decode_body(&body).unwrap()
    }

    #[test]
    fn messages_survive_the_wire() {
        match round_trip(&Message::PushUpdate { round: 7, update: update() }) {
            Message::PushUpdate { round, update: u } => {
                assert_eq!(round, 7);
                assert_eq!((u.client_id, u.sample_count), (3, 800));
                assert_eq!((u.mean_train_loss, u.mean_test_loss), (0.25, 0.5));
                assert!(u.params.bitwise_eq(&update().params));
            }
            m => panic!("{m:?}"),
        }
        let status = Status {
            round: 2,
            expected: 5,
            received: vec![0, 4],
            finished: false,
        };
        match round_trip(&Message::Status(status.clone())) {
            Message::Status(s) => assert_eq!(s, status),
            m => panic!("{m:?}"),
        }
        assert!(matches!(
            round_trip(&Message::GetGlobal { round: 1, client_id: 2 }),
            Message::GetGlobal { round: 1, client_id: 2 }
        ));
        assert!(matches!(
            round_trip(&Message::Error {
                code: ErrorCode::Aborted,
                message: "x".into()
            }),
            Message::Error {
                code: ErrorCode::Aborted,
                ..
            }
        ));
    }

    #[test]
    fn malformed_bodies() {
        assert!(matches!(decode_body(&[]), Err(TransportError::Malformed(_))));
        assert!(matches!(decode_body(&[200]), Err(TransportError::Malformed(_))));
        assert!(matches!(decode_body(&[kind::ACK, 1]), Err(TransportError::Malformed(_))));
        assert!(matches!(decode_body(&[kind::GET_STATUS, 0]), Err(TransportError::Malformed(_))));
    }

    #[test]
    fn truncated_frame_is_a_disconnect() {
        let mut wire = Vec::new();
        write_frame(&mut wire, &encode_body(&Message::Ack { round: 1 })).unwrap();
        wire.pop();
        assert_eq!(read_frame(&mut wire.as_slice()), Err(TransportError::Disconnected));
        assert_eq!(read_frame(&mut &wire[..2]), Err(TransportError::Disconnected));
    }

    #[test]
    fn retryable_marks() {
        assert!(TransportError::Timeout.retryable());
        assert!(TransportError::ConnectionRefused("x".into()).retryable());
        assert!(TransportError::Disconnected.retryable());
        assert!(!TransportError::Malformed("x".into()).retryable());
    }
}
