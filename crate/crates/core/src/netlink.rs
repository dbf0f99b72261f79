//! Length-prefixed binary protocol over TCP between the Trusted Authority
//! service, device agents and operator clients.
//!
//! Wire image of a frame:
//!
//! ```text
//! +--------+------+------------+---------------+
//! | "SUC1" | kind | len (u16)  | payload (len) |
//! +--------+------+------------+---------------+
//!    4        1     2, big-endian
//! ```
//!
//! Agents connect to the TA and introduce themselves with `HELLO`; the TA
//! keeps the connection and drives it (enrollment batches, challenges).
//! Operators connect with an operator `HELLO` and ask the TA to enroll or
//! authenticate a connected device.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::authority::{AuthResult, Authority, DeviceChannel, EnrollReport};
use crate::error::{AuthorityError, FrameError};
use crate::suc::{Block64, SucInstance, SucParams};

pub const MAGIC: [u8; 4] = *b"SUC1";
pub const HEADER_LEN: usize = 7;
/// Largest accepted payload.
pub const MAX_PAYLOAD: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Kind {
    Hello = 0x01,
    HelloAck = 0x02,
    Challenge = 0x03,
    Response = 0x04,
    EnrollBegin = 0x05,
    EnrollEnd = 0x06,
    AuthResult = 0x07,
    Error = 0x08,
    /// Operator request to run one authentication.
    AuthBegin = 0x09,
}

impl Kind {
    pub const ALL: [Kind; 9] = [
        Kind::Hello,
        Kind::HelloAck,
        Kind::Challenge,
        Kind::Response,
        Kind::EnrollBegin,
        Kind::EnrollEnd,
        Kind::AuthResult,
        Kind::Error,
        Kind::AuthBegin,
    ];
}

impl TryFrom<u8> for Kind {
    type Error = FrameError;

    fn try_from(v: u8) -> Result<Self, FrameError> {
        Kind::ALL
            .into_iter()
            .find(|k| *k as u8 == v)
            .ok_or(FrameError::UnknownKind(v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: Kind,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: Kind, payload: impl Into<Vec<u8>>) -> Self {
        Frame {
            kind,
            payload: payload.into(),
        }
    }

    pub fn block(kind: Kind, b: Block64) -> Self {
        Frame::new(kind, b.0.to_vec())
    }

    pub fn error(code: ErrorCode, message: &str) -> Self {
        let mut p = vec![code as u8];
        p.extend_from_slice(message.as_bytes());
        Frame::new(Kind::Error, p)
    }

    pub fn as_block(&self) -> Result<Block64, FrameError> {
        let arr: [u8; 8] = self.payload[..].try_into().map_err(|_| {
            FrameError::Payload(format!("block payload of {} bytes", self.payload.len()))
        })?;
        Ok(Block64(arr))
    }
}

pub fn encode(frame: &Frame) -> Result<Vec<u8>, FrameError> {
    if frame.payload.len() > MAX_PAYLOAD {
        return Err(FrameError::Oversize(frame.payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + frame.payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(frame.kind as u8);
    out.extend_from_slice(&(frame.payload.len() as u16).to_be_bytes());
    out.extend_from_slice(&frame.payload);
    Ok(out)
}

/// Decodes one frame from the front of `bytes`, returning it with the
/// number of bytes consumed. Incomplete input yields `Truncated`.
pub fn decode(bytes: &[u8]) -> Result<(Frame, usize), FrameError> {
    let magic_len = bytes.len().min(4);
    if bytes[..magic_len] != MAGIC[..magic_len] {
        let mut m = [0u8; 4];
        m[..magic_len].copy_from_slice(&bytes[..magic_len]);
        return Err(FrameError::BadMagic(m));
    }
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated {
            needed: HEADER_LEN - bytes.len(),
        });
    }
    let kind = Kind::try_from(bytes[4])?;
    let len = u16::from_be_bytes([bytes[5], bytes[6]]) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::Oversize(len));
    }
    let total = HEADER_LEN + len;
    if bytes.len() < total {
        return Err(FrameError::Truncated {
            needed: total - bytes.len(),
        });
    }
    Ok((Frame::new(kind, &bytes[HEADER_LEN..total]), total))
}

/// Incremental decoder: feed arbitrary chunks, pull complete frames.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn push(&mut self, chunk: &[u8]) {
        self.buf.extend_from_slice(chunk);
    }

    pub fn next_frame(&mut self) -> Result<Option<Frame>, FrameError> {
        if self.buf.is_empty() {
            return Ok(None);
        }
        match decode(&self.buf) {
            Ok((frame, used)) => {
                self.buf.drain(..used);
                Ok(Some(frame))
            }
            Err(FrameError::Truncated { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ErrorCode {
    NotInitialized = 1,
    Protocol = 2,
    OperationFailed = 3,
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("frame: {0}")]
    Frame(#[from] FrameError),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("peer reported error {code}: {message}")]
    Remote { code: u8, message: String },
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Authority(#[from] AuthorityError),
}

pub fn write_frame(stream: &mut impl Write, frame: &Frame) -> Result<(), NetError> {
    stream.write_all(&encode(frame)?)?;
    stream.flush()?;
    Ok(())
}

pub fn read_frame(stream: &mut impl Read) -> Result<Frame, NetError> {
    let mut header = [0u8; HEADER_LEN];
    match stream.read_exact(&mut header) {
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(NetError::Closed),
        other => other?,
    }
    let len = match decode(&header) {
        Ok((frame, _)) => return Ok(frame),
        Err(FrameError::Truncated { needed }) => needed,
        Err(e) => return Err(e.into()),
    };
    let mut buf = header.to_vec();
    buf.resize(HEADER_LEN + len, 0);
    stream.read_exact(&mut buf[HEADER_LEN..])?;
    Ok(decode(&buf)?.0)
}

fn remote_error(frame: &Frame) -> NetError {
    let code = frame.payload.first().copied().unwrap_or(0);
    let message = String::from_utf8_lossy(frame.payload.get(1..).unwrap_or(&[])).into_owned();
    NetError::Remote { code, message }
}

const ROLE_DEVICE: u8 = 0x01;
const ROLE_OPERATOR: u8 = 0x02;

/// Decoded `HELLO` payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Hello {
    Device {
        serial: String,
        params: Option<SucParams>,
    },
    Operator,
}

impl Hello {
    pub fn to_frame(&self) -> Frame {
        let mut p = Vec::new();
        match self {
            Hello::Operator => p.push(ROLE_OPERATOR),
            Hello::Device { serial, params } => {
                p.push(ROLE_DEVICE);
                match params {
                    Some(params) => {
                        p.push(1);
                        p.extend_from_slice(&params.rounds.to_be_bytes());
                        p.extend_from_slice(&params.feistel_r.to_be_bytes());
                        p.extend_from_slice(&params.pool_digest);
                    }
                    None => p.push(0),
                }
                p.extend_from_slice(serial.as_bytes());
            }
        }
        Frame::new(Kind::Hello, p)
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, FrameError> {
        let bad = |m: &str| FrameError::Payload(m.to_string());
        if frame.kind != Kind::Hello {
            return Err(bad("expected HELLO"));
        }
        let p = &frame.payload;
        match p.first() {
            Some(&ROLE_OPERATOR) if p.len() == 1 => Ok(Hello::Operator),
            Some(&ROLE_DEVICE) => {
                let (params, rest) = match p.get(1) {
                    Some(0) => (None, &p[2..]),
                    Some(1) if p.len() >= 42 => {
                        let rounds = u32::from_be_bytes(p[2..6].try_into().unwrap());
                        let feistel_r = u32::from_be_bytes(p[6..10].try_into().unwrap());
                        let digest: [u8; 32] = p[10..42].try_into().unwrap();
                        let params = SucParams::new(rounds, feistel_r, digest)
                            .map_err(|e| FrameError::Payload(e.to_string()))?;
                        (Some(params), &p[42..])
                    }
                    _ => return Err(bad("bad device HELLO")),
                };
                let serial = std::str::from_utf8(rest)
                    .map_err(|_| bad("serial is not UTF-8"))?
                    .to_string();
                if serial.is_empty() {
                    return Err(bad("empty serial"));
                }
                Ok(Hello::Device { serial, params })
            }
            _ => Err(bad("unknown HELLO role")),
        }
    }
}

fn auth_code(r: AuthResult) -> u8 {
    match r {
        AuthResult::Accepted => 0,
        AuthResult::Rejected => 1,
        AuthResult::Exhausted => 2,
    }
}

fn auth_from_code(c: u8) -> Result<AuthResult, FrameError> {
    match c {
        0 => Ok(AuthResult::Accepted),
        1 => Ok(AuthResult::Rejected),
        2 => Ok(AuthResult::Exhausted),
        _ => Err(FrameError::Payload(format!("unknown auth status {c}"))),
    }
}

fn serial_payload(prefix: &[u8], serial: &str) -> Vec<u8> {
    let mut p = prefix.to_vec();
    p.extend_from_slice(serial.as_bytes());
    p
}

fn parse_serial(bytes: &[u8]) -> Result<String, FrameError> {
    std::str::from_utf8(bytes)
        .map(str::to_string)
        .map_err(|_| FrameError::Payload("serial is not UTF-8".into()))
}

/// TA side of a connected agent.
#[derive(Debug)]
pub struct AgentSession {
    serial: String,
    params: Option<SucParams>,
    stream: TcpStream,
}

impl AgentSession {
    fn exchange(&mut self, frame: &Frame) -> Result<Frame, NetError> {
        write_frame(&mut self.stream, frame)?;
        read_frame(&mut self.stream)
    }

    fn transport(e: NetError) -> AuthorityError {
        match e {
            NetError::Remote { code, message } if code == ErrorCode::NotInitialized as u8 => {
                AuthorityError::DeviceNotInitialized(message)
            }
            NetError::Authority(a) => a,
            other => AuthorityError::Transport(other.to_string()),
        }
    }
}

impl DeviceChannel for AgentSession {
    fn challenge(&mut self, x: Block64) -> Result<Block64, AuthorityError> {
        let reply = self
            .exchange(&Frame::block(Kind::Challenge, x))
            .map_err(Self::transport)?;
        match reply.kind {
            Kind::Response => reply
                .as_block()
                .map_err(|e| Self::transport(NetError::Frame(e))),
            Kind::Error => Err(Self::transport(remote_error(&reply))),
            other => Err(AuthorityError::Transport(format!(
                "{}: expected RESPONSE, got {other:?}",
                self.serial
            ))),
        }
    }

    fn begin_enrollment(&mut self, t: u32) -> Result<(), AuthorityError> {
        write_frame(
            &mut self.stream,
            &Frame::new(Kind::EnrollBegin, t.to_be_bytes()),
        )
        .map_err(Self::transport)
    }

    fn end_enrollment(&mut self) -> Result<(), AuthorityError> {
        write_frame(&mut self.stream, &Frame::new(Kind::EnrollEnd, Vec::new()))
            .map_err(Self::transport)
    }

    fn report(&mut self, result: AuthResult) -> Result<(), AuthorityError> {
        write_frame(
            &mut self.stream,
            &Frame::new(Kind::AuthResult, vec![auth_code(result)]),
        )
        .map_err(Self::transport)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TaConfig {
    /// Read timeout for every session.
    pub session_timeout: Duration,
}

impl Default for TaConfig {
    fn default() -> Self {
        TaConfig {
            session_timeout: Duration::from_secs(10),
        }
    }
}

type Sessions = Mutex<HashMap<String, Arc<Mutex<AgentSession>>>>;

struct TaShared {
    authority: Arc<Authority>,
    sessions: Sessions,
    auth_timings: Mutex<Vec<Duration>>,
    config: TaConfig,
    stopping: AtomicBool,
}

impl TaShared {
    fn session(&self, serial: &str) -> Result<Arc<Mutex<AgentSession>>, AuthorityError> {
        self.sessions
            .lock()
            .unwrap()
            .get(serial)
            .cloned()
            .ok_or_else(|| AuthorityError::Unreachable(format!("no agent connected for {serial}")))
    }

    fn drop_session_if(&self, serial: &str, session: &Arc<Mutex<AgentSession>>) {
        let mut map = self.sessions.lock().unwrap();
        if map.get(serial).is_some_and(|s| Arc::ptr_eq(s, session)) {
            map.remove(serial);
        }
    }

    fn enroll(&self, serial: &str, t: usize) -> Result<EnrollReport, AuthorityError> {
        let session = self.session(serial)?;
        let mut guard = session.lock().unwrap();
        let params = guard
            .params
            .ok_or_else(|| AuthorityError::DeviceNotInitialized(serial.to_string()))?;
        let res = self.authority.enroll(&mut *guard, serial, params, t);
        if let Err(AuthorityError::Transport(_)) = &res {
            drop(guard);
            self.drop_session_if(serial, &session);
        }
        res
    }

    fn authenticate(&self, serial: &str, inverse: bool) -> Result<AuthResult, AuthorityError> {
        let session = self.session(serial)?;
        let mut guard = session.lock().unwrap();
        let started = Instant::now();
        let res = if inverse {
            self.authority.inverse_authenticate(&mut *guard, serial)
        } else {
            self.authority.authenticate(&mut *guard, serial)
        };
        if res.is_ok() {
            self.auth_timings.lock().unwrap().push(started.elapsed());
        }
        if let Err(AuthorityError::Transport(_)) = &res {
            drop(guard);
            self.drop_session_if(serial, &session);
        }
        res
    }
}

/// Running TA service.
pub struct TaHandle {
    addr: SocketAddr,
    shared: Arc<TaShared>,
    acceptor: Option<JoinHandle<()>>,
}

impl fmt::Debug for TaHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TaHandle")
            .field("addr", &self.addr)
            .finish()
    }
}

impl TaHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn authority(&self) -> &Arc<Authority> {
        &self.shared.authority
    }

    pub fn connected(&self) -> Vec<String> {
        let mut v: Vec<_> = self
            .shared
            .sessions
            .lock()
            .unwrap()
            .keys()
            .cloned()
            .collect();
        v.sort();
        v
    }

    /// Waits until an agent with `serial` has said HELLO.
    pub fn wait_for_agent(&self, serial: &str, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            if self.shared.sessions.lock().unwrap().contains_key(serial) {
                return true;
            }
            thread::sleep(Duration::from_millis(5));
        }
        false
    }

    pub fn enroll(&self, serial: &str, t: usize) -> Result<EnrollReport, AuthorityError> {
        self.shared.enroll(serial, t)
    }

    pub fn authenticate(&self, serial: &str) -> Result<AuthResult, AuthorityError> {
        self.shared.authenticate(serial, false)
    }

    pub fn inverse_authenticate(&self, serial: &str) -> Result<AuthResult, AuthorityError> {
        self.shared.authenticate(serial, true)
    }

    /// Wall-clock time of every completed authentication.
    pub fn auth_timings(&self) -> Vec<Duration> {
        self.shared.auth_timings.lock().unwrap().clone()
    }

    /// Stops accepting, closes every agent session and joins the acceptor.
    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Blocks until the acceptor exits.
    pub fn join(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    fn stop(&mut self) {
        if self.shared.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.addr);
        for (_, s) in self.shared.sessions.lock().unwrap().drain() {
            let _ = s.lock().unwrap().stream.shutdown(Shutdown::Both);
        }
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for TaHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds `listen` and serves agents and operators on background threads.
pub fn serve_ta(
    listen: impl ToSocketAddrs,
    authority: Arc<Authority>,
    config: TaConfig,
) -> Result<TaHandle, NetError> {
    let listener = TcpListener::bind(listen)?;
    let addr = listener.local_addr()?;
    let shared = Arc::new(TaShared {
        authority,
        sessions: Mutex::new(HashMap::new()),
        auth_timings: Mutex::new(Vec::new()),
        config,
        stopping: AtomicBool::new(false),
    });
    let acceptor = {
        let shared = shared.clone();
        thread::Builder::new()
            .name("ta-accept".into())
            .spawn(move || accept_loop(listener, shared))?
    };
    log::info!("TA listening on {addr}");
    Ok(TaHandle {
        addr,
        shared,
        acceptor: Some(acceptor),
    })
}

fn accept_loop(listener: TcpListener, shared: Arc<TaShared>) {
    for conn in listener.incoming() {
        if shared.stopping.load(Ordering::SeqCst) {
            break;
        }
        let stream = match conn {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let shared = shared.clone();
        let _ = thread::Builder::new()
            .name("ta-session".into())
            .spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = handle_connection(stream, &shared) {
                    log::debug!("session {peer:?} ended: {e}");
                }
            });
    }
}

fn handle_connection(mut stream: TcpStream, shared: &TaShared) -> Result<(), NetError> {
    stream.set_read_timeout(Some(shared.config.session_timeout))?;
    stream.set_nodelay(true)?;
    let first = read_frame(&mut stream)?;
    let hello = match Hello::from_frame(&first) {
        Ok(h) => h,
        Err(e) => {
            let _ = write_frame(
                &mut stream,
                &Frame::error(ErrorCode::Protocol, &e.to_string()),
            );
            return Err(e.into());
        }
    };
    write_frame(&mut stream, &Frame::new(Kind::HelloAck, Vec::new()))?;
    match hello {
        Hello::Device { serial, params } => {
            log::info!("agent {serial} connected");
            let session = AgentSession {
                serial: serial.clone(),
                params,
                stream,
            };
            let old = shared
                .sessions
                .lock()
                .unwrap()
                .insert(serial, Arc::new(Mutex::new(session)));
            if let Some(old) = old {
                let _ = old.lock().unwrap().stream.shutdown(Shutdown::Both);
            }
            Ok(())
        }
        Hello::Operator => operator_loop(stream, shared),
    }
}

fn operator_loop(mut stream: TcpStream, shared: &TaShared) -> Result<(), NetError> {
    // operators may sit idle between requests
    stream.set_read_timeout(None)?;
    loop {
        let req = match read_frame(&mut stream) {
            Err(NetError::Closed) => return Ok(()),
            other => other?,
        };
        let reply = match req.kind {
            Kind::EnrollBegin if req.payload.len() >= 4 => {
                let t = u32::from_be_bytes(req.payload[..4].try_into().unwrap()) as usize;
                let serial = parse_serial(&req.payload[4..])?;
                match shared.enroll(&serial, t) {
                    Ok(r) => {
                        let mut p = (r.pairs as u32).to_be_bytes().to_vec();
                        p.extend_from_slice(&(r.payload_bytes as u32).to_be_bytes());
                        p.extend_from_slice(&(r.elapsed.as_micros() as u64).to_be_bytes());
                        Frame::new(Kind::EnrollEnd, p)
                    }
                    Err(e) => Frame::error(ErrorCode::OperationFailed, &e.to_string()),
                }
            }
            Kind::AuthBegin if !req.payload.is_empty() => {
                let inverse = req.payload[0] == 1;
                let serial = parse_serial(&req.payload[1..])?;
                let started = Instant::now();
                match shared.authenticate(&serial, inverse) {
                    Ok(r) => {
                        let mut p = vec![auth_code(r)];
                        p.extend_from_slice(&(started.elapsed().as_micros() as u64).to_be_bytes());
                        Frame::new(Kind::AuthResult, p)
                    }
                    Err(e) => Frame::error(ErrorCode::OperationFailed, &e.to_string()),
                }
            }
            other => {
                let f = Frame::error(ErrorCode::Protocol, &format!("unexpected {other:?}"));
                write_frame(&mut stream, &f)?;
                return Err(NetError::Protocol(format!("operator sent {other:?}")));
            }
        };
        write_frame(&mut stream, &reply)?;
    }
}

fn operator_connect(addr: impl ToSocketAddrs) -> Result<TcpStream, NetError> {
    let mut stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let ack = {
        write_frame(&mut stream, &Hello::Operator.to_frame())?;
        read_frame(&mut stream)?
    };
    match ack.kind {
        Kind::HelloAck => Ok(stream),
        Kind::Error => Err(remote_error(&ack)),
        other => Err(NetError::Protocol(format!(
            "expected HELLO_ACK, got {other:?}"
        ))),
    }
}

/// Asks a running TA to enroll `serial` with `t` pairs.
pub fn request_enroll(
    addr: impl ToSocketAddrs,
    serial: &str,
    t: u32,
) -> Result<EnrollReport, NetError> {
    let mut stream = operator_connect(addr)?;
    write_frame(
        &mut stream,
        &Frame::new(Kind::EnrollBegin, serial_payload(&t.to_be_bytes(), serial)),
    )?;
    let reply = read_frame(&mut stream)?;
    match reply.kind {
        Kind::EnrollEnd if reply.payload.len() == 16 => {
            let p = &reply.payload;
            Ok(EnrollReport {
                pairs: u32::from_be_bytes(p[0..4].try_into().unwrap()) as usize,
                payload_bytes: u32::from_be_bytes(p[4..8].try_into().unwrap()) as usize,
                elapsed: Duration::from_micros(u64::from_be_bytes(p[8..16].try_into().unwrap())),
            })
        }
        Kind::Error => Err(remote_error(&reply)),
        other => Err(NetError::Protocol(format!(
            "expected ENROLL_END, got {other:?}"
        ))),
    }
}

/// Asks a running TA to authenticate `serial` once.
pub fn request_authenticate(
    addr: impl ToSocketAddrs,
    serial: &str,
    inverse: bool,
) -> Result<(AuthResult, Duration), NetError> {
    let mut stream = operator_connect(addr)?;
    write_frame(
        &mut stream,
        &Frame::new(
            Kind::AuthBegin,
            serial_payload(&[u8::from(inverse)], serial),
        ),
    )?;
    let reply = read_frame(&mut stream)?;
    match reply.kind {
        Kind::AuthResult if reply.payload.len() == 9 => {
            let result = auth_from_code(reply.payload[0])?;
            let us = u64::from_be_bytes(reply.payload[1..9].try_into().unwrap());
            Ok((result, Duration::from_micros(us)))
        }
        Kind::Error => Err(remote_error(&reply)),
        other => Err(NetError::Protocol(format!(
            "expected AUTH_RESULT, got {other:?}"
        ))),
    }
}

/// What an agent did before its session ended.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentSummary {
    pub challenges_answered: u64,
    pub enrollments: u64,
    pub results: Vec<AuthResult>,
}

/// Connects to the TA and answers challenges with `instance` until the TA
/// closes the connection. `None` answers every challenge with an
/// `ERROR(not initialized)` frame.
pub fn run_agent(
    serial: &str,
    instance: Option<Arc<SucInstance>>,
    connect: impl ToSocketAddrs,
) -> Result<AgentSummary, NetError> {
    let mut stream = TcpStream::connect(connect)?;
    stream.set_nodelay(true)?;
    let hello = Hello::Device {
        serial: serial.to_string(),
        params: instance.as_ref().map(|s| *s.params()),
    };
    write_frame(&mut stream, &hello.to_frame())?;
    let ack = read_frame(&mut stream)?;
    if ack.kind != Kind::HelloAck {
        return Err(match ack.kind {
            Kind::Error => remote_error(&ack),
            other => NetError::Protocol(format!("expected HELLO_ACK, got {other:?}")),
        });
    }
    let mut summary = AgentSummary::default();
    loop {
        let frame = match read_frame(&mut stream) {
            Ok(f) => f,
            Err(NetError::Closed) => return Ok(summary),
            Err(NetError::Io(e))
                if matches!(
                    e.kind(),
                    io::ErrorKind::ConnectionReset | io::ErrorKind::ConnectionAborted
                ) =>
            {
                return Ok(summary)
            }
            Err(e) => return Err(e),
        };
        match frame.kind {
            Kind::Challenge => {
                let reply = match (&instance, frame.as_block()) {
                    (Some(suc), Ok(x)) => Frame::block(Kind::Response, suc.apply(x)),
                    (None, Ok(_)) => Frame::error(
                        ErrorCode::NotInitialized,
                        &format!("{serial}: no cipher loaded"),
                    ),
                    (_, Err(e)) => Frame::error(ErrorCode::Protocol, &e.to_string()),
                };
                write_frame(&mut stream, &reply)?;
                summary.challenges_answered += 1;
            }
            Kind::EnrollBegin => summary.enrollments += 1,
            Kind::EnrollEnd => {}
            Kind::AuthResult => {
                if let Some(r) = frame.payload.first().and_then(|&c| auth_from_code(c).ok()) {
                    summary.results.push(r);
                }
            }
            other => {
                let msg = format!("unexpected {other:?}");
                let _ = write_frame(&mut stream, &Frame::error(ErrorCode::Protocol, &msg));
                return Err(NetError::Protocol(msg));
            }
        }
    }
}

/// Runs [`run_agent`] on a background thread.
pub fn spawn_agent(
    serial: &str,
    instance: Option<Arc<SucInstance>>,
    connect: SocketAddr,
) -> JoinHandle<Result<AgentSummary, NetError>> {
    let serial = serial.to_string();
    thread::spawn(move || run_agent(&serial, instance, connect))
}
