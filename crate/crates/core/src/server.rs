//! TCP service and client.
//!
//! Every message is a frame: a 16-byte header (`"STUE"`, protocol version
//! `u16`, message type `u16`, payload length `u64`, all little-endian)
//! followed by the payload. A connection starts with `HELLO`; requests are
//! answered strictly in order with a frame whose type is the request type
//! with bit 15 set, or with an `ERROR` frame. Errors never close the
//! connection. After a frame with a bad magic the server skips input up to
//! the next magic; a frame whose payload does not arrive within the stall
//! timeout is dropped.

use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::acoustics::{simulate, Components, ContributionSet};
use crate::mesh::Vec3;
use crate::pointcloud::{read_point_cloud, to_bytes, PointCloudError};
use crate::preproc::CurvatureTable;
use crate::scene::{Pose, Scene, SceneSummary};
use crate::synthesis::{pair_impulse_response, SpectralGrid};

pub const MAGIC: [u8; 4] = *b"STUE";
pub const PROTOCOL_VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 16;
pub const DEFAULT_PORT: u16 = 7343;
pub const PORT_ENV: &str = "ECHOTRACE_PORT";
/// Bit set on the type of every successful response.
pub const RESPONSE_BIT: u16 = 0x8000;

pub mod msg {
    pub const HELLO: u16 = 0x0001;
    pub const PING: u16 = 0x0002;
    pub const GET_CONFIG: u16 = 0x0003;
    pub const SET_POSE: u16 = 0x0004;
    pub const SIMULATE: u16 = 0x0005;
    pub const SYNTHESIZE: u16 = 0x0006;
    pub const PONG: u16 = PING | super::RESPONSE_BIT;
    pub const ERROR: u16 = 0xFFFF;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum ErrorCode {
    BadMagic = 1,
    VersionMismatch = 2,
    UnknownEntity = 3,
    SimFailed = 4,
    UnknownType = 5,
    Malformed = 6,
    NoSession = 7,
    TooLarge = 8,
}

impl ErrorCode {
    pub fn from_u16(v: u16) -> Option<ErrorCode> {
        use ErrorCode::*;
        [BadMagic, VersionMismatch, UnknownEntity, SimFailed, UnknownType, Malformed, NoSession, TooLarge]
            .into_iter()
            .find(|c| *c as u16 == v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub version: u16,
    pub kind: u16,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: u16, payload: Vec<u8>) -> Self {
        Frame {
            version: PROTOCOL_VERSION,
            kind,
            payload,
        }
    }

    pub fn error(code: ErrorCode, message: &str) -> Self {
        let mut p = (code as u16).to_le_bytes().to_vec();
        p.extend_from_slice(message.as_bytes());
        Frame::new(msg::ERROR, p)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.kind.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// `(code, message)` of an `ERROR` frame.
    pub fn as_error(&self) -> Option<(u16, String)> {
        (self.kind == msg::ERROR && self.payload.len() >= 2).then(|| {
            (
                u16::from_le_bytes([self.payload[0], self.payload[1]]),
                String::from_utf8_lossy(&self.payload[2..]).into_owned(),
            )
        })
    }
}

/// Read one well-formed frame; used by clients, which trust the server.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Frame> {
    let mut h = [0u8; HEADER_BYTES];
    r.read_exact(&mut h)?;
    if h[..4] != MAGIC {
        return Err(io::Error::new(ErrorKind::InvalidData, "bad magic"));
    }
    let len = u64::from_le_bytes(h[8..16].try_into().unwrap());
    let mut payload = vec![0u8; usize::try_from(len).map_err(|_| io::Error::new(ErrorKind::InvalidData, "frame too large"))?];
    r.read_exact(&mut payload)?;
    Ok(Frame {
        version: u16::from_le_bytes([h[4], h[5]]),
        kind: u16::from_le_bytes([h[6], h[7]]),
        payload,
    })
}

/// `SET_POSE` payload: `u16` id length, UTF-8 id, position `3×f64`,
/// orientation `[w, x, y, z]` as `4×f64`.
pub fn encode_set_pose(id: &str, pose: &Pose) -> Vec<u8> {
    let mut p = (id.len() as u16).to_le_bytes().to_vec();
    p.extend_from_slice(id.as_bytes());
    for x in pose.position.iter().chain(pose.wxyz().iter()) {
        p.extend_from_slice(&x.to_le_bytes());
    }
    p
}

fn f64_at(p: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(p[at..at + 8].try_into().unwrap())
}

pub fn decode_set_pose(p: &[u8]) -> Result<(String, Pose), String> {
    if p.len() < 2 {
        return Err("SET_POSE payload too short".into());
    }
    let n = u16::from_le_bytes([p[0], p[1]]) as usize;
    if p.len() != 2 + n + 56 {
        return Err(format!("SET_POSE payload must be {} bytes, got {}", 2 + n + 56, p.len()));
    }
    let id = std::str::from_utf8(&p[2..2 + n]).map_err(|_| "entity id is not UTF-8".to_string())?;
    let at = 2 + n;
    let v: Vec<f64> = (0..7).map(|i| f64_at(p, at + 8 * i)).collect();
    let pose = Pose::new(Vec3::new(v[0], v[1], v[2]), [v[3], v[4], v[5], v[6]])?;
    Ok((id.to_string(), pose))
}

/// `SIMULATE` payload: component flags `u32`, seed `u64`.
pub fn encode_simulate(components: Components, seed: u64) -> Vec<u8> {
    let mut p = (components.bits() as u32).to_le_bytes().to_vec();
    p.extend_from_slice(&seed.to_le_bytes());
    p
}

/// `SYNTHESIZE` request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesizeRequest {
    pub source: u32,
    pub receiver: u32,
    pub components: Components,
    pub seed: u64,
    /// 0 selects four times the highest bin.
    pub fs: f64,
    /// 0 selects the smallest grid covering the scene.
    pub fft_len: u32,
}

impl SynthesizeRequest {
    /// `source u32, receiver u32, flags u32, seed u64, fs f64, fft_len u32`.
    pub fn encode(&self) -> Vec<u8> {
        let mut p = Vec::with_capacity(32);
        p.extend_from_slice(&self.source.to_le_bytes());
        p.extend_from_slice(&self.receiver.to_le_bytes());
        p.extend_from_slice(&(self.components.bits() as u32).to_le_bytes());
        p.extend_from_slice(&self.seed.to_le_bytes());
        p.extend_from_slice(&self.fs.to_le_bytes());
        p.extend_from_slice(&self.fft_len.to_le_bytes());
        p
    }

    pub fn decode(p: &[u8]) -> Result<Self, String> {
        if p.len() != 32 {
            return Err(format!("SYNTHESIZE payload must be 32 bytes, got {}", p.len()));
        }
        let u32_at = |at: usize| u32::from_le_bytes(p[at..at + 4].try_into().unwrap());
        if u32_at(8) > Components::ALL.bits() as u32 {
            return Err(format!("unknown component flags {:#x}", u32_at(8)));
        }
        Ok(SynthesizeRequest {
            source: u32_at(0),
            receiver: u32_at(4),
            components: Components(u32_at(8) as u16),
            seed: u64::from_le_bytes(p[12..20].try_into().unwrap()),
            fs: f64_at(p, 20),
            fft_len: u32_at(28),
        })
    }
}

/// Decoded `SYNTHESIZE` response: `source u32, receiver u32, fs f64,
/// count u64, count×f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizeResponse {
    pub source: u32,
    pub receiver: u32,
    pub fs: f64,
    pub samples: Vec<f64>,
}

impl SynthesizeResponse {
    pub fn encode(&self) -> Vec<u8> {
        let mut p = Vec::with_capacity(24 + 8 * self.samples.len());
        p.extend_from_slice(&self.source.to_le_bytes());
        p.extend_from_slice(&self.receiver.to_le_bytes());
        p.extend_from_slice(&self.fs.to_le_bytes());
        p.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        for x in &self.samples {
            p.extend_from_slice(&x.to_le_bytes());
        }
        p
    }

    pub fn decode(p: &[u8]) -> Result<Self, String> {
        if p.len() < 24 {
            return Err("SYNTHESIZE response too short".into());
        }
        let n = u64::from_le_bytes(p[16..24].try_into().unwrap()) as usize;
        if p.len() != 24 + 8 * n {
            return Err("SYNTHESIZE response length mismatch".into());
        }
        Ok(SynthesizeResponse {
            source: u32::from_le_bytes(p[0..4].try_into().unwrap()),
            receiver: u32::from_le_bytes(p[4..8].try_into().unwrap()),
            fs: f64_at(p, 8),
            samples: (0..n).map(|i| f64_at(p, 24 + 8 * i)).collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub address: SocketAddr,
    /// How long a started frame may wait for its remaining bytes.
    pub stall_timeout: Duration,
    pub max_payload: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            address: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
            stall_timeout: Duration::from_secs(2),
            max_payload: 64 << 20,
        }
    }
}

/// One scene revision with its curvature table.
#[derive(Debug)]
pub struct Snapshot {
    pub scene: Scene,
    pub table: Arc<CurvatureTable>,
}

/// Shared scene state: readers take the current snapshot, `SET_POSE`
/// replaces it under the write lock.
#[derive(Debug, Clone)]
pub struct SharedScene(Arc<RwLock<Arc<Snapshot>>>);

impl SharedScene {
    pub fn new(scene: Scene, table: CurvatureTable) -> Self {
        SharedScene(Arc::new(RwLock::new(Arc::new(Snapshot {
            scene,
            table: Arc::new(table),
        }))))
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.0.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn set_pose(&self, id: &str, pose: Pose) -> Result<u64, crate::scene::SceneError> {
        let mut guard = self.0.write().unwrap_or_else(|e| e.into_inner());
        let next = guard.scene.with_pose(id, pose)?;
        let revision = next.revision();
        *guard = Arc::new(Snapshot {
            scene: next,
            table: guard.table.clone(),
        });
        Ok(revision)
    }
}

enum Incoming {
    Frame(Frame),
    /// Protocol violation to report; reading continues afterwards.
    Fault(ErrorCode, String),
    Closed,
}

struct Connection<'a> {
    reader: BufReader<TcpStream>,
    config: &'a ServerConfig,
    /// Bytes already consumed that must be re-examined for a magic.
    pending: Vec<u8>,
}

impl Connection<'_> {
    fn byte(&mut self) -> io::Result<Option<u8>> {
        if !self.pending.is_empty() {
            return Ok(Some(self.pending.remove(0)));
        }
        let mut b = [0u8; 1];
        match self.reader.read(&mut b) {
            Ok(0) => Ok(None),
            Ok(_) => Ok(Some(b[0])),
            Err(e) => Err(e),
        }
    }

    fn fill(&mut self, buf: &mut [u8]) -> io::Result<bool> {
        for slot in buf.iter_mut() {
            match self.byte()? {
                Some(b) => *slot = b,
                None => return Ok(false),
            }
        }
        Ok(true)
    }

    fn set_stall(&self, on: bool) -> io::Result<()> {
        let t = on.then_some(self.config.stall_timeout);
        self.reader.get_ref().set_read_timeout(t)
    }

    /// Skip input until `"STUE"` has just been read.
    fn resync(&mut self) -> io::Result<bool> {
        let mut window = [0u8; 4];
        let mut seen = 0usize;
        loop {
            let Some(b) = self.byte()? else { return Ok(false) };
            window.rotate_left(1);
            window[3] = b;
            seen += 1;
            if seen >= 4 && window == MAGIC {
                return Ok(true);
            }
        }
    }

    fn next(&mut self, after_bad_magic: bool) -> io::Result<Incoming> {
        self.set_stall(false)?;
        let mut header = [0u8; HEADER_BYTES];
        if after_bad_magic {
            if !self.resync()? {
                return Ok(Incoming::Closed);
            }
            header[..4].copy_from_slice(&MAGIC);
            self.set_stall(true)?;
        } else {
            let Some(first) = self.byte()? else { return Ok(Incoming::Closed) };
            header[0] = first;
            self.set_stall(true)?;
            if !self.fill(&mut header[1..4])? {
                return Ok(Incoming::Closed);
            }
            if header[..4] != MAGIC {
                // the bad bytes may hide the start of the next frame
                self.pending.splice(0..0, header[1..4].iter().copied());
                return Ok(Incoming::Fault(ErrorCode::BadMagic, "bad magic; skipping to next frame".into()));
            }
        }
        if !self.fill(&mut header[4..])? {
            return Ok(Incoming::Closed);
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        let kind = u16::from_le_bytes([header[6], header[7]]);
        let len = u64::from_le_bytes(header[8..16].try_into().unwrap());
        if len > self.config.max_payload {
            return Ok(Incoming::Fault(
                ErrorCode::TooLarge,
                format!("payload of {len} bytes exceeds limit of {}", self.config.max_payload),
            ));
        }
        let mut payload = vec![0u8; len as usize];
        if !self.fill(&mut payload)? {
            return Ok(Incoming::Closed);
        }
        Ok(Incoming::Frame(Frame { version, kind, payload }))
    }
}

fn handle_request(state: &SharedScene, frame: &Frame) -> Frame {
    match frame.kind {
        msg::PING => Frame::new(msg::PONG, Vec::new()),
        msg::HELLO => Frame::new(
            msg::HELLO | RESPONSE_BIT,
            format!("echotrace {}", env!("CARGO_PKG_VERSION")).into_bytes(),
        ),
        msg::GET_CONFIG => {
            let summary: SceneSummary = state.snapshot().scene.summary();
            match serde_json::to_vec(&summary) {
                Ok(json) => Frame::new(msg::GET_CONFIG | RESPONSE_BIT, json),
                Err(e) => Frame::error(ErrorCode::SimFailed, &e.to_string()),
            }
        }
        msg::SET_POSE => match decode_set_pose(&frame.payload) {
            Err(e) => Frame::error(ErrorCode::Malformed, &e),
            Ok((id, pose)) => match state.set_pose(&id, pose) {
                Ok(rev) => Frame::new(msg::SET_POSE | RESPONSE_BIT, rev.to_le_bytes().to_vec()),
                Err(e @ crate::scene::SceneError::UnknownEntity(_)) => Frame::error(ErrorCode::UnknownEntity, &e.to_string()),
                Err(e) => Frame::error(ErrorCode::Malformed, &e.to_string()),
            },
        },
        msg::SIMULATE => {
            if frame.payload.len() != 12 {
                return Frame::error(ErrorCode::Malformed, "SIMULATE payload must be 12 bytes");
            }
            let flags = u32::from_le_bytes(frame.payload[0..4].try_into().unwrap());
            let seed = u64::from_le_bytes(frame.payload[4..12].try_into().unwrap());
            if flags > Components::ALL.bits() as u32 {
                return Frame::error(ErrorCode::Malformed, &format!("unknown component flags {flags:#x}"));
            }
            let snap = state.snapshot();
            match simulate(&snap.scene, &snap.table, Components(flags as u16), seed) {
                Ok(set) => Frame::new(msg::SIMULATE | RESPONSE_BIT, to_bytes(&set)),
                Err(e) => Frame::error(ErrorCode::SimFailed, &e.to_string()),
            }
        }
        msg::SYNTHESIZE => {
            let req = match SynthesizeRequest::decode(&frame.payload) {
                Ok(r) => r,
                Err(e) => return Frame::error(ErrorCode::Malformed, &e),
            };
            let snap = state.snapshot();
            match synthesize(&snap, &req) {
                Ok(resp) => Frame::new(msg::SYNTHESIZE | RESPONSE_BIT, resp.encode()),
                Err((code, text)) => Frame::error(code, &text),
            }
        }
        other => Frame::error(ErrorCode::UnknownType, &format!("unknown message type {other:#06x}")),
    }
}

fn synthesize(snap: &Snapshot, req: &SynthesizeRequest) -> Result<SynthesizeResponse, (ErrorCode, String)> {
    let scene = &snap.scene;
    if req.source as usize >= scene.emitters().len() || req.receiver as usize >= scene.receivers().len() {
        return Err((ErrorCode::UnknownEntity, format!("no pair ({}, {})", req.source, req.receiver)));
    }
    let fail = |e: &dyn std::fmt::Display| (ErrorCode::SimFailed, e.to_string());
    let set = simulate(scene, &snap.table, req.components, req.seed).map_err(|e| fail(&e))?;
    let fs = if req.fs > 0.0 { req.fs } else { SpectralGrid::default_rate(scene.frequencies()) };
    let grid = if req.fft_len == 0 {
        SpectralGrid::for_scene(scene, &set, fs, 0)
    } else {
        SpectralGrid::new(fs, req.fft_len as usize)
    }
    .map_err(|e| fail(&e))?;
    let ir = pair_impulse_response(&set, req.source, req.receiver, grid).map_err(|e| fail(&e))?;
    Ok(SynthesizeResponse {
        source: req.source,
        receiver: req.receiver,
        fs: ir.fs,
        samples: ir.samples,
    })
}

fn serve_connection(stream: TcpStream, state: SharedScene, config: ServerConfig) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = BufWriter::new(stream.try_clone()?);
    let mut conn = Connection {
        reader: BufReader::new(stream),
        config: &config,
        pending: Vec::new(),
    };
    let mut session = false;
    let mut bad_magic = false;
    loop {
        let incoming = match conn.next(bad_magic) {
            Ok(i) => i,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                conn.pending.clear();
                Incoming::Fault(ErrorCode::Malformed, "frame stalled; discarded".into())
            }
            Err(e) => return Err(e),
        };
        bad_magic = false;
        let reply = match incoming {
            Incoming::Closed => return Ok(()),
            Incoming::Fault(code, text) => {
                bad_magic = code == ErrorCode::BadMagic || code == ErrorCode::TooLarge;
                Frame::error(code, &text)
            }
            Incoming::Frame(f) if f.version != PROTOCOL_VERSION => Frame::error(
                ErrorCode::VersionMismatch,
                &format!("server speaks version {PROTOCOL_VERSION}, frame has {}", f.version),
            ),
            Incoming::Frame(f) if !session && f.kind != msg::HELLO => {
                Frame::error(ErrorCode::NoSession, "send HELLO first")
            }
            Incoming::Frame(f) => {
                if f.kind == msg::HELLO {
                    session = true;
                }
                handle_request(&state, &f)
            }
        };
        writer.write_all(&reply.encode())?;
        writer.flush()?;
    }
}

pub struct Server {
    listener: TcpListener,
    state: SharedScene,
    config: ServerConfig,
}

/// A server running on a background thread.
pub struct ServerHandle {
    pub address: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.address);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

impl Server {
    pub fn bind(state: SharedScene, config: ServerConfig) -> io::Result<Server> {
        let listener = TcpListener::bind(config.address)?;
        Ok(Server { listener, state, config })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn state(&self) -> &SharedScene {
        &self.state
    }

    fn accept_loop(self, stop: &AtomicBool) {
        for stream in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let state = self.state.clone();
            let config = self.config.clone();
            thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = serve_connection(stream, state, config) {
                    log::debug!("connection {peer:?} ended: {e}");
                }
            });
        }
    }

    /// Accept connections on the calling thread until the process exits.
    pub fn run(self) {
        self.accept_loop(&AtomicBool::new(false));
    }

    pub fn spawn(self) -> io::Result<ServerHandle> {
        let address = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = thread::spawn(move || self.accept_loop(&flag));
        Ok(ServerHandle {
            address,
            stop,
            thread: Some(thread),
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Io(#[from] io::Error),
    #[error("server error {code}: {message}")]
    Server { code: u16, message: String },
    #[error("unexpected response type {0:#06x}")]
    Unexpected(u16),
    #[error("bad response: {0}")]
    Decode(String),
    #[error("point cloud: {0}")]
    PointCloud(#[from] PointCloudError),
}

/// Blocking client.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Client {
    /// Connect and exchange `HELLO`.
    pub fn connect(address: impl ToSocketAddrs) -> Result<Client, ClientError> {
        let stream = TcpStream::connect(address)?;
        stream.set_nodelay(true)?;
        let mut c = Client {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        };
        c.request(msg::HELLO, Vec::new())?;
        Ok(c)
    }

    pub fn send_raw(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.writer.write_all(bytes)?;
        self.writer.flush()
    }

    pub fn read_frame(&mut self) -> io::Result<Frame> {
        read_frame(&mut self.reader)
    }

    pub fn set_read_timeout(&self, t: Option<Duration>) -> io::Result<()> {
        self.reader.get_ref().set_read_timeout(t)
    }

    /// Send one request and return the payload of its response.
    pub fn request(&mut self, kind: u16, payload: Vec<u8>) -> Result<Vec<u8>, ClientError> {
        self.send_raw(&Frame::new(kind, payload).encode())?;
        let reply = self.read_frame()?;
        if let Some((code, message)) = reply.as_error() {
            return Err(ClientError::Server { code, message });
        }
        if reply.kind != kind | RESPONSE_BIT {
            return Err(ClientError::Unexpected(reply.kind));
        }
        Ok(reply.payload)
    }

    pub fn ping(&mut self) -> Result<(), ClientError> {
        self.request(msg::PING, Vec::new()).map(|_| ())
    }

    pub fn get_config(&mut self) -> Result<SceneSummary, ClientError> {
        let json = self.request(msg::GET_CONFIG, Vec::new())?;
        serde_json::from_slice(&json).map_err(|e| ClientError::Decode(e.to_string()))
    }

    /// Move an entity; returns the new scene revision.
    pub fn set_pose(&mut self, id: &str, pose: &Pose) -> Result<u64, ClientError> {
        let p = self.request(msg::SET_POSE, encode_set_pose(id, pose))?;
        let b: [u8; 8] = p.as_slice().try_into().map_err(|_| ClientError::Decode("revision".into()))?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn simulate_raw(&mut self, components: Components, seed: u64) -> Result<Vec<u8>, ClientError> {
        self.request(msg::SIMULATE, encode_simulate(components, seed))
    }

    pub fn simulate(&mut self, components: Components, seed: u64) -> Result<ContributionSet, ClientError> {
        let bytes = self.simulate_raw(components, seed)?;
        Ok(read_point_cloud(&bytes[..])?)
    }

    pub fn synthesize(&mut self, req: &SynthesizeRequest) -> Result<SynthesizeResponse, ClientError> {
        let p = self.request(msg::SYNTHESIZE, req.encode())?;
        SynthesizeResponse::decode(&p).map_err(ClientError::Decode)
    }
}

/// Port from `ECHOTRACE_PORT`, else the default.
pub fn port_from_env() -> u16 {
    std::env::var(PORT_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_PORT)
}
