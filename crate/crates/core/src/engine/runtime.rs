//! Device/edge co-inference over TCP.
//!
//! Each side runs three threads: the compute loop (the caller's thread), a
//! sender draining a bounded outbound queue into the socket, and a receiver
//! filling a bounded inbound queue from it. In pipelined mode the device
//! starts frame `t + 1` as soon as frame `t`'s boundary tensors are queued.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::exec::{run_range, Emulation, ExecState, InputFrame};
use super::kernels::KernelError;
use super::tensor::Tensor;
use super::wire::{read_message, write_message, MsgType, WireError, WireMessage};
use crate::design_space::{
    communicate_ships_edges, derive_mapping, infer_shapes, Architecture, InvalidArchitecture, OpKind, Placement,
    Segment,
};

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Invalid(#[from] InvalidArchitecture),
    #[error("handshake aborted: {0}")]
    Handshake(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("peer closed the connection")]
    PeerClosed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// Start the next frame without waiting for the previous result.
    Pipelined,
    /// Wait for each frame's result before starting the next one.
    Sequential,
}

/// Paces writes to `bytes_per_sec`. Each chunk is released once its
/// serialization time at the configured rate has elapsed.
#[derive(Debug)]
pub struct TokenBucket {
    bytes_per_sec: f64,
    next_free: Instant,
}

impl TokenBucket {
    /// Lag tolerated before the schedule resets to "now"; absorbs sleep overshoot.
    const CATCH_UP: Duration = Duration::from_millis(2);

    pub fn from_mbps(mbps: f64) -> TokenBucket {
        assert!(mbps > 0.0);
        TokenBucket { bytes_per_sec: mbps * 1e6 / 8.0, next_free: Instant::now() }
    }

    /// Blocks until `n` more bytes fit in the schedule.
    pub fn take(&mut self, n: usize) {
        let now = Instant::now();
        let start = if now > self.next_free + Self::CATCH_UP { now } else { self.next_free.max(now) };
        self.next_free = start + Duration::from_secs_f64(n as f64 / self.bytes_per_sec);
        let now = Instant::now();
        if self.next_free > now {
            thread::sleep(self.next_free - now);
        }
    }
}

pub struct ThrottledWriter<W: Write> {
    inner: W,
    bucket: Option<TokenBucket>,
}

impl<W: Write> ThrottledWriter<W> {
    const CHUNK: usize = 1024;

    pub fn new(inner: W, throttle_mbps: Option<f64>) -> Self {
        ThrottledWriter { inner, bucket: throttle_mbps.map(TokenBucket::from_mbps) }
    }
}

impl<W: Write> Write for ThrottledWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match &mut self.bucket {
            None => self.inner.write(buf),
            Some(bucket) => {
                let n = buf.len().min(Self::CHUNK);
                bucket.take(n);
                self.inner.write_all(&buf[..n])?;
                Ok(n)
            }
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

#[derive(Debug, Default)]
struct Counters {
    bytes_sent: AtomicU64,
    bytes_received: AtomicU64,
    raw_payload_sent: AtomicU64,
    wire_payload_sent: AtomicU64,
    tensor_messages_sent: AtomicU64,
}

/// Bidirectional message link with its two I/O threads.
struct Link {
    outbound: Option<SyncSender<(WireMessage, usize)>>,
    inbound: Receiver<Result<WireMessage, WireError>>,
    sender: Option<JoinHandle<io::Result<()>>>,
    receiver: Option<JoinHandle<()>>,
    counters: Arc<Counters>,
    stream: TcpStream,
}

impl Link {
    fn spawn(stream: TcpStream, throttle_mbps: Option<f64>, capacity: usize) -> io::Result<Link> {
        let counters = Arc::new(Counters::default());
        let (out_tx, out_rx) = mpsc::sync_channel::<(WireMessage, usize)>(capacity);
        let (in_tx, in_rx) = mpsc::sync_channel(capacity);

        let write_half = stream.try_clone()?;
        let c = Arc::clone(&counters);
        let sender = thread::spawn(move || -> io::Result<()> {
            let mut w = ThrottledWriter::new(write_half, throttle_mbps);
            for (msg, raw_len) in out_rx {
                write_message(&mut w, &msg)?;
                c.bytes_sent.fetch_add(msg.encoded_len() as u64, Ordering::Relaxed);
                if matches!(msg.msg_type, MsgType::Tensors | MsgType::Result) {
                    c.raw_payload_sent.fetch_add(raw_len as u64, Ordering::Relaxed);
                    c.wire_payload_sent.fetch_add(msg.payload.len() as u64, Ordering::Relaxed);
                    if msg.msg_type == MsgType::Tensors {
                        c.tensor_messages_sent.fetch_add(1, Ordering::Relaxed);
                    }
                }
                if msg.msg_type == MsgType::Shutdown {
                    break;
                }
            }
            w.flush()?;
            w.inner.shutdown(Shutdown::Write).or_else(ignore_not_connected)
        });

        let mut read_half = stream.try_clone()?;
        let c = Arc::clone(&counters);
        let receiver = thread::spawn(move || loop {
            match read_message(&mut read_half) {
                Ok(Some(msg)) => {
                    c.bytes_received.fetch_add(msg.encoded_len() as u64, Ordering::Relaxed);
                    if in_tx.send(Ok(msg)).is_err() {
                        break;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    // malformed frame: drop the connection
                    let _ = read_half.shutdown(Shutdown::Both);
                    let _ = in_tx.send(Err(e));
                    break;
                }
            }
        });

        Ok(Link {
            outbound: Some(out_tx),
            inbound: in_rx,
            sender: Some(sender),
            receiver: Some(receiver),
            counters,
            stream,
        })
    }

    /// Queues a message; blocks while the outbound queue is full.
    fn send(&self, msg: WireMessage, raw_len: usize) -> Result<(), EngineError> {
        self.outbound.as_ref().expect("link open").send((msg, raw_len)).map_err(|_| EngineError::PeerClosed)
    }

    fn send_tensors(&self, ty: MsgType, frame: u64, tensors: &[&Tensor], compress: bool) -> Result<(), EngineError> {
        let raw = super::wire::encode_tensors(tensors);
        let raw_len = raw.len();
        self.send(WireMessage::from_tensor_payload(ty, frame, raw, compress), raw_len)
    }

    /// Sends SHUTDOWN, waits for the sender to drain, then tears down.
    fn close(mut self) -> Result<Arc<Counters>, EngineError> {
        let _ = self.send(WireMessage::control(MsgType::Shutdown, 0), 0);
        self.outbound.take();
        let sent = self.sender.take().expect("sender").join().expect("sender thread panicked");
        let _ = self.stream.shutdown(Shutdown::Both);
        self.receiver.take().expect("receiver").join().expect("receiver thread panicked");
        sent.or_else(ignore_broken_pipe)?;
        Ok(self.counters)
    }
}

fn ignore_not_connected(e: io::Error) -> io::Result<()> {
    if e.kind() == io::ErrorKind::NotConnected {
        Ok(())
    } else {
        Err(e)
    }
}

fn ignore_broken_pipe(e: io::Error) -> io::Result<()> {
    match e.kind() {
        io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset | io::ErrorKind::NotConnected => Ok(()),
        _ => Err(e),
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct ConfigPayload {
    arch_digest: String,
    seed: u64,
}

/// Static split plan shared by both ends.
struct Plan {
    segments: Vec<Segment>,
    /// Whether the transfer closing segment `i` carries the edge set.
    ships_edges: Vec<bool>,
}

impl Plan {
    fn new(arch: &Architecture) -> Result<Plan, EngineError> {
        let segments = derive_mapping(arch)?.segments;
        let trace = infer_shapes(arch);
        let ships_edges = segments
            .iter()
            .map(|s| ends_in_comm(arch, s) && communicate_ships_edges(arch, s.end - 1, &trace))
            .collect();
        Ok(Plan { segments, ships_edges })
    }

    fn is_last(&self, seg: usize) -> bool {
        seg + 1 == self.segments.len()
    }
}

fn ends_in_comm(arch: &Architecture, s: &Segment) -> bool {
    s.end > s.start && arch.layers[s.end - 1].op() == OpKind::Communicate
}

fn boundary_tensors(state: &ExecState, ship_edges: bool) -> Result<Vec<&Tensor>, EngineError> {
    let mut out = vec![&state.features];
    if ship_edges {
        out.push(state.edges.as_ref().ok_or_else(|| EngineError::Protocol("edge set missing at transfer".into()))?);
    }
    Ok(out)
}

fn adopt(state_edges: Option<Tensor>, mut tensors: Vec<Tensor>) -> Result<ExecState, EngineError> {
    if tensors.is_empty() || tensors.len() > 2 {
        return Err(EngineError::Protocol(format!("expected 1 or 2 tensors, got {}", tensors.len())));
    }
    let edges = if tensors.len() == 2 { tensors.pop() } else { state_edges };
    let features = tensors.pop().expect("one tensor");
    Ok(ExecState { features, edges })
}

// ---------------------------------------------------------------- edge side

#[derive(Debug, Clone)]
pub struct EdgeOptions {
    pub seed: u64,
    pub compress: bool,
    /// Extra time spent per edge segment, on top of the kernels.
    pub injected_delay: Duration,
    pub emulation: Emulation,
    pub queue_capacity: usize,
}

impl Default for EdgeOptions {
    fn default() -> Self {
        EdgeOptions {
            seed: 0,
            compress: true,
            injected_delay: Duration::ZERO,
            emulation: Emulation::none(),
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeSessionStats {
    pub segments_run: u64,
    pub results_sent: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

/// Accepts one device connection on `listener` and serves it to completion.
pub fn serve_edge(
    listener: &TcpListener,
    arch: &Architecture,
    opts: &EdgeOptions,
) -> Result<EdgeSessionStats, EngineError> {
    let (stream, _) = listener.accept()?;
    serve_connection(stream, arch, opts)
}

pub fn serve_connection(
    mut stream: TcpStream,
    arch: &Architecture,
    opts: &EdgeOptions,
) -> Result<EdgeSessionStats, EngineError> {
    stream.set_nodelay(true)?;
    let plan = Plan::new(arch)?;

    let hello = read_message(&mut stream)?.ok_or(EngineError::PeerClosed)?;
    if hello.msg_type != MsgType::Config {
        return Err(EngineError::Protocol(format!("expected CONFIG, got {:?}", hello.msg_type)));
    }
    let theirs: ConfigPayload = serde_json::from_slice(&hello.raw_payload()?)
        .map_err(|e| EngineError::Protocol(format!("bad CONFIG payload: {e}")))?;
    let ours = ConfigPayload { arch_digest: arch.digest(), seed: opts.seed };
    if theirs != ours {
        let reason = format!(
            "config mismatch: device {}/seed {}, edge {}/seed {}",
            theirs.arch_digest, theirs.seed, ours.arch_digest, ours.seed
        );
        write_message(&mut stream, &WireMessage::new(MsgType::Shutdown, 0, reason.clone().into_bytes()))?;
        let _ = stream.shutdown(Shutdown::Both);
        return Err(EngineError::Handshake(reason));
    }
    write_message(&mut stream, &WireMessage::control(MsgType::Ack, 0))?;

    let link = Link::spawn(stream, None, opts.queue_capacity)?;
    let mut stats = EdgeSessionStats::default();
    // frame -> (next segment this side runs, retained edge set)
    let mut pending: BTreeMap<u64, (usize, Option<Tensor>)> = BTreeMap::new();
    let outcome = loop {
        let msg = match link.inbound.recv() {
            Ok(Ok(msg)) => msg,
            Ok(Err(e)) => break Err(e.into()),
            Err(_) => break Ok(()),
        };
        match msg.msg_type {
            MsgType::Shutdown => break Ok(()),
            MsgType::Tensors => {
                let frame = msg.frame_id;
                let (seg, edges) = pending.remove(&frame).unwrap_or((1, None));
                if seg >= plan.segments.len() || plan.segments[seg].placement != Placement::Edge {
                    break Err(EngineError::Protocol(format!("unexpected tensors for frame {frame}")));
                }
                let mut state = match msg.tensors().map_err(EngineError::from).and_then(|t| adopt(edges, t)) {
                    Ok(s) => s,
                    Err(e) => break Err(e),
                };
                if !opts.injected_delay.is_zero() {
                    thread::sleep(opts.injected_delay);
                }
                let s = &plan.segments[seg];
                if let Err(e) = run_range(arch, s.start..s.end, &mut state, opts.seed, &opts.emulation) {
                    break Err(e.into());
                }
                stats.segments_run += 1;
                let sent = if plan.is_last(seg) {
                    stats.results_sent += 1;
                    link.send_tensors(MsgType::Result, frame, &[&state.features], opts.compress)
                } else {
                    let sent = boundary_tensors(&state, plan.ships_edges[seg])
                        .and_then(|ts| link.send_tensors(MsgType::Tensors, frame, &ts, opts.compress));
                    pending.insert(frame, (seg + 2, state.edges));
                    sent
                };
                if let Err(e) = sent {
                    break Err(e);
                }
            }
            other => break Err(EngineError::Protocol(format!("unexpected {other:?} message"))),
        }
    };
    let counters = link.close()?;
    outcome?;
    stats.bytes_sent = counters.bytes_sent.load(Ordering::Relaxed);
    stats.bytes_received = counters.bytes_received.load(Ordering::Relaxed);
    Ok(stats)
}

// -------------------------------------------------------------- device side

#[derive(Debug, Clone)]
pub struct DeviceOptions {
    pub seed: u64,
    pub mode: PipelineMode,
    /// Upload bandwidth cap applied to the device's socket writes.
    pub throttle_mbps: Option<f64>,
    pub timeout: Duration,
    pub compress: bool,
    pub emulation: Emulation,
    pub queue_capacity: usize,
}

impl Default for DeviceOptions {
    fn default() -> Self {
        DeviceOptions {
            seed: 0,
            mode: PipelineMode::Pipelined,
            throttle_mbps: None,
            timeout: DEFAULT_TIMEOUT,
            compress: true,
            emulation: Emulation::none(),
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub mode: PipelineMode,
    pub frames: usize,
    pub completed: usize,
    pub failed_frames: Vec<u64>,
    /// End-to-end latency per frame; `None` for failed frames.
    pub frame_latency_ms: Vec<Option<f64>>,
    pub mean_latency_ms: f64,
    /// Completions per second between the first and last completed frame.
    pub throughput_fps: f64,
    pub wall_time_ms: f64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Wire payload over raw payload for tensor messages the device sent.
    pub compressed_ratio: f64,
    pub tensor_messages_sent: u64,
    /// Frame ids in completion order.
    pub completion_order: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct DeviceRun {
    pub outputs: Vec<Option<Tensor>>,
    pub stats: FrameStats,
}

struct InFlight {
    /// Index of the segment currently running on the edge.
    seg: usize,
    edges: Option<Tensor>,
    deadline: Instant,
}

/// Connects to the edge, verifies the configuration and streams `frames`
/// through the split architecture.
pub fn run_device(
    edge: impl ToSocketAddrs,
    arch: &Architecture,
    frames: &[InputFrame],
    opts: &DeviceOptions,
) -> Result<DeviceRun, EngineError> {
    let plan = Plan::new(arch)?;
    let mut stream = TcpStream::connect(edge)?;
    stream.set_nodelay(true)?;

    let config =
        serde_json::to_vec(&ConfigPayload { arch_digest: arch.digest(), seed: opts.seed }).expect("config serializes");
    write_message(&mut stream, &WireMessage::new(MsgType::Config, 0, config))?;
    stream.set_read_timeout(Some(opts.timeout))?;
    let reply = read_message(&mut stream)?.ok_or(EngineError::PeerClosed)?;
    match reply.msg_type {
        MsgType::Ack => {}
        MsgType::Shutdown => return Err(EngineError::Handshake(String::from_utf8_lossy(&reply.payload).into_owned())),
        other => return Err(EngineError::Protocol(format!("expected ACK, got {other:?}"))),
    }
    stream.set_read_timeout(None)?;

    let link = Link::spawn(stream, opts.throttle_mbps, opts.queue_capacity)?;
    // keep inbound traffic within the receive queue so the two sides can
    // never block on each other
    let window = match opts.mode {
        PipelineMode::Pipelined => (opts.queue_capacity / 2).max(1),
        PipelineMode::Sequential => 1,
    };

    let n = frames.len();
    let mut progress = Progress::new(n);
    let mut inflight: BTreeMap<u64, InFlight> = BTreeMap::new();
    let mut next = 0usize;
    let t0 = Instant::now();

    // Runs device segments starting at `seg` until the frame either leaves
    // for the edge or finishes.
    let advance = |frame: u64,
                   seg: usize,
                   mut state: ExecState,
                   inflight: &mut BTreeMap<u64, InFlight>|
     -> Result<Option<Tensor>, EngineError> {
        let s = &plan.segments[seg];
        debug_assert_eq!(s.placement, Placement::Device);
        run_range(arch, s.start..s.end, &mut state, opts.seed, &opts.emulation)?;
        if plan.is_last(seg) {
            return Ok(Some(state.features));
        }
        let ts = boundary_tensors(&state, plan.ships_edges[seg])?;
        link.send_tensors(MsgType::Tensors, frame, &ts, opts.compress)?;
        let deadline = Instant::now() + opts.timeout;
        inflight.insert(frame, InFlight { seg: seg + 1, edges: state.edges, deadline });
        Ok(None)
    };

    let outcome: Result<(), EngineError> = (|| {
        while progress.settled() < n {
            if next < n && inflight.len() < window {
                let frame = next as u64;
                progress.started[next] = Some(Instant::now());
                let state = ExecState::from(frames[next].clone());
                next += 1;
                if let Some(out) = advance(frame, 0, state, &mut inflight)? {
                    progress.finish(frame, out);
                }
                // let returning traffic in before starting more work
                while let Ok(msg) = link.inbound.try_recv() {
                    handle(msg?, &plan, &mut inflight, &advance, &mut progress)?;
                }
                continue;
            }
            let wait = inflight
                .values()
                .map(|f| f.deadline)
                .min()
                .map(|d| d.saturating_duration_since(Instant::now()))
                .unwrap_or(opts.timeout);
            match link.inbound.recv_timeout(wait) {
                Ok(msg) => handle(msg?, &plan, &mut inflight, &advance, &mut progress)?,
                Err(RecvTimeoutError::Timeout) => {
                    let now = Instant::now();
                    let expired: Vec<u64> =
                        inflight.iter().filter(|(_, f)| f.deadline <= now).map(|(id, _)| *id).collect();
                    for id in expired {
                        inflight.remove(&id);
                        progress.failed.push(id);
                    }
                }
                Err(RecvTimeoutError::Disconnected) => return Err(EngineError::PeerClosed),
            }
        }
        Ok(())
    })();

    let wall = t0.elapsed();
    let counters = link.close()?;
    outcome?;

    let Progress { outputs, latency, completed_at, completion_order, mut failed, .. } = progress;
    let ok: Vec<f64> = latency.iter().flatten().copied().collect();
    let mean_latency_ms = if ok.is_empty() { 0.0 } else { ok.iter().sum::<f64>() / ok.len() as f64 };
    let throughput_fps = match completed_at.len() {
        0 => 0.0,
        1 => 1.0 / wall.as_secs_f64(),
        c => (c - 1) as f64 / (completed_at[c - 1] - completed_at[0]).as_secs_f64().max(1e-9),
    };
    let raw = counters.raw_payload_sent.load(Ordering::Relaxed);
    let wire = counters.wire_payload_sent.load(Ordering::Relaxed);
    failed.sort_unstable();
    let stats = FrameStats {
        mode: opts.mode,
        frames: n,
        completed: completion_order.len(),
        failed_frames: failed,
        frame_latency_ms: latency,
        mean_latency_ms,
        throughput_fps,
        wall_time_ms: wall.as_secs_f64() * 1e3,
        bytes_sent: counters.bytes_sent.load(Ordering::Relaxed),
        bytes_received: counters.bytes_received.load(Ordering::Relaxed),
        compressed_ratio: if raw == 0 { 1.0 } else { wire as f64 / raw as f64 },
        tensor_messages_sent: counters.tensor_messages_sent.load(Ordering::Relaxed),
        completion_order,
    };
    Ok(DeviceRun { outputs, stats })
}

struct Progress {
    outputs: Vec<Option<Tensor>>,
    latency: Vec<Option<f64>>,
    started: Vec<Option<Instant>>,
    completed_at: Vec<Instant>,
    completion_order: Vec<u64>,
    failed: Vec<u64>,
}

impl Progress {
    fn new(n: usize) -> Progress {
        Progress {
            outputs: vec![None; n],
            latency: vec![None; n],
            started: vec![None; n],
            completed_at: Vec::with_capacity(n),
            completion_order: Vec::with_capacity(n),
            failed: Vec::new(),
        }
    }

    fn settled(&self) -> usize {
        self.completion_order.len() + self.failed.len()
    }

    fn finish(&mut self, frame: u64, out: Tensor) {
        let i = frame as usize;
        let now = Instant::now();
        self.latency[i] = self.started[i].map(|s| (now - s).as_secs_f64() * 1e3);
        self.outputs[i] = Some(out);
        self.completed_at.push(now);
        self.completion_order.push(frame);
    }
}

type Advance<'a> =
    dyn Fn(u64, usize, ExecState, &mut BTreeMap<u64, InFlight>) -> Result<Option<Tensor>, EngineError> + 'a;

fn handle(
    msg: WireMessage,
    plan: &Plan,
    inflight: &mut BTreeMap<u64, InFlight>,
    advance: &Advance<'_>,
    progress: &mut Progress,
) -> Result<(), EngineError> {
    let frame = msg.frame_id;
    match msg.msg_type {
        MsgType::Tensors | MsgType::Result => {
            // late traffic for a frame that already timed out is dropped
            let Some(f) = inflight.remove(&frame) else {
                return Ok(());
            };
            let tensors = msg.tensors()?;
            if msg.msg_type == MsgType::Result {
                if !plan.is_last(f.seg) {
                    return Err(EngineError::Protocol(format!("early RESULT for frame {frame}")));
                }
                let out = tensors.into_iter().next().ok_or_else(|| EngineError::Protocol("empty RESULT".into()))?;
                progress.finish(frame, out);
            } else {
                let state = adopt(f.edges, tensors)?;
                if let Some(out) = advance(frame, f.seg + 1, state, inflight)? {
                    progress.finish(frame, out);
                }
            }
            Ok(())
        }
        MsgType::Shutdown => {
            Err(EngineError::Protocol(format!("edge shut down: {}", String::from_utf8_lossy(&msg.payload))))
        }
        other => Err(EngineError::Protocol(format!("unexpected {other:?} message"))),
    }
}

/// Binds an ephemeral loopback port and serves one session on a background
/// thread. Returns the address to connect to.
pub fn spawn_loopback_edge(
    arch: Architecture,
    opts: EdgeOptions,
) -> io::Result<(std::net::SocketAddr, JoinHandle<Result<EdgeSessionStats, EngineError>>)> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let handle = thread::spawn(move || serve_edge(&listener, &arch, &opts));
    Ok((addr, handle))
}
