//! Off-board inference over TCP: frames in, wheel commands out.
//!
//! Each connection keeps its own frame stack; the network is shared
//! read-only between connection threads. Replies are written in request
//! order. A malformed request gets one error reply and the connection closes.

pub mod wire;

use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, RawImage};
use crate::dqn::{argmax, batch_tensor};
use crate::nn::{NnError, PolicyNet};
use crate::preproc::{preprocess, FrameStack, PreprocConfig, PreprocError};
use crate::sim::ACTION_WHEELS;

pub use wire::{CommandMessage, ErrorMessage, FrameMessage, Reply, WireError};

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Preproc(#[from] PreprocError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("network input {net:?} does not match preprocessing output {preproc:?}")]
    ShapeMismatch { net: [usize; 3], preproc: [usize; 3] },
    #[error("server replied with error {code}: {message}")]
    Remote { code: u8, message: String },
}

/// The in-process inference path: preprocess, stack, forward, greedy action.
pub struct LocalPipeline {
    net: Arc<PolicyNet<f32>>,
    preproc: PreprocConfig,
    stack: FrameStack,
}

impl LocalPipeline {
    pub fn new(net: Arc<PolicyNet<f32>>, preproc: PreprocConfig) -> Result<Self, BridgeError> {
        preproc.validate()?;
        let shape = preproc.observation_shape();
        if net.spec().input != shape || net.spec().outputs != ACTION_WHEELS.len() {
            return Err(BridgeError::ShapeMismatch { net: net.spec().input, preproc: shape });
        }
        Ok(Self { stack: FrameStack::new(preproc.k), net, preproc })
    }

    pub fn reset(&mut self) {
        self.stack.clear();
    }

    /// Greedy action and its Q-values for the next camera image.
    pub fn infer(&mut self, raw: &RawImage) -> Result<(usize, Vec<f32>), BridgeError> {
        let obs = self.stack.push(preprocess(raw, &self.preproc)?)?;
        let q = self.net.predict(&batch_tensor::<f32>(&obs.data, 1, obs.shape())?)?;
        Ok((argmax(q.row(0)), q.row(0).to_vec()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServeConfig {
    pub preproc: PreprocConfig,
    /// Largest accepted frame payload in bytes.
    pub max_payload: usize,
}

impl ServeConfig {
    pub fn new(preproc: PreprocConfig) -> Self {
        // 1920x1080 RGB
        Self { preproc, max_payload: 3 * 1920 * 1080 }
    }
}

fn handle_connection(stream: TcpStream, net: Arc<PolicyNet<f32>>, cfg: ServeConfig) -> Result<(), BridgeError> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut pipeline = LocalPipeline::new(net, cfg.preproc)?;
    loop {
        let frame = match FrameMessage::read(&mut reader, cfg.max_payload) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(e) => {
                let reply = Reply::Error(ErrorMessage { code: e.code(), message: e.to_string() });
                let _ = reply.write(&mut writer);
                return Err(e.into());
            }
        };
        let started = Instant::now();
        let result = RawImage::new(frame.width as usize, frame.height as usize, frame.payload)
            .map_err(BridgeError::from)
            .and_then(|raw| pipeline.infer(&raw));
        match result {
            Ok((action, _)) => {
                let us = started.elapsed().as_micros().min(u32::MAX as u128) as u32;
                let w = ACTION_WHEELS[action];
                Reply::Command(CommandMessage::new(w.left, w.right, action as u8, us)).write(&mut writer)?;
            }
            Err(e) => {
                let code = if matches!(e, BridgeError::Preproc(_)) { 5 } else { 6 };
                let _ = Reply::Error(ErrorMessage { code, message: e.to_string() }).write(&mut writer);
                return Err(e);
            }
        }
    }
}

/// Bound listener, not yet accepting.
pub struct Server {
    listener: TcpListener,
    net: Arc<PolicyNet<f32>>,
    cfg: ServeConfig,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, net: Arc<PolicyNet<f32>>, cfg: ServeConfig) -> Result<Self, BridgeError> {
        // fail before accepting anything if the net cannot serve this config
        LocalPipeline::new(net.clone(), cfg.preproc)?;
        Ok(Self { listener: TcpListener::bind(addr)?, net, cfg })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accept connections until `stop` is set, one thread per connection.
    fn accept_loop(self, stop: Arc<AtomicBool>, log: bool) {
        for stream in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let net = self.net.clone();
            let cfg = self.cfg;
            let peer = stream.peer_addr().ok();
            thread::spawn(move || {
                if let Err(e) = handle_connection(stream, net, cfg) {
                    if log {
                        eprintln!("connection {peer:?} closed: {e}");
                    }
                }
            });
        }
    }

    /// Serve on the calling thread until the process ends.
    pub fn run(self) {
        self.accept_loop(Arc::new(AtomicBool::new(false)), true);
    }

    /// Serve on a background thread.
    pub fn spawn(self) -> Result<ServerHandle, BridgeError> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = thread::spawn(move || self.accept_loop(flag, false));
        Ok(ServerHandle { addr, stop, thread: Some(thread) })
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting new connections; open ones run to completion.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_now();
        }
    }
}

/// Blocking client for one connection.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self, BridgeError> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "no address"))?;
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Self { reader: BufReader::new(stream.try_clone()?), writer: BufWriter::new(stream) })
    }

    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<Reply, BridgeError> {
        use std::io::Write;
        self.writer.write_all(bytes)?;
        self.writer.flush()?;
        Ok(Reply::read(&mut self.reader)?)
    }

    pub fn send(&mut self, image: &RawImage) -> Result<CommandMessage, BridgeError> {
        let frame = FrameMessage::rgb24(image.width as u16, image.height as u16, image.pixels.clone());
        match self.send_raw(&frame.encode())? {
            Reply::Command(c) => Ok(c),
            Reply::Error(e) => Err(BridgeError::Remote { code: e.code, message: e.message }),
        }
    }
}

/// Round-trip and server-side latency summary, in microseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeStats {
    pub n: usize,
    pub rtt_min_us: Option<u64>,
    pub rtt_median_us: Option<u64>,
    pub rtt_p99_us: Option<u64>,
    pub server_median_us: Option<u64>,
    pub actions: Vec<u8>,
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[u64], p: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Send `image` `n` times over one connection and summarize the latencies.
pub fn client_probe(addr: impl ToSocketAddrs, image: &RawImage, n: usize, timeout: Duration) -> Result<ProbeStats, BridgeError> {
    if n == 0 {
        return Ok(ProbeStats::default());
    }
    let mut client = Client::connect(addr, timeout)?;
    let mut rtt = Vec::with_capacity(n);
    let mut server = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    for _ in 0..n {
        let t = Instant::now();
        let c = client.send(image)?;
        rtt.push(t.elapsed().as_micros() as u64);
        server.push(c.inference_us as u64);
        actions.push(c.action);
    }
    rtt.sort_unstable();
    server.sort_unstable();
    Ok(ProbeStats {
        n,
        rtt_min_us: rtt.first().copied(),
        rtt_median_us: percentile(&rtt, 50.0),
        rtt_p99_us: percentile(&rtt, 99.0),
        server_median_us: percentile(&server, 50.0),
        actions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 50.0), Some(50));
        assert_eq!(percentile(&v, 99.0), Some(99));
        assert_eq!(percentile(&[7], 99.0), Some(7));
        assert_eq!(percentile(&[], 50.0), None);
    }
}
