//! Byte-stream transport shared by the E3 agent, the sandbox host and the
//! native dApp arm.
//!
//! Two modes sit behind one API:
//!
//! * [`Network::virtual_channels`]: an in-process registry of named
//!   endpoints connected by unbounded pipes. Deterministic and free of
//!   kernel jitter, it is the default for tests.
//! * [`Network::loopback_tcp`]: real sockets on the loopback interface.
//!
//! Blocking users (agent threads, the native dApp) use [`Stream`] through
//! `Read`/`Write`. The sandbox scheduler cannot block, so it converts
//! streams and listeners into their `Watched*` forms, which expose
//! non-blocking operations and signal a [`Notifier`] when they become ready.

mod pipe;

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU16, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use pipe::{Notifier, Pipe};
use pipe::lock;

/// A `(host, port)` pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub host: String,
    pub port: u16,
}

impl Endpoint {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        Self {
            host: host.into(),
            port,
        }
    }

    /// True for names that refer to this machine.
    pub fn is_local_host(host: &str) -> bool {
        matches!(host, "localhost" | "127.0.0.1" | "0.0.0.0" | "::1")
    }

    fn normalized(&self) -> Self {
        if Self::is_local_host(&self.host) {
            Self::new("localhost", self.port)
        } else {
            self.clone()
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    VirtualChannel,
    LoopbackTcp,
}

const EPHEMERAL_START: u16 = 40_000;

#[derive(Debug)]
struct NetInner {
    mode: Mode,
    listeners: Mutex<HashMap<Endpoint, Arc<AcceptQueue>>>,
    next_port: AtomicU16,
    connect_log: Mutex<Vec<Endpoint>>,
}

/// Handle to a transport. Cheap to clone; clones share the same registry.
#[derive(Debug, Clone)]
pub struct Network {
    inner: Arc<NetInner>,
}

impl Network {
    fn with_mode(mode: Mode) -> Self {
        Self {
            inner: Arc::new(NetInner {
                mode,
                listeners: Mutex::new(HashMap::new()),
                next_port: AtomicU16::new(EPHEMERAL_START),
                connect_log: Mutex::new(Vec::new()),
            }),
        }
    }

    pub fn virtual_channels() -> Self {
        Self::with_mode(Mode::VirtualChannel)
    }

    pub fn loopback_tcp() -> Self {
        Self::with_mode(Mode::LoopbackTcp)
    }

    pub fn mode(&self) -> Mode {
        self.inner.mode
    }

    /// Starts listening. Port 0 picks a free port; see
    /// [`Listener::endpoint`] for the one chosen.
    pub fn listen(&self, host: &str, port: u16) -> io::Result<Listener> {
        match self.inner.mode {
            Mode::VirtualChannel => {
                let mut map = lock(&self.inner.listeners);
                let port = if port == 0 {
                    loop {
                        let p = self.inner.next_port.fetch_add(1, Ordering::Relaxed);
                        if !map.contains_key(&Endpoint::new(host, p).normalized()) {
                            break p;
                        }
                    }
                } else {
                    port
                };
                let ep = Endpoint::new(host, port).normalized();
                if map.contains_key(&ep) {
                    return Err(io::ErrorKind::AddrInUse.into());
                }
                let queue = Arc::new(AcceptQueue::default());
                map.insert(ep.clone(), queue.clone());
                Ok(Listener {
                    endpoint: ep,
                    kind: Some(ListenerKind::Virtual {
                        queue,
                        net: self.clone(),
                    }),
                })
            }
            Mode::LoopbackTcp => {
                let bind_host = if Endpoint::is_local_host(host) {
                    "127.0.0.1"
                } else {
                    host
                };
                let l = TcpListener::bind((bind_host, port))?;
                let port = l.local_addr()?.port();
                Ok(Listener {
                    endpoint: Endpoint::new(host, port),
                    kind: Some(ListenerKind::Tcp(l)),
                })
            }
        }
    }

    pub fn connect(&self, host: &str, port: u16) -> io::Result<Stream> {
        let ep = Endpoint::new(host, port);
        let stream = match self.inner.mode {
            Mode::VirtualChannel => {
                let queue = lock(&self.inner.listeners)
                    .get(&ep.normalized())
                    .cloned()
                    .ok_or(io::ErrorKind::ConnectionRefused)?;
                let a_to_b = Pipe::new();
                let b_to_a = Pipe::new();
                let client = VStream {
                    rx: b_to_a.clone(),
                    tx: a_to_b.clone(),
                };
                let server = VStream {
                    rx: a_to_b,
                    tx: b_to_a,
                };
                if !queue.push(Stream::Virtual(server)) {
                    return Err(io::ErrorKind::ConnectionRefused.into());
                }
                Stream::Virtual(client)
            }
            Mode::LoopbackTcp => {
                let addr = (host, port)
                    .to_socket_addrs()?
                    .next()
                    .ok_or(io::ErrorKind::AddrNotAvailable)?;
                let s = TcpStream::connect_timeout(&addr, Duration::from_secs(2))?;
                s.set_nodelay(true)?;
                Stream::Tcp(s)
            }
        };
        lock(&self.inner.connect_log).push(ep);
        Ok(stream)
    }

    /// Every endpoint a connection was successfully opened to, in order.
    pub fn connect_log(&self) -> Vec<Endpoint> {
        lock(&self.inner.connect_log).clone()
    }

    fn unregister(&self, ep: &Endpoint) {
        lock(&self.inner.listeners).remove(ep);
    }
}

#[derive(Debug, Default)]
struct AcceptState {
    pending: VecDeque<Stream>,
    closed: bool,
    watcher: Option<Arc<Notifier>>,
}

/// Queue of connections waiting to be accepted.
#[derive(Debug, Default)]
pub struct AcceptQueue {
    state: Mutex<AcceptState>,
    cond: Condvar,
}

impl AcceptQueue {
    fn push(&self, s: Stream) -> bool {
        let mut st = lock(&self.state);
        if st.closed {
            return false;
        }
        st.pending.push_back(s);
        self.cond.notify_all();
        if let Some(w) = &st.watcher {
            w.notify();
        }
        true
    }

    fn close(&self) {
        let mut st = lock(&self.state);
        st.closed = true;
        for s in st.pending.drain(..) {
            s.shutdown();
        }
        self.cond.notify_all();
        if let Some(w) = &st.watcher {
            w.notify();
        }
    }

    /// `Ok(None)` when nothing is pending yet.
    pub fn try_accept(&self) -> io::Result<Option<Stream>> {
        let mut st = lock(&self.state);
        match st.pending.pop_front() {
            Some(s) => Ok(Some(s)),
            None if st.closed => Err(io::ErrorKind::NotConnected.into()),
            None => Ok(None),
        }
    }

    fn accept(&self, timeout: Option<Duration>) -> io::Result<Stream> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut st = lock(&self.state);
        loop {
            if let Some(s) = st.pending.pop_front() {
                return Ok(s);
            }
            if st.closed {
                return Err(io::ErrorKind::NotConnected.into());
            }
            st = match deadline {
                None => self.cond.wait(st).unwrap_or_else(|e| e.into_inner()),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return Err(io::ErrorKind::TimedOut.into());
                    }
                    self.cond
                        .wait_timeout(st, d - now)
                        .unwrap_or_else(|e| e.into_inner())
                        .0
                }
            };
        }
    }

    fn set_watcher(&self, w: Arc<Notifier>) {
        let mut st = lock(&self.state);
        st.watcher = Some(w);
    }
}

#[derive(Debug)]
enum ListenerKind {
    Virtual {
        queue: Arc<AcceptQueue>,
        net: Network,
    },
    Tcp(TcpListener),
}

/// A bound endpoint. Dropping it stops accepting and refuses queued
/// connections.
#[derive(Debug)]
pub struct Listener {
    endpoint: Endpoint,
    // Only `None` after `into_watched` moved it out.
    kind: Option<ListenerKind>,
}

impl Listener {
    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn accept(&self) -> io::Result<Stream> {
        self.accept_timeout(None)
    }

    pub fn accept_timeout(&self, timeout: Option<Duration>) -> io::Result<Stream> {
        match self.kind.as_ref().expect("listener kind present") {
            ListenerKind::Virtual { queue, .. } => queue.accept(timeout),
            ListenerKind::Tcp(l) => {
                let Some(timeout) = timeout else {
                    let (s, _) = l.accept()?;
                    s.set_nodelay(true)?;
                    return Ok(Stream::Tcp(s));
                };
                l.set_nonblocking(true)?;
                let deadline = Instant::now() + timeout;
                let res = loop {
                    match l.accept() {
                        Ok((s, _)) => break Ok(s),
                        Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                            if Instant::now() >= deadline {
                                break Err(io::ErrorKind::TimedOut.into());
                            }
                            thread::sleep(Duration::from_micros(200));
                        }
                        Err(e) => break Err(e),
                    }
                };
                l.set_nonblocking(false)?;
                let s = res?;
                s.set_nonblocking(false)?;
                s.set_nodelay(true)?;
                Ok(Stream::Tcp(s))
            }
        }
    }

    /// Converts into a non-blocking listener that signals `notifier` when a
    /// connection arrives.
    pub fn into_watched(mut self, notifier: Arc<Notifier>) -> io::Result<WatchedListener> {
        let endpoint = self.endpoint.clone();
        match self.kind.take().expect("listener kind present") {
            ListenerKind::Virtual { queue, net } => {
                queue.set_watcher(notifier);
                Ok(WatchedListener {
                    endpoint,
                    queue,
                    stop: None,
                    net: Some(net),
                })
            }
            ListenerKind::Tcp(l) => {
                l.set_nonblocking(true)?;
                let queue = Arc::new(AcceptQueue::default());
                queue.set_watcher(notifier);
                let stop = Arc::new(AtomicBool::new(false));
                let (q, s) = (queue.clone(), stop.clone());
                thread::Builder::new()
                    .name(format!("accept-{}", endpoint.port))
                    .spawn(move || tcp_accept_pump(l, q, s))?;
                Ok(WatchedListener {
                    endpoint,
                    queue,
                    stop: Some(stop),
                    net: None,
                })
            }
        }
    }
}

fn tcp_accept_pump(l: TcpListener, queue: Arc<AcceptQueue>, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::Relaxed) {
        match l.accept() {
            Ok((s, _)) => {
                let ok = s.set_nonblocking(false).and_then(|_| s.set_nodelay(true));
                if ok.is_err() || !queue.push(Stream::Tcp(s)) {
                    break;
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_micros(500))
            }
            Err(e) => {
                log::warn!("accept failed: {e}");
                break;
            }
        }
    }
    queue.close();
}

impl Drop for Listener {
    fn drop(&mut self) {
        if let Some(ListenerKind::Virtual { queue, net }) = &self.kind {
            net.unregister(&self.endpoint);
            queue.close();
        }
    }
}

/// Non-blocking listener owned by the sandbox host.
#[derive(Debug)]
pub struct WatchedListener {
    endpoint: Endpoint,
    queue: Arc<AcceptQueue>,
    stop: Option<Arc<AtomicBool>>,
    net: Option<Network>,
}

impl WatchedListener {
    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn try_accept(&self) -> io::Result<Option<Stream>> {
        self.queue.try_accept()
    }
}

impl Drop for WatchedListener {
    fn drop(&mut self) {
        if let Some(stop) = &self.stop {
            stop.store(true, Ordering::Relaxed);
        }
        if let Some(net) = &self.net {
            net.unregister(&self.endpoint);
        }
        self.queue.close();
    }
}

/// One direction pair of a virtual connection.
#[derive(Debug, Clone)]
pub struct VStream {
    rx: Arc<Pipe>,
    tx: Arc<Pipe>,
}

/// A connected, bidirectional byte stream. Clones share the connection;
/// closing is explicit through [`Stream::shutdown_write`] / [`Stream::shutdown`].
#[derive(Debug)]
pub enum Stream {
    Virtual(VStream),
    Tcp(TcpStream),
}

impl Stream {
    pub fn try_clone(&self) -> io::Result<Self> {
        Ok(match self {
            Self::Virtual(v) => Self::Virtual(v.clone()),
            Self::Tcp(t) => Self::Tcp(t.try_clone()?),
        })
    }

    /// Half-close: the peer reads end-of-stream once buffered data drains.
    pub fn shutdown_write(&self) {
        match self {
            Self::Virtual(v) => v.tx.close_writer(),
            Self::Tcp(t) => {
                let _ = t.shutdown(Shutdown::Write);
            }
        }
    }

    pub fn shutdown(&self) {
        match self {
            Self::Virtual(v) => {
                v.tx.close_writer();
                v.rx.close_reader();
            }
            Self::Tcp(t) => {
                let _ = t.shutdown(Shutdown::Both);
            }
        }
    }

    pub fn set_read_timeout(&mut self, timeout: Option<Duration>) -> io::Result<()> {
        match self {
            Self::Virtual(_) => Ok(()),
            Self::Tcp(t) => t.set_read_timeout(timeout),
        }
    }

    /// Reads with a timeout; `Err(TimedOut)` or `Err(WouldBlock)` when it
    /// expires.
    pub fn read_timeout(&mut self, buf: &mut [u8], timeout: Duration) -> io::Result<usize> {
        match self {
            Self::Virtual(v) => v.rx.read(buf, Some(timeout)),
            Self::Tcp(t) => {
                t.set_read_timeout(Some(timeout.max(Duration::from_micros(1))))?;
                let r = t.read(buf);
                t.set_read_timeout(None)?;
                r
            }
        }
    }

    /// Converts into a non-blocking stream that signals `notifier` when data
    /// or end-of-stream arrives.
    pub fn into_watched(self, notifier: Arc<Notifier>) -> io::Result<WatchedStream> {
        match self {
            Self::Virtual(v) => {
                v.rx.set_watcher(Some(notifier));
                Ok(WatchedStream {
                    rx: v.rx,
                    tx: Writer::Pipe(v.tx),
                })
            }
            Self::Tcp(t) => {
                let rx = Pipe::new();
                rx.set_watcher(Some(notifier));
                let mut reader = t.try_clone()?;
                let pump = rx.clone();
                thread::Builder::new()
                    .name("tcp-rx".into())
                    .spawn(move || {
                        let mut buf = vec![0u8; 64 * 1024];
                        loop {
                            match reader.read(&mut buf) {
                                Ok(0) | Err(_) => break,
                                Ok(n) => {
                                    if pump.write(&buf[..n]).is_err() {
                                        break;
                                    }
                                }
                            }
                        }
                        pump.close_writer();
                    })?;
                Ok(WatchedStream {
                    rx,
                    tx: Writer::Tcp(t),
                })
            }
        }
    }
}

impl Read for Stream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match self {
            Self::Virtual(v) => v.rx.read(buf, None),
            Self::Tcp(t) => t.read(buf),
        }
    }
}

impl Write for Stream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Self::Virtual(v) => v.tx.write(buf),
            Self::Tcp(t) => t.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Self::Virtual(_) => Ok(()),
            Self::Tcp(t) => t.flush(),
        }
    }
}

#[derive(Debug)]
enum Writer {
    Pipe(Arc<Pipe>),
    Tcp(TcpStream),
}

/// Non-blocking stream owned by the sandbox host.
#[derive(Debug)]
pub struct WatchedStream {
    rx: Arc<Pipe>,
    tx: Writer,
}

impl WatchedStream {
    /// `None` when the read would block; `Some(0)` at end of stream.
    pub fn try_read(&self, buf: &mut [u8]) -> Option<usize> {
        self.rx.try_read(buf)
    }

    pub fn readable(&self) -> bool {
        self.rx.readable()
    }

    pub fn write_all(&mut self, buf: &[u8]) -> io::Result<()> {
        match &mut self.tx {
            Writer::Pipe(p) => p.write(buf).map(|_| ()),
            Writer::Tcp(t) => t.write_all(buf),
        }
    }

    /// Half-close: the peer reads end-of-stream, this side keeps reading.
    pub fn shutdown_write(&self) {
        match &self.tx {
            Writer::Pipe(p) => p.close_writer(),
            Writer::Tcp(t) => {
                let _ = t.shutdown(Shutdown::Write);
            }
        }
    }

    pub fn close(&self) {
        match &self.tx {
            Writer::Pipe(p) => p.close_writer(),
            Writer::Tcp(t) => {
                let _ = t.shutdown(Shutdown::Both);
            }
        }
        self.rx.close_reader();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn echo_roundtrip(net: Network) {
        let l = net.listen("localhost", 0).unwrap();
        let port = l.endpoint().port;
        let server = thread::spawn(move || {
            let mut s = l.accept().unwrap();
            let mut buf = [0u8; 5];
            s.read_exact(&mut buf).unwrap();
            s.write_all(&buf).unwrap();
            s.shutdown_write();
        });
        let mut c = net.connect("localhost", port).unwrap();
        c.write_all(b"hello").unwrap();
        let mut out = Vec::new();
        c.read_to_end(&mut out).unwrap();
        assert_eq!(out, b"hello");
        server.join().unwrap();
    }

    #[test]
    fn virtual_echo() {
        echo_roundtrip(Network::virtual_channels());
    }

    #[test]
    fn tcp_echo() {
        echo_roundtrip(Network::loopback_tcp());
    }

    #[test]
    fn virtual_refused_without_listener() {
        let net = Network::virtual_channels();
        let err = net.connect("agent", 9).unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::ConnectionRefused);
        let l = net.listen("agent", 9).unwrap();
        assert_eq!(
            net.listen("agent", 9).unwrap_err().kind(),
            io::ErrorKind::AddrInUse
        );
        drop(l);
        assert!(net.connect("agent", 9).is_err());
        assert!(net.connect_log().is_empty());
    }

    #[test]
    fn local_names_alias() {
        let net = Network::virtual_channels();
        let _l = net.listen("127.0.0.1", 7000).unwrap();
        net.connect("localhost", 7000).unwrap();
        assert_eq!(net.connect_log(), vec![Endpoint::new("localhost", 7000)]);
    }

    fn watched(net: Network) {
        let n = Notifier::new();
        let l = net.listen("localhost", 0).unwrap();
        let port = l.endpoint().port;
        let wl = l.into_watched(n.clone()).unwrap();
        assert!(wl.try_accept().unwrap().is_none());
        let g = n.generation();
        let mut c = net.connect("localhost", port).unwrap();
        n.wait_since(g, Duration::from_secs(2));
        let mut accepted = None;
        for _ in 0..200 {
            if let Some(s) = wl.try_accept().unwrap() {
                accepted = Some(s);
                break;
            }
            thread::sleep(Duration::from_millis(5));
        }
        let ws = accepted.unwrap().into_watched(n.clone()).unwrap();
        let mut buf = [0u8; 8];
        assert_eq!(ws.try_read(&mut buf), None);
        c.write_all(b"ping").unwrap();
        let mut got = None;
        for _ in 0..200 {
            if let Some(k) = ws.try_read(&mut buf) {
                got = Some(k);
                break;
            }
            thread::sleep(Duration::from_millis(5));
        }
        assert_eq!(got, Some(4));
        c.shutdown_write();
        let mut eof = None;
        for _ in 0..200 {
            if let Some(k) = ws.try_read(&mut buf) {
                eof = Some(k);
                break;
            }
            thread::sleep(Duration::from_millis(5));
        }
        assert_eq!(eof, Some(0));
    }

    #[test]
    fn watched_virtual() {
        watched(Network::virtual_channels());
    }

    #[test]
    fn watched_tcp() {
        watched(Network::loopback_tcp());
    }
}
