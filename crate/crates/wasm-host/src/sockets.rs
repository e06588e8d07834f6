//! Per-instance socket table and the logic behind the `sock_*` host
//! functions.
//!
//! Everything here works on a plain byte slice standing in for guest linear
//! memory, so the capability and bounds rules can be tested without an
//! engine. Guest pointers are never dereferenced directly: each access is
//! range-checked and then copied.

use std::collections::BTreeMap;
use std::io;
use std::ops::Range;
use std::sync::Arc;

use e3_net::{Endpoint, Network, Notifier, WatchedListener, WatchedStream};
use spectrum_dapp::Errno;

/// First descriptor handed to a guest.
pub const FIRST_FD: i32 = 3;

/// Which endpoints an instance may reach.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Capabilities {
    allowed: Vec<Endpoint>,
}

impl Capabilities {
    pub fn new(allowed: Vec<Endpoint>) -> Self {
        Self { allowed }
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn endpoints(&self) -> &[Endpoint] {
        &self.allowed
    }

    /// Exact `(host, port)` match against the grant.
    pub fn may_connect(&self, host: &str, port: u16) -> bool {
        self.allowed.iter().any(|e| e.host == host && e.port == port)
    }

    /// Binding needs a grant naming a local host on that port.
    pub fn may_bind(&self, port: u16) -> bool {
        self.allowed
            .iter()
            .any(|e| e.port == port && Endpoint::is_local_host(&e.host))
    }
}

/// A host call that cannot complete yet. The scheduler parks the instance
/// and retries when the network signals activity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pending {
    Read { fd: i32, ptr: u32, len: u32 },
    Accept { fd: i32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Value to return to the guest (negative errno on failure).
    Done(i32),
    Block(Pending),
}

impl Outcome {
    fn err(e: Errno) -> Self {
        Self::Done(-(e as i32))
    }
}

fn ret(r: Result<i32, Errno>) -> i32 {
    r.unwrap_or_else(|e| -(e as i32))
}

#[derive(Debug)]
enum Socket {
    Stream(WatchedStream),
    Listener(WatchedListener),
}

/// Bounds-checks `ptr..ptr+len` against a memory of `mem_len` bytes.
pub fn guest_range(mem_len: usize, ptr: u32, len: u32) -> Result<Range<usize>, Errno> {
    let start = ptr as u64;
    let end = start + len as u64;
    if end > mem_len as u64 {
        return Err(Errno::Fault);
    }
    Ok(start as usize..end as usize)
}

#[derive(Debug)]
pub struct SocketTable {
    caps: Capabilities,
    net: Network,
    notifier: Arc<Notifier>,
    fds: BTreeMap<i32, Socket>,
    next_fd: i32,
}

impl SocketTable {
    pub fn new(caps: Capabilities, net: Network, notifier: Arc<Notifier>) -> Self {
        Self {
            caps,
            net,
            notifier,
            fds: BTreeMap::new(),
            next_fd: FIRST_FD,
        }
    }

    pub fn capabilities(&self) -> &Capabilities {
        &self.caps
    }

    pub fn open_fds(&self) -> impl Iterator<Item = i32> + '_ {
        self.fds.keys().copied()
    }

    fn insert(&mut self, s: Socket) -> Result<i32, Errno> {
        let fd = self.next_fd;
        // Descriptors are never reused; running out is reported, not wrapped.
        self.next_fd = self.next_fd.checked_add(1).ok_or(Errno::Inval)?;
        self.fds.insert(fd, s);
        Ok(fd)
    }

    pub fn connect(&mut self, mem: &[u8], host_ptr: u32, host_len: u32, port: u32) -> i32 {
        ret(self.try_connect(mem, host_ptr, host_len, port))
    }

    fn try_connect(&mut self, mem: &[u8], host_ptr: u32, host_len: u32, port: u32) -> Result<i32, Errno> {
        let host = std::str::from_utf8(&mem[guest_range(mem.len(), host_ptr, host_len)?])
            .map_err(|_| Errno::Inval)?;
        let port = u16::try_from(port).map_err(|_| Errno::Inval)?;
        if !self.caps.may_connect(host, port) {
            return Err(Errno::Acces);
        }
        let stream = self.net.connect(host, port).map_err(|_| Errno::ConnRefused)?;
        let watched = stream
            .into_watched(self.notifier.clone())
            .map_err(|_| Errno::ConnRefused)?;
        self.insert(Socket::Stream(watched))
    }

    pub fn bind(&mut self, port: u32) -> i32 {
        ret(self.try_bind(port))
    }

    fn try_bind(&mut self, port: u32) -> Result<i32, Errno> {
        let port = u16::try_from(port).map_err(|_| Errno::Inval)?;
        if !self.caps.may_bind(port) {
            return Err(Errno::Acces);
        }
        let listener = self.net.listen("localhost", port).map_err(|e| match e.kind() {
            io::ErrorKind::AddrInUse => Errno::AddrInUse,
            _ => Errno::Inval,
        })?;
        let watched = listener
            .into_watched(self.notifier.clone())
            .map_err(|_| Errno::Inval)?;
        self.insert(Socket::Listener(watched))
    }

    pub fn accept(&mut self, fd: i32) -> Outcome {
        let accepted = match self.fds.get(&fd) {
            None => return Outcome::err(Errno::Badf),
            Some(Socket::Stream(_)) => return Outcome::err(Errno::Inval),
            Some(Socket::Listener(l)) => match l.try_accept() {
                Ok(Some(s)) => s,
                Ok(None) => return Outcome::Block(Pending::Accept { fd }),
                Err(_) => return Outcome::err(Errno::Inval),
            },
        };
        match accepted.into_watched(self.notifier.clone()) {
            Ok(w) => Outcome::Done(ret(self.insert(Socket::Stream(w)))),
            Err(_) => Outcome::err(Errno::Inval),
        }
    }

    pub fn read(&mut self, mem: &mut [u8], fd: i32, ptr: u32, len: u32) -> Outcome {
        let stream = match self.fds.get(&fd) {
            None => return Outcome::err(Errno::Badf),
            Some(Socket::Listener(_)) => return Outcome::err(Errno::Inval),
            Some(Socket::Stream(s)) => s,
        };
        // Cap so the byte count always fits the i32 return value.
        let len = len.min(i32::MAX as u32);
        let range = match guest_range(mem.len(), ptr, len) {
            Ok(r) => r,
            Err(e) => return Outcome::err(e),
        };
        if range.is_empty() {
            return Outcome::Done(0);
        }
        match stream.try_read(&mut mem[range]) {
            Some(n) => Outcome::Done(n as i32),
            None => Outcome::Block(Pending::Read { fd, ptr, len }),
        }
    }

    pub fn write(&mut self, mem: &[u8], fd: i32, ptr: u32, len: u32) -> i32 {
        ret(self.try_write(mem, fd, ptr, len))
    }

    fn try_write(&mut self, mem: &[u8], fd: i32, ptr: u32, len: u32) -> Result<i32, Errno> {
        let stream = match self.fds.get_mut(&fd) {
            None => return Err(Errno::Badf),
            Some(Socket::Listener(_)) => return Err(Errno::Inval),
            Some(Socket::Stream(s)) => s,
        };
        let len = len.min(i32::MAX as u32);
        let range = guest_range(mem.len(), ptr, len)?;
        stream.write_all(&mem[range]).map_err(|_| Errno::Pipe)?;
        Ok(len as i32)
    }

    pub fn close(&mut self, fd: i32) -> i32 {
        match self.fds.remove(&fd) {
            None => -(Errno::Badf as i32),
            Some(Socket::Stream(s)) => {
                s.close();
                0
            }
            Some(Socket::Listener(_)) => 0,
        }
    }

    /// Retries a parked call.
    pub fn retry(&mut self, mem: &mut [u8], pending: Pending) -> Outcome {
        match pending {
            Pending::Read { fd, ptr, len } => self.read(mem, fd, ptr, len),
            Pending::Accept { fd } => self.accept(fd),
        }
    }

    /// Closes every descriptor; used when an instance terminates.
    pub fn close_all(&mut self) {
        for (_, s) in std::mem::take(&mut self.fds) {
            if let Socket::Stream(s) = s {
                s.close();
            }
        }
    }
}

impl Drop for SocketTable {
    fn drop(&mut self) {
        self.close_all();
    }
}
