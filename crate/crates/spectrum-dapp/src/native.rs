//! Native backend: the dApp talks to the transport directly, with no
//! capability checks.

extern crate std;

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::time::Instant;

use e3_net::{Listener, Network, Stream};

use crate::net::{Errno, Fd, Net};

enum Entry {
    Stream(Stream),
    Listener(Listener),
}

/// [`Net`] over an [`e3_net::Network`]. Descriptors start at 3 and are
/// never reused, matching the sandbox.
pub struct NativeNet {
    net: Network,
    local_host: std::string::String,
    fds: BTreeMap<Fd, Entry>,
    next_fd: Fd,
    epoch: Instant,
}

impl NativeNet {
    pub fn new(net: Network) -> Self {
        Self {
            net,
            local_host: "localhost".into(),
            fds: BTreeMap::new(),
            next_fd: 3,
            epoch: Instant::now(),
        }
    }

    fn insert(&mut self, e: Entry) -> Fd {
        let fd = self.next_fd;
        self.next_fd += 1;
        self.fds.insert(fd, e);
        fd
    }

    fn stream(&mut self, fd: Fd) -> Result<&mut Stream, Errno> {
        match self.fds.get_mut(&fd) {
            Some(Entry::Stream(s)) => Ok(s),
            Some(Entry::Listener(_)) => Err(Errno::Inval),
            None => Err(Errno::Badf),
        }
    }
}

fn errno(e: io::Error) -> Errno {
    match e.kind() {
        io::ErrorKind::ConnectionRefused | io::ErrorKind::AddrNotAvailable => Errno::ConnRefused,
        io::ErrorKind::AddrInUse => Errno::AddrInUse,
        io::ErrorKind::PermissionDenied => Errno::Acces,
        io::ErrorKind::InvalidInput => Errno::Inval,
        _ => Errno::Pipe,
    }
}

impl Net for NativeNet {
    fn connect(&mut self, host: &str, port: u16) -> Result<Fd, Errno> {
        let s = self.net.connect(host, port).map_err(errno)?;
        Ok(self.insert(Entry::Stream(s)))
    }

    fn bind(&mut self, port: u16) -> Result<Fd, Errno> {
        let l = self.net.listen(&self.local_host, port).map_err(errno)?;
        Ok(self.insert(Entry::Listener(l)))
    }

    fn accept(&mut self, listen_fd: Fd) -> Result<Fd, Errno> {
        let s = match self.fds.get(&listen_fd) {
            Some(Entry::Listener(l)) => l.accept().map_err(errno)?,
            Some(Entry::Stream(_)) => return Err(Errno::Inval),
            None => return Err(Errno::Badf),
        };
        Ok(self.insert(Entry::Stream(s)))
    }

    fn read(&mut self, fd: Fd, buf: &mut [u8]) -> Result<usize, Errno> {
        let s = self.stream(fd)?;
        loop {
            match s.read(buf) {
                Ok(n) => return Ok(n),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) if e.kind() == io::ErrorKind::ConnectionReset => return Ok(0),
                Err(e) => return Err(errno(e)),
            }
        }
    }

    fn write(&mut self, fd: Fd, buf: &[u8]) -> Result<usize, Errno> {
        self.stream(fd)?.write(buf).map_err(errno)
    }

    fn close(&mut self, fd: Fd) -> Result<(), Errno> {
        match self.fds.remove(&fd) {
            Some(Entry::Stream(s)) => {
                s.shutdown();
                Ok(())
            }
            Some(Entry::Listener(_)) => Ok(()),
            None => Err(Errno::Badf),
        }
    }

    fn clock_us(&mut self) -> u64 {
        self.epoch.elapsed().as_micros() as u64
    }
}

impl Drop for NativeNet {
    fn drop(&mut self) {
        for (_, e) in std::mem::take(&mut self.fds) {
            if let Entry::Stream(s) = e {
                s.shutdown();
            }
        }
    }
}
