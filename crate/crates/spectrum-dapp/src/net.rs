//! The socket surface a dApp sees. In the sandbox these calls are host
//! functions; natively they are backed directly by the transport.

use core::fmt;

pub type Fd = i32;

/// Error numbers returned (negated) by the socket host functions. Values
/// follow Linux.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(i32)]
pub enum Errno {
    Badf = 9,
    Acces = 13,
    Fault = 14,
    Inval = 22,
    Pipe = 32,
    AddrInUse = 98,
    ConnRefused = 111,
}

impl Errno {
    pub fn from_raw(v: i32) -> Option<Self> {
        Some(match v {
            9 => Self::Badf,
            13 => Self::Acces,
            14 => Self::Fault,
            22 => Self::Inval,
            32 => Self::Pipe,
            98 => Self::AddrInUse,
            111 => Self::ConnRefused,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Badf => "EBADF",
            Self::Acces => "EACCES",
            Self::Fault => "EFAULT",
            Self::Inval => "EINVAL",
            Self::Pipe => "EPIPE",
            Self::AddrInUse => "EADDRINUSE",
            Self::ConnRefused => "ECONNREFUSED",
        }
    }
}

impl fmt::Display for Errno {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Decodes a raw host-function return: non-negative is a value, negative is
/// `-errno`.
pub fn check(ret: i32) -> Result<i32, Errno> {
    if ret >= 0 {
        Ok(ret)
    } else {
        Err(Errno::from_raw(-ret).unwrap_or(Errno::Inval))
    }
}

pub trait Net {
    fn connect(&mut self, host: &str, port: u16) -> Result<Fd, Errno>;
    fn bind(&mut self, port: u16) -> Result<Fd, Errno>;
    /// Blocks until a connection arrives.
    fn accept(&mut self, listen_fd: Fd) -> Result<Fd, Errno>;
    /// Blocks until at least one byte is available; `Ok(0)` at end of stream.
    fn read(&mut self, fd: Fd, buf: &mut [u8]) -> Result<usize, Errno>;
    fn write(&mut self, fd: Fd, buf: &[u8]) -> Result<usize, Errno>;
    fn close(&mut self, fd: Fd) -> Result<(), Errno>;
    /// Monotonic microseconds.
    fn clock_us(&mut self) -> u64;

    fn write_all(&mut self, fd: Fd, mut buf: &[u8]) -> Result<(), Errno> {
        while !buf.is_empty() {
            let n = self.write(fd, buf)?;
            if n == 0 {
                return Err(Errno::Pipe);
            }
            buf = &buf[n..];
        }
        Ok(())
    }
}
