use std::collections::VecDeque;
use std::io;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

/// Wakes a single waiter (typically a scheduler loop) when any watched
/// resource changes. Notifications are counted, so a waiter that samples
/// [`Notifier::generation`] before checking its resources never misses one.
#[derive(Debug, Default)]
pub struct Notifier {
    gen: Mutex<u64>,
    cond: Condvar,
}

impl Notifier {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn notify(&self) {
        *lock(&self.gen) += 1;
        self.cond.notify_all();
    }

    pub fn generation(&self) -> u64 {
        *lock(&self.gen)
    }

    /// Blocks until the generation moves past `seen` or `timeout` elapses.
    /// Returns the current generation.
    pub fn wait_since(&self, seen: u64, timeout: Duration) -> u64 {
        let deadline = Instant::now() + timeout;
        let mut gen = lock(&self.gen);
        while *gen == seen {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            gen = self
                .cond
                .wait_timeout(gen, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        *gen
    }
}

pub(crate) fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug, Default)]
struct PipeState {
    buf: VecDeque<u8>,
    writer_closed: bool,
    reader_closed: bool,
    watcher: Option<Arc<Notifier>>,
}

/// Unbounded, lossless, in-order byte pipe with one logical reader.
#[derive(Debug, Default)]
pub struct Pipe {
    state: Mutex<PipeState>,
    cond: Condvar,
}

impl Pipe {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn wake(&self, st: &PipeState) {
        self.cond.notify_all();
        if let Some(w) = &st.watcher {
            w.notify();
        }
    }

    pub fn write(&self, data: &[u8]) -> io::Result<usize> {
        let mut st = lock(&self.state);
        if st.writer_closed || st.reader_closed {
            return Err(io::ErrorKind::BrokenPipe.into());
        }
        st.buf.extend(data);
        self.wake(&st);
        Ok(data.len())
    }

    /// Non-blocking read: `None` when no data is buffered and the writer is
    /// still open, `Some(0)` at end of stream.
    pub fn try_read(&self, out: &mut [u8]) -> Option<usize> {
        let mut st = lock(&self.state);
        Self::take(&mut st, out)
    }

    fn take(st: &mut PipeState, out: &mut [u8]) -> Option<usize> {
        if out.is_empty() {
            return Some(0);
        }
        if st.buf.is_empty() {
            return if st.writer_closed || st.reader_closed {
                Some(0)
            } else {
                None
            };
        }
        let n = out.len().min(st.buf.len());
        let (a, b) = st.buf.as_slices();
        let from_a = n.min(a.len());
        out[..from_a].copy_from_slice(&a[..from_a]);
        out[from_a..n].copy_from_slice(&b[..n - from_a]);
        st.buf.drain(..n);
        Some(n)
    }

    /// Blocking read. `Err(TimedOut)` if `timeout` elapses with no data.
    pub fn read(&self, out: &mut [u8], timeout: Option<Duration>) -> io::Result<usize> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut st = lock(&self.state);
        loop {
            if let Some(n) = Self::take(&mut st, out) {
                return Ok(n);
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

    pub fn readable(&self) -> bool {
        let st = lock(&self.state);
        !st.buf.is_empty() || st.writer_closed || st.reader_closed
    }

    pub fn close_writer(&self) {
        let mut st = lock(&self.state);
        st.writer_closed = true;
        self.wake(&st);
    }

    pub fn close_reader(&self) {
        let mut st = lock(&self.state);
        st.reader_closed = true;
        st.buf.clear();
        self.wake(&st);
    }

    pub fn set_watcher(&self, watcher: Option<Arc<Notifier>>) {
        let mut st = lock(&self.state);
        st.watcher = watcher;
        if st.watcher.is_some() {
            self.wake(&st);
        }
    }
}
