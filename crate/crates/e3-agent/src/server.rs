//! Single-threaded event loop: accepts dApps, feeds their messages to the
//! [`Agent`], and streams indications on schedule.

use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use e3_codec::{decode, encode, E3Message, FrameBuffer, Status};
use e3_net::{Endpoint, Listener, Network, Notifier, WatchedStream};

use crate::agent::{Agent, ConnId, ErrorCode};
use crate::records::{LoopLog, LoopRecord};
use crate::scenario::ScenarioConfig;
use crate::scheduler::SchedulerState;
use crate::AgentError;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Serve this many dApp connections to completion, then return.
    pub sessions: usize,
    /// How long to wait for outstanding controls after the last indication
    /// before ending the stream.
    pub grace: Duration,
    /// Hard stop for the whole run.
    pub deadline: Option<Duration>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            sessions: 1,
            grace: Duration::from_millis(500),
            deadline: None,
        }
    }
}

/// A control frame as received, header included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlFrame {
    pub conn: ConnId,
    pub seq: u32,
    pub frame: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct AgentReport {
    pub sessions: usize,
    pub indications_sent: u64,
    pub records: Vec<LoopRecord>,
    pub controls: Vec<ControlFrame>,
    /// Send time of every indication, per subscription id.
    pub send_times_us: Vec<(u32, u64)>,
    pub scheduler: SchedulerState,
    pub errors_sent: u64,
    /// The deadline expired before every session finished.
    pub timed_out: bool,
}

impl AgentReport {
    /// Send times of one subscription, in order.
    pub fn send_times(&self, sub_id: u32) -> Vec<u64> {
        self.send_times_us
            .iter()
            .filter(|(s, _)| *s == sub_id)
            .map(|(_, t)| *t)
            .collect()
    }
}

struct Stream {
    sub_id: u32,
    dapp_id: u32,
    period: Duration,
    next_due: Instant,
    done_at: Option<Instant>,
}

struct Conn {
    id: ConnId,
    io: WatchedStream,
    frames: FrameBuffer,
    streams: Vec<Stream>,
    eof: bool,
    write_closed: bool,
}

impl Conn {
    fn send(&mut self, msg: &E3Message) {
        let ok = encode(msg).ok().is_some_and(|b| self.io.write_all(&b).is_ok());
        if !ok {
            self.eof = true;
        }
    }
}

const MAX_WAIT: Duration = Duration::from_millis(50);

/// Runs the agent until `opts.sessions` dApp connections have closed or the
/// deadline passes.
pub fn serve(mut agent: Agent, listener: Listener, opts: &ServeOptions) -> Result<AgentReport, AgentError> {
    let notifier = Notifier::new();
    let listener = listener.into_watched(notifier.clone())?;
    let epoch = Instant::now();
    let us = |t: Instant| t.duration_since(epoch).as_micros() as u64;

    let mut conns: Vec<Conn> = Vec::new();
    let mut accepted = 0usize;
    let mut finished = 0usize;
    let mut indications_sent = 0u64;
    let mut controls = Vec::new();
    let mut send_times_us = Vec::new();
    let mut timed_out = false;
    let mut buf = vec![0u8; 64 * 1024];

    loop {
        let seen = notifier.generation();

        while accepted < opts.sessions {
            let Some(s) = listener.try_accept()? else { break };
            conns.push(Conn {
                id: accepted as ConnId,
                io: s.into_watched(notifier.clone())?,
                frames: FrameBuffer::new(),
                streams: Vec::new(),
                eof: false,
                write_closed: false,
            });
            accepted += 1;
        }

        for c in &mut conns {
            while let Some(n) = c.io.try_read(&mut buf) {
                if n == 0 {
                    c.eof = true;
                    break;
                }
                c.frames.push(&buf[..n]);
            }
            loop {
                let raw = match c.frames.next_raw() {
                    None => break,
                    Some(Ok(raw)) => raw.to_vec(),
                    Some(Err(e)) => {
                        log::warn!("connection {}: dropping after bad frame: {e}", c.id);
                        c.eof = true;
                        break;
                    }
                };
                let now = Instant::now();
                let msg = match decode(&raw) {
                    Ok(m) => m,
                    Err(e) => {
                        log::debug!("connection {}: undecodable payload: {e}", c.id);
                        c.send(&ErrorCode::UnknownRequest.message());
                        continue;
                    }
                };
                let subscriber = match &msg {
                    E3Message::Control { seq, .. } => {
                        controls.push(ControlFrame {
                            conn: c.id,
                            seq: *seq,
                            frame: raw,
                        });
                        None
                    }
                    E3Message::SubscriptionRequest { dapp_id, .. } => Some(*dapp_id),
                    _ => None,
                };
                let Some(reply) = agent.handle_message(msg, c.id, us(now)) else {
                    continue;
                };
                if let (
                    Some(dapp_id),
                    E3Message::SubscriptionResponse {
                        sub_id,
                        status: Status::Ok,
                    },
                ) = (subscriber, &reply)
                {
                    let period = agent.subscription(*sub_id).expect("just created").period_us;
                    c.streams.push(Stream {
                        sub_id: *sub_id,
                        dapp_id,
                        period: Duration::from_micros(u64::from(period)),
                        next_due: now,
                        done_at: None,
                    });
                }
                c.send(&reply);
            }
        }

        let now = Instant::now();
        for c in conns.iter_mut().filter(|c| !c.eof && !c.write_closed) {
            for i in 0..c.streams.len() {
                let st = &mut c.streams[i];
                if st.done_at.is_some() || now < st.next_due {
                    continue;
                }
                let t = Instant::now();
                match agent.next_indication(st.sub_id, us(t)) {
                    Some(msg) => {
                        // Late sends do not burst to catch up.
                        st.next_due = (st.next_due + st.period).max(t);
                        send_times_us.push((st.sub_id, us(t)));
                        indications_sent += 1;
                        c.send(&msg);
                    }
                    None => st.done_at = Some(t),
                }
                let st = &mut c.streams[i];
                if st.done_at.is_none() && agent.exhausted(st.sub_id) {
                    st.done_at = Some(Instant::now());
                }
            }
            let all_done = !c.streams.is_empty() && c.streams.iter().all(|s| s.done_at.is_some());
            if all_done {
                let answered = c.streams.iter().all(|s| agent.outstanding(s.dapp_id) == 0);
                let last = c.streams.iter().filter_map(|s| s.done_at).max().expect("non-empty");
                if answered || now.duration_since(last) >= opts.grace {
                    c.io.shutdown_write();
                    c.write_closed = true;
                }
            }
        }

        conns.retain(|c| {
            if c.eof {
                agent.disconnect(c.id);
                c.io.close();
                finished += 1;
            }
            !c.eof
        });
        if finished >= opts.sessions {
            break;
        }
        let now = Instant::now();
        if opts.deadline.is_some_and(|d| now.duration_since(epoch) >= d) {
            timed_out = true;
            break;
        }

        let mut wake = now + MAX_WAIT;
        for c in conns.iter().filter(|c| !c.write_closed) {
            for s in &c.streams {
                match s.done_at {
                    None => wake = wake.min(s.next_due),
                    Some(t) => wake = wake.min(t + opts.grace),
                }
            }
        }
        if let Some(d) = opts.deadline {
            wake = wake.min(epoch + d);
        }
        if wake > now {
            notifier.wait_since(seen, wake - now);
        }
    }

    for c in &conns {
        c.io.close();
    }
    Ok(AgentReport {
        sessions: finished,
        indications_sent,
        records: agent.loop_log().snapshot(),
        controls,
        send_times_us,
        scheduler: agent.scheduler().clone(),
        errors_sent: agent.errors_sent(),
        timed_out,
    })
}

/// A running agent thread.
pub struct AgentHandle {
    endpoint: Endpoint,
    log: LoopLog,
    thread: JoinHandle<Result<AgentReport, AgentError>>,
}

impl AgentHandle {
    /// Where dApps should connect.
    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn loop_log(&self) -> &LoopLog {
        &self.log
    }

    pub fn join(self) -> Result<AgentReport, AgentError> {
        self.thread.join().unwrap_or_else(|_| {
            Err(AgentError::Io(std::io::Error::other("agent thread panicked")))
        })
    }
}

/// Validates `scenario`, starts listening on `host:port` (port 0 picks one)
/// and serves on a new thread.
pub fn spawn(
    net: &Network,
    host: &str,
    port: u16,
    scenario: ScenarioConfig,
    opts: ServeOptions,
) -> Result<AgentHandle, AgentError> {
    scenario.validate()?;
    let listener = net.listen(host, port)?;
    let endpoint = listener.endpoint().clone();
    let agent = Agent::new(scenario);
    let log = agent.loop_log();
    let thread = thread::Builder::new()
        .name("e3-agent".into())
        .spawn(move || serve(agent, listener, &opts))?;
    Ok(AgentHandle {
        endpoint,
        log,
        thread,
    })
}
