//! The receive / sense / reply loop.

use alloc::vec;
use alloc::vec::Vec;

use e3_codec::{
    decode, encode_into, ControlAction, E3Message, FrameBuffer, IndicationPayload, ServiceKind,
    ServiceSet, Status,
};

use crate::config::SensingConfig;
use crate::net::{Errno, Fd, Net};
use crate::sensing::Sensor;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(i32)]
pub enum ExitCode {
    Ok = 0,
    /// Bad configuration.
    Config = 1,
    SetupRejected = 2,
    /// Connecting to the agent failed (EACCES, ECONNREFUSED, ...).
    ConnectFailed = 3,
    /// Agent broke protocol, rejected the subscription, or a socket failed
    /// mid-stream.
    Protocol = 4,
}

/// Stage durations of one answered indication, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageRecord {
    pub seq: u32,
    pub decode_us: u32,
    pub process_us: u32,
    pub encode_us: u32,
    pub transmit_us: u32,
    /// Measured end-to-end, independently of the stages.
    pub cumulative_us: u32,
}

impl StageRecord {
    pub const WIRE_LEN: usize = 24;

    pub fn stage_sum(&self) -> u64 {
        u64::from(self.decode_us)
            + u64::from(self.process_us)
            + u64::from(self.encode_us)
            + u64::from(self.transmit_us)
    }

    pub fn to_bytes(&self) -> [u8; Self::WIRE_LEN] {
        let mut out = [0u8; Self::WIRE_LEN];
        for (chunk, v) in out.chunks_exact_mut(4).zip([
            self.seq,
            self.decode_us,
            self.process_us,
            self.encode_us,
            self.transmit_us,
            self.cumulative_us,
        ]) {
            chunk.copy_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8; Self::WIRE_LEN]) -> Self {
        let f = |i: usize| u32::from_be_bytes([b[4 * i], b[4 * i + 1], b[4 * i + 2], b[4 * i + 3]]);
        Self {
            seq: f(0),
            decode_us: f(1),
            process_us: f(2),
            encode_us: f(3),
            transmit_us: f(4),
            cumulative_us: f(5),
        }
    }

    /// Parses a concatenated stage log; a trailing partial record is ignored.
    pub fn parse_log(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(Self::WIRE_LEN)
            .map(|c| Self::from_bytes(c.try_into().expect("exact chunk")))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DappOutcome {
    pub exit: ExitCode,
    pub controls_sent: u32,
    /// Indications that failed to decode or had the wrong sample count; no
    /// control is sent for these.
    pub dropped: u32,
    pub stages: Vec<StageRecord>,
}

impl DappOutcome {
    fn exit(exit: ExitCode) -> Self {
        Self {
            exit,
            controls_sent: 0,
            dropped: 0,
            stages: Vec::new(),
        }
    }
}

const READ_CHUNK: usize = 16 * 1024;

/// Runs the dApp to completion: setup, subscribe, then answer every report
/// indication with a PRB blocklist until the agent ends the stream.
pub fn run_dapp<N: Net>(net: &mut N, cfg: &SensingConfig) -> DappOutcome {
    let mut sensor = match Sensor::new(cfg) {
        Ok(s) => s,
        Err(_) => return DappOutcome::exit(ExitCode::Config),
    };

    let stage_listener = match cfg.stage_log_port.map(|p| net.bind(p)).transpose() {
        Ok(fd) => fd,
        Err(_) => return DappOutcome::exit(ExitCode::ConnectFailed),
    };
    let fd = match net.connect(&cfg.agent_host, cfg.agent_port) {
        Ok(fd) => fd,
        Err(_) => {
            if let Some(l) = stage_listener {
                let _ = net.close(l);
            }
            return DappOutcome::exit(ExitCode::ConnectFailed);
        }
    };

    let mut session = Session {
        net,
        fd,
        frames: FrameBuffer::with_capacity(READ_CHUNK * 2),
        chunk: vec![0u8; READ_CHUNK],
    };
    let mut outcome = DappOutcome::exit(ExitCode::Ok);
    outcome.exit = match session.handshake(cfg) {
        Ok(()) => match session.serve(cfg, &mut sensor, &mut outcome) {
            Ok(()) => ExitCode::Ok,
            Err(_) => ExitCode::Protocol,
        },
        Err(code) => code,
    };
    let _ = session.net.close(fd);

    if let Some(listen_fd) = stage_listener {
        if outcome.exit == ExitCode::Ok && cfg.instrument {
            flush_stage_log(session.net, listen_fd, &outcome.stages);
        }
        let _ = session.net.close(listen_fd);
    }
    outcome
}

fn flush_stage_log<N: Net>(net: &mut N, listen_fd: Fd, stages: &[StageRecord]) {
    let Ok(conn) = net.accept(listen_fd) else {
        return;
    };
    let mut buf = Vec::with_capacity(stages.len() * StageRecord::WIRE_LEN);
    for s in stages {
        buf.extend_from_slice(&s.to_bytes());
    }
    let _ = net.write_all(conn, &buf);
    let _ = net.close(conn);
}

struct Session<'a, N: Net> {
    net: &'a mut N,
    fd: Fd,
    frames: FrameBuffer,
    chunk: Vec<u8>,
}

enum Recv {
    Frame,
    Eof,
}

impl<N: Net> Session<'_, N> {
    fn send(&mut self, msg: &E3Message) -> Result<(), Errno> {
        let mut buf = Vec::new();
        encode_into(msg, &mut buf).map_err(|_| Errno::Inval)?;
        self.net.write_all(self.fd, &buf)
    }

    /// Reads until at least one complete frame is buffered.
    fn fill(&mut self) -> Result<Recv, Errno> {
        loop {
            if self.frames.has_frame() {
                return Ok(Recv::Frame);
            }
            let n = self.net.read(self.fd, &mut self.chunk)?;
            if n == 0 {
                return Ok(Recv::Eof);
            }
            self.frames.push(&self.chunk[..n]);
        }
    }

    fn next_message(&mut self) -> Result<E3Message, ExitCode> {
        match self.fill().map_err(|_| ExitCode::Protocol)? {
            Recv::Eof => Err(ExitCode::Protocol),
            Recv::Frame => match self.frames.next_message() {
                Some(Ok(m)) => Ok(m),
                _ => Err(ExitCode::Protocol),
            },
        }
    }

    fn handshake(&mut self, cfg: &SensingConfig) -> Result<(), ExitCode> {
        let services = ServiceSet::of(&[ServiceKind::Report, ServiceKind::Control]);
        self.send(&E3Message::SetupRequest {
            dapp_id: cfg.dapp_id,
            services,
        })
        .map_err(|_| ExitCode::Protocol)?;
        match self.next_message()? {
            E3Message::SetupResponse {
                status: Status::Ok, ..
            } => {}
            E3Message::SetupResponse {
                status: Status::Rejected,
                ..
            } => return Err(ExitCode::SetupRejected),
            _ => return Err(ExitCode::Protocol),
        }
        self.send(&E3Message::SubscriptionRequest {
            dapp_id: cfg.dapp_id,
            service: ServiceKind::Report,
            period_us: cfg.period_us,
        })
        .map_err(|_| ExitCode::Protocol)?;
        match self.next_message()? {
            E3Message::SubscriptionResponse {
                status: Status::Ok, ..
            } => Ok(()),
            _ => Err(ExitCode::Protocol),
        }
    }

    fn serve(
        &mut self,
        cfg: &SensingConfig,
        sensor: &mut Sensor,
        outcome: &mut DappOutcome,
    ) -> Result<(), Errno> {
        let mut out = Vec::with_capacity(64);
        loop {
            if let Recv::Eof = self.fill()? {
                return Ok(());
            }
            while let Some(raw) = self.frames.next_raw() {
                let raw = raw.map_err(|_| Errno::Inval)?;
                let t0 = clock(self.net, cfg);
                let msg = decode(raw);
                let t1 = clock(self.net, cfg);
                let (seq, frame) = match msg {
                    Ok(E3Message::Indication {
                        seq,
                        payload: IndicationPayload::Iq(frame),
                        ..
                    }) => (seq, frame),
                    Ok(_) => continue,
                    Err(_) => {
                        outcome.dropped += 1;
                        continue;
                    }
                };
                let blocklist = match sensor.sense(&frame) {
                    Ok(b) => b,
                    Err(_) => {
                        outcome.dropped += 1;
                        continue;
                    }
                };
                let t2 = clock(self.net, cfg);
                out.clear();
                encode_into(
                    &E3Message::Control {
                        dapp_id: cfg.dapp_id,
                        seq,
                        action: ControlAction::Blocklist(blocklist),
                    },
                    &mut out,
                )
                .map_err(|_| Errno::Inval)?;
                let t3 = clock(self.net, cfg);
                self.net.write_all(self.fd, &out)?;
                let t4 = clock(self.net, cfg);
                outcome.controls_sent += 1;
                if cfg.instrument {
                    let d = |a: u64, b: u64| b.saturating_sub(a).min(u32::MAX as u64) as u32;
                    outcome.stages.push(StageRecord {
                        seq,
                        decode_us: d(t0, t1),
                        process_us: d(t1, t2),
                        encode_us: d(t2, t3),
                        transmit_us: d(t3, t4),
                        cumulative_us: d(t0, t4),
                    });
                }
            }
        }
    }
}

fn clock<N: Net>(net: &mut N, cfg: &SensingConfig) -> u64 {
    if cfg.instrument {
        net.clock_us()
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_record_bytes() {
        let r = StageRecord {
            seq: 7,
            decode_us: 1,
            process_us: 2,
            encode_us: 3,
            transmit_us: 4,
            cumulative_us: 10,
        };
        let mut log = r.to_bytes().to_vec();
        log.extend_from_slice(&[0, 1]);
        assert_eq!(StageRecord::parse_log(&log), vec![r]);
        assert_eq!(r.stage_sum(), 10);
    }
}
