use std::collections::VecDeque;

use e3_codec::{
    encode, ControlAction, E3Message, FrameBuffer, IndicationPayload, Iq, IqFrame, Status,
};
use spectrum_dapp::{run_dapp, Errno, ExitCode, Fd, Net, SensingConfig, StageRecord};

/// Scripted agent: replies are queued up front and the stream ends with EOF.
struct MockNet {
    allowed: (String, u16),
    inbound: VecDeque<u8>,
    outbound: Vec<u8>,
    /// Bytes per read call, to exercise frame reassembly.
    read_size: usize,
    clock: u64,
    listen_port: Option<u16>,
    stage_log: Vec<u8>,
}

const AGENT_FD: Fd = 3;
const LISTEN_FD: Fd = 4;
const COLLECTOR_FD: Fd = 5;

impl MockNet {
    fn new(script: &[E3Message], read_size: usize) -> Self {
        let mut inbound = VecDeque::new();
        for m in script {
            inbound.extend(encode(m).unwrap());
        }
        Self {
            allowed: ("localhost".into(), 9990),
            inbound,
            outbound: Vec::new(),
            read_size,
            clock: 0,
            listen_port: None,
            stage_log: Vec::new(),
        }
    }

    fn sent(&self) -> Vec<E3Message> {
        let mut fb = FrameBuffer::new();
        fb.push(&self.outbound);
        std::iter::from_fn(|| fb.next_message().map(Result::unwrap)).collect()
    }
}

impl Net for MockNet {
    fn connect(&mut self, host: &str, port: u16) -> Result<Fd, Errno> {
        if (host, port) == (self.allowed.0.as_str(), self.allowed.1) {
            Ok(AGENT_FD)
        } else {
            Err(Errno::Acces)
        }
    }

    fn bind(&mut self, port: u16) -> Result<Fd, Errno> {
        self.listen_port = Some(port);
        Ok(LISTEN_FD)
    }

    fn accept(&mut self, fd: Fd) -> Result<Fd, Errno> {
        assert_eq!(fd, LISTEN_FD);
        Ok(COLLECTOR_FD)
    }

    fn read(&mut self, fd: Fd, buf: &mut [u8]) -> Result<usize, Errno> {
        assert_eq!(fd, AGENT_FD);
        let n = buf.len().min(self.read_size).min(self.inbound.len());
        for b in buf.iter_mut().take(n) {
            *b = self.inbound.pop_front().unwrap();
        }
        Ok(n)
    }

    fn write(&mut self, fd: Fd, buf: &[u8]) -> Result<usize, Errno> {
        match fd {
            AGENT_FD => self.outbound.extend_from_slice(buf),
            COLLECTOR_FD => self.stage_log.extend_from_slice(buf),
            _ => return Err(Errno::Badf),
        }
        Ok(buf.len())
    }

    fn close(&mut self, _fd: Fd) -> Result<(), Errno> {
        Ok(())
    }

    fn clock_us(&mut self) -> u64 {
        self.clock += 3;
        self.clock
    }
}

fn tone(bin: usize, n: usize) -> IqFrame {
    IqFrame::new(
        (0..n)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * ((bin * k) % n) as f64 / n as f64;
                Iq::new(a.cos() as f32, a.sin() as f32)
            })
            .collect(),
    )
}

fn indication(seq: u32, frame: IqFrame) -> E3Message {
    E3Message::Indication {
        sub_id: 1,
        seq,
        timestamp_us: u64::from(seq) * 1000,
        payload: IndicationPayload::Iq(frame),
    }
}

fn handshake_ok() -> Vec<E3Message> {
    vec![
        E3Message::SetupResponse {
            dapp_id: 1,
            status: Status::Ok,
        },
        E3Message::SubscriptionResponse {
            sub_id: 1,
            status: Status::Ok,
        },
    ]
}

fn small_cfg() -> SensingConfig {
    SensingConfig {
        fft_size: 256,
        n_prb: 16,
        ..SensingConfig::default()
    }
}

#[test]
fn answers_every_indication_with_matching_seq() {
    let mut script = handshake_ok();
    for seq in 0..100u32 {
        let prb = (seq % 16) as usize;
        script.push(indication(seq, tone(prb * 16 + 8, 256)));
    }
    let mut net = MockNet::new(&script, 1000);
    let out = run_dapp(&mut net, &small_cfg());
    assert_eq!(out.exit, ExitCode::Ok);
    assert_eq!(out.controls_sent, 100);
    assert_eq!(out.dropped, 0);

    let sent = net.sent();
    assert!(matches!(sent[0], E3Message::SetupRequest { dapp_id: 1, .. }));
    assert!(matches!(sent[1], E3Message::SubscriptionRequest { .. }));
    assert_eq!(sent.len(), 102);
    for (i, msg) in sent[2..].iter().enumerate() {
        let E3Message::Control {
            seq,
            action: ControlAction::Blocklist(bl),
            ..
        } = msg
        else {
            panic!("expected control, got {msg:?}");
        };
        assert_eq!(*seq, i as u32);
        assert_eq!(bl.blocked().collect::<Vec<_>>(), vec![(i % 16) as u16]);
    }
}

#[test]
fn byte_at_a_time_reads() {
    let mut script = handshake_ok();
    script.push(indication(9, tone(8, 256)));
    let mut net = MockNet::new(&script, 1);
    let out = run_dapp(&mut net, &small_cfg());
    assert_eq!((out.exit, out.controls_sent), (ExitCode::Ok, 1));
}

#[test]
fn zero_sample_frame_is_dropped() {
    let mut script = handshake_ok();
    script.push(indication(0, IqFrame::new(vec![])));
    script.push(indication(1, tone(8, 256)));
    let mut net = MockNet::new(&script, 4096);
    let out = run_dapp(&mut net, &small_cfg());
    assert_eq!(out.exit, ExitCode::Ok);
    assert_eq!((out.controls_sent, out.dropped), (1, 1));
    assert!(matches!(net.sent()[2], E3Message::Control { seq: 1, .. }));
}

#[test]
fn setup_rejected_exits_2() {
    let script = [E3Message::SetupResponse {
        dapp_id: 1,
        status: Status::Rejected,
    }];
    let mut net = MockNet::new(&script, 4096);
    assert_eq!(run_dapp(&mut net, &small_cfg()).exit, ExitCode::SetupRejected);
}

#[test]
fn forbidden_endpoint_exits_3() {
    let mut net = MockNet::new(&handshake_ok(), 4096);
    let cfg = SensingConfig {
        agent_port: 1,
        ..small_cfg()
    };
    let out = run_dapp(&mut net, &cfg);
    assert_eq!(out.exit, ExitCode::ConnectFailed);
    assert_eq!(ExitCode::ConnectFailed as i32, 3);
}

#[test]
fn rejected_subscription_is_a_protocol_error() {
    let script = [
        E3Message::SetupResponse {
            dapp_id: 1,
            status: Status::Ok,
        },
        E3Message::SubscriptionResponse {
            sub_id: 0,
            status: Status::Rejected,
        },
    ];
    let mut net = MockNet::new(&script, 4096);
    assert_eq!(run_dapp(&mut net, &small_cfg()).exit, ExitCode::Protocol);
}

#[test]
fn instrumented_stages_add_up_and_are_flushed() {
    let mut script = handshake_ok();
    for seq in 0..5 {
        script.push(indication(seq, tone(40, 256)));
    }
    let mut net = MockNet::new(&script, 4096);
    let cfg = SensingConfig {
        instrument: true,
        stage_log_port: Some(7000),
        ..small_cfg()
    };
    let out = run_dapp(&mut net, &cfg);
    assert_eq!(out.exit, ExitCode::Ok);
    assert_eq!(net.listen_port, Some(7000));
    let log = StageRecord::parse_log(&net.stage_log);
    assert_eq!(log, out.stages);
    assert_eq!(log.len(), 5);
    for (i, r) in log.iter().enumerate() {
        assert_eq!(r.seq, i as u32);
        assert_eq!(r.stage_sum(), u64::from(r.cumulative_us));
        assert_eq!(r.cumulative_us, 12);
    }
}
