//! Protocol state machine. No I/O: the event loop in [`crate::server`]
//! feeds it decoded messages and a clock.

use std::collections::{BTreeMap, HashMap};

use e3_codec::{E3Message, IndicationPayload, ServiceKind, Status};

use crate::records::{LoopLog, LoopRecord};
use crate::scenario::{frame_at, ScenarioConfig, MIN_PERIOD_US};
use crate::scheduler::SchedulerState;

/// Identifies one dApp connection.
pub type ConnId = u32;

/// `ErrorIndication` codes sent by the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ErrorCode {
    /// A message the agent never expects from a dApp.
    UnknownRequest = 1,
    /// A primitive that decodes but is not implemented (insert, policy,
    /// query).
    Unsupported = 2,
    /// Subscription or control from a dApp without a setup on this
    /// connection.
    NotRegistered = 3,
    /// Control that does not fit the scenario.
    BadControl = 4,
}

impl ErrorCode {
    pub fn message(self) -> E3Message {
        E3Message::ErrorIndication { code: self as u8 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    pub sub_id: u32,
    pub dapp_id: u32,
    pub service: ServiceKind,
    pub period_us: u32,
    pub next_seq: u32,
    pub conn: ConnId,
    pub open: bool,
}

pub struct Agent {
    scenario: ScenarioConfig,
    dapps: HashMap<u32, ConnId>,
    subs: BTreeMap<u32, Subscription>,
    next_sub_id: u32,
    scheduler: SchedulerState,
    /// Send time of every indication not yet answered, by (dapp, seq).
    in_flight: HashMap<(u32, u32), u64>,
    log: LoopLog,
    errors_sent: u64,
}

impl Agent {
    /// `scenario` must already be validated.
    pub fn new(scenario: ScenarioConfig) -> Self {
        let scheduler = SchedulerState::new(scenario.n_prb);
        Self {
            scenario,
            dapps: HashMap::new(),
            subs: BTreeMap::new(),
            next_sub_id: 1,
            scheduler,
            in_flight: HashMap::new(),
            log: LoopLog::new(),
            errors_sent: 0,
        }
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn scheduler(&self) -> &SchedulerState {
        &self.scheduler
    }

    /// Handle on the loop records, readable while the agent runs.
    pub fn loop_log(&self) -> LoopLog {
        self.log.clone()
    }

    pub fn subscription(&self, sub_id: u32) -> Option<&Subscription> {
        self.subs.get(&sub_id)
    }

    pub fn subscriptions(&self) -> impl Iterator<Item = &Subscription> {
        self.subs.values()
    }

    /// Indications sent to `dapp_id` that have no control yet.
    pub fn outstanding(&self, dapp_id: u32) -> usize {
        self.in_flight.keys().filter(|(d, _)| *d == dapp_id).count()
    }

    pub fn errors_sent(&self) -> u64 {
        self.errors_sent
    }

    fn registered_on(&self, dapp_id: u32, conn: ConnId) -> bool {
        self.dapps.get(&dapp_id) == Some(&conn)
    }

    /// Processes one message from `conn` at agent time `now_us` and returns
    /// the reply, if any.
    pub fn handle_message(&mut self, msg: E3Message, conn: ConnId, now_us: u64) -> Option<E3Message> {
        let reply = match msg {
            E3Message::SetupRequest { dapp_id, .. } => {
                let status = if self.dapps.contains_key(&dapp_id) {
                    Status::Rejected
                } else {
                    self.dapps.insert(dapp_id, conn);
                    Status::Ok
                };
                Some(E3Message::SetupResponse { dapp_id, status })
            }
            E3Message::SubscriptionRequest {
                dapp_id,
                service,
                period_us,
            } => Some(self.subscribe(dapp_id, service, period_us, conn)),
            E3Message::Control {
                dapp_id,
                seq,
                action,
            } => {
                if !self.registered_on(dapp_id, conn) {
                    Some(ErrorCode::NotRegistered.message())
                } else if self.scheduler.apply(seq, &action).is_err() {
                    Some(ErrorCode::BadControl.message())
                } else {
                    if let Some(sent) = self.in_flight.remove(&(dapp_id, seq)) {
                        self.log.push(LoopRecord::new(seq, sent, now_us));
                    }
                    None
                }
            }
            // Answering an error with an error could ping-pong forever.
            E3Message::ErrorIndication { code } => {
                log::warn!("dApp on connection {conn} reported error {code}");
                None
            }
            _ => Some(ErrorCode::UnknownRequest.message()),
        };
        if matches!(reply, Some(E3Message::ErrorIndication { .. })) {
            self.errors_sent += 1;
        }
        reply
    }

    fn subscribe(&mut self, dapp_id: u32, service: ServiceKind, period_us: u32, conn: ConnId) -> E3Message {
        if !self.registered_on(dapp_id, conn) {
            return ErrorCode::NotRegistered.message();
        }
        if service != ServiceKind::Report {
            return ErrorCode::Unsupported.message();
        }
        let period_us = match period_us {
            0 => self.scenario.indication_period_us,
            p => p,
        };
        if period_us < MIN_PERIOD_US {
            return E3Message::SubscriptionResponse {
                sub_id: 0,
                status: Status::Rejected,
            };
        }
        let sub_id = self.next_sub_id;
        self.next_sub_id += 1;
        self.subs.insert(
            sub_id,
            Subscription {
                sub_id,
                dapp_id,
                service,
                period_us,
                next_seq: 0,
                conn,
                open: true,
            },
        );
        E3Message::SubscriptionResponse {
            sub_id,
            status: Status::Ok,
        }
    }

    /// Builds the next indication of `sub_id` and records it as sent at
    /// `now_us`. `None` once the scenario duration is exhausted or the
    /// subscription is closed.
    pub fn next_indication(&mut self, sub_id: u32, now_us: u64) -> Option<E3Message> {
        let sub = self.subs.get_mut(&sub_id)?;
        if !sub.open || sub.next_seq >= self.scenario.indication_count(sub.period_us) {
            return None;
        }
        let seq = sub.next_seq;
        sub.next_seq += 1;
        // Scenario time follows the nominal schedule, not the wall clock,
        // so frame content depends only on the seed and seq.
        let t_us = u64::from(seq) * u64::from(sub.period_us);
        let frame = frame_at(&self.scenario, t_us);
        self.in_flight.insert((sub.dapp_id, seq), now_us);
        Some(E3Message::Indication {
            sub_id,
            seq,
            timestamp_us: now_us,
            payload: IndicationPayload::Iq(frame),
        })
    }

    /// True once `sub_id` has sent every indication of the scenario.
    pub fn exhausted(&self, sub_id: u32) -> bool {
        self.subs
            .get(&sub_id)
            .is_none_or(|s| !s.open || s.next_seq >= self.scenario.indication_count(s.period_us))
    }

    /// Drops everything tied to a closed connection.
    pub fn disconnect(&mut self, conn: ConnId) {
        let gone: Vec<u32> = self
            .dapps
            .iter()
            .filter(|(_, c)| **c == conn)
            .map(|(d, _)| *d)
            .collect();
        for d in &gone {
            self.dapps.remove(d);
        }
        self.in_flight.retain(|(d, _), _| !gone.contains(d));
        for s in self.subs.values_mut().filter(|s| s.conn == conn) {
            s.open = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use e3_codec::{ControlAction, PrbBlocklist, ServiceSet};

    fn agent() -> Agent {
        Agent::new(ScenarioConfig {
            duration_us: 5_000,
            ..Default::default()
        })
    }

    fn setup(id: u32) -> E3Message {
        E3Message::SetupRequest {
            dapp_id: id,
            services: ServiceSet::of(&[ServiceKind::Report, ServiceKind::Control]),
        }
    }

    fn control(dapp_id: u32, seq: u32, n: u16, prbs: &[u16]) -> E3Message {
        E3Message::Control {
            dapp_id,
            seq,
            action: ControlAction::Blocklist(PrbBlocklist::from_indices(n, prbs.iter().copied()).unwrap()),
        }
    }

    #[test]
    fn setup_then_subscribe() {
        let mut a = agent();
        assert_eq!(
            a.handle_message(setup(1), 0, 0),
            Some(E3Message::SetupResponse { dapp_id: 1, status: Status::Ok })
        );
        let sub = E3Message::SubscriptionRequest {
            dapp_id: 1,
            service: ServiceKind::Report,
            period_us: 1000,
        };
        assert_eq!(
            a.handle_message(sub, 0, 0),
            Some(E3Message::SubscriptionResponse { sub_id: 1, status: Status::Ok })
        );
        assert_eq!(
            a.handle_message(setup(1), 1, 0),
            Some(E3Message::SetupResponse { dapp_id: 1, status: Status::Rejected })
        );
    }

    #[test]
    fn errors() {
        let mut a = agent();
        assert_eq!(a.handle_message(control(1, 0, 64, &[]), 0, 0), Some(ErrorCode::NotRegistered.message()));
        a.handle_message(setup(1), 0, 0);
        for service in [ServiceKind::Insert, ServiceKind::Policy, ServiceKind::Query] {
            let m = E3Message::SubscriptionRequest { dapp_id: 1, service, period_us: 1000 };
            assert_eq!(a.handle_message(m, 0, 0), Some(ErrorCode::Unsupported.message()));
        }
        let m = E3Message::SubscriptionRequest { dapp_id: 1, service: ServiceKind::Report, period_us: 50 };
        assert_eq!(
            a.handle_message(m, 0, 0),
            Some(E3Message::SubscriptionResponse { sub_id: 0, status: Status::Rejected })
        );
        let m = E3Message::SetupResponse { dapp_id: 1, status: Status::Ok };
        assert_eq!(a.handle_message(m, 0, 0), Some(ErrorCode::UnknownRequest.message()));
        assert_eq!(a.handle_message(control(1, 0, 32, &[1]), 0, 0), Some(ErrorCode::BadControl.message()));
        // Another connection cannot act for dApp 1.
        assert_eq!(a.handle_message(control(1, 0, 64, &[]), 9, 0), Some(ErrorCode::NotRegistered.message()));
        assert_eq!(a.errors_sent(), 7);
    }

    #[test]
    fn loop_records() {
        let mut a = agent();
        a.handle_message(setup(1), 0, 0);
        let m = E3Message::SubscriptionRequest { dapp_id: 1, service: ServiceKind::Report, period_us: 0 };
        a.handle_message(m, 0, 0);
        let mut seqs = vec![];
        while let Some(E3Message::Indication { seq, timestamp_us, .. }) = a.next_indication(1, 100 * seqs.len() as u64) {
            assert_eq!(timestamp_us, 100 * seq as u64);
            seqs.push(seq);
        }
        assert_eq!(seqs, [0, 1, 2, 3, 4]);
        assert!(a.exhausted(1));
        assert_eq!(a.outstanding(1), 5);
        assert_eq!(a.handle_message(control(1, 2, 64, &[3, 40]), 0, 250), None);
        // A second answer for the same seq applies but is not re-recorded.
        assert_eq!(a.handle_message(control(1, 2, 64, &[3, 40]), 0, 260), None);
        assert_eq!(a.loop_log().snapshot(), [LoopRecord::new(2, 200, 250)]);
        assert_eq!(a.scheduler().blocked(), [3, 40]);
        assert_eq!(a.scheduler().applied_count, 2);
        a.disconnect(0);
        assert_eq!(a.outstanding(1), 0);
        assert_eq!(a.handle_message(setup(1), 1, 0), Some(E3Message::SetupResponse { dapp_id: 1, status: Status::Ok }));
    }
}
