use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::event::{EventBody, MechanismKind, SessionEvent};
use super::state::{MechanismState, Phase};
use crate::ospu::Action;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Header {
    mechanism: MechanismKind,
    first_mover: Option<usize>,
}

fn header(log: &[SessionEvent]) -> Option<Header> {
    log.iter().find_map(|e| match &e.body {
        EventBody::PeriodStarted {
            mechanism,
            first_mover,
            ..
        } => Some(Header {
            mechanism: *mechanism,
            first_mover: *first_mover,
        }),
        _ => None,
    })
}

fn view_of(e: &SessionEvent, viewer: usize, h: Header) -> Option<SessionEvent> {
    let own = e.agent == Some(viewer);
    let partner = e.agent.is_some() && !own;
    match &e.body {
        EventBody::PeriodStarted {
            mechanism,
            supply,
            peaks,
            reporting_ms,
            step_ms,
            first_mover,
        } => {
            let redacted = peaks
                .iter()
                .enumerate()
                .map(|(i, p)| if i == viewer { *p } else { None })
                .collect();
            Some(SessionEvent {
                body: EventBody::PeriodStarted {
                    mechanism: *mechanism,
                    supply: *supply,
                    peaks: redacted,
                    reporting_ms: *reporting_ms,
                    step_ms: *step_ms,
                    first_mover: *first_mover,
                },
                ..e.clone()
            })
        }
        EventBody::TentativeReport { .. } if partner => (h.mechanism == MechanismKind::Pfu).then(|| e.clone()),
        EventBody::ReportFinalized { .. } if partner => {
            (h.mechanism == MechanismKind::Sru && e.agent == h.first_mover).then(|| e.clone())
        }
        EventBody::StepChoice { .. } | EventBody::OptOut { .. } if partner => None,
        _ => Some(e.clone()),
    }
}

/// The events of one period log that `viewer` is allowed to see, in order.
pub fn visible_events(log: &[SessionEvent], viewer: usize) -> Vec<SessionEvent> {
    let Some(h) = header(log) else {
        return Vec::new();
    };
    log.iter().filter_map(|e| view_of(e, viewer, h)).collect()
}

/// Single-event form of [`visible_events`] for streaming delivery.
pub fn visible_event(header_event: &SessionEvent, e: &SessionEvent, viewer: usize) -> Option<SessionEvent> {
    header(std::slice::from_ref(header_event)).and_then(|h| view_of(e, viewer, h))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("seq {seq}: agent {viewer} received the partner's peak")]
    PeakLeak { viewer: usize, seq: u64 },
    #[error("seq {seq}: agent {viewer} received a partner report it may not see")]
    ReportLeak { viewer: usize, seq: u64 },
    #[error("seq {seq}: agent {viewer} received the partner's clock choice before resolution")]
    ChoiceLeak { viewer: usize, seq: u64 },
    #[error("agent {viewer} was shown {count} finalized first-mover reports, expected exactly one")]
    SecondMoverView { viewer: usize, count: usize },
    #[error("partner tentative report seq {seq} never reached agent {viewer}")]
    MissingFeedback { viewer: usize, seq: u64 },
    #[error("seq {seq}: delivered event does not match the log")]
    Forged { seq: u64 },
    #[error("log has no period header")]
    NoHeader,
}

/// Checks what was actually delivered to `viewer` against the
/// information rules of the period's mechanism.
pub fn audit_delivery(log: &[SessionEvent], viewer: usize, delivered: &[SessionEvent]) -> Result<(), AuditError> {
    let h = header(log).ok_or(AuditError::NoHeader)?;
    let partner = 1 - viewer;
    for d in delivered {
        let original = log
            .iter()
            .find(|e| e.seq == d.seq)
            .ok_or(AuditError::Forged { seq: d.seq })?;
        let expected_body_kind = original.body.kind() == d.body.kind() && original.agent == d.agent;
        if !expected_body_kind {
            return Err(AuditError::Forged { seq: d.seq });
        }
        match &d.body {
            EventBody::PeriodStarted { peaks, .. } => {
                if peaks.get(partner).copied().flatten().is_some() {
                    return Err(AuditError::PeakLeak { viewer, seq: d.seq });
                }
            }
            EventBody::TentativeReport { .. } if d.agent == Some(partner) => {
                if h.mechanism != MechanismKind::Pfu {
                    return Err(AuditError::ReportLeak { viewer, seq: d.seq });
                }
            }
            EventBody::ReportFinalized { .. } if d.agent == Some(partner) => {
                let allowed = h.mechanism == MechanismKind::Sru && h.first_mover == Some(partner);
                if !allowed {
                    return Err(AuditError::ReportLeak { viewer, seq: d.seq });
                }
            }
            EventBody::StepChoice { .. } | EventBody::OptOut { .. } if d.agent == Some(partner) => {
                return Err(AuditError::ChoiceLeak { viewer, seq: d.seq });
            }
            _ => {}
        }
        if d.body != original.body && !matches!(d.body, EventBody::PeriodStarted { .. }) {
            return Err(AuditError::Forged { seq: d.seq });
        }
    }
    match h.mechanism {
        MechanismKind::Sru if h.first_mover == Some(partner) => {
            let count = delivered
                .iter()
                .filter(|d| d.agent == Some(partner) && matches!(d.body, EventBody::ReportFinalized { .. }))
                .count();
            let first_done = log
                .iter()
                .any(|e| e.agent == Some(partner) && matches!(e.body, EventBody::ReportFinalized { .. }));
            if first_done && count != 1 {
                return Err(AuditError::SecondMoverView { viewer, count });
            }
        }
        MechanismKind::Pfu => {
            for e in log {
                if e.agent == Some(partner) && matches!(e.body, EventBody::TentativeReport { .. }) && !delivered.iter().any(|d| d.seq == e.seq) {
                    return Err(AuditError::MissingFeedback { viewer, seq: e.seq });
                }
            }
        }
        _ => {}
    }
    Ok(())
}

/// Audits the built-in filter for both seats of a period log.
pub fn audit(log: &[SessionEvent]) -> Result<(), AuditError> {
    for viewer in 0..2 {
        audit_delivery(log, viewer, &visible_events(log, viewer))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockFrame {
    pub step: u32,
    pub temp: [u32; 2],
    pub delta: [i32; 2],
    /// Temporary assignment if both continue.
    pub next: Option<[u32; 2]>,
    pub deadline_ms: Option<u64>,
    pub own_choice: Option<Action>,
}

/// Everything one participant's screen may show at a point in time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateFrame {
    pub period: u32,
    pub pair: u32,
    pub seat: usize,
    pub mechanism: Option<MechanismKind>,
    pub phase: Phase,
    pub supply: u32,
    pub own_peak: Option<u32>,
    pub cursor: u32,
    pub own_final: Option<u32>,
    pub my_turn: bool,
    pub window_close_ms: Option<u64>,
    /// Shown once the partner has touched their slider.
    pub partner_tentative: Option<u32>,
    pub partner_final: Option<u32>,
    pub clock: Option<ClockFrame>,
    pub allocation: Option<Vec<String>>,
}

pub fn frame(state: &MechanismState, seat: usize) -> StateFrame {
    let partner = 1 - seat;
    let mech = state.mechanism;
    let reporting = state.phase == Phase::Reporting;
    let clock = state.clock.as_ref().map(|c| ClockFrame {
        step: c.step,
        temp: c.temp,
        delta: c.delta,
        next: (c.step > 0 && c.step_open).then(|| {
            [
                (c.temp[0] as i64 + c.delta[0] as i64).max(0) as u32,
                (c.temp[1] as i64 + c.delta[1] as i64).max(0) as u32,
            ]
        }),
        deadline_ms: c.step_open.then_some(c.deadline_ms),
        own_choice: c.choices[seat],
    });
    let clock_turn = state
        .clock
        .as_ref()
        .is_some_and(|c| c.step_open && c.choices[seat].is_none());
    StateFrame {
        period: state.period,
        pair: state.pair,
        seat,
        mechanism: mech,
        phase: state.phase,
        supply: state.supply,
        own_peak: state.peaks.get(seat).copied().flatten(),
        cursor: state.cursor[seat],
        own_final: state.finalized[seat],
        my_turn: (reporting && state.open[seat]) || clock_turn,
        window_close_ms: (reporting && state.open[seat]).then_some(state.close_ms),
        partner_tentative: (mech == Some(MechanismKind::Pfu) && state.moved[partner]).then_some(state.cursor[partner]),
        partner_final: (mech == Some(MechanismKind::Sru) && state.first_mover == Some(partner))
            .then_some(state.finalized[partner])
            .flatten(),
        clock,
        allocation: state
            .allocation
            .as_ref()
            .map(|a| a.iter().map(|x| x.to_string()).collect()),
    }
}
