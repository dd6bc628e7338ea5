//! Event-sourced protocol engine for one matched pair per period.

mod engine;
mod event;
mod plan;
mod state;
mod visibility;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use engine::{AgentInput, PeriodEngine, PeriodSetup};
pub use event::{
    encode_event, read_jsonl, to_jsonl, write_jsonl, EventBody, LogError, MechanismKind, MechanismSpec,
    SeqCounter, SessionEvent, SpecError, EVENT_SCHEMA_VERSION,
};
pub use plan::{group_of, plan_session, PeriodPlan, PlanError};
pub use state::{advance, initial_cursor, lapse_fill, replay, ClockState, MechanismState, Phase, ProtocolError};
pub use visibility::{audit, audit_delivery, frame, visible_event, visible_events, AuditError, ClockFrame, StateFrame};

use crate::choice::{Excluded, ObservationSet};
use crate::table::{frac_cell, Table};
use crate::model::{outcome_report, uniform_allocate, Allocation, Amount, OutcomeReport, PayoffParams, Valuation};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("log integrity: {0}")]
    Integrity(String),
}

/// Replays a complete period log, recomputes the allocation independently
/// of the recorded one, and scores it.
pub fn finalize_period(
    log: &[SessionEvent],
    valuation: &Valuation,
    params: &PayoffParams,
) -> Result<OutcomeReport, SessionError> {
    let recorded = log.iter().rev().find_map(|e| match &e.body {
        EventBody::AllocationAssigned { allocation } => Some(allocation.clone()),
        _ => None,
    });
    let Some(recorded) = recorded else {
        return Err(SessionError::Integrity("log has no AllocationAssigned".into()));
    };
    let state = replay(log)?;
    if !state.is_finished() {
        return Err(SessionError::Integrity("log ends before the period finished".into()));
    }
    let header_peaks: Vec<Option<u32>> = state.peaks.clone();
    let expected: Vec<Option<u32>> = valuation.peaks.iter().map(|p| Some(*p)).collect();
    if header_peaks != expected {
        return Err(SessionError::Integrity(format!(
            "log was played with peaks {header_peaks:?}, not {}",
            valuation
        )));
    }
    let recomputed = recompute_allocation(log, state.supply)?;
    if recomputed != recorded {
        return Err(SessionError::Integrity(format!(
            "recorded allocation {recorded:?} but the reports give {recomputed:?}"
        )));
    }
    let allocation = Allocation::new(recomputed, valuation.supply).map_err(|e| SessionError::Integrity(e.to_string()))?;
    Ok(outcome_report(&allocation, valuation, params))
}

/// Allocation from the finalized reports, or from the last resolved clock step.
fn recompute_allocation(log: &[SessionEvent], supply: u32) -> Result<Vec<Amount>, SessionError> {
    let clock_end = log.iter().rev().find_map(|e| match &e.body {
        EventBody::StepResolved { temp, terminal: true, .. } => Some(*temp),
        _ => None,
    });
    if let Some(t) = clock_end {
        return Ok(t.iter().map(|&x| Amount::from_integer(x as i64)).collect());
    }
    let mut reports = [None; 2];
    for e in log {
        if let (EventBody::ReportFinalized { value, .. }, Some(a)) = (&e.body, e.agent) {
            reports[a.min(1)] = Some(*value);
        }
    }
    let [Some(a), Some(b)] = reports else {
        return Err(SessionError::Integrity("missing finalized reports".into()));
    };
    uniform_allocate(&[a, b], supply)
        .map(|x| x.amounts().to_vec())
        .map_err(|e| SessionError::Integrity(e.to_string()))
}

/// Splits an interleaved session log into per-(period, pair) logs.
pub fn split_periods(log: &[SessionEvent]) -> BTreeMap<(u32, u32), Vec<SessionEvent>> {
    let mut out: BTreeMap<(u32, u32), Vec<SessionEvent>> = BTreeMap::new();
    for e in log {
        out.entry((e.period, e.pair)).or_default().push(e.clone());
    }
    out
}

/// Observation rows for the choice model: in PFU every distinct tentative
/// partner value seen, in SRU the first mover's report as seen by the
/// second mover. Rows without any observed partner report are set aside.
pub fn observations_from_log(log: &[SessionEvent], cluster_id: &str) -> (Vec<ObservationSet>, Excluded) {
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for ((period, pair), events) in split_periods(log) {
        let state = match replay(&events) {
            Ok(s) if s.is_finished() => s,
            _ => {
                excluded.push((period as usize, format!("period {period} pair {pair} is incomplete")));
                continue;
            }
        };
        let seats: Vec<usize> = match state.mechanism {
            Some(MechanismKind::Pfu) => vec![0, 1],
            Some(MechanismKind::Sru) => vec![1 - state.first_mover.unwrap_or(0)],
            _ => continue,
        };
        for seat in seats {
            let partner = 1 - seat;
            let seen: BTreeSet<u32> = visible_events(&events, seat)
                .iter()
                .filter(|e| e.agent == Some(partner))
                .filter_map(|e| match e.body {
                    EventBody::TentativeReport { value } => Some(value),
                    EventBody::ReportFinalized { value, .. } if state.mechanism == Some(MechanismKind::Sru) => Some(value),
                    _ => None,
                })
                .collect();
            let (Some(peak), Some(fin)) = (state.peaks[seat], state.finalized[seat]) else {
                continue;
            };
            if seen.is_empty() {
                excluded.push((period as usize, format!("period {period} pair {pair} seat {seat}: no partner report observed")));
                continue;
            }
            rows.push(ObservationSet {
                own_peak: peak,
                observed_partner_reports: seen,
                final_report: fin,
                cluster_id: cluster_id.to_string(),
            });
        }
    }
    (rows, excluded)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodOutcome {
    pub period: u32,
    pub pair: u32,
    pub mechanism: MechanismKind,
    pub valuation: Valuation,
    pub report: OutcomeReport,
}

/// Replays every (period, pair) of a session log and scores it against the
/// peaks recorded in its header.
pub fn replay_outcomes(log: &[SessionEvent], params: &PayoffParams) -> Result<Vec<PeriodOutcome>, SessionError> {
    let mut out = Vec::new();
    for ((period, pair), events) in split_periods(log) {
        let state = replay(&events)?;
        let peaks: Option<Vec<u32>> = state.peaks.iter().copied().collect();
        let (Some(peaks), Some(mechanism)) = (peaks, state.mechanism) else {
            return Err(SessionError::Integrity(format!(
                "period {period} pair {pair}: header lacks peaks"
            )));
        };
        let valuation = Valuation::new(peaks, state.supply).map_err(|e| SessionError::Integrity(e.to_string()))?;
        let params = PayoffParams {
            supply: state.supply,
            ..*params
        };
        let report = finalize_period(&events, &valuation, &params)?;
        out.push(PeriodOutcome {
            period,
            pair,
            mechanism,
            valuation,
            report,
        });
    }
    Ok(out)
}

pub fn outcome_table(outcomes: &[PeriodOutcome]) -> Table {
    let mut t = Table::new(
        "Replayed pair outcomes",
        "event-log replay scored with exact fractions",
        &["period", "pair", "mechanism", "peaks", "allocation", "payoffs", "uniform", "efficient", "within-1", "group loss", "efficiency share"],
    );
    for o in outcomes {
        let r = &o.report;
        let join = |xs: &[Amount]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        t.push(vec![
            o.period.to_string(),
            o.pair.to_string(),
            o.mechanism.to_string(),
            o.valuation.to_string(),
            join(r.allocation.amounts()),
            join(&r.payoffs),
            r.is_uniform.to_string(),
            r.is_efficient.to_string(),
            r.is_within1_efficient.to_string(),
            r.group_loss.to_string(),
            frac_cell(r.efficiency_share, 3),
        ]);
    }
    t
}
