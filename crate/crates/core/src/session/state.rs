use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::event::{EventBody, MechanismKind, SessionEvent};
use crate::model::{uniform_allocate, Amount};
use crate::ospu::{transition, Action};

/// Starting cursor position for reports and the OSPU temporary assignment.
pub fn initial_cursor(supply: u32) -> u32 {
    supply / 2
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("{kind} from agent {agent:?} is not allowed during {phase:?}")]
    OutOfTurn {
        kind: &'static str,
        agent: Option<usize>,
        phase: Phase,
    },
    #[error("report {value} is outside 0..={supply}")]
    OutOfRange { value: u32, supply: u32 },
    #[error("agent {0} has already finalized")]
    DuplicateFinalization(usize),
    #[error("agent {agent} already acted at step {step}")]
    DuplicateChoice { agent: usize, step: u32 },
    #[error("sequence number {got} does not follow {last}")]
    Sequence { last: u64, got: u64 },
    #[error("time {got} ms precedes {last} ms")]
    TimeReversed { last: u64, got: u64 },
    #[error("time {time} ms is outside the open window ending at {close} ms")]
    OutsideWindow { time: u64, close: u64 },
    #[error("event belongs to period {got_period} pair {got_pair}, log is for period {period} pair {pair}")]
    WrongPeriod {
        period: u32,
        pair: u32,
        got_period: u32,
        got_pair: u32,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("log integrity: {0}")]
    Integrity(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    NotStarted,
    /// Report window open for the agents in `MechanismState::open`.
    Reporting,
    /// OSPU clock; `step_open` tells whether a step is accepting choices.
    Clock,
    /// Everyone has finalized; the allocation is due.
    Allocating,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClockState {
    pub step: u32,
    pub temp: [u32; 2],
    pub delta: [i32; 2],
    pub step_open: bool,
    pub deadline_ms: u64,
    pub choices: [Option<Action>; 2],
    /// Temporary assignments after each resolved step, starting at Step 0.
    pub path: Vec<[u32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MechanismState {
    pub phase: Phase,
    pub mechanism: Option<MechanismKind>,
    pub period: u32,
    pub pair: u32,
    pub supply: u32,
    pub peaks: Vec<Option<u32>>,
    pub reporting_ms: u64,
    pub step_ms: u64,
    pub first_mover: Option<usize>,
    pub last_seq: Option<u64>,
    pub now_ms: u64,
    /// Agents whose report window is open, and when it closes.
    pub open: [bool; 2],
    pub close_ms: u64,
    pub cursor: [u32; 2],
    pub moved: [bool; 2],
    pub finalized: [Option<u32>; 2],
    pub clock: Option<ClockState>,
    pub allocation: Option<Vec<Amount>>,
}

impl Default for MechanismState {
    fn default() -> Self {
        Self {
            phase: Phase::NotStarted,
            mechanism: None,
            period: 0,
            pair: 0,
            supply: 0,
            peaks: Vec::new(),
            reporting_ms: 0,
            step_ms: 0,
            first_mover: None,
            last_seq: None,
            now_ms: 0,
            open: [false; 2],
            close_ms: 0,
            cursor: [0; 2],
            moved: [false; 2],
            finalized: [None; 2],
            clock: None,
            allocation: None,
        }
    }
}

/// Applies one event to a state, returning the successor.
pub fn advance(state: &MechanismState, event: &SessionEvent) -> Result<MechanismState, ProtocolError> {
    let mut next = state.clone();
    next.apply(event)?;
    Ok(next)
}

/// Folds a whole period log.
pub fn replay(events: &[SessionEvent]) -> Result<MechanismState, ProtocolError> {
    let mut s = MechanismState::default();
    for e in events {
        s.apply(e)?;
    }
    Ok(s)
}

impl MechanismState {
    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Finished
    }

    fn out_of_turn(&self, e: &SessionEvent) -> ProtocolError {
        ProtocolError::OutOfTurn {
            kind: e.body.kind(),
            agent: e.agent,
            phase: self.phase,
        }
    }

    fn agent(&self, e: &SessionEvent) -> Result<usize, ProtocolError> {
        match e.agent {
            Some(a) if a < 2 => Ok(a),
            _ => Err(self.out_of_turn(e)),
        }
    }

    fn no_agent(&self, e: &SessionEvent) -> Result<(), ProtocolError> {
        match e.agent {
            None => Ok(()),
            Some(_) => Err(self.out_of_turn(e)),
        }
    }

    fn in_range(&self, value: u32) -> Result<(), ProtocolError> {
        if value > self.supply {
            Err(ProtocolError::OutOfRange {
                value,
                supply: self.supply,
            })
        } else {
            Ok(())
        }
    }

    fn within(&self, time: u64, close: u64) -> Result<(), ProtocolError> {
        if time > close {
            Err(ProtocolError::OutsideWindow { time, close })
        } else {
            Ok(())
        }
    }

    /// In-place transition; on error the state may be partially updated,
    /// so callers that need to keep the old state use [`advance`].
    pub fn apply(&mut self, e: &SessionEvent) -> Result<(), ProtocolError> {
        if let Some(last) = self.last_seq {
            if e.seq <= last {
                return Err(ProtocolError::Sequence { last, got: e.seq });
            }
            if e.period != self.period || e.pair != self.pair {
                return Err(ProtocolError::WrongPeriod {
                    period: self.period,
                    pair: self.pair,
                    got_period: e.period,
                    got_pair: e.pair,
                });
            }
        }
        if e.time_ms < self.now_ms {
            return Err(ProtocolError::TimeReversed {
                last: self.now_ms,
                got: e.time_ms,
            });
        }
        if self.phase == Phase::Finished {
            return Err(self.out_of_turn(e));
        }
        match &e.body {
            EventBody::PeriodStarted {
                mechanism,
                supply,
                peaks,
                reporting_ms,
                step_ms,
                first_mover,
            } => {
                if self.phase != Phase::NotStarted {
                    return Err(self.out_of_turn(e));
                }
                self.no_agent(e)?;
                if peaks.len() != 2 || *supply == 0 || *reporting_ms == 0 || *step_ms == 0 {
                    return Err(ProtocolError::Invalid("malformed period header".into()));
                }
                if *mechanism == MechanismKind::Sru && !matches!(first_mover, Some(0 | 1)) {
                    return Err(ProtocolError::Invalid("SRU needs a first mover".into()));
                }
                if *mechanism == MechanismKind::Ospu && supply % 2 != 0 {
                    return Err(ProtocolError::Invalid("the clock needs an even supply".into()));
                }
                self.mechanism = Some(*mechanism);
                self.period = e.period;
                self.pair = e.pair;
                self.supply = *supply;
                self.peaks = peaks.clone();
                self.reporting_ms = *reporting_ms;
                self.step_ms = *step_ms;
                self.first_mover = *first_mover;
                self.cursor = [initial_cursor(*supply); 2];
                self.close_ms = e.time_ms + reporting_ms;
                match mechanism {
                    MechanismKind::Dru | MechanismKind::Pfu => {
                        self.phase = Phase::Reporting;
                        self.open = [true, true];
                    }
                    MechanismKind::Sru => {
                        self.phase = Phase::Reporting;
                        let f = first_mover.expect("checked above");
                        self.open[f] = true;
                    }
                    MechanismKind::Ospu => {
                        let half = initial_cursor(*supply);
                        self.phase = Phase::Clock;
                        self.clock = Some(ClockState {
                            step: 0,
                            temp: [half, half],
                            delta: [0, 0],
                            step_open: false,
                            deadline_ms: 0,
                            choices: [None, None],
                            path: Vec::new(),
                        });
                    }
                }
            }
            EventBody::TentativeReport { value } => {
                let a = self.agent(e)?;
                if self.phase != Phase::Reporting || !self.open[a] {
                    return Err(self.out_of_turn(e));
                }
                self.within(e.time_ms, self.close_ms)?;
                self.in_range(*value)?;
                self.cursor[a] = *value;
                self.moved[a] = true;
            }
            EventBody::ReportFinalized { value, never_moved } => {
                let a = self.agent(e)?;
                if self.finalized[a].is_some() {
                    return Err(ProtocolError::DuplicateFinalization(a));
                }
                if self.phase != Phase::Reporting || !self.open[a] {
                    return Err(self.out_of_turn(e));
                }
                self.within(e.time_ms, self.close_ms)?;
                self.in_range(*value)?;
                if self.mechanism == Some(MechanismKind::Pfu) && e.time_ms != self.close_ms {
                    return Err(ProtocolError::Invalid(
                        "feedback reports are finalized only when the window closes".into(),
                    ));
                }
                if *value != self.cursor[a] {
                    return Err(ProtocolError::Integrity(format!(
                        "agent {a} finalized {value} but the cursor is at {}",
                        self.cursor[a]
                    )));
                }
                if *never_moved != !self.moved[a] {
                    return Err(ProtocolError::Integrity(format!(
                        "never_moved flag for agent {a} contradicts the log"
                    )));
                }
                self.finalized[a] = Some(*value);
                self.open[a] = false;
                if self.mechanism == Some(MechanismKind::Sru) && Some(a) == self.first_mover {
                    let second = 1 - a;
                    self.open[second] = true;
                    self.close_ms = e.time_ms + self.reporting_ms;
                }
                if self.finalized.iter().all(Option::is_some) {
                    self.phase = Phase::Allocating;
                }
            }
            EventBody::StepOpened {
                step,
                temp,
                delta,
                deadline_ms,
            } => {
                self.no_agent(e)?;
                let step_ms = self.step_ms;
                let clock = self.clock.as_mut().filter(|c| !c.step_open);
                let Some(c) = clock else {
                    return Err(self.out_of_turn(e));
                };
                if *step != c.step || *temp != c.temp || *delta != c.delta || *deadline_ms != e.time_ms + step_ms {
                    return Err(ProtocolError::Integrity(format!(
                        "step {step} opened with temp {temp:?} delta {delta:?}, expected step {} temp {:?} delta {:?}",
                        c.step, c.temp, c.delta
                    )));
                }
                c.step_open = true;
                c.deadline_ms = *deadline_ms;
                c.choices = [None, None];
            }
            EventBody::StepChoice { step, action } => {
                let a = self.agent(e)?;
                self.record_choice(e, a, *step, *action)?;
            }
            EventBody::OptOut { step } => {
                let a = self.agent(e)?;
                self.record_choice(e, a, *step, Action::OptOut)?;
            }
            EventBody::StepResolved {
                step,
                choices,
                temp,
                delta,
                terminal,
            } => {
                self.no_agent(e)?;
                let supply = self.supply;
                let Some(c) = self.clock.as_mut().filter(|c| c.step_open) else {
                    return Err(self.out_of_turn(e));
                };
                let all_in = c.choices.iter().all(Option::is_some);
                if !all_in && e.time_ms != c.deadline_ms {
                    return Err(ProtocolError::Invalid(format!(
                        "step {} resolved before both choices or the deadline",
                        c.step
                    )));
                }
                let filled = lapse_fill(c.step, c.temp, c.choices);
                let (t, d, stop) = transition(c.step, c.temp, c.delta, filled, supply);
                if *step != c.step || *choices != filled || *temp != t || *delta != d || *terminal != stop {
                    return Err(ProtocolError::Integrity(format!(
                        "step {} resolution recorded {choices:?}→{temp:?}, rules give {filled:?}→{t:?}",
                        c.step
                    )));
                }
                c.temp = t;
                c.delta = d;
                c.step_open = false;
                c.path.push(t);
                c.step += 1;
                if stop {
                    self.phase = Phase::Allocating;
                }
            }
            EventBody::AllocationAssigned { allocation } => {
                self.no_agent(e)?;
                if self.phase != Phase::Allocating {
                    return Err(self.out_of_turn(e));
                }
                let expected = self.computed_allocation()?;
                if *allocation != expected {
                    return Err(ProtocolError::Integrity(format!(
                        "recorded allocation {allocation:?} differs from recomputed {expected:?}"
                    )));
                }
                self.allocation = Some(expected);
                self.phase = Phase::Finished;
            }
        }
        self.last_seq = Some(e.seq);
        self.now_ms = e.time_ms;
        Ok(())
    }

    fn record_choice(&mut self, e: &SessionEvent, a: usize, step: u32, action: Action) -> Result<(), ProtocolError> {
        let out = self.out_of_turn(e);
        let Some(c) = self.clock.as_mut().filter(|c| c.step_open) else {
            return Err(out);
        };
        if step != c.step {
            return Err(out);
        }
        if c.choices[a].is_some() {
            return Err(ProtocolError::DuplicateChoice { agent: a, step });
        }
        if e.time_ms > c.deadline_ms {
            return Err(ProtocolError::OutsideWindow {
                time: e.time_ms,
                close: c.deadline_ms,
            });
        }
        let legal = if c.step == 0 {
            let x = c.temp[a];
            matches!(action, Action::Choose(y) if y + 1 >= x && y <= x + 1)
        } else {
            // opting out has its own event kind
            match e.body {
                EventBody::OptOut { .. } => true,
                _ => action == Action::Continue,
            }
        };
        if !legal {
            return Err(ProtocolError::Invalid(format!("{action} is not available at step {step}")));
        }
        c.choices[a] = Some(action);
        Ok(())
    }

    /// The allocation implied by the finalized reports or the clock.
    pub fn computed_allocation(&self) -> Result<Vec<Amount>, ProtocolError> {
        match self.mechanism {
            Some(MechanismKind::Ospu) => {
                let c = self.clock.as_ref().expect("clock state for OSPU");
                Ok(c.temp.iter().map(|&x| Amount::from_integer(x as i64)).collect())
            }
            Some(_) => {
                let reports: Option<Vec<u32>> = self.finalized.iter().copied().collect();
                let reports = reports.ok_or_else(|| ProtocolError::Integrity("reports are not finalized".into()))?;
                uniform_allocate(&reports, self.supply)
                    .map(|a| a.amounts().to_vec())
                    .map_err(|e| ProtocolError::Integrity(e.to_string()))
            }
            None => Err(ProtocolError::Integrity("period never started".into())),
        }
    }
}

/// Missing choices at a deadline: stay put at Step 0, continue afterwards.
pub fn lapse_fill(step: u32, temp: [u32; 2], choices: [Option<Action>; 2]) -> [Action; 2] {
    [0, 1].map(|a| {
        choices[a].unwrap_or(if step == 0 {
            Action::Choose(temp[a])
        } else {
            Action::Continue
        })
    })
}
