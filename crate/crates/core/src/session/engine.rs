use serde::{Deserialize, Serialize};

use super::event::{EventBody, MechanismKind, MechanismSpec, SeqCounter, SessionEvent, EVENT_SCHEMA_VERSION};
use super::state::{advance, lapse_fill, MechanismState, Phase, ProtocolError};
use crate::model::Valuation;
use crate::ospu::{transition, Action};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodSetup {
    pub spec: MechanismSpec,
    pub valuation: Valuation,
    pub period: u32,
    pub pair: u32,
    /// Seat that reports first under SRU.
    pub first_mover: usize,
}

/// What a participant (or bot) can do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "input", rename_all = "snake_case")]
pub enum AgentInput {
    /// Slide the report cursor.
    Move { value: u32 },
    /// Lock in the current cursor (DRU, SRU).
    Submit,
    /// Step 0 choice of a temporary assignment.
    Choose { amount: u32 },
    Continue,
    OptOut,
}

/// Drives one matched pair through one period, appending only events that
/// the state machine accepts.
#[derive(Debug, Clone)]
pub struct PeriodEngine {
    pub setup: PeriodSetup,
    state: MechanismState,
    log: Vec<SessionEvent>,
}

impl PeriodEngine {
    pub fn start(setup: PeriodSetup, seq: &mut SeqCounter) -> Result<(Self, Vec<SessionEvent>), ProtocolError> {
        setup
            .spec
            .validate()
            .map_err(|e| ProtocolError::Invalid(e.to_string()))?;
        if setup.valuation.agents() != 2 {
            return Err(ProtocolError::Invalid("sessions match agents in pairs".into()));
        }
        let mut engine = Self {
            setup,
            state: MechanismState::default(),
            log: Vec::new(),
        };
        let s = &engine.setup;
        let header = EventBody::PeriodStarted {
            mechanism: s.spec.kind,
            supply: s.valuation.supply,
            peaks: s.valuation.peaks.iter().map(|p| Some(*p)).collect(),
            reporting_ms: s.spec.reporting_ms,
            step_ms: s.spec.ospu_step_ms,
            first_mover: (s.spec.kind == MechanismKind::Sru).then_some(s.first_mover),
        };
        let mut out = vec![engine.emit(seq, 0, None, header)?];
        if engine.setup.spec.kind == MechanismKind::Ospu {
            out.push(engine.open_step(seq, 0)?);
        }
        Ok((engine, out))
    }

    pub fn state(&self) -> &MechanismState {
        &self.state
    }

    pub fn log(&self) -> &[SessionEvent] {
        &self.log
    }

    pub fn is_finished(&self) -> bool {
        self.state.is_finished()
    }

    fn emit(
        &mut self,
        seq: &mut SeqCounter,
        time_ms: u64,
        agent: Option<usize>,
        body: EventBody,
    ) -> Result<SessionEvent, ProtocolError> {
        let e = SessionEvent {
            v: EVENT_SCHEMA_VERSION,
            seq: seq.peek(),
            period: self.setup.period,
            pair: self.setup.pair,
            time_ms,
            agent,
            body,
        };
        self.state = advance(&self.state, &e)?;
        seq.next();
        self.log.push(e.clone());
        Ok(e)
    }

    fn open_step(&mut self, seq: &mut SeqCounter, time: u64) -> Result<SessionEvent, ProtocolError> {
        let c = self.state.clock.as_ref().expect("clock running");
        let body = EventBody::StepOpened {
            step: c.step,
            temp: c.temp,
            delta: c.delta,
            deadline_ms: time + self.state.step_ms,
        };
        self.emit(seq, time, None, body)
    }

    /// Next time at which the engine acts on its own.
    pub fn next_deadline(&self) -> Option<u64> {
        match self.state.phase {
            Phase::Reporting => Some(self.state.close_ms),
            Phase::Clock => self.state.clock.as_ref().filter(|c| c.step_open).map(|c| c.deadline_ms),
            _ => None,
        }
    }

    /// Fires every deadline at or before `now`, stamping events with the
    /// deadline itself so logs do not depend on scheduling jitter.
    pub fn tick(&mut self, seq: &mut SeqCounter, now_ms: u64) -> Vec<SessionEvent> {
        let mut out = Vec::new();
        while let Some(d) = self.next_deadline() {
            if d > now_ms {
                break;
            }
            let fired = match self.state.phase {
                Phase::Reporting => self.close_reporting(seq, d),
                Phase::Clock => self.resolve_step(seq, d),
                _ => Ok(Vec::new()),
            };
            out.extend(fired.expect("engine-generated events are legal"));
        }
        out
    }

    fn close_reporting(&mut self, seq: &mut SeqCounter, at: u64) -> Result<Vec<SessionEvent>, ProtocolError> {
        let mut out = Vec::new();
        for a in 0..2 {
            if self.state.open[a] && self.state.finalized[a].is_none() {
                out.push(self.finalize(seq, at, a)?);
            }
        }
        out.extend(self.allocate_if_ready(seq, at)?);
        Ok(out)
    }

    fn finalize(&mut self, seq: &mut SeqCounter, at: u64, a: usize) -> Result<SessionEvent, ProtocolError> {
        let body = EventBody::ReportFinalized {
            value: self.state.cursor[a],
            never_moved: !self.state.moved[a],
        };
        self.emit(seq, at, Some(a), body)
    }

    fn allocate_if_ready(&mut self, seq: &mut SeqCounter, at: u64) -> Result<Vec<SessionEvent>, ProtocolError> {
        if self.state.phase != Phase::Allocating {
            return Ok(Vec::new());
        }
        let allocation = self.state.computed_allocation()?;
        Ok(vec![self.emit(seq, at, None, EventBody::AllocationAssigned { allocation })?])
    }

    fn resolve_step(&mut self, seq: &mut SeqCounter, at: u64) -> Result<Vec<SessionEvent>, ProtocolError> {
        let c = self.state.clock.as_ref().expect("clock running").clone();
        let choices = lapse_fill(c.step, c.temp, c.choices);
        let (temp, delta, terminal) = transition(c.step, c.temp, c.delta, choices, self.state.supply);
        let body = EventBody::StepResolved {
            step: c.step,
            choices,
            temp,
            delta,
            terminal,
        };
        let mut out = vec![self.emit(seq, at, None, body)?];
        if terminal {
            out.extend(self.allocate_if_ready(seq, at)?);
        } else {
            out.push(self.open_step(seq, at)?);
        }
        Ok(out)
    }

    /// Handles one participant action at `now_ms`. Call [`Self::tick`]
    /// first so expired windows are closed; a late action is rejected.
    pub fn input(
        &mut self,
        seq: &mut SeqCounter,
        now_ms: u64,
        agent: usize,
        input: AgentInput,
    ) -> Result<Vec<SessionEvent>, ProtocolError> {
        let mut out = Vec::new();
        let now = now_ms.max(self.state.now_ms);
        match input {
            AgentInput::Move { value } => {
                out.push(self.emit(seq, now, Some(agent), EventBody::TentativeReport { value })?);
            }
            AgentInput::Submit => {
                if self.state.mechanism == Some(MechanismKind::Pfu) {
                    return Err(ProtocolError::Invalid(
                        "feedback reports are finalized only when the window closes".into(),
                    ));
                }
                if agent < 2 && self.state.finalized[agent].is_some() {
                    return Err(ProtocolError::DuplicateFinalization(agent));
                }
                if agent >= 2 || !self.state.open[agent] || self.state.phase != Phase::Reporting {
                    return Err(ProtocolError::OutOfTurn {
                        kind: "ReportFinalized",
                        agent: Some(agent),
                        phase: self.state.phase,
                    });
                }
                out.push(self.finalize(seq, now, agent)?);
                out.extend(self.allocate_if_ready(seq, now)?);
            }
            AgentInput::Choose { amount } => {
                let step = self.current_step(agent)?;
                out.push(self.emit(
                    seq,
                    now,
                    Some(agent),
                    EventBody::StepChoice {
                        step,
                        action: Action::Choose(amount),
                    },
                )?);
                out.extend(self.resolve_if_complete(seq, now)?);
            }
            AgentInput::Continue => {
                let step = self.current_step(agent)?;
                out.push(self.emit(
                    seq,
                    now,
                    Some(agent),
                    EventBody::StepChoice {
                        step,
                        action: Action::Continue,
                    },
                )?);
                out.extend(self.resolve_if_complete(seq, now)?);
            }
            AgentInput::OptOut => {
                let step = self.current_step(agent)?;
                out.push(self.emit(seq, now, Some(agent), EventBody::OptOut { step })?);
                out.extend(self.resolve_if_complete(seq, now)?);
            }
        }
        Ok(out)
    }

    fn current_step(&self, agent: usize) -> Result<u32, ProtocolError> {
        self.state
            .clock
            .as_ref()
            .filter(|c| c.step_open)
            .map(|c| c.step)
            .ok_or(ProtocolError::OutOfTurn {
                kind: "StepChoice",
                agent: Some(agent),
                phase: self.state.phase,
            })
    }

    fn resolve_if_complete(&mut self, seq: &mut SeqCounter, now: u64) -> Result<Vec<SessionEvent>, ProtocolError> {
        let done = self
            .state
            .clock
            .as_ref()
            .is_some_and(|c| c.step_open && c.choices.iter().all(Option::is_some));
        if done {
            self.resolve_step(seq, now)
        } else {
            Ok(Vec::new())
        }
    }

    /// Runs every remaining deadline; the period always terminates.
    pub fn run_to_end(&mut self, seq: &mut SeqCounter) -> Vec<SessionEvent> {
        let mut out = Vec::new();
        while let Some(d) = self.next_deadline() {
            out.extend(self.tick(seq, d));
        }
        out
    }
}
