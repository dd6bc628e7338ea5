use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Amount;
use crate::ospu::Action;

pub const EVENT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MechanismKind {
    Dru,
    Sru,
    Ospu,
    Pfu,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 4] = [
        MechanismKind::Dru,
        MechanismKind::Sru,
        MechanismKind::Ospu,
        MechanismKind::Pfu,
    ];
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MechanismKind::Dru => "DRU",
            MechanismKind::Sru => "SRU",
            MechanismKind::Ospu => "OSPU",
            MechanismKind::Pfu => "PFU",
        })
    }
}

impl FromStr for MechanismKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "DRU" => Ok(MechanismKind::Dru),
            "SRU" => Ok(MechanismKind::Sru),
            "OSPU" => Ok(MechanismKind::Ospu),
            "PFU" => Ok(MechanismKind::Pfu),
            _ => Err(format!("unknown mechanism {s:?} (expected DRU, SRU, OSPU or PFU)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub kind: MechanismKind,
    pub reporting_ms: u64,
    pub ospu_step_ms: u64,
    pub tick_hz: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("window lengths must be positive")]
    NonPositiveWindow,
    #[error("tentative reports are sampled at 10 Hz, got {0}")]
    TickRate(u32),
}

impl MechanismSpec {
    pub const TICK_HZ: u32 = 10;

    pub fn new(kind: MechanismKind) -> Self {
        Self {
            kind,
            reporting_ms: 30_000,
            ospu_step_ms: 10_000,
            tick_hz: Self::TICK_HZ,
        }
    }

    pub fn with_windows(mut self, reporting_seconds: f64, step_seconds: f64) -> Result<Self, SpecError> {
        if !(reporting_seconds > 0.0 && step_seconds > 0.0) {
            return Err(SpecError::NonPositiveWindow);
        }
        self.reporting_ms = (reporting_seconds * 1000.0).round() as u64;
        self.ospu_step_ms = (step_seconds * 1000.0).round() as u64;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.reporting_ms == 0 || self.ospu_step_ms == 0 {
            return Err(SpecError::NonPositiveWindow);
        }
        if self.tick_hz != Self::TICK_HZ {
            return Err(SpecError::TickRate(self.tick_hz));
        }
        Ok(())
    }

    pub fn tick_ms(&self) -> u64 {
        1000 / u64::from(self.tick_hz)
    }
}

/// One record of the canonical session log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub v: u32,
    pub seq: u64,
    pub period: u32,
    pub pair: u32,
    /// Milliseconds since the period started.
    pub time_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<usize>,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventBody {
    PeriodStarted {
        mechanism: MechanismKind,
        supply: u32,
        /// Entries are `null` in views handed to an agent other than the owner.
        peaks: Vec<Option<u32>>,
        reporting_ms: u64,
        step_ms: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        first_mover: Option<usize>,
    },
    TentativeReport {
        value: u32,
    },
    ReportFinalized {
        value: u32,
        never_moved: bool,
    },
    StepOpened {
        step: u32,
        temp: [u32; 2],
        delta: [i32; 2],
        deadline_ms: u64,
    },
    StepChoice {
        step: u32,
        action: Action,
    },
    OptOut {
        step: u32,
    },
    StepResolved {
        step: u32,
        choices: [Action; 2],
        temp: [u32; 2],
        delta: [i32; 2],
        terminal: bool,
    },
    AllocationAssigned {
        #[serde(with = "amounts")]
        allocation: Vec<Amount>,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::PeriodStarted { .. } => "PeriodStarted",
            EventBody::TentativeReport { .. } => "TentativeReport",
            EventBody::ReportFinalized { .. } => "ReportFinalized",
            EventBody::StepOpened { .. } => "StepOpened",
            EventBody::StepChoice { .. } => "StepChoice",
            EventBody::OptOut { .. } => "OptOut",
            EventBody::StepResolved { .. } => "StepResolved",
            EventBody::AllocationAssigned { .. } => "AllocationAssigned",
        }
    }
}

/// Exact amounts written as `"10"` or `"21/2"`.
mod amounts {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    use crate::model::Amount;

    pub fn serialize<S: Serializer>(v: &[Amount], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|a| a.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Amount>, D::Error> {
        let raw: Vec<String> = Vec::deserialize(d)?;
        raw.iter()
            .map(|s| s.parse::<Amount>().map_err(|e| D::Error::custom(format!("amount {s:?}: {e}"))))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: unsupported schema version {found}")]
    Version { line: usize, found: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode_event(e: &SessionEvent) -> String {
    serde_json::to_string(e).expect("events always serialize")
}

pub fn write_jsonl<W: Write>(events: &[SessionEvent], mut w: W) -> std::io::Result<()> {
    for e in events {
        writeln!(w, "{}", encode_event(e))?;
    }
    Ok(())
}

pub fn to_jsonl(events: &[SessionEvent]) -> String {
    let mut out = Vec::new();
    write_jsonl(events, &mut out).expect("in-memory write");
    String::from_utf8(out).expect("json is utf8")
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<SessionEvent>, LogError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: SessionEvent = serde_json::from_str(&line).map_err(|source| LogError::Parse {
            line: i + 1,
            source,
        })?;
        if e.v != EVENT_SCHEMA_VERSION {
            return Err(LogError::Version {
                line: i + 1,
                found: e.v,
            });
        }
        out.push(e);
    }
    Ok(out)
}

/// Monotone sequence numbers shared by every pair writing into one log.
#[derive(Debug, Clone, Default)]
pub struct SeqCounter(u64);

impl SeqCounter {
    pub fn starting_at(n: u64) -> Self {
        Self(n)
    }

    pub fn next(&mut self) -> u64 {
        let n = self.0;
        self.0 += 1;
        n
    }

    pub fn peek(&self) -> u64 {
        self.0
    }
}
