use rationing::dynamics::BotPolicy;
use rationing::session::{AgentInput, MechanismSpec, SessionEvent, StateFrame};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SessionStatus {
    Lobby,
    Running { period: u32 },
    Finished,
}

impl SessionStatus {
    pub fn name(&self) -> &'static str {
        match self {
            SessionStatus::Lobby => "in the lobby",
            SessionStatus::Running { .. } => "running",
            SessionStatus::Finished => "finished",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Occupant {
    Vacant,
    Human,
    Bot { policy: BotPolicy },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub subject: usize,
    /// 0 sits in seat 0 (first mover) every period, 1 in seat 1.
    pub group: usize,
    pub occupant: Occupant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub session_id: String,
    pub mechanism: MechanismSpec,
    pub seed: u64,
    pub periods: u32,
    pub roster: Vec<RosterEntry>,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub mechanism: rationing::session::MechanismKind,
    pub roster_size: usize,
    #[serde(default)]
    pub seed: u64,
    pub reporting_seconds: Option<f64>,
    pub step_seconds: Option<f64>,
    /// Play only the first `periods` periods of the schedule.
    pub periods: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JoinRequest {
    pub subject: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinTicket {
    pub subject: usize,
    pub token: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttachBot {
    pub subject: usize,
    pub policy: BotPolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Submit {
    pub token: String,
    #[serde(flatten)]
    pub input: AgentInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: usize,
    pub last_seq: Option<u64>,
}

/// One message on a participant stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Status { descriptor: SessionDescriptor },
    Event { event: SessionEvent },
    Frame { frame: StateFrame },
    Rejected { error: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub period: u32,
    pub pair: u32,
    pub subjects: [usize; 2],
    pub mechanism: rationing::session::MechanismKind,
    pub peaks: [u32; 2],
    pub allocation: Vec<String>,
    pub payoffs: Vec<String>,
    pub uniform: bool,
    pub efficient: bool,
}
