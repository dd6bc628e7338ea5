//! Best-response learning on the direct report game and bot play through
//! the session engine.
mod bots;
mod brd;

pub use bots::{run_bot_period, run_pfu_sim, BotBrain, BotKind, BotPolicy, BotSeat, PFU_TICK_MS};
pub use brd::{
    absorbing_profiles, brd_limit, brd_table, run_brd, BrdRow, DynamicsError, InitialProfile, Profile, RevisionConfig,
    RunLength, TieBreak, TrajectoryStats,
};
