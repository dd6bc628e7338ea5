//! Uniform-rule rationing: allocation, equilibrium analysis, the clock game,
//! learning dynamics, choice estimation and the session state machine.

pub mod axioms;
pub mod choice;
pub mod dynamics;
pub mod equilibrium;
pub mod model;
pub mod ospu;
pub mod schedule;
pub mod session;
pub mod table;

pub use model::{
    amount, is_efficient, is_within1_efficient, loss_cdf, outcome_report, total_utility,
    uniform_allocate, utility, Allocation, Amount, DomainError, LossCdf, OutcomeReport,
    PayoffParams, Valuation, DEFAULT_K, DEFAULT_SUPPLY,
};
pub use schedule::{schedule_table, Schedule, ScheduleError};
pub use table::{Format, Table};
