use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::Valuation;
use crate::schedule::Schedule;

/// Subjects `0..n/2` form group A and always sit in seat 0 (first mover
/// under SRU); the rest form group B in seat 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PeriodPlan {
    pub period: u32,
    pub valuation: Valuation,
    /// Subject ids per pair, indexed by seat.
    pub pairs: Vec<[usize; 2]>,
    pub first_mover_seat: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("need an even number of at least two subjects, got {0}")]
    Subjects(usize),
}

pub fn group_of(subject: usize, subjects: usize) -> usize {
    usize::from(subject >= subjects / 2)
}

/// Random rematching across the two fixed groups, one plan per period.
pub fn plan_session(schedule: &Schedule, subjects: usize, seed: u64) -> Result<Vec<PeriodPlan>, PlanError> {
    if subjects < 2 || subjects % 2 != 0 {
        return Err(PlanError::Subjects(subjects));
    }
    let half = subjects / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b: Vec<usize> = (half..subjects).collect();
    Ok(schedule
        .periods
        .iter()
        .map(|p| {
            b.shuffle(&mut rng);
            PeriodPlan {
                period: p.period,
                valuation: p.valuation.clone(),
                pairs: (0..half).map(|i| [i, b[i]]).collect(),
                first_mover_seat: 0,
            }
        })
        .collect())
}
