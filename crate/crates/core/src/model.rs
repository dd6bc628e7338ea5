//! Economic primitives: peaks, utilities, the Uniform rule, efficiency and
//! outcome metrics.
//!
//! Every function here is pure. Amounts are exact rationals so that the
//! Uniform rule reproduces tabulated allocations bit for bit; with two agents
//! and integer peaks every amount is an integer.

use std::fmt;

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A quantity of the rationed good, or a utility level.
pub type Amount = Ratio<i64>;

/// Supply used throughout the experimental design.
pub const DEFAULT_SUPPLY: u32 = 20;
/// Utility intercept used throughout the experimental design.
pub const DEFAULT_K: i64 = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("supply must be positive")]
    ZeroSupply,
    #[error("need at least two agents, got {0}")]
    TooFewAgents(usize),
    #[error("value {value} outside [0, {supply}]")]
    OutOfRange { value: String, supply: u32 },
    #[error("allocation sums to {sum}, expected supply {supply}")]
    Infeasible { sum: String, supply: u32 },
    #[error("allocation has {got} amounts for {expected} agents")]
    ArityMismatch { expected: usize, got: usize },
}

pub fn amount(n: i64) -> Amount {
    Ratio::from_integer(n)
}

/// The true peaks of every agent plus the supply to be divided.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Valuation {
    /// Label of the valuation pair in the period schedule (1..=6), if any.
    pub id: Option<u8>,
    pub peaks: Vec<u32>,
    pub supply: u32,
}

impl Valuation {
    pub fn new(peaks: Vec<u32>, supply: u32) -> Result<Self, DomainError> {
        if supply == 0 {
            return Err(DomainError::ZeroSupply);
        }
        if peaks.len() < 2 {
            return Err(DomainError::TooFewAgents(peaks.len()));
        }
        if let Some(&p) = peaks.iter().find(|&&p| p > supply) {
            return Err(DomainError::OutOfRange {
                value: p.to_string(),
                supply,
            });
        }
        Ok(Self {
            id: None,
            peaks,
            supply,
        })
    }

    /// Two agents sharing the default supply of 20.
    ///
    /// Panics if either peak exceeds 20.
    pub fn pair(a: u32, b: u32) -> Self {
        Self::new(vec![a, b], DEFAULT_SUPPLY).expect("peaks within [0, 20]")
    }

    pub fn with_id(mut self, id: u8) -> Self {
        self.id = Some(id);
        self
    }

    pub fn agents(&self) -> usize {
        self.peaks.len()
    }

    /// Same valuation with the agents' peaks listed in the opposite order.
    pub fn swapped(&self) -> Self {
        let mut peaks = self.peaks.clone();
        peaks.reverse();
        Self {
            id: self.id,
            peaks,
            supply: self.supply,
        }
    }

    pub fn uniform(&self) -> Allocation {
        uniform_allocate(&self.peaks, self.supply).expect("peaks validated at construction")
    }

    /// Largest attainable sum of utilities: n·K − |supply − Σ peaks|.
    pub fn max_total_utility(&self, params: &PayoffParams) -> Amount {
        let n = self.peaks.len() as i64;
        let sum: i64 = self.peaks.iter().map(|&p| p as i64).sum();
        amount(n * params.k - (self.supply as i64 - sum).abs())
    }
}

impl fmt::Display for Valuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let peaks: Vec<String> = self.peaks.iter().map(|p| p.to_string()).collect();
        write!(f, "({})", peaks.join(","))
    }
}

/// A feasible division of the supply. Construct through [`Allocation::new`]
/// or the rule so the sum constraint always holds.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Allocation {
    amounts: Vec<Amount>,
}

impl Allocation {
    pub fn new(amounts: Vec<Amount>, supply: u32) -> Result<Self, DomainError> {
        let cap = amount(supply as i64);
        if let Some(a) = amounts.iter().find(|a| a.is_negative() || **a > cap) {
            return Err(DomainError::OutOfRange {
                value: a.to_string(),
                supply,
            });
        }
        let sum: Amount = amounts.iter().sum();
        if sum != cap {
            return Err(DomainError::Infeasible {
                sum: sum.to_string(),
                supply,
            });
        }
        Ok(Self { amounts })
    }

    pub fn from_integers(amounts: &[u32], supply: u32) -> Result<Self, DomainError> {
        Self::new(amounts.iter().map(|&a| amount(a as i64)).collect(), supply)
    }

    pub fn amounts(&self) -> &[Amount] {
        &self.amounts
    }

    pub fn len(&self) -> usize {
        self.amounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amounts.is_empty()
    }

    pub fn get(&self, agent: usize) -> Amount {
        self.amounts[agent]
    }

    /// Integer amounts, if every amount is integral.
    pub fn to_integers(&self) -> Option<Vec<u32>> {
        self.amounts
            .iter()
            .map(|a| a.is_integer().then(|| a.to_integer() as u32))
            .collect()
    }
}

impl fmt::Display for Allocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.amounts.iter().map(|a| a.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayoffParams {
    pub k: i64,
    pub supply: u32,
}

impl Default for PayoffParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            supply: DEFAULT_SUPPLY,
        }
    }
}

/// K − |peak − amount|.
pub fn utility(peak: u32, amount_: Amount, params: &PayoffParams) -> Result<Amount, DomainError> {
    if amount_.is_negative() || amount_ > amount(params.supply as i64) {
        return Err(DomainError::OutOfRange {
            value: amount_.to_string(),
            supply: params.supply,
        });
    }
    Ok(amount(params.k) - (amount(peak as i64) - amount_).abs())
}

/// Integer shortcut used by the enumerations, where amounts are known feasible.
pub(crate) fn int_utility(peak: u32, amount_: Amount, k: i64) -> Amount {
    amount(k) - (amount(peak as i64) - amount_).abs()
}

/// Applies the Uniform rule to a report profile.
///
/// On the long side of the market every agent is capped (or floored) at a
/// common level λ. λ is located exactly by scanning the sorted reports for
/// the segment between consecutive breakpoints that contains it.
pub fn uniform_allocate(reports: &[u32], supply: u32) -> Result<Allocation, DomainError> {
    if supply == 0 {
        return Err(DomainError::ZeroSupply);
    }
    if reports.len() < 2 {
        return Err(DomainError::TooFewAgents(reports.len()));
    }
    if let Some(&r) = reports.iter().find(|&&r| r > supply) {
        return Err(DomainError::OutOfRange {
            value: r.to_string(),
            supply,
        });
    }
    let total: i64 = reports.iter().map(|&r| r as i64).sum();
    let s = supply as i64;
    let as_amounts = || reports.iter().map(|&r| amount(r as i64));
    let amounts: Vec<Amount> = match total.cmp(&s) {
        std::cmp::Ordering::Equal => as_amounts().collect(),
        std::cmp::Ordering::Greater => {
            let lambda = rationing_level(reports, s, Side::Excess);
            as_amounts().map(|r| r.min(lambda)).collect()
        }
        std::cmp::Ordering::Less => {
            let lambda = rationing_level(reports, s, Side::Shortage);
            as_amounts().map(|r| r.max(lambda)).collect()
        }
    };
    Ok(Allocation { amounts })
}

#[derive(Clone, Copy)]
enum Side {
    Excess,
    Shortage,
}

/// Solves Σ min(r, λ) = s (excess demand) or Σ max(r, λ) = s (shortage).
fn rationing_level(reports: &[u32], s: i64, side: Side) -> Amount {
    let mut sorted: Vec<i64> = reports.iter().map(|&r| r as i64).collect();
    match side {
        Side::Excess => sorted.sort_unstable(),
        Side::Shortage => sorted.sort_unstable_by(|a, b| b.cmp(a)),
    }
    let n = sorted.len() as i64;
    let mut settled = 0i64;
    for k in 0..sorted.len() {
        // The k most extreme-on-the-short-side agents receive their report;
        // the remaining n − k share what is left equally.
        let lambda = Ratio::new(s - settled, n - k as i64);
        let next = amount(sorted[k]);
        let fits = match side {
            Side::Excess => lambda <= next,
            Side::Shortage => lambda >= next,
        };
        if fits {
            return lambda;
        }
        settled += sorted[k];
    }
    unreachable!("a rationing level exists whenever total demand differs from supply")
}

/// True iff all agents consume on the same side of their peaks.
pub fn is_efficient(allocation: &Allocation, valuation: &Valuation) -> bool {
    let pairs = || {
        allocation
            .amounts
            .iter()
            .zip(&valuation.peaks)
            .map(|(a, &p)| (*a, amount(p as i64)))
    };
    pairs().all(|(a, p)| a >= p) || pairs().all(|(a, p)| a <= p)
}

pub fn total_utility(allocation: &Allocation, valuation: &Valuation, params: &PayoffParams) -> Amount {
    allocation
        .amounts
        .iter()
        .zip(&valuation.peaks)
        .map(|(&a, &p)| int_utility(p, a, params.k))
        .sum()
}

/// Whether some efficient allocation lies within L∞ distance 1.
///
/// The efficient set is a box intersected with the supply hyperplane (all
/// amounts on one side of their peaks), so the test reduces to checking that
/// the shifted box still straddles the supply.
pub fn is_within1_efficient(allocation: &Allocation, valuation: &Valuation) -> bool {
    let s = amount(valuation.supply as i64);
    let one = amount(1);
    let zero = Amount::zero();
    let straddles = |bounds: Vec<(Amount, Amount)>| {
        let (mut lo_sum, mut hi_sum) = (zero, zero);
        for (lo, hi) in bounds {
            if lo > hi {
                return false;
            }
            lo_sum += lo;
            hi_sum += hi;
        }
        lo_sum <= s && s <= hi_sum
    };
    let items = || {
        allocation
            .amounts
            .iter()
            .zip(&valuation.peaks)
            .map(|(&x, &p)| (x, amount(p as i64)))
    };
    let below = items()
        .map(|(x, p)| ((x - one).max(zero), (x + one).min(p).min(s)))
        .collect();
    let above = items()
        .map(|(x, p)| ((x - one).max(p).max(zero), (x + one).min(s)))
        .collect();
    straddles(below) || straddles(above)
}

/// Outcome metrics for one matched pair in one period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeReport {
    pub allocation: Allocation,
    pub is_uniform: bool,
    pub is_efficient: bool,
    pub is_within1_efficient: bool,
    pub efficiency_share: Amount,
    pub group_loss: Amount,
    pub payoffs: Vec<Amount>,
}

pub fn outcome_report(
    allocation: &Allocation,
    valuation: &Valuation,
    params: &PayoffParams,
) -> OutcomeReport {
    let total = total_utility(allocation, valuation, params);
    let best = valuation.max_total_utility(params);
    let payoffs = allocation
        .amounts
        .iter()
        .zip(&valuation.peaks)
        .map(|(&a, &p)| int_utility(p, a, params.k))
        .collect();
    OutcomeReport {
        allocation: allocation.clone(),
        is_uniform: *allocation == valuation.uniform(),
        is_efficient: is_efficient(allocation, valuation),
        is_within1_efficient: is_within1_efficient(allocation, valuation),
        efficiency_share: if best.is_zero() { amount(1) } else { total / best },
        group_loss: best - total,
        payoffs,
    }
}

/// Empirical CDF as a step function over the sorted distinct losses.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LossCdf {
    /// `(loss, fraction of observations with loss <= this value)`
    pub steps: Vec<(Amount, Amount)>,
}

impl LossCdf {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// CDF evaluated at an arbitrary point.
    pub fn at(&self, x: Amount) -> Amount {
        self.steps
            .iter()
            .take_while(|(loss, _)| *loss <= x)
            .last()
            .map(|(_, f)| *f)
            .unwrap_or_else(Amount::zero)
    }
}

pub fn loss_cdf(losses: &[Amount]) -> Result<LossCdf, DomainError> {
    if let Some(l) = losses.iter().find(|l| l.is_negative()) {
        return Err(DomainError::OutOfRange {
            value: l.to_string(),
            supply: 0,
        });
    }
    let mut sorted = losses.to_vec();
    sorted.sort();
    let n = sorted.len() as i64;
    let mut steps: Vec<(Amount, Amount)> = Vec::new();
    for (i, loss) in sorted.iter().enumerate() {
        let frac = Ratio::new(i as i64 + 1, n);
        match steps.last_mut() {
            Some((last, f)) if last == loss => *f = frac,
            _ => steps.push((*loss, frac)),
        }
    }
    Ok(LossCdf { steps })
}
