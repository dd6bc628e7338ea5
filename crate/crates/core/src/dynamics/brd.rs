use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::best_responses;
use crate::model::{uniform_allocate, PayoffParams, Valuation};
use crate::table::Table;

pub type Profile = [u32; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    UniformOverBr,
    ClosestToCurrent,
    ClosestToPeak,
}

impl fmt::Display for TieBreak {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TieBreak::UniformOverBr => "uniform-over-br",
            TieBreak::ClosestToCurrent => "closest-to-current",
            TieBreak::ClosestToPeak => "closest-to-peak",
        })
    }
}

impl FromStr for TieBreak {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform-over-br" | "uniform" => Ok(TieBreak::UniformOverBr),
            "closest-to-current" | "inertia" => Ok(TieBreak::ClosestToCurrent),
            "closest-to-peak" => Ok(TieBreak::ClosestToPeak),
            _ => Err(format!(
                "unknown tie-break {s:?} (uniform-over-br, closest-to-current, closest-to-peak)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialProfile {
    /// Drawn uniformly from all report profiles.
    Uniform,
    Truthful,
    Fixed(Profile),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RunLength {
    Revisions(u64),
    Time(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevisionConfig {
    /// Poisson revision rate of each agent.
    pub arrival_rate: f64,
    pub tie_break: TieBreak,
    pub horizon: RunLength,
    pub burn_in_revisions: u64,
    pub initial: InitialProfile,
    pub seed: u64,
}

impl Default for RevisionConfig {
    fn default() -> Self {
        Self {
            arrival_rate: 1.0,
            tie_break: TieBreak::UniformOverBr,
            horizon: RunLength::Revisions(100_000),
            burn_in_revisions: 1_000,
            initial: InitialProfile::Uniform,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DynamicsError {
    #[error("arrival rate must be positive and finite")]
    Rate,
    #[error("run length must be positive")]
    Length,
    #[error("report dynamics are defined for two agents")]
    Agents,
    #[error("initial profile {0:?} is outside the report space")]
    Initial(Profile),
}

impl RevisionConfig {
    pub fn validate(&self, supply: u32) -> Result<(), DynamicsError> {
        if !(self.arrival_rate.is_finite() && self.arrival_rate > 0.0) {
            return Err(DynamicsError::Rate);
        }
        match self.horizon {
            RunLength::Revisions(0) => return Err(DynamicsError::Length),
            RunLength::Time(t) if !(t.is_finite() && t > 0.0) => return Err(DynamicsError::Length),
            _ => {}
        }
        if let InitialProfile::Fixed(p) = self.initial {
            if p.iter().any(|r| *r > supply) {
                return Err(DynamicsError::Initial(p));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryStats {
    pub uniform_rate: f64,
    pub ds_rate: f64,
    /// Share of sampled time spent at each profile.
    pub occupancy: BTreeMap<String, f64>,
    pub revisions: u64,
    pub sampled_time: f64,
    pub absorbed_at: Option<Profile>,
}

/// Best-response table for one agent: `br[opponent_report]`.
fn br_table(peak: u32, params: &PayoffParams) -> Vec<Vec<u32>> {
    (0..=params.supply)
        .map(|r| best_responses(peak, r, params).into_iter().collect())
        .collect()
}

/// Outcomes of one revision by an agent, with probabilities.
fn revision_choices(br: &[u32], current: u32, peak: u32, tie: TieBreak) -> Vec<(u32, f64)> {
    match tie {
        TieBreak::UniformOverBr => {
            let p = 1.0 / br.len() as f64;
            br.iter().map(|&b| (b, p)).collect()
        }
        TieBreak::ClosestToCurrent => vec![(closest(br, current), 1.0)],
        TieBreak::ClosestToPeak => vec![(closest(br, peak), 1.0)],
    }
}

fn closest(br: &[u32], to: u32) -> u32 {
    *br.iter()
        .min_by_key(|&&b| ((b as i64 - to as i64).abs(), b))
        .expect("best-response sets are never empty")
}

struct Game {
    peaks: [u32; 2],
    br: [Vec<Vec<u32>>; 2],
    uniform: Profile,
    supply: u32,
}

impl Game {
    fn new(v: &Valuation, params: &PayoffParams) -> Result<Self, DynamicsError> {
        if v.agents() != 2 {
            return Err(DynamicsError::Agents);
        }
        let params = PayoffParams {
            supply: v.supply,
            ..*params
        };
        let u = v.uniform().to_integers().map(|x| [x[0], x[1]]).unwrap_or([u32::MAX; 2]);
        Ok(Self {
            peaks: [v.peaks[0], v.peaks[1]],
            br: [br_table(v.peaks[0], &params), br_table(v.peaks[1], &params)],
            uniform: u,
            supply: v.supply,
        })
    }

    fn produces_uniform(&self, p: Profile) -> bool {
        uniform_allocate(&p, self.supply)
            .ok()
            .and_then(|a| a.to_integers())
            .is_some_and(|a| a == self.uniform)
    }

    fn choices(&self, p: Profile, agent: usize, tie: TieBreak) -> Vec<(u32, f64)> {
        revision_choices(&self.br[agent][p[1 - agent] as usize], p[agent], self.peaks[agent], tie)
    }

    fn is_absorbing(&self, p: Profile, tie: TieBreak) -> bool {
        (0..2).all(|a| self.choices(p, a, tie).iter().all(|(b, _)| *b == p[a]))
    }

    fn profiles(&self) -> impl Iterator<Item = Profile> + '_ {
        (0..=self.supply).flat_map(move |a| (0..=self.supply).map(move |b| [a, b]))
    }

    fn index(&self, p: Profile) -> usize {
        p[0] as usize * (self.supply as usize + 1) + p[1] as usize
    }
}

fn key(p: Profile) -> String {
    format!("{},{}", p[0], p[1])
}

/// Asynchronous myopic best-response dynamics with Poisson revision clocks.
pub fn run_brd(
    valuation: &Valuation,
    config: &RevisionConfig,
    params: &PayoffParams,
) -> Result<TrajectoryStats, DynamicsError> {
    config.validate(valuation.supply)?;
    let game = Game::new(valuation, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let hold = Exp::new(2.0 * config.arrival_rate).map_err(|_| DynamicsError::Rate)?;
    let mut p = match config.initial {
        InitialProfile::Uniform => [rng.random_range(0..=game.supply), rng.random_range(0..=game.supply)],
        InitialProfile::Truthful => game.peaks,
        InitialProfile::Fixed(p) => p,
    };
    let mut occupancy: BTreeMap<Profile, f64> = BTreeMap::new();
    let mut sampled = 0.0;
    let mut revisions = 0u64;
    let mut absorbed_at = None;
    let done = |revs: u64, t: f64| match config.horizon {
        RunLength::Revisions(n) => revs >= n,
        RunLength::Time(limit) => t >= limit,
    };
    // burn-in is counted in revisions, the sample in the configured unit
    let mut burn = config.burn_in_revisions;
    loop {
        if game.is_absorbing(p, config.tie_break) {
            absorbed_at = Some(p);
            let remaining = match config.horizon {
                RunLength::Revisions(n) => n.saturating_sub(revisions) as f64 / (2.0 * config.arrival_rate),
                RunLength::Time(limit) => (limit - sampled).max(0.0),
            };
            let w = if sampled + remaining > 0.0 { remaining.max(f64::MIN_POSITIVE) } else { 1.0 };
            *occupancy.entry(p).or_default() += w;
            sampled += w;
            break;
        }
        let dt = hold.sample(&mut rng);
        if burn == 0 {
            let dt = match config.horizon {
                RunLength::Time(limit) => dt.min(limit - sampled),
                RunLength::Revisions(_) => dt,
            };
            *occupancy.entry(p).or_default() += dt;
            sampled += dt;
        }
        let agent = rng.random_range(0..2usize);
        let choices = game.choices(p, agent, config.tie_break);
        p[agent] = if choices.len() == 1 {
            choices[0].0
        } else {
            choices[rng.random_range(0..choices.len())].0
        };
        if burn > 0 {
            burn -= 1;
        } else {
            revisions += 1;
            if done(revisions, sampled) {
                break;
            }
        }
    }
    Ok(summarise(&game, &occupancy, sampled, revisions, absorbed_at))
}

fn summarise(
    game: &Game,
    occupancy: &BTreeMap<Profile, f64>,
    total: f64,
    revisions: u64,
    absorbed_at: Option<Profile>,
) -> TrajectoryStats {
    let mut uniform = 0.0;
    let mut ds = 0.0;
    let mut occ = BTreeMap::new();
    for (p, w) in occupancy {
        let share = w / total;
        if game.produces_uniform(*p) {
            uniform += share;
        }
        let truthful = (0..2).filter(|&a| p[a] == game.peaks[a]).count() as f64;
        ds += share * truthful / 2.0;
        occ.insert(key(*p), share);
    }
    TrajectoryStats {
        uniform_rate: uniform.min(1.0),
        ds_rate: ds.min(1.0),
        occupancy: occ,
        revisions,
        sampled_time: total,
        absorbed_at,
    }
}

/// Long-run distribution of the revision chain from a starting
/// distribution, computed exactly by iterating the lazy transition matrix.
pub fn brd_limit(
    valuation: &Valuation,
    tie_break: TieBreak,
    initial: InitialProfile,
    params: &PayoffParams,
) -> Result<TrajectoryStats, DynamicsError> {
    let game = Game::new(valuation, params)?;
    let states: Vec<Profile> = game.profiles().collect();
    let n = states.len();
    let mut transitions: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for &p in &states {
        let mut row: BTreeMap<usize, f64> = BTreeMap::new();
        // lazy chain: same limit, no periodicity
        *row.entry(game.index(p)).or_default() += 0.5;
        for a in 0..2 {
            for (b, w) in game.choices(p, a, tie_break) {
                let mut q = p;
                q[a] = b;
                *row.entry(game.index(q)).or_default() += 0.25 * w;
            }
        }
        transitions.push(row.into_iter().collect());
    }
    let mut mu = vec![0.0; n];
    match initial {
        InitialProfile::Uniform => mu.iter_mut().for_each(|m| *m = 1.0 / n as f64),
        InitialProfile::Truthful => mu[game.index(game.peaks)] = 1.0,
        InitialProfile::Fixed(p) => {
            if p.iter().any(|r| *r > game.supply) {
                return Err(DynamicsError::Initial(p));
            }
            mu[game.index(p)] = 1.0
        }
    }
    for _ in 0..200_000 {
        let mut next = vec![0.0; n];
        for (i, row) in transitions.iter().enumerate() {
            if mu[i] == 0.0 {
                continue;
            }
            for &(j, w) in row {
                next[j] += mu[i] * w;
            }
        }
        let diff: f64 = next.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
        mu = next;
        if diff < 1e-14 {
            break;
        }
    }
    let occupancy: BTreeMap<Profile, f64> = states
        .iter()
        .zip(&mu)
        .filter(|(_, m)| **m > 1e-15)
        .map(|(p, m)| (*p, *m))
        .collect();
    let total: f64 = occupancy.values().sum();
    Ok(summarise(&game, &occupancy, total, 0, None))
}

/// Profiles that no revision ever leaves.
pub fn absorbing_profiles(
    valuation: &Valuation,
    tie_break: TieBreak,
    params: &PayoffParams,
) -> Result<BTreeSet<Profile>, DynamicsError> {
    let game = Game::new(valuation, params)?;
    Ok(game.profiles().filter(|p| game.is_absorbing(*p, tie_break)).collect())
}

pub struct BrdRow {
    pub valuation: Valuation,
    pub simulated: TrajectoryStats,
    pub exact: Option<TrajectoryStats>,
}

pub fn brd_table(rows: &[BrdRow], config: &RevisionConfig) -> Table {
    let mut t = Table::new(
        "Myopic best-response dynamics",
        format!(
            "Poisson revisions (rate {} per agent), tie-break {}, burn-in {} revisions, seed {}; exact column from the lazy revision chain",
            config.arrival_rate, config.tie_break, config.burn_in_revisions, config.seed
        ),
        &["valuation", "uniform_rate", "ds_rate", "exact_uniform_rate", "exact_ds_rate"],
    );
    for r in rows {
        let label = match r.valuation.id {
            Some(id) => format!("{id} {}", r.valuation),
            None => r.valuation.to_string(),
        };
        let (eu, ed) = r
            .exact
            .as_ref()
            .map(|e| (format!("{:.4}", e.uniform_rate), format!("{:.4}", e.ds_rate)))
            .unwrap_or_default();
        t.push(vec![
            label,
            format!("{:.4}", r.simulated.uniform_rate),
            format!("{:.4}", r.simulated.ds_rate),
            eu,
            ed,
        ]);
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&BrdRow) -> Option<f64>| {
            let v: Vec<f64> = rows.iter().filter_map(f).collect();
            if v.len() == rows.len() {
                format!("{:.4}", v.iter().sum::<f64>() / n)
            } else {
                String::new()
            }
        };
        t.push(vec![
            "mean".into(),
            mean(&|r| Some(r.simulated.uniform_rate)),
            mean(&|r| Some(r.simulated.ds_rate)),
            mean(&|r| r.exact.as_ref().map(|e| e.uniform_rate)),
            mean(&|r| r.exact.as_ref().map(|e| e.ds_rate)),
        ]);
    }
    t
}
