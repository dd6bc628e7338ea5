//! Exhaustive analysis of the complete-information report game induced by
//! the Uniform rule with two agents.
//!
//! Everything is brute force over the (supply+1)² report profiles; at the
//! default supply that is 441 profiles times 21 deviations per agent.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;

use crate::model::{
    int_utility, is_efficient, total_utility, uniform_allocate, Amount, PayoffParams, Valuation,
};
use crate::table::{frac_cell, set_cell, Table};

/// Share of the profile space, kept as an exact fraction.
pub type Share = Ratio<i64>;

fn own_amount(own_report: u32, opponent_report: u32, supply: u32) -> Amount {
    uniform_allocate(&[own_report, opponent_report], supply)
        .expect("reports within range")
        .get(0)
}

/// Own payoff when reporting `own_report` against `opponent_report`.
pub fn expected_payoff_row(
    own_peak: u32,
    own_report: u32,
    opponent_report: u32,
    params: &PayoffParams,
) -> Amount {
    int_utility(own_peak, own_amount(own_report, opponent_report, params.supply), params.k)
}

pub fn best_responses(own_peak: u32, opponent_report: u32, params: &PayoffParams) -> BTreeSet<u32> {
    let payoffs: Vec<(u32, Amount)> = (0..=params.supply)
        .map(|r| (r, expected_payoff_row(own_peak, r, opponent_report, params)))
        .collect();
    let best = payoffs.iter().map(|(_, u)| *u).max().expect("non-empty");
    payoffs
        .into_iter()
        .filter(|(_, u)| *u == best)
        .map(|(r, _)| r)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProfileClassification {
    pub reports: [u32; 2],
    pub allocation: [u32; 2],
    pub produces_uniform: bool,
    pub is_nash: bool,
    pub is_truthful: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileShares {
    pub profiles: i64,
    pub produces_uniform: Share,
    pub nash: Share,
    pub truthful: Share,
    /// Fraction of Nash profiles that produce the Uniform outcome.
    pub uniform_among_nash: Share,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileMap {
    pub valuation: Valuation,
    /// Row-major over (report of agent 0, report of agent 1).
    pub cells: Vec<ProfileClassification>,
    pub shares: ProfileShares,
}

impl ProfileMap {
    pub fn get(&self, r0: u32, r1: u32) -> &ProfileClassification {
        let side = self.valuation.supply as usize + 1;
        &self.cells[r0 as usize * side + r1 as usize]
    }

    pub fn nash_profiles(&self) -> impl Iterator<Item = &ProfileClassification> {
        self.cells.iter().filter(|c| c.is_nash)
    }
}

/// Classifies every two-agent report profile.
///
/// Panics if the valuation does not have exactly two agents.
pub fn classify_profiles(valuation: &Valuation, params: &PayoffParams) -> ProfileMap {
    assert_eq!(valuation.agents(), 2, "profile classification is defined for two agents");
    let s = valuation.supply;
    let params = PayoffParams { supply: s, ..*params };
    let target = valuation.uniform().to_integers().expect("integral at n = 2");
    let (p0, p1) = (valuation.peaks[0], valuation.peaks[1]);
    let br0: Vec<BTreeSet<u32>> = (0..=s).map(|o| best_responses(p0, o, &params)).collect();
    let br1: Vec<BTreeSet<u32>> = (0..=s).map(|o| best_responses(p1, o, &params)).collect();

    let mut cells = Vec::with_capacity(((s + 1) * (s + 1)) as usize);
    for r0 in 0..=s {
        for r1 in 0..=s {
            let alloc = uniform_allocate(&[r0, r1], s)
                .expect("reports in range")
                .to_integers()
                .expect("integral at n = 2");
            cells.push(ProfileClassification {
                reports: [r0, r1],
                allocation: [alloc[0], alloc[1]],
                produces_uniform: alloc == target,
                is_nash: br0[r1 as usize].contains(&r0) && br1[r0 as usize].contains(&r1),
                is_truthful: r0 == p0 && r1 == p1,
            });
        }
    }
    let total = cells.len() as i64;
    let count = |f: &dyn Fn(&ProfileClassification) -> bool| cells.iter().filter(|c| f(c)).count() as i64;
    let nash = count(&|c| c.is_nash);
    let nash_u = count(&|c| c.is_nash && c.produces_uniform);
    let shares = ProfileShares {
        profiles: total,
        produces_uniform: Ratio::new(count(&|c| c.produces_uniform), total),
        nash: Ratio::new(nash, total),
        truthful: Ratio::new(count(&|c| c.is_truthful), total),
        uniform_among_nash: if nash == 0 {
            Ratio::from_integer(0)
        } else {
            Ratio::new(nash_u, nash)
        },
    };
    ProfileMap {
        valuation: valuation.clone(),
        cells,
        shares,
    }
}

/// Report sets for one agent of one valuation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportSets {
    pub spe_supportable: BTreeSet<u32>,
    pub sdr: BTreeSet<u32>,
    /// Surplus necessarily lost by each report, zero outside `sdr`.
    pub surplus_destroyed: BTreeMap<u32, Amount>,
}

/// First-mover reports that some subgame perfect equilibrium supports.
///
/// The second mover best-responds to the observed report; ties among its best
/// responses may be broken in the first mover's favour after `r` and against
/// it after any other report. `r` is supportable iff that favourable payoff
/// weakly exceeds every alternative's adversarial payoff.
pub fn spe_supportable_reports(
    valuation: &Valuation,
    first_mover: usize,
    params: &PayoffParams,
) -> BTreeSet<u32> {
    assert_eq!(valuation.agents(), 2);
    let s = valuation.supply;
    let params = PayoffParams { supply: s, ..*params };
    let own_peak = valuation.peaks[first_mover];
    let other_peak = valuation.peaks[1 - first_mover];
    let (favourable, adversarial): (Vec<Amount>, Vec<Amount>) = (0..=s)
        .map(|r| {
            let payoffs: Vec<Amount> = best_responses(other_peak, r, &params)
                .into_iter()
                .map(|b| expected_payoff_row(own_peak, r, b, &params))
                .collect();
            (
                *payoffs.iter().max().expect("best responses are non-empty"),
                *payoffs.iter().min().expect("best responses are non-empty"),
            )
        })
        .unzip();
    (0..=s)
        .filter(|&r| {
            let guaranteed_elsewhere = (0..=s)
                .filter(|&q| q != r)
                .map(|q| adversarial[q as usize])
                .max();
            guaranteed_elsewhere.is_none_or(|g| favourable[r as usize] >= g)
        })
        .collect()
}

/// Reports that leave the pair inefficient whatever the partner reports,
/// with the surplus each one necessarily destroys.
pub fn sdr_analysis(
    valuation: &Valuation,
    agent: usize,
    params: &PayoffParams,
) -> (BTreeSet<u32>, BTreeMap<u32, Amount>) {
    assert_eq!(valuation.agents(), 2);
    let s = valuation.supply;
    let params = PayoffParams { supply: s, ..*params };
    let best = valuation.max_total_utility(&params);
    let mut sdr = BTreeSet::new();
    let mut destroyed = BTreeMap::new();
    for r in 0..=s {
        let mut always_inefficient = true;
        let mut best_total: Option<Amount> = None;
        for o in 0..=s {
            let mut reports = [0u32; 2];
            reports[agent] = r;
            reports[1 - agent] = o;
            let alloc = uniform_allocate(&reports, s).expect("reports in range");
            always_inefficient &= !is_efficient(&alloc, valuation);
            let t = total_utility(&alloc, valuation, &params);
            best_total = Some(best_total.map_or(t, |b: Amount| b.max(t)));
        }
        if always_inefficient {
            sdr.insert(r);
        }
        destroyed.insert(r, best - best_total.expect("non-empty"));
    }
    (sdr, destroyed)
}

pub fn report_sets(valuation: &Valuation, agent: usize, params: &PayoffParams) -> ReportSets {
    let (sdr, surplus_destroyed) = sdr_analysis(valuation, agent, params);
    ReportSets {
        spe_supportable: spe_supportable_reports(valuation, agent, params),
        sdr,
        surplus_destroyed,
    }
}

/// Whether reporting the peak in the one-shot direct game is 0-step simply
/// dominant: its worst payoff against any partner report is at least the best
/// payoff of every other report.
pub fn direct_peak_simply_dominant(peak: u32, params: &PayoffParams) -> bool {
    let worst = (0..=params.supply)
        .map(|o| expected_payoff_row(peak, peak, o, params))
        .min()
        .expect("non-empty");
    (0..=params.supply)
        .filter(|&r| r != peak)
        .flat_map(|r| (0..=params.supply).map(move |o| (r, o)))
        .all(|(r, o)| expected_payoff_row(peak, r, o, params) <= worst)
}

// ---------------------------------------------------------------------------
// Table emitters

const ENUMERATION: &str = "exact fractions by brute-force enumeration of all report profiles";

/// Payoffs of two adjacent reports for a fixed peak across partner reports.
pub fn contingent_reasoning_table(peak: u32, reports: &[u32], params: &PayoffParams) -> Table {
    let mut headers = vec!["own report".to_string()];
    headers.extend((0..=params.supply).map(|o| format!("theta2={o}")));
    let h: Vec<&str> = headers.iter().map(String::as_str).collect();
    let mut t = Table::new(
        format!("Contingent reasoning, peak {peak}"),
        "direct evaluation of the Uniform rule",
        &h,
    );
    for &r in reports {
        let mut row = vec![r.to_string()];
        row.extend((0..=params.supply).map(|o| expected_payoff_row(peak, r, o, params).to_string()));
        t.push(row);
    }
    t
}

pub fn profile_share_table(valuations: &[Valuation], params: &PayoffParams) -> Table {
    let mut t = Table::new(
        "Share of report-profile space",
        ENUMERATION,
        &["valuation", "peaks", "produce U", "Nash", "truthful", "U among Nash"],
    );
    let (mut u, mut n, mut tr, mut total) = (0i64, 0i64, 0i64, 0i64);
    for v in valuations {
        let m = classify_profiles(v, params);
        let sh = &m.shares;
        u += (sh.produces_uniform * sh.profiles).to_integer();
        n += (sh.nash * sh.profiles).to_integer();
        tr += (sh.truthful * sh.profiles).to_integer();
        total += sh.profiles;
        t.push(vec![
            v.id.map_or("-".into(), |i| i.to_string()),
            v.to_string(),
            frac_cell(sh.produces_uniform, 3),
            frac_cell(sh.nash, 3),
            frac_cell(sh.truthful, 3),
            frac_cell(sh.uniform_among_nash, 3),
        ]);
    }
    if total > 0 {
        t.push(vec![
            "overall".into(),
            String::new(),
            frac_cell(Ratio::new(u, total), 3),
            frac_cell(Ratio::new(n, total), 3),
            frac_cell(Ratio::new(tr, total), 3),
            String::new(),
        ]);
    }
    t
}

/// One row per profile with its classification flags (region grid).
pub fn region_grid_table(valuation: &Valuation, params: &PayoffParams) -> Table {
    let m = classify_profiles(valuation, params);
    let mut t = Table::new(
        format!("Uniform-outcome and Nash regions, peaks {valuation}"),
        ENUMERATION,
        &["report1", "report2", "award1", "award2", "produces_uniform", "is_nash", "is_truthful"],
    );
    for c in &m.cells {
        t.push(vec![
            c.reports[0].to_string(),
            c.reports[1].to_string(),
            c.allocation[0].to_string(),
            c.allocation[1].to_string(),
            c.produces_uniform.to_string(),
            c.is_nash.to_string(),
            c.is_truthful.to_string(),
        ]);
    }
    t
}

pub fn report_class_table(valuations: &[Valuation], params: &PayoffParams) -> Table {
    let mut t = Table::new(
        "Characterization of first-mover reports",
        "brute force over second-mover best responses and all partner reports",
        &["valuation", "peak", "SPE-supportable", "SDR", "surplus destroyed by 10"],
    );
    for v in valuations {
        for agent in 0..2 {
            let sets = report_sets(v, agent, params);
            t.push(vec![
                v.id.map_or("-".into(), |i| i.to_string()),
                v.peaks[agent].to_string(),
                set_cell(sets.spe_supportable.iter().copied()),
                set_cell(sets.sdr.iter().copied()),
                sets.surplus_destroyed
                    .get(&10)
                    .map_or(String::new(), |d| d.to_string()),
            ]);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::amount;

    fn p() -> PayoffParams {
        PayoffParams::default()
    }

    #[test]
    fn contingent_payoff_examples() {
        assert_eq!(expected_payoff_row(5, 4, 16, &p()), amount(19));
        assert_eq!(expected_payoff_row(5, 5, 15, &p()), amount(20));
        for o in 0..=10 {
            assert_eq!(expected_payoff_row(5, 5, o, &p()), amount(15));
        }
    }

    #[test]
    fn best_response_examples() {
        assert_eq!(best_responses(5, 16, &p()), BTreeSet::from([5]));
        assert_eq!(best_responses(3, 10, &p()), (0..=20).collect());
        for theta in 0..=20 {
            let br = best_responses(theta, 20 - theta, &p());
            assert!(br.contains(&theta));
            assert_eq!(expected_payoff_row(theta, theta, 20 - theta, &p()), amount(20));
        }
    }

    #[test]
    fn best_response_oracle_by_enumeration() {
        // Peak 5 against 16: only 5 yields the peak amount.
        let payoffs: Vec<Amount> = (0..=20).map(|r| expected_payoff_row(5, r, 16, &p())).collect();
        let max = *payoffs.iter().max().unwrap();
        let argmax: Vec<usize> = (0..=20).filter(|&r| payoffs[r] == max).collect();
        assert_eq!(argmax, vec![5]);
    }

    #[test]
    fn valuation_one_shares() {
        let m = classify_profiles(&Valuation::pair(3, 4), &p());
        assert_eq!(m.shares.produces_uniform, Ratio::new(241, 441));
        assert_eq!(m.shares.nash, Ratio::new(121, 441));
        assert_eq!(m.shares.truthful, Ratio::new(1, 441));
        assert!(m.nash_profiles().all(|c| c.produces_uniform));
        assert!(m.get(3, 4).is_truthful);
    }

    #[test]
    fn valuation_four_shares() {
        let m = classify_profiles(&Valuation::pair(3, 13), &p());
        assert_eq!(m.shares.produces_uniform, Ratio::new(15, 441));
        assert_eq!(m.shares.nash, Ratio::new(31, 441));
        assert_eq!(m.shares.uniform_among_nash, Ratio::new(8, 31));
    }

    #[test]
    fn spe_examples() {
        let set = |v: Valuation, a| spe_supportable_reports(&v, a, &p());
        assert_eq!(set(Valuation::pair(3, 4), 0), (0..=10).collect());
        assert_eq!(set(Valuation::pair(3, 13), 1), BTreeSet::from([13]));
        assert_eq!(set(Valuation::pair(5, 17), 1), (15..=20).collect());
    }

    #[test]
    fn sdr_examples() {
        let (sdr, destroyed) = sdr_analysis(&Valuation::pair(16, 4), 1, &p());
        assert_eq!(sdr, (5..=20).collect());
        assert_eq!(destroyed[&10], amount(12));
        let (sdr, _) = sdr_analysis(&Valuation::pair(3, 4), 0, &p());
        assert!(sdr.is_empty());
        let (sdr, _) = sdr_analysis(&Valuation::pair(9, 11), 0, &p());
        assert_eq!(sdr, (10..=20).collect());
    }

    #[test]
    fn direct_peak_is_not_zero_step_simple() {
        assert!(!direct_peak_simply_dominant(5, &p()));
    }

    #[test]
    fn share_table_lists_overall_row() {
        let t = profile_share_table(&[Valuation::pair(3, 4).with_id(1)], &p());
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0][2], "241/441 (0.546)");
    }
}
