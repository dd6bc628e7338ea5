//! Exhaustive property checks of the Uniform rule for two agents.

use serde::Serialize;

use crate::model::{amount, is_efficient, uniform_allocate, utility, Allocation, PayoffParams, Valuation};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AxiomReport {
    pub profiles: u64,
    pub deviations: u64,
    pub feasibility: u64,
    pub strategy_proofness: u64,
    pub envy: u64,
    pub efficiency: u64,
    pub non_bossiness: u64,
    pub symmetry: u64,
    pub diagonal: u64,
}

impl AxiomReport {
    pub fn violations(&self) -> u64 {
        self.feasibility
            + self.strategy_proofness
            + self.envy
            + self.efficiency
            + self.non_bossiness
            + self.symmetry
            + self.diagonal
    }
}

fn alloc(r: [u32; 2], s: u32) -> Allocation {
    uniform_allocate(&r, s).expect("reports lie in range")
}

/// Checks every report profile, and for each agent every unilateral
/// deviation, at the given supply.
pub fn check_uniform_axioms(params: &PayoffParams) -> AxiomReport {
    let s = params.supply;
    let mut rep = AxiomReport::default();
    let u = |peak: u32, x| utility(peak, x, params).expect("feasible amount");
    let table: Vec<Vec<Allocation>> = (0..=s).map(|a| (0..=s).map(|b| alloc([a, b], s)).collect()).collect();
    let at = |r: [u32; 2]| &table[r[0] as usize][r[1] as usize];
    for a in 0..=s {
        for b in 0..=s {
            rep.profiles += 1;
            let x = at([a, b]);
            let amounts = x.amounts();
            let sum: crate::model::Amount = amounts.iter().copied().sum();
            let in_range = amounts.iter().all(|v| *v >= amount(0) && *v <= amount(s as i64));
            if sum != amount(s as i64) || !in_range {
                rep.feasibility += 1;
            }
            let swapped = at([b, a]).amounts();
            if swapped[0] != amounts[1] || swapped[1] != amounts[0] {
                rep.symmetry += 1;
            }
            if a + b == s && (amounts[0] != amount(a as i64) || amounts[1] != amount(b as i64)) {
                rep.diagonal += 1;
            }
            // (a, b) read as true peaks
            let peaks = [a, b];
            if !is_efficient(x, &Valuation::pair(a, b)) {
                rep.efficiency += 1;
            }
            for i in 0..2 {
                if u(peaks[i], amounts[1 - i]) > u(peaks[i], amounts[i]) {
                    rep.envy += 1;
                }
            }
            // (a, b) read as reports; each agent deviates unilaterally
            for i in 0..2 {
                for d in 0..=s {
                    rep.deviations += 1;
                    let mut r = [a, b];
                    r[i] = d;
                    let y = at(r);
                    if y.amounts()[i] == amounts[i] && y.amounts() != amounts {
                        rep.non_bossiness += 1;
                    }
                    // agent i with peak a_i (truthful at (a, b)) against partner report r[1-i]
                    if u(peaks[i], y.amounts()[i]) > u(peaks[i], amounts[i]) {
                        rep.strategy_proofness += 1;
                    }
                }
            }
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_rule_has_no_violations() {
        let r = check_uniform_axioms(&PayoffParams::default());
        assert_eq!(r.profiles, 441);
        assert_eq!(r.deviations, 441 * 42);
        assert_eq!(r.violations(), 0, "{r:?}");
    }

    #[test]
    fn small_supplies_too() {
        for s in [2, 5, 9] {
            let p = PayoffParams { k: 20, supply: s };
            assert_eq!(check_uniform_axioms(&p).violations(), 0);
        }
    }
}
