use num_rational::Ratio;
use proptest::prelude::*;
use rationing::axioms::check_uniform_axioms;
use rationing::{amount, outcome_report, uniform_allocate, utility, Amount, PayoffParams, Schedule, Valuation};

/// Rationing level by scanning a fine grid: every candidate λ has a
/// denominator dividing n!, so the grid contains the exact solution.
fn oracle_uniform(reports: &[u32], supply: u32) -> Vec<Amount> {
    let n = reports.len() as i64;
    let total: i64 = reports.iter().map(|&r| r as i64).sum();
    let s = supply as i64;
    if total == s {
        return reports.iter().map(|&r| amount(r as i64)).collect();
    }
    let den: i64 = (1..=n).product();
    for k in 0..=(s * den) {
        let lambda = Ratio::new(k, den);
        let alloc: Vec<Amount> = reports
            .iter()
            .map(|&r| {
                let r = amount(r as i64);
                if total > s {
                    r.min(lambda)
                } else {
                    r.max(lambda)
                }
            })
            .collect();
        if alloc.iter().copied().sum::<Amount>() == amount(s) {
            return alloc;
        }
    }
    panic!("no rationing level for {reports:?}");
}

type Rule = fn([u32; 2], u32) -> [Amount; 2];

fn uniform_rule(r: [u32; 2], s: u32) -> [Amount; 2] {
    let a = uniform_allocate(&r, s).unwrap();
    [a.get(0), a.get(1)]
}

fn proportional_rule(r: [u32; 2], s: u32) -> [Amount; 2] {
    let t = (r[0] + r[1]) as i64;
    if t == 0 {
        return [amount(s as i64) / 2, amount(s as i64) / 2];
    }
    [
        Ratio::new(r[0] as i64 * s as i64, t),
        Ratio::new(r[1] as i64 * s as i64, t),
    ]
}

/// Profitable unilateral misreports, counted directly from payoffs.
fn manipulations(rule: Rule) -> usize {
    let p = PayoffParams::default();
    let mut bad = 0;
    for peak in 0..=20u32 {
        for other in 0..=20u32 {
            let truth = utility(peak, rule([peak, other], 20)[0], &p).unwrap();
            for d in 0..=20u32 {
                if utility(peak, rule([d, other], 20)[0], &p).unwrap() > truth {
                    bad += 1;
                }
            }
        }
    }
    bad
}

#[test]
fn exhaustive_axioms_hold_and_the_counter_has_teeth() {
    let r = check_uniform_axioms(&PayoffParams::default());
    assert_eq!(r.violations(), 0, "{r:?}");
    assert_eq!(manipulations(uniform_rule), 0);
    assert!(manipulations(proportional_rule) > 0);
}

#[test]
fn schedule_outcomes_are_exact() {
    let alloc_a = [10, 10, 16, 7, 5, 9, 10, 10, 4, 13, 15, 11];
    let pay_a = [13, 15, 20, 16, 20, 20, 14, 14, 20, 20, 18, 20];
    let pay_b = [14, 14, 20, 20, 18, 20, 13, 15, 20, 16, 20, 20];
    let p = PayoffParams::default();
    for (i, period) in Schedule::standard().periods.iter().enumerate() {
        let v = &period.valuation;
        let a = uniform_allocate(&v.peaks, 20).unwrap();
        assert_eq!(a.to_integers().unwrap(), vec![alloc_a[i], 20 - alloc_a[i]]);
        let r = outcome_report(&a, v, &p);
        assert_eq!(r.payoffs, vec![amount(pay_a[i]), amount(pay_b[i])]);
        assert!(r.is_uniform && r.is_efficient);
        assert_eq!(r.group_loss, amount(0));
    }
}

#[test]
fn two_agent_rule_matches_the_grid_oracle_everywhere() {
    for a in 0..=20 {
        for b in 0..=20 {
            let got = uniform_allocate(&[a, b], 20).unwrap();
            assert_eq!(got.amounts(), oracle_uniform(&[a, b], 20).as_slice(), "({a},{b})");
        }
    }
}

#[test]
fn crossed_peaks_lose_twenty_four() {
    let v = Valuation::pair(16, 4);
    let a = rationing::Allocation::from_integers(&[4, 16], 20).unwrap();
    let r = outcome_report(&a, &v, &PayoffParams::default());
    assert_eq!(r.group_loss, amount(24));
    assert_eq!(r.efficiency_share, Ratio::new(16, 40));
}

fn profile() -> impl Strategy<Value = (Vec<u32>, u32)> {
    (2usize..=5, 1u32..=30).prop_flat_map(|(n, s)| (prop::collection::vec(0..=s, n), Just(s)))
}

proptest! {
    #[test]
    fn n_agent_rule_matches_oracle((reports, s) in profile()) {
        let got = uniform_allocate(&reports, s).unwrap();
        let want = oracle_uniform(&reports, s);
        prop_assert_eq!(got.amounts(), want.as_slice());
    }

    #[test]
    fn allocations_are_feasible((reports, s) in profile()) {
        let got = uniform_allocate(&reports, s).unwrap();
        let sum: Amount = got.amounts().iter().copied().sum();
        prop_assert_eq!(sum, amount(s as i64));
        prop_assert!(got.amounts().iter().all(|x| *x >= amount(0) && *x <= amount(s as i64)));
    }

    #[test]
    fn permuting_reports_permutes_awards((reports, s) in profile(), rot in 0usize..5) {
        let k = rot % reports.len();
        let mut turned = reports.clone();
        turned.rotate_left(k);
        let a = uniform_allocate(&reports, s).unwrap();
        let b = uniform_allocate(&turned, s).unwrap();
        let mut expect = a.amounts().to_vec();
        expect.rotate_left(k);
        prop_assert_eq!(b.amounts(), expect.as_slice());
    }

    #[test]
    fn truthful_reporting_is_never_beaten((peaks, s) in profile(), agent in 0usize..5, dev in 0u32..=30) {
        let i = agent % peaks.len();
        let dev = dev.min(s);
        let p = PayoffParams { k: 40, supply: s };
        let truth = uniform_allocate(&peaks, s).unwrap();
        let mut lie = peaks.clone();
        lie[i] = dev;
        let other = uniform_allocate(&lie, s).unwrap();
        prop_assert!(utility(peaks[i], truth.get(i), &p).unwrap() >= utility(peaks[i], other.get(i), &p).unwrap());
    }

    #[test]
    fn non_bossy((reports, s) in profile(), agent in 0usize..5, dev in 0u32..=30) {
        let i = agent % reports.len();
        let mut moved = reports.clone();
        moved[i] = dev.min(s);
        let a = uniform_allocate(&reports, s).unwrap();
        let b = uniform_allocate(&moved, s).unwrap();
        if a.get(i) == b.get(i) {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn truthful_outcomes_are_efficient_and_envy_free((peaks, s) in profile()) {
        let v = Valuation::new(peaks.clone(), s).unwrap();
        let a = uniform_allocate(&peaks, s).unwrap();
        prop_assert!(rationing::is_efficient(&a, &v));
        let p = PayoffParams { k: 40, supply: s };
        for i in 0..peaks.len() {
            for j in 0..peaks.len() {
                prop_assert!(utility(peaks[i], a.get(i), &p).unwrap() >= utility(peaks[i], a.get(j), &p).unwrap());
            }
        }
    }

    #[test]
    fn feasible_reports_are_returned_unchanged(a in 0u32..=20) {
        let got = uniform_allocate(&[a, 20 - a], 20).unwrap();
        prop_assert_eq!(got.to_integers().unwrap(), vec![a, 20 - a]);
    }
}
