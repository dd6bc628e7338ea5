//! Benchmark fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rationing::choice::{simulate_choices, ChoiceParams, ObservationSet};
use rationing::{PayoffParams, Schedule, Valuation};

pub fn valuations() -> Vec<Valuation> {
    Schedule::standard().distinct_valuations()
}

/// Synthetic choice data drawn at the given weights.
pub fn choice_data(n: usize, theta: ChoiceParams, seed: u64) -> Vec<ObservationSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template: Vec<ObservationSet> = (0..n)
        .map(|i| {
            let k = rng.random_range(1..=4);
            ObservationSet {
                own_peak: rng.random_range(0..=20),
                observed_partner_reports: (0..k).map(|_| rng.random_range(0..=20)).collect(),
                final_report: 0,
                cluster_id: format!("s{}", i % 10),
            }
        })
        .collect();
    simulate_choices(&template, &theta, &PayoffParams::default(), &mut rng).expect("template is in range")
}
