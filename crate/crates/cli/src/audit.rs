use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::Result;
use rationing::axioms::check_uniform_axioms;
use rationing::dynamics::{absorbing_profiles, TieBreak};
use rationing::equilibrium::{classify_profiles, report_sets};
use rationing::ospu::{build_tree, schedule_walk, verify_k_step, verify_osp};
use rationing::session::{audit as audit_log, read_jsonl, replay_outcomes, to_jsonl};
use rationing::{outcome_report, PayoffParams, Schedule, Table};

struct Checks {
    table: Table,
    failures: usize,
}

impl Checks {
    fn record(&mut self, check: &str, scope: &str, ok: bool, detail: String) {
        if !ok {
            self.failures += 1;
        }
        self.table.push(vec![
            check.to_string(),
            scope.to_string(),
            if ok { "pass" } else { "FAIL" }.to_string(),
            detail,
        ]);
    }
}

/// Runs every invariant suite; returns the report and the failure count.
pub fn run(logs: &[PathBuf], params: &PayoffParams) -> Result<(Table, usize)> {
    let mut c = Checks {
        table: Table::new(
            "Invariant audit",
            "exhaustive enumeration and exact replay",
            &["check", "scope", "result", "detail"],
        ),
        failures: 0,
    };
    let schedule = Schedule::standard();
    let valuations = schedule.distinct_valuations();

    let r = check_uniform_axioms(params);
    c.record(
        "uniform rule axioms",
        "all profiles and deviations",
        r.violations() == 0,
        format!("{} profiles, {} deviations, {} violations", r.profiles, r.deviations, r.violations()),
    );

    let mut bad = Vec::new();
    for p in &schedule.periods {
        let o = outcome_report(&p.valuation.uniform(), &p.valuation, params);
        if !(o.is_uniform && o.is_efficient && o.group_loss == 0.into()) {
            bad.push(p.period);
        }
    }
    c.record("truthful outcomes efficient", "schedule", bad.is_empty(), format!("bad periods {bad:?}"));

    for v in &valuations {
        let scope = format!("valuation {}", v.id.unwrap_or(0));
        let tree = build_tree(v)?;
        let osp = verify_osp(&tree, params);
        let one = verify_k_step(&tree, 1, params);
        c.record("clock game OSP and 1-step", &scope, osp && one, format!("osp {osp}, 1-step {one}"));

        let nash: BTreeSet<[u32; 2]> = classify_profiles(v, params).nash_profiles().map(|c| c.reports).collect();
        let absorbing = absorbing_profiles(v, TieBreak::ClosestToCurrent, params)?;
        c.record(
            "inertial dynamics absorb at Nash",
            &scope,
            nash == absorbing,
            format!("{} Nash, {} absorbing", nash.len(), absorbing.len()),
        );

        let mut ok = true;
        for agent in 0..2 {
            let sets = report_sets(v, agent, params);
            ok &= !sets.sdr.contains(&v.peaks[agent]);
            ok &= sets.sdr.is_disjoint(&sets.spe_supportable);
            ok &= sets.spe_supportable.contains(&v.peaks[agent]);
        }
        c.record("report classes consistent", &scope, ok, "peak supportable, not destructive".into());
    }

    let walk = schedule_walk(&schedule, 46, params)?;
    let pairs = 23u64;
    let path_total: u64 = walk.periods.iter().map(|p| 2 * pairs * p.nodes as u64).sum();
    c.record(
        "node counts decompose",
        "schedule, 46 subjects",
        walk.initial() + walk.non_initial() == walk.total() && walk.total() == path_total,
        format!("{} initial + {} non-initial = {}", walk.initial(), walk.non_initial(), walk.total()),
    );

    for path in logs {
        let scope = path.display().to_string();
        let text = std::fs::read_to_string(path)?;
        let log = match read_jsonl(text.as_bytes()) {
            Ok(log) => log,
            Err(e) => {
                c.record("log parses", &scope, false, e.to_string());
                continue;
            }
        };
        c.record("log round-trips", &scope, to_jsonl(&log) == text, format!("{} events", log.len()));
        let vis = audit_log(&log);
        c.record("visibility", &scope, vis.is_ok(), vis.err().map_or(String::new(), |e| e.to_string()));
        match (replay_outcomes(&log, params), replay_outcomes(&log, params)) {
            (Ok(a), Ok(b)) => c.record("replay determinism", &scope, a == b, format!("{} pair outcomes", a.len())),
            (Err(e), _) | (_, Err(e)) => c.record("replay determinism", &scope, false, e.to_string()),
        }
    }
    Ok((c.table, c.failures))
}
