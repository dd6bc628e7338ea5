use proptest::prelude::*;
use rationing::model::amount;
use rationing::ospu::{build_tree, classify_node};
use rationing::session::{
    audit, audit_delivery, finalize_period, read_jsonl, replay, to_jsonl, visible_events, AgentInput, EventBody,
    MechanismKind, MechanismSpec, PeriodEngine, PeriodSetup, ProtocolError, SeqCounter, SessionError, SessionEvent,
};
use rationing::{PayoffParams, Schedule, Valuation};

fn start(kind: MechanismKind, v: Valuation) -> (PeriodEngine, SeqCounter) {
    let mut seq = SeqCounter::default();
    let setup = PeriodSetup {
        spec: MechanismSpec::new(kind),
        valuation: v,
        period: 1,
        pair: 0,
        first_mover: 0,
    };
    let (e, _) = PeriodEngine::start(setup, &mut seq).unwrap();
    (e, seq)
}

fn toward(peak: u32, temp: u32, delta: i32, step: u32) -> AgentInput {
    if step == 0 {
        AgentInput::Choose {
            amount: match peak.cmp(&temp) {
                std::cmp::Ordering::Less => temp - 1,
                std::cmp::Ordering::Equal => temp,
                std::cmp::Ordering::Greater => temp + 1,
            },
        }
    } else if delta != 0 && (peak as i64 - temp as i64).signum() == delta as i64 {
        AgentInput::Continue
    } else {
        AgentInput::OptOut
    }
}

fn play_ospu_dominant(v: &Valuation) -> Vec<SessionEvent> {
    let (mut e, mut seq) = start(MechanismKind::Ospu, v.clone());
    let mut t = 0;
    while !e.is_finished() {
        t += 500;
        for a in 0..2 {
            if e.is_finished() {
                break;
            }
            let c = e.state().clock.clone().unwrap();
            let input = toward(v.peaks[a], c.temp[a], c.delta[a], c.step);
            e.input(&mut seq, t, a, input).unwrap();
        }
    }
    e.log().to_vec()
}

fn play_truthful(kind: MechanismKind, v: &Valuation) -> Vec<SessionEvent> {
    let (mut e, mut seq) = start(kind, v.clone());
    for a in 0..2 {
        e.input(&mut seq, 1000 + a as u64, a, AgentInput::Move { value: v.peaks[a] }).unwrap();
        if kind != MechanismKind::Pfu {
            e.input(&mut seq, 2000 + a as u64, a, AgentInput::Submit).unwrap();
        }
    }
    e.run_to_end(&mut seq);
    e.log().to_vec()
}

#[test]
fn untouched_feedback_period_finalizes_at_the_midpoint() {
    let (mut e, mut seq) = start(MechanismKind::Pfu, Valuation::pair(3, 4));
    e.run_to_end(&mut seq);
    let log = e.log();
    let finals: Vec<_> = log
        .iter()
        .filter_map(|x| match x.body {
            EventBody::ReportFinalized { value, never_moved } => Some((value, never_moved, x.time_ms)),
            _ => None,
        })
        .collect();
    assert_eq!(finals, vec![(10, true, 30_000), (10, true, 30_000)]);
    let r = finalize_period(log, &Valuation::pair(3, 4), &PayoffParams::default()).unwrap();
    assert_eq!(r.allocation.to_integers().unwrap(), vec![10, 10]);
}

#[test]
fn clock_stops_at_the_revised_temp_on_opt_out() {
    let v = Valuation::pair(9, 11);
    let (mut e, mut seq) = start(MechanismKind::Ospu, v.clone());
    e.input(&mut seq, 100, 0, AgentInput::Choose { amount: 9 }).unwrap();
    e.input(&mut seq, 200, 1, AgentInput::Choose { amount: 11 }).unwrap();
    e.input(&mut seq, 300, 1, AgentInput::OptOut).unwrap();
    assert!(!e.is_finished());
    let out = e.input(&mut seq, 400, 0, AgentInput::Continue).unwrap();
    assert!(matches!(out.last().unwrap().body, EventBody::AllocationAssigned { .. }));
    let r = finalize_period(e.log(), &v, &PayoffParams::default()).unwrap();
    assert_eq!(r.allocation.to_integers().unwrap(), vec![9, 11]);
}

#[test]
fn sequential_reports_thirteen_then_seven() {
    let v = Valuation::pair(13, 3);
    let (mut e, mut seq) = start(MechanismKind::Sru, v.clone());
    let err = e.input(&mut seq, 10, 1, AgentInput::Move { value: 7 }).unwrap_err();
    assert!(matches!(err, ProtocolError::OutOfTurn { .. }));
    e.input(&mut seq, 50, 0, AgentInput::Move { value: 13 }).unwrap();
    e.input(&mut seq, 60, 0, AgentInput::Submit).unwrap();
    assert_eq!(e.input(&mut seq, 70, 0, AgentInput::Submit).unwrap_err(), ProtocolError::DuplicateFinalization(0));
    e.input(&mut seq, 900, 1, AgentInput::Move { value: 7 }).unwrap();
    e.input(&mut seq, 950, 1, AgentInput::Submit).unwrap();
    let r = finalize_period(e.log(), &v, &PayoffParams::default()).unwrap();
    assert_eq!(r.allocation.to_integers().unwrap(), vec![13, 7]);
    assert!(r.is_uniform);
}

#[test]
fn out_of_range_reports_are_rejected() {
    let (mut e, mut seq) = start(MechanismKind::Dru, Valuation::pair(3, 4));
    let err = e.input(&mut seq, 10, 0, AgentInput::Move { value: 21 }).unwrap_err();
    assert_eq!(err, ProtocolError::OutOfRange { value: 21, supply: 20 });
    let err = e.input(&mut seq, 10, 0, AgentInput::Continue).unwrap_err();
    assert!(matches!(err, ProtocolError::OutOfTurn { .. }));
    let (mut p, mut seq) = start(MechanismKind::Pfu, Valuation::pair(3, 4));
    assert!(p.input(&mut seq, 10, 0, AgentInput::Submit).is_err());
}

#[test]
fn truthful_direct_play_reproduces_the_schedule_outcomes() {
    let alloc_a = [10, 10, 16, 7, 5, 9, 10, 10, 4, 13, 15, 11];
    let pay_a = [13, 15, 20, 16, 20, 20, 14, 14, 20, 20, 18, 20];
    let pay_b = [14, 14, 20, 20, 18, 20, 13, 15, 20, 16, 20, 20];
    for (i, p) in Schedule::standard().periods.iter().enumerate() {
        let log = play_truthful(MechanismKind::Dru, &p.valuation);
        let r = finalize_period(&log, &p.valuation, &PayoffParams::default()).unwrap();
        assert_eq!(r.allocation.to_integers().unwrap(), vec![alloc_a[i], 20 - alloc_a[i]]);
        assert_eq!(r.payoffs, vec![amount(pay_a[i]), amount(pay_b[i])], "period {}", p.period);
    }
}

#[test]
fn dominant_clock_play_reaches_the_same_outcomes() {
    for p in Schedule::standard().periods {
        let log = play_ospu_dominant(&p.valuation);
        let r = finalize_period(&log, &p.valuation, &PayoffParams::default()).unwrap();
        assert_eq!(r.allocation, p.valuation.uniform(), "period {}", p.period);
    }
    let log = play_ospu_dominant(&Valuation::pair(9, 11));
    let r = finalize_period(&log, &Valuation::pair(9, 11), &PayoffParams::default()).unwrap();
    assert_eq!(r.allocation.to_integers().unwrap(), vec![9, 11]);
}

#[test]
fn unfinished_logs_fail_integrity() {
    let (mut e, mut seq) = start(MechanismKind::Pfu, Valuation::pair(3, 4));
    e.input(&mut seq, 100, 0, AgentInput::Move { value: 3 }).unwrap();
    e.input(&mut seq, 200, 1, AgentInput::Move { value: 4 }).unwrap();
    let err = finalize_period(e.log(), &Valuation::pair(3, 4), &PayoffParams::default()).unwrap_err();
    assert!(matches!(err, SessionError::Integrity(_)));
}

#[test]
fn tampered_allocation_fails_integrity() {
    let mut log = play_truthful(MechanismKind::Dru, &Valuation::pair(3, 13));
    if let EventBody::AllocationAssigned { allocation } = &mut log.last_mut().unwrap().body {
        allocation[0] = amount(8);
        allocation[1] = amount(12);
    }
    let err = finalize_period(&log, &Valuation::pair(3, 13), &PayoffParams::default()).unwrap_err();
    assert!(err.to_string().contains("integrity"));
}

#[test]
fn logs_round_trip_byte_for_byte() {
    for kind in MechanismKind::ALL {
        let log = if kind == MechanismKind::Ospu {
            play_ospu_dominant(&Valuation::pair(5, 17))
        } else {
            play_truthful(kind, &Valuation::pair(5, 17))
        };
        let text = to_jsonl(&log);
        let back = read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(to_jsonl(&back), text);
        assert_eq!(replay(&back).unwrap(), replay(&log).unwrap());
    }
}

#[test]
fn visibility_rules_hold_for_every_mechanism() {
    for kind in MechanismKind::ALL {
        let log = if kind == MechanismKind::Ospu {
            play_ospu_dominant(&Valuation::pair(16, 4))
        } else {
            play_truthful(kind, &Valuation::pair(16, 4))
        };
        audit(&log).unwrap();
        let v1 = visible_events(&log, 1);
        match kind {
            MechanismKind::Dru => assert!(!v1.iter().any(|e| e.agent == Some(0)
                && matches!(e.body, EventBody::TentativeReport { .. } | EventBody::ReportFinalized { .. }))),
            MechanismKind::Sru => assert_eq!(
                v1.iter().filter(|e| e.agent == Some(0)).count(),
                1,
                "second mover sees only the finalized first report"
            ),
            MechanismKind::Pfu => assert!(v1.iter().any(|e| e.agent == Some(0))),
            MechanismKind::Ospu => assert!(!v1.iter().any(|e| e.agent == Some(0))),
        }
    }
}

#[test]
fn leaky_delivery_is_caught() {
    let log = play_truthful(MechanismKind::Dru, &Valuation::pair(3, 4));
    assert!(audit_delivery(&log, 1, &log).is_err());
    let log = play_ospu_dominant(&Valuation::pair(9, 11));
    let partner_choice: Vec<SessionEvent> = log.iter().filter(|e| e.agent == Some(0)).cloned().collect();
    assert!(audit_delivery(&log, 1, &partner_choice).is_err());
    let pfu = play_truthful(MechanismKind::Pfu, &Valuation::pair(3, 4));
    let own_only: Vec<SessionEvent> = visible_events(&pfu, 1).into_iter().filter(|e| e.agent != Some(0)).collect();
    assert!(audit_delivery(&pfu, 1, &own_only).is_err());
}

fn arb_clock_inputs() -> impl Strategy<Value = Vec<(usize, u8, u64)>> {
    prop::collection::vec((0usize..2, 0u8..4, 0u64..12_000), 0..60)
}

proptest! {
    #[test]
    fn clock_logs_follow_the_game_tree(peaks in (0u32..=20, 0u32..=20), inputs in arb_clock_inputs()) {
        let v = Valuation::pair(peaks.0, peaks.1);
        let (mut e, mut seq) = start(MechanismKind::Ospu, v.clone());
        let mut now = 0;
        for (agent, what, dt) in inputs {
            if e.is_finished() {
                break;
            }
            now += dt;
            e.tick(&mut seq, now);
            let input = match what {
                0 => AgentInput::Choose { amount: 9 },
                1 => AgentInput::Choose { amount: 11 },
                2 => AgentInput::Continue,
                _ => AgentInput::OptOut,
            };
            let _ = e.input(&mut seq, now, agent, input);
        }
        e.run_to_end(&mut seq);
        let log = e.log().to_vec();
        let tree = build_tree(&v).unwrap();
        let mut node = 0;
        for ev in &log {
            if let EventBody::StepResolved { choices, temp, .. } = ev.body {
                prop_assert_eq!(temp[0] + temp[1], 20);
                for a in 0..2 {
                    let c = classify_node(&tree, node, a, v.peaks[a], &PayoffParams::default());
                    prop_assert!(c.one_step);
                }
                node = tree.node(node).child(choices).expect("joint action exists in the tree");
                prop_assert_eq!(tree.node(node).temp, temp);
            }
        }
        prop_assert!(tree.node(node).is_terminal());
        let r = finalize_period(&log, &v, &PayoffParams::default()).unwrap();
        prop_assert_eq!(r.allocation.to_integers().unwrap(), tree.node(node).terminal_allocation.unwrap().to_vec());
        prop_assert_eq!(replay(&log).unwrap(), e.state().clone());
    }

    #[test]
    fn report_logs_replay_and_round_trip(
        kind in prop::sample::select(vec![MechanismKind::Dru, MechanismKind::Sru, MechanismKind::Pfu]),
        inputs in prop::collection::vec((0usize..2, 0u32..=22, any::<bool>(), 0u64..4000), 0..40),
    ) {
        let v = Valuation::pair(4, 16);
        let (mut e, mut seq) = start(kind, v.clone());
        let mut now = 0;
        for (agent, value, submit, dt) in inputs {
            now += dt;
            e.tick(&mut seq, now);
            let input = if submit { AgentInput::Submit } else { AgentInput::Move { value } };
            let _ = e.input(&mut seq, now, agent, input);
        }
        e.run_to_end(&mut seq);
        let log = e.log().to_vec();
        let text = to_jsonl(&log);
        prop_assert_eq!(to_jsonl(&read_jsonl(text.as_bytes()).unwrap()), text);
        prop_assert_eq!(replay(&log).unwrap(), e.state().clone());
        audit(&log).unwrap();
        let r = finalize_period(&log, &v, &PayoffParams::default()).unwrap();
        let finals = e.state().finalized.map(|f| f.unwrap());
        prop_assert_eq!(r.allocation, rationing::uniform_allocate(&finals, 20).unwrap());
    }
}
