use std::collections::BTreeMap;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use futures::{SinkExt, StreamExt};
use rationing::dynamics::{BotKind, BotPolicy};
use rationing::session::{
    audit_delivery, read_jsonl, replay_outcomes, split_periods, AgentInput, EventBody, MechanismKind, SessionEvent,
};
use rationing::{PayoffParams, Schedule};
use rationing_service::{
    log_path, router, CreateSession, Hub, HubConfig, ServerMessage, ServiceError, SessionStatus, Subscription,
};
use tower::ServiceExt;

fn hub() -> Hub {
    Hub::new(HubConfig {
        inter_period: Duration::from_millis(500),
        ..HubConfig::default()
    })
}

fn req(kind: MechanismKind, roster: usize, seed: u64) -> CreateSession {
    CreateSession {
        mechanism: kind,
        roster_size: roster,
        seed,
        reporting_seconds: None,
        step_seconds: None,
        periods: None,
    }
}

fn truthful() -> BotPolicy {
    BotPolicy::new(BotKind::Truthful)
}

async fn bot_session(hub: &Hub, r: &CreateSession, policy: BotPolicy) -> String {
    let d = hub.create_session(r).unwrap();
    for s in 0..r.roster_size {
        hub.attach_bot(&d.session_id, s, policy).await.unwrap();
    }
    hub.start(&d.session_id).await.unwrap();
    d.session_id
}

/// Messages delivered to a subscriber until nothing arrives for `quiet`.
async fn drain(sub: &mut Subscription, quiet: Duration) -> Vec<ServerMessage> {
    let mut out = Vec::new();
    while let Ok(Ok(f)) = tokio::time::timeout(quiet, sub.rx.recv()).await {
        out.extend(f.per_subject[sub.subject].iter().cloned());
    }
    out
}

fn events(msgs: &[ServerMessage]) -> Vec<SessionEvent> {
    msgs.iter()
        .filter_map(|m| match m {
            ServerMessage::Event { event } => Some(event.clone()),
            _ => None,
        })
        .collect()
}

#[tokio::test(start_paused = true)]
async fn lobby_rules() {
    let hub = hub();
    assert!(matches!(
        hub.create_session(&req(MechanismKind::Pfu, 3, 1)),
        Err(ServiceError::Roster(3))
    ));
    let d = hub.create_session(&req(MechanismKind::Pfu, 2, 1)).unwrap();
    assert_eq!(d.status, SessionStatus::Lobby);
    assert_eq!(d.periods, 12);
    assert_eq!(d.roster.len(), 2);
    let id = d.session_id;
    let t = hub.join(&id, Some(0)).await.unwrap();
    assert_eq!(t.subject, 0);
    assert!(matches!(hub.attach_bot(&id, 0, truthful()).await, Err(ServiceError::SeatOccupied(0))));
    assert!(matches!(hub.start(&id).await, Err(ServiceError::Unfilled(1))));
    hub.attach_bot(&id, 1, truthful()).await.unwrap();
    assert!(matches!(hub.join(&id, None).await, Err(ServiceError::Full)));
    assert!(matches!(
        hub.submit(&id, &t.token, AgentInput::Move { value: 3 }).await,
        Err(ServiceError::WrongStatus(_))
    ));
    hub.start(&id).await.unwrap();
    assert!(matches!(hub.start(&id).await, Err(ServiceError::WrongStatus(_))));
    assert!(matches!(
        hub.submit(&id, "nope", AgentInput::Submit).await,
        Err(ServiceError::UnknownToken)
    ));
    let f = hub.frame(&id, &t.token).await.unwrap().unwrap();
    assert_eq!(f.own_peak, Some(3));
    assert_eq!(f.mechanism, Some(MechanismKind::Pfu));
}

#[tokio::test(start_paused = true)]
async fn truthful_bots_reproduce_the_schedule_outcomes() {
    let hub = hub();
    let id = bot_session(&hub, &req(MechanismKind::Dru, 2, 0), truthful()).await;
    let d = hub.wait_finished(&id).await.unwrap();
    assert_eq!(d.status, SessionStatus::Finished);
    let rows = hub.outcomes(&id).await.unwrap();
    let alloc_a = [10, 10, 16, 7, 5, 9, 10, 10, 4, 13, 15, 11];
    let pay_a = [13, 15, 20, 16, 20, 20, 14, 14, 20, 20, 18, 20];
    let pay_b = [14, 14, 20, 20, 18, 20, 13, 15, 20, 16, 20, 20];
    assert_eq!(rows.len(), 12);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.period, i as u32 + 1);
        assert_eq!(r.allocation, vec![alloc_a[i].to_string(), (20 - alloc_a[i]).to_string()]);
        assert_eq!(r.payoffs, vec![pay_a[i].to_string(), pay_b[i].to_string()]);
        assert!(r.uniform);
    }
}

#[tokio::test(start_paused = true)]
async fn every_mechanism_completes_with_bots() {
    let hub = hub();
    for kind in MechanismKind::ALL {
        let mut r = req(kind, 4, 7);
        r.periods = Some(6);
        let id = bot_session(&hub, &r, truthful()).await;
        hub.wait_finished(&id).await.unwrap();
        let rows = hub.outcomes(&id).await.unwrap();
        assert_eq!(rows.len(), 12, "{kind}");
        assert!(rows.iter().all(|r| r.uniform), "{kind}");
    }
}

#[tokio::test(start_paused = true)]
async fn roles_are_fixed_and_pairings_are_seeded() {
    let hub = hub();
    let r = req(MechanismKind::Sru, 4, 7);
    let a = bot_session(&hub, &r, truthful()).await;
    let b = bot_session(&hub, &r, truthful()).await;
    hub.wait_finished(&a).await.unwrap();
    hub.wait_finished(&b).await.unwrap();
    let ra = hub.outcomes(&a).await.unwrap();
    let rb = hub.outcomes(&b).await.unwrap();
    let pairs = |rows: &[rationing_service::OutcomeRow]| rows.iter().map(|r| r.subjects).collect::<Vec<_>>();
    assert_eq!(pairs(&ra), pairs(&rb));
    let d = hub.descriptor(&a).unwrap();
    for row in &ra {
        assert_eq!(d.roster[row.subjects[0]].group, 0);
        assert_eq!(d.roster[row.subjects[1]].group, 1);
    }
    let log = hub.log(&a).await.unwrap();
    for e in &log {
        if let EventBody::PeriodStarted { first_mover, .. } = e.body {
            assert_eq!(first_mover, Some(0));
        }
    }
}

#[tokio::test(start_paused = true)]
async fn sixteen_sessions_keep_their_own_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let hub = Hub::new(HubConfig {
        data_dir: Some(dir.path().to_path_buf()),
        inter_period: Duration::from_millis(200),
        ..HubConfig::default()
    });
    let mut ids = Vec::new();
    for i in 0..16u64 {
        let kind = MechanismKind::ALL[i as usize % 4];
        let policy = match i % 3 {
            0 => truthful(),
            1 => BotPolicy::new(BotKind::MyopicBestResponder).with_latency(2),
            _ => BotPolicy::new(BotKind::Logit {
                lambda_e: 1.85,
                lambda_d: 1.66,
            }),
        };
        let mut r = req(kind, 4, i);
        r.periods = Some(4);
        ids.push(bot_session(&hub, &r, policy).await);
    }
    for id in &ids {
        hub.wait_finished(id).await.unwrap();
    }
    for id in &ids {
        let log = hub.log(id).await.unwrap();
        for (i, e) in log.iter().enumerate() {
            assert_eq!(e.seq, i as u64, "{id}");
        }
        let text = std::fs::read(log_path(dir.path(), id)).unwrap();
        let stored = read_jsonl(text.as_slice()).unwrap();
        assert_eq!(stored, log, "{id}");
        let replayed = replay_outcomes(&stored, &PayoffParams::default()).unwrap();
        let live = hub.outcomes(id).await.unwrap();
        assert_eq!(replayed.len(), live.len());
        for (a, b) in replayed.iter().zip(&live) {
            let alloc: Vec<String> = a.report.allocation.amounts().iter().map(|x| x.to_string()).collect();
            assert_eq!(alloc, b.allocation);
        }
    }
}

#[tokio::test(start_paused = true)]
async fn feedback_reaches_the_partner_and_direct_reports_do_not() {
    let hub = hub();
    for kind in [MechanismKind::Pfu, MechanismKind::Dru] {
        let d = hub.create_session(&req(kind, 2, 1)).unwrap();
        let id = d.session_id;
        let a = hub.join(&id, Some(0)).await.unwrap();
        let b = hub.join(&id, Some(1)).await.unwrap();
        hub.start(&id).await.unwrap();
        let mut sub_b = hub.subscribe(&id, &b.token).await.unwrap();
        hub.submit(&id, &a.token, AgentInput::Move { value: 7 }).await.unwrap();
        let got = drain(&mut sub_b, Duration::from_millis(300)).await;
        let partner_events: Vec<_> = events(&got).into_iter().filter(|e| e.agent == Some(0)).collect();
        let last_frame = got.iter().rev().find_map(|m| match m {
            ServerMessage::Frame { frame } => Some(frame.clone()),
            _ => None,
        });
        if kind == MechanismKind::Pfu {
            assert_eq!(partner_events.len(), 1);
            assert_eq!(last_frame.unwrap().partner_tentative, Some(7));
        } else {
            assert!(partner_events.is_empty());
            assert!(last_frame.is_none_or(|f| f.partner_tentative.is_none()));
        }
    }
}

#[tokio::test(start_paused = true)]
async fn opting_out_broadcasts_the_resolution() {
    let hub = hub();
    let mut r = req(MechanismKind::Ospu, 2, 1);
    r.periods = Some(6);
    let d = hub.create_session(&r).unwrap();
    let id = d.session_id;
    let a = hub.join(&id, Some(0)).await.unwrap();
    let b = hub.join(&id, Some(1)).await.unwrap();
    hub.start(&id).await.unwrap();
    // advance to period 6, valuation (9, 11), by letting the clocks lapse
    let mut rx = hub.subscribe(&id, &a.token).await.unwrap();
    loop {
        let d = hub.descriptor(&id).unwrap();
        if d.status == (SessionStatus::Running { period: 6 }) {
            break;
        }
        let _ = tokio::time::timeout(Duration::from_secs(5), rx.rx.recv()).await;
    }
    hub.submit(&id, &a.token, AgentInput::Choose { amount: 9 }).await.unwrap();
    hub.submit(&id, &b.token, AgentInput::Choose { amount: 11 }).await.unwrap();
    let mut sub = hub.subscribe(&id, &b.token).await.unwrap();
    hub.submit(&id, &a.token, AgentInput::OptOut).await.unwrap();
    hub.submit(&id, &b.token, AgentInput::Continue).await.unwrap();
    let got = events(&drain(&mut sub, Duration::from_millis(50)).await);
    assert!(got.iter().any(|e| matches!(e.body, EventBody::StepResolved { terminal: true, temp: [9, 11], .. })));
    assert!(got.iter().any(|e| matches!(e.body, EventBody::AllocationAssigned { .. })));
    assert!(!got.iter().any(|e| matches!(e.body, EventBody::OptOut { .. })));
}

#[tokio::test(start_paused = true)]
async fn human_best_response_against_a_truthful_bot_is_uniform() {
    let hub = hub();
    let mut r = req(MechanismKind::Pfu, 2, 3);
    r.periods = Some(1);
    let d = hub.create_session(&r).unwrap();
    let id = d.session_id;
    let human = hub.join(&id, Some(1)).await.unwrap();
    hub.attach_bot(&id, 0, truthful()).await.unwrap();
    hub.start(&id).await.unwrap();
    let mut sub = hub.subscribe(&id, &human.token).await.unwrap();
    let seen = loop {
        let f = hub.frame(&id, &human.token).await.unwrap().unwrap();
        if let Some(p) = f.partner_tentative {
            break (p, f.own_peak.unwrap());
        }
        let _ = tokio::time::timeout(Duration::from_millis(200), sub.rx.recv()).await;
    };
    let br = rationing::equilibrium::best_responses(seen.1, seen.0, &PayoffParams::default());
    let pick = *br.iter().next().unwrap();
    hub.submit(&id, &human.token, AgentInput::Move { value: pick }).await.unwrap();
    hub.wait_finished(&id).await.unwrap();
    let rows = hub.outcomes(&id).await.unwrap();
    assert!(rows[0].uniform, "{rows:?}");
}

#[tokio::test(start_paused = true)]
async fn http_endpoints_drive_a_session() {
    let hub = hub();
    let app = router(hub.clone());
    let call = |method: &str, uri: String, body: Option<serde_json::Value>| {
        let app = app.clone();
        let method = method.to_string();
        async move {
            let mut b = Request::builder().method(method.as_str()).uri(uri);
            let body = match body {
                Some(v) => {
                    b = b.header("content-type", "application/json");
                    Body::from(v.to_string())
                }
                None => Body::empty(),
            };
            let resp = app.oneshot(b.body(body).unwrap()).await.unwrap();
            let status = resp.status();
            let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
            (status, bytes)
        }
    };
    let (s, _) = call("POST", "/sessions".into(), Some(serde_json::json!({"mechanism": "DRU", "roster_size": 3}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, body) = call(
        "POST",
        "/sessions".into(),
        Some(serde_json::json!({"mechanism": "DRU", "roster_size": 2, "seed": 4, "periods": 1})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let d: serde_json::Value = serde_json::from_slice(&body).unwrap();
    let id = d["session_id"].as_str().unwrap().to_string();
    let (s, body) = call("POST", format!("/sessions/{id}/join"), Some(serde_json::json!({"subject": 0}))).await;
    assert_eq!(s, StatusCode::OK);
    let token = serde_json::from_slice::<serde_json::Value>(&body).unwrap()["token"]
        .as_str()
        .unwrap()
        .to_string();
    let (s, _) = call(
        "POST",
        format!("/sessions/{id}/bots"),
        Some(serde_json::json!({"subject": 0, "policy": {"kind": "truthful"}})),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(
        "POST",
        format!("/sessions/{id}/bots"),
        Some(serde_json::json!({"subject": 1, "policy": {"kind": "stubborn", "report": 5}})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call("POST", format!("/sessions/{id}/start"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (s, body) = call(
        "POST",
        format!("/sessions/{id}/submit"),
        Some(serde_json::json!({"token": token, "input": "move", "value": 25})),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(serde_json::from_slice::<serde_json::Value>(&body).unwrap()["error"], "out_of_range");
    for input in [serde_json::json!({"input": "move", "value": 3}), serde_json::json!({"input": "submit"})] {
        let mut v = input;
        v["token"] = serde_json::Value::String(token.clone());
        let (s, _) = call("POST", format!("/sessions/{id}/submit"), Some(v)).await;
        assert_eq!(s, StatusCode::OK);
    }
    let (s, body) = call("GET", format!("/sessions/{id}/state?token={token}"), None).await;
    assert_eq!(s, StatusCode::OK);
    let frame: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(frame["own_final"], 3);
    assert!(frame["partner_final"].is_null());
    hub.wait_finished(&id).await.unwrap();
    let (_, body) = call("GET", format!("/sessions/{id}/replay"), None).await;
    let log = read_jsonl(&body[..]).unwrap();
    let outcomes = replay_outcomes(&log, &PayoffParams::default()).unwrap();
    // both reports short of the supply: each is raised to 10
    assert_eq!(outcomes[0].report.allocation.to_integers().unwrap(), vec![10, 10]);
    let (s, _) = call("GET", "/sessions/missing".into(), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn read_until_finished(ws: &mut Ws) -> Vec<ServerMessage> {
    let mut out = Vec::new();
    while let Some(Ok(msg)) = ws.next().await {
        if let tokio_tungstenite::tungstenite::Message::Text(t) = msg {
            let m: ServerMessage = serde_json::from_str(&t).unwrap();
            let done = matches!(&m, ServerMessage::Status { descriptor } if descriptor.status == SessionStatus::Finished);
            out.push(m);
            if done {
                break;
            }
        }
    }
    out
}

#[tokio::test]
async fn streamed_delivery_passes_the_visibility_audit() {
    let hub = Hub::new(HubConfig {
        inter_period: Duration::from_millis(100),
        ..HubConfig::default()
    });
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(hub.clone());
    tokio::spawn(async move { axum::serve(listener, app).await });
    for kind in MechanismKind::ALL {
        let d = hub
            .create_session(&CreateSession {
                mechanism: kind,
                roster_size: 2,
                seed: 9,
                reporting_seconds: Some(1.0),
                step_seconds: Some(0.3),
                periods: Some(2),
            })
            .unwrap();
        let id = d.session_id;
        let tickets = [hub.join(&id, Some(0)).await.unwrap(), hub.join(&id, Some(1)).await.unwrap()];
        let mut sockets = Vec::new();
        for t in &tickets {
            let url = format!("ws://{addr}/sessions/{id}/stream?token={}", t.token);
            let (ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
            sockets.push(ws);
        }
        hub.start(&id).await.unwrap();
        let script: Vec<serde_json::Value> = match kind {
            MechanismKind::Ospu => vec![serde_json::json!({"input": "choose", "amount": 9})],
            MechanismKind::Pfu => vec![
                serde_json::json!({"input": "move", "value": 7}),
                serde_json::json!({"input": "move", "value": 12}),
            ],
            _ => vec![
                serde_json::json!({"input": "move", "value": 6}),
                serde_json::json!({"input": "submit"}),
            ],
        };
        for ws in sockets.iter_mut() {
            for s in &script {
                ws.send(tokio_tungstenite::tungstenite::Message::Text(s.to_string().into()))
                    .await
                    .unwrap();
            }
        }
        let mut delivered = Vec::new();
        for ws in sockets.iter_mut() {
            delivered.push(events(&read_until_finished(ws).await));
        }
        let log = hub.log(&id).await.unwrap();
        for ((period, pair), period_log) in split_periods(&log) {
            for seat in 0..2 {
                let got: Vec<SessionEvent> = delivered[seat]
                    .iter()
                    .filter(|e| (e.period, e.pair) == (period, pair))
                    .cloned()
                    .collect();
                audit_delivery(&period_log, seat, &got).unwrap_or_else(|e| panic!("{kind} period {period}: {e}"));
            }
        }
        let rows = hub.outcomes(&id).await.unwrap();
        assert_eq!(rows.len(), 2, "{kind}");
        let schedule = Schedule::standard();
        let by_period: BTreeMap<u32, _> = rows.iter().map(|r| (r.period, r)).collect();
        for p in schedule.periods.iter().take(2) {
            assert_eq!(by_period[&p.period].peaks, [p.valuation.peaks[0], p.valuation.peaks[1]]);
        }
    }
}
