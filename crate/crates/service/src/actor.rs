use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use rationing::dynamics::{BotBrain, BotPolicy, BotSeat};
use rationing::session::{
    frame, replay_outcomes, visible_event, visible_events, AgentInput, MechanismSpec, PeriodEngine, PeriodPlan,
    PeriodSetup, SeqCounter, SessionEvent, StateFrame,
};
use rationing::PayoffParams;
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio::time::{interval, Instant, MissedTickBehavior};

use crate::error::ServiceError;
use crate::store::Store;
use crate::wire::{Ack, JoinTicket, Occupant, OutcomeRow, ServerMessage, SessionDescriptor, SessionStatus};

pub type Reply<T> = oneshot::Sender<Result<T, ServiceError>>;

pub enum Command {
    Join { subject: Option<usize>, reply: Reply<JoinTicket> },
    AttachBot { subject: usize, policy: BotPolicy, reply: Reply<()> },
    Start { reply: Reply<()> },
    Frame { token: String, reply: Reply<Option<StateFrame>> },
    Submit { token: String, input: AgentInput, reply: Reply<Ack> },
    Subscribe { token: String, reply: Reply<Subscription> },
    Log { reply: oneshot::Sender<Vec<SessionEvent>> },
    Outcomes { reply: Reply<Vec<OutcomeRow>> },
}

/// Messages for every subject produced by one write, indexed by subject.
#[derive(Debug)]
pub struct Fanout {
    pub per_subject: Vec<Vec<ServerMessage>>,
}

#[derive(Debug)]
pub struct Subscription {
    pub subject: usize,
    pub snapshot: Vec<ServerMessage>,
    pub rx: broadcast::Receiver<Arc<Fanout>>,
}

/// Single writer for one session: every event passes through here.
pub struct SessionActor {
    pub descriptor: SessionDescriptor,
    pub spec: MechanismSpec,
    pub plans: Vec<PeriodPlan>,
    pub inter_period: Duration,
    pub store: Option<Store>,
    pub desc_tx: watch::Sender<SessionDescriptor>,
    pub out: broadcast::Sender<Arc<Fanout>>,
    tokens: HashMap<String, usize>,
    bots: BTreeMap<usize, BotSeat>,
    seq: SeqCounter,
    log: Vec<SessionEvent>,
    current: Option<usize>,
    engines: Vec<PeriodEngine>,
    period_start: Instant,
    resume_at: Option<Instant>,
}

impl SessionActor {
    pub fn new(
        descriptor: SessionDescriptor,
        spec: MechanismSpec,
        plans: Vec<PeriodPlan>,
        inter_period: Duration,
        store: Option<Store>,
        desc_tx: watch::Sender<SessionDescriptor>,
        out: broadcast::Sender<Arc<Fanout>>,
    ) -> Self {
        Self {
            descriptor,
            spec,
            plans,
            inter_period,
            store,
            desc_tx,
            out,
            tokens: HashMap::new(),
            bots: BTreeMap::new(),
            seq: SeqCounter::default(),
            log: Vec::new(),
            current: None,
            engines: Vec::new(),
            period_start: Instant::now(),
            resume_at: None,
        }
    }

    pub async fn run(mut self, mut rx: mpsc::Receiver<Command>) {
        let mut ticker = interval(Duration::from_millis(self.spec.tick_ms()));
        ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
        loop {
            let running = matches!(self.descriptor.status, SessionStatus::Running { .. });
            tokio::select! {
                cmd = rx.recv() => match cmd {
                    Some(c) => self.handle(c),
                    None => break,
                },
                _ = ticker.tick(), if running => self.on_tick(),
            }
        }
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Join { subject, reply } => {
                let _ = reply.send(self.join(subject));
            }
            Command::AttachBot { subject, policy, reply } => {
                let _ = reply.send(self.attach_bot(subject, policy));
            }
            Command::Start { reply } => {
                let _ = reply.send(self.start());
            }
            Command::Frame { token, reply } => {
                let r = self.subject_of(&token).map(|s| self.frame_for(s));
                let _ = reply.send(r);
            }
            Command::Submit { token, input, reply } => {
                let _ = reply.send(self.submit(&token, input));
            }
            Command::Subscribe { token, reply } => {
                let _ = reply.send(self.subscribe(&token));
            }
            Command::Log { reply } => {
                let _ = reply.send(self.log.clone());
            }
            Command::Outcomes { reply } => {
                let _ = reply.send(self.outcomes());
            }
        }
    }

    fn subject_of(&self, token: &str) -> Result<usize, ServiceError> {
        self.tokens.get(token).copied().ok_or(ServiceError::UnknownToken)
    }

    fn require_lobby(&self) -> Result<(), ServiceError> {
        match self.descriptor.status {
            SessionStatus::Lobby => Ok(()),
            s => Err(ServiceError::WrongStatus(s.name())),
        }
    }

    fn claim(&mut self, subject: Option<usize>, occupant: Occupant) -> Result<usize, ServiceError> {
        self.require_lobby()?;
        let roster = &mut self.descriptor.roster;
        let idx = match subject {
            Some(s) => {
                let entry = roster.get(s).ok_or(ServiceError::NoSuchSubject(s))?;
                if entry.occupant != Occupant::Vacant {
                    return Err(ServiceError::SeatOccupied(s));
                }
                s
            }
            None => roster
                .iter()
                .position(|r| r.occupant == Occupant::Vacant)
                .ok_or(ServiceError::Full)?,
        };
        roster[idx].occupant = occupant;
        Ok(idx)
    }

    fn join(&mut self, subject: Option<usize>) -> Result<JoinTicket, ServiceError> {
        let subject = self.claim(subject, Occupant::Human)?;
        let token: String = {
            let mut rng = rand::rng();
            (0..16).map(|_| format!("{:02x}", rng.random::<u8>())).collect()
        };
        self.tokens.insert(token.clone(), subject);
        self.descriptor_changed();
        Ok(JoinTicket { subject, token })
    }

    fn attach_bot(&mut self, subject: usize, policy: BotPolicy) -> Result<(), ServiceError> {
        self.claim(Some(subject), Occupant::Bot { policy })?;
        let brain = BotBrain::new(policy, self.descriptor.seed, subject as u64 + 1);
        self.bots.insert(subject, BotSeat::new(brain));
        self.descriptor_changed();
        Ok(())
    }

    fn start(&mut self) -> Result<(), ServiceError> {
        self.require_lobby()?;
        let vacant = self
            .descriptor
            .roster
            .iter()
            .filter(|r| r.occupant == Occupant::Vacant)
            .count();
        if vacant > 0 {
            return Err(ServiceError::Unfilled(vacant));
        }
        self.begin_period(0);
        Ok(())
    }

    fn descriptor_changed(&mut self) {
        self.desc_tx.send_replace(self.descriptor.clone());
        if let Some(store) = &self.store {
            if let Err(e) = store.write_descriptor(&self.descriptor) {
                tracing::error!(session = %self.descriptor.session_id, "writing descriptor: {e}");
            }
        }
    }

    fn now_ms(&self) -> u64 {
        Instant::now().duration_since(self.period_start).as_millis() as u64
    }

    fn seat_of(&self, subject: usize) -> Option<(usize, usize)> {
        let plan = &self.plans[self.current?];
        plan.pairs.iter().enumerate().find_map(|(j, pair)| {
            pair.iter().position(|&s| s == subject).map(|seat| (j, seat))
        })
    }

    fn frame_for(&self, subject: usize) -> Option<StateFrame> {
        let (j, seat) = self.seat_of(subject)?;
        Some(frame(self.engines[j].state(), seat))
    }

    fn begin_period(&mut self, index: usize) {
        let plan = self.plans[index].clone();
        self.current = Some(index);
        self.period_start = Instant::now();
        self.resume_at = None;
        self.engines.clear();
        let mut events = Vec::new();
        for (j, _) in plan.pairs.iter().enumerate() {
            let setup = PeriodSetup {
                spec: self.spec,
                valuation: plan.valuation.clone(),
                period: plan.period,
                pair: j as u32,
                first_mover: plan.first_mover_seat,
            };
            let (engine, evs) = PeriodEngine::start(setup, &mut self.seq).expect("validated at creation");
            self.engines.push(engine);
            events.extend(evs);
        }
        self.descriptor.status = SessionStatus::Running { period: plan.period };
        self.descriptor_changed();
        self.publish(events, true);
    }

    fn on_tick(&mut self) {
        if let Some(t) = self.resume_at {
            if Instant::now() >= t {
                let next = self.current.map_or(0, |c| c + 1);
                self.begin_period(next);
            }
            return;
        }
        let Some(current) = self.current else {
            return;
        };
        let now = self.now_ms();
        let mut events = Vec::new();
        for engine in &mut self.engines {
            events.extend(engine.tick(&mut self.seq, now));
        }
        let seats: Vec<(usize, usize, usize)> = self
            .bots
            .keys()
            .filter_map(|&s| self.seat_of(s).map(|(j, seat)| (s, j, seat)))
            .collect();
        for &(s, j, seat) in &seats {
            let f = frame(self.engines[j].state(), seat);
            self.bots.get_mut(&s).expect("bot present").observe(f);
        }
        for &(s, j, seat) in &seats {
            let live = frame(self.engines[j].state(), seat);
            let inputs = self.bots.get_mut(&s).expect("bot present").act(live);
            for input in inputs {
                if self.engines[j].is_finished() {
                    break;
                }
                match self.engines[j].input(&mut self.seq, now, seat, input) {
                    Ok(evs) => events.extend(evs),
                    Err(e) => tracing::warn!(subject = s, "bot input {input:?} rejected: {e}"),
                }
            }
        }
        self.publish(events, false);
        if self.engines.iter().all(PeriodEngine::is_finished) {
            if current + 1 == self.plans.len() {
                self.descriptor.status = SessionStatus::Finished;
                self.descriptor_changed();
                self.publish(Vec::new(), true);
            } else {
                self.resume_at = Some(Instant::now() + self.inter_period);
            }
        }
    }

    fn submit(&mut self, token: &str, input: AgentInput) -> Result<Ack, ServiceError> {
        let subject = self.subject_of(token)?;
        if !matches!(self.descriptor.status, SessionStatus::Running { .. }) {
            return Err(ServiceError::WrongStatus(self.descriptor.status.name()));
        }
        let (j, seat) = self.seat_of(subject).ok_or(ServiceError::NotSeated(subject))?;
        let now = self.now_ms();
        let mut events = self.engines[j].tick(&mut self.seq, now);
        let result = self.engines[j].input(&mut self.seq, now, seat, input);
        let outcome = match result {
            Ok(evs) => {
                let ack = Ack {
                    accepted: evs.len(),
                    last_seq: evs.last().map(|e| e.seq),
                };
                events.extend(evs);
                Ok(ack)
            }
            Err(e) => Err(ServiceError::Protocol(e)),
        };
        self.publish(events, false);
        outcome
    }

    fn subscribe(&mut self, token: &str) -> Result<Subscription, ServiceError> {
        let subject = self.subject_of(token)?;
        let rx = self.out.subscribe();
        let mut snapshot = vec![ServerMessage::Status {
            descriptor: self.descriptor.clone(),
        }];
        if let Some((j, seat)) = self.seat_of(subject) {
            for event in visible_events(self.engines[j].log(), seat) {
                snapshot.push(ServerMessage::Event { event });
            }
            snapshot.push(ServerMessage::Frame {
                frame: frame(self.engines[j].state(), seat),
            });
        }
        Ok(Subscription { subject, snapshot, rx })
    }

    fn publish(&mut self, events: Vec<SessionEvent>, status: bool) {
        if events.is_empty() && !status {
            return;
        }
        if let Some(store) = &mut self.store {
            if let Err(e) = store.append(&events) {
                tracing::error!(session = %self.descriptor.session_id, "appending events: {e}");
            }
        }
        let n = self.descriptor.roster.len();
        let mut per_subject: Vec<Vec<ServerMessage>> = vec![Vec::new(); n];
        for (s, msgs) in per_subject.iter_mut().enumerate() {
            if status {
                msgs.push(ServerMessage::Status {
                    descriptor: self.descriptor.clone(),
                });
            }
            let Some((j, seat)) = self.seat_of(s) else {
                continue;
            };
            let engine = &self.engines[j];
            let header = &engine.log()[0];
            let mut touched = false;
            for e in events.iter().filter(|e| e.pair == j as u32 && e.period == header.period) {
                touched = true;
                if let Some(event) = visible_event(header, e, seat) {
                    msgs.push(ServerMessage::Event { event });
                }
            }
            if touched {
                msgs.push(ServerMessage::Frame {
                    frame: frame(engine.state(), seat),
                });
            }
        }
        self.log.extend(events);
        let _ = self.out.send(Arc::new(Fanout { per_subject }));
    }

    fn outcomes(&self) -> Result<Vec<OutcomeRow>, ServiceError> {
        let results = replay_outcomes(&self.log, &PayoffParams::default()).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let mut rows = Vec::new();
        for r in results {
            let plan = self.plans.iter().find(|p| p.period == r.period);
            let subjects = plan
                .and_then(|p| p.pairs.get(r.pair as usize))
                .copied()
                .unwrap_or([usize::MAX; 2]);
            rows.push(OutcomeRow {
                period: r.period,
                pair: r.pair,
                subjects,
                mechanism: r.mechanism,
                peaks: [r.valuation.peaks[0], r.valuation.peaks[1]],
                allocation: r.report.allocation.amounts().iter().map(|a| a.to_string()).collect(),
                payoffs: r.report.payoffs.iter().map(|a| a.to_string()).collect(),
                uniform: r.report.is_uniform,
                efficient: r.report.is_efficient,
            });
        }
        Ok(rows)
    }
}
