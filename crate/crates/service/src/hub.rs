use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use rand::Rng;
use rationing::dynamics::BotPolicy;
use rationing::session::{group_of, plan_session, AgentInput, MechanismSpec, SessionEvent, StateFrame};
use rationing::Schedule;
use tokio::sync::{broadcast, mpsc, oneshot, watch};

use crate::actor::{Command, SessionActor, Subscription};
use crate::error::ServiceError;
use crate::store::Store;
use crate::wire::{
    Ack, CreateSession, JoinTicket, Occupant, OutcomeRow, RosterEntry, SessionDescriptor, SessionStatus,
};

#[derive(Debug, Clone)]
pub struct HubConfig {
    /// Logs go under `<data_dir>/sessions/<id>/`; nothing is written when unset.
    pub data_dir: Option<PathBuf>,
    pub inter_period: Duration,
    pub reporting_seconds: Option<f64>,
    pub step_seconds: Option<f64>,
}

impl Default for HubConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            inter_period: Duration::from_secs(3),
            reporting_seconds: None,
            step_seconds: None,
        }
    }
}

struct Handle {
    tx: mpsc::Sender<Command>,
    descriptor: watch::Receiver<SessionDescriptor>,
}

/// Registry of live sessions. Cheap to clone.
#[derive(Clone)]
pub struct Hub {
    inner: Arc<Inner>,
}

struct Inner {
    config: HubConfig,
    sessions: RwLock<HashMap<String, Handle>>,
    counter: AtomicU64,
}

impl Hub {
    pub fn new(config: HubConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                config,
                sessions: RwLock::new(HashMap::new()),
                counter: AtomicU64::new(1),
            }),
        }
    }

    pub fn config(&self) -> &HubConfig {
        &self.inner.config
    }

    pub fn create_session(&self, req: &CreateSession) -> Result<SessionDescriptor, ServiceError> {
        let n = req.roster_size;
        if n < 2 || n % 2 != 0 {
            return Err(ServiceError::Roster(n));
        }
        let cfg = &self.inner.config;
        let mut spec = MechanismSpec::new(req.mechanism);
        let reporting = req.reporting_seconds.or(cfg.reporting_seconds);
        let step = req.step_seconds.or(cfg.step_seconds);
        if reporting.is_some() || step.is_some() {
            spec = spec.with_windows(
                reporting.unwrap_or(spec.reporting_ms as f64 / 1000.0),
                step.unwrap_or(spec.ospu_step_ms as f64 / 1000.0),
            )?;
        }
        spec.validate()?;
        let mut plans = plan_session(&Schedule::standard(), n, req.seed).map_err(|_| ServiceError::Roster(n))?;
        if let Some(k) = req.periods {
            if k == 0 {
                return Err(ServiceError::BadRequest("a session needs at least one period".into()));
            }
            plans.truncate(k);
        }
        let id = format!(
            "s{:04}-{:08x}",
            self.inner.counter.fetch_add(1, Ordering::Relaxed),
            rand::rng().random::<u32>()
        );
        let descriptor = SessionDescriptor {
            session_id: id.clone(),
            mechanism: spec,
            seed: req.seed,
            periods: plans.len() as u32,
            roster: (0..n)
                .map(|s| RosterEntry {
                    subject: s,
                    group: group_of(s, n),
                    occupant: Occupant::Vacant,
                })
                .collect(),
            status: SessionStatus::Lobby,
        };
        let store = match &cfg.data_dir {
            Some(root) => {
                let s = Store::create(root, &id)?;
                s.write_descriptor(&descriptor)?;
                Some(s)
            }
            None => None,
        };
        let (desc_tx, desc_rx) = watch::channel(descriptor.clone());
        let (out, _) = broadcast::channel(1024);
        let (tx, rx) = mpsc::channel(256);
        let actor = SessionActor::new(descriptor.clone(), spec, plans, cfg.inter_period, store, desc_tx, out);
        tokio::spawn(actor.run(rx));
        self.inner.sessions.write().expect("session map lock").insert(
            id,
            Handle {
                tx,
                descriptor: desc_rx,
            },
        );
        Ok(descriptor)
    }

    fn handle(&self, id: &str) -> Result<(mpsc::Sender<Command>, watch::Receiver<SessionDescriptor>), ServiceError> {
        let map = self.inner.sessions.read().expect("session map lock");
        let h = map.get(id).ok_or_else(|| ServiceError::UnknownSession(id.to_string()))?;
        Ok((h.tx.clone(), h.descriptor.clone()))
    }

    async fn ask<T>(
        &self,
        id: &str,
        make: impl FnOnce(oneshot::Sender<Result<T, ServiceError>>) -> Command,
    ) -> Result<T, ServiceError> {
        let (tx, _) = self.handle(id)?;
        let (reply, rx) = oneshot::channel();
        tx.send(make(reply)).await.map_err(|_| ServiceError::Gone)?;
        rx.await.map_err(|_| ServiceError::Gone)?
    }

    pub fn descriptor(&self, id: &str) -> Result<SessionDescriptor, ServiceError> {
        Ok(self.handle(id)?.1.borrow().clone())
    }

    pub fn list(&self) -> Vec<SessionDescriptor> {
        let map = self.inner.sessions.read().expect("session map lock");
        let mut out: Vec<SessionDescriptor> = map.values().map(|h| h.descriptor.borrow().clone()).collect();
        out.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        out
    }

    pub async fn join(&self, id: &str, subject: Option<usize>) -> Result<JoinTicket, ServiceError> {
        self.ask(id, |reply| Command::Join { subject, reply }).await
    }

    pub async fn attach_bot(&self, id: &str, subject: usize, policy: BotPolicy) -> Result<(), ServiceError> {
        self.ask(id, |reply| Command::AttachBot { subject, policy, reply }).await
    }

    pub async fn start(&self, id: &str) -> Result<(), ServiceError> {
        self.ask(id, |reply| Command::Start { reply }).await
    }

    pub async fn frame(&self, id: &str, token: &str) -> Result<Option<StateFrame>, ServiceError> {
        let token = token.to_string();
        self.ask(id, |reply| Command::Frame { token, reply }).await
    }

    pub async fn submit(&self, id: &str, token: &str, input: AgentInput) -> Result<Ack, ServiceError> {
        let token = token.to_string();
        self.ask(id, |reply| Command::Submit { token, input, reply }).await
    }

    pub async fn subscribe(&self, id: &str, token: &str) -> Result<Subscription, ServiceError> {
        let token = token.to_string();
        self.ask(id, |reply| Command::Subscribe { token, reply }).await
    }

    pub async fn log(&self, id: &str) -> Result<Vec<SessionEvent>, ServiceError> {
        let (tx, _) = self.handle(id)?;
        let (reply, rx) = oneshot::channel();
        tx.send(Command::Log { reply }).await.map_err(|_| ServiceError::Gone)?;
        rx.await.map_err(|_| ServiceError::Gone)
    }

    pub async fn outcomes(&self, id: &str) -> Result<Vec<OutcomeRow>, ServiceError> {
        self.ask(id, |reply| Command::Outcomes { reply }).await
    }

    /// Resolves once the session reports `Finished`.
    pub async fn wait_finished(&self, id: &str) -> Result<SessionDescriptor, ServiceError> {
        let (_, mut rx) = self.handle(id)?;
        let d = rx
            .wait_for(|d| d.status == SessionStatus::Finished)
            .await
            .map_err(|_| ServiceError::Gone)?;
        Ok(d.clone())
    }
}
