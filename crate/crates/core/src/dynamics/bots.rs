use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::choice::{choice_probabilities, ChoiceParams, ObservationSet};
use crate::equilibrium::best_responses;
use crate::model::{PayoffParams, Valuation};
use crate::session::{
    frame, AgentInput, MechanismKind, MechanismSpec, PeriodEngine, PeriodSetup, Phase, ProtocolError, SeqCounter,
    SessionEvent, StateFrame,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BotKind {
    Truthful,
    MyopicBestResponder,
    Logit { lambda_e: f64, lambda_d: f64 },
    Stubborn { report: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BotPolicy {
    #[serde(flatten)]
    pub kind: BotKind,
    /// Ticks between seeing a frame and acting on it.
    #[serde(default)]
    pub latency: u32,
}

impl BotPolicy {
    pub fn new(kind: BotKind) -> Self {
        Self { kind, latency: 0 }
    }

    pub fn with_latency(mut self, ticks: u32) -> Self {
        self.latency = ticks;
        self
    }

    /// Parses `truthful`, `myopic`, `stubborn:R` or `logit:E,D`, with an
    /// optional `@latency` suffix.
    pub fn parse(s: &str) -> Result<Self, String> {
        let (body, latency) = match s.split_once('@') {
            Some((b, l)) => (b, l.parse::<u32>().map_err(|e| format!("latency {l:?}: {e}"))?),
            None => (s, 0),
        };
        let (name, arg) = body.split_once(':').unwrap_or((body, ""));
        let kind = match name {
            "truthful" => BotKind::Truthful,
            "myopic" | "myopic-best-responder" => BotKind::MyopicBestResponder,
            "stubborn" => BotKind::Stubborn {
                report: arg.parse().map_err(|e| format!("stubborn report {arg:?}: {e}"))?,
            },
            "logit" => {
                let (e, d) = arg.split_once(',').ok_or("logit needs lambda_e,lambda_d")?;
                let parse = |x: &str| x.trim().parse::<f64>().map_err(|err| format!("logit weight {x:?}: {err}"));
                BotKind::Logit {
                    lambda_e: parse(e)?,
                    lambda_d: parse(d)?,
                }
            }
            _ => return Err(format!("unknown bot policy {name:?}")),
        };
        Ok(Self { kind, latency })
    }
}

impl std::fmt::Display for BotPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            BotKind::Truthful => f.write_str("truthful")?,
            BotKind::MyopicBestResponder => f.write_str("myopic")?,
            BotKind::Logit { lambda_e, lambda_d } => write!(f, "logit:{lambda_e},{lambda_d}")?,
            BotKind::Stubborn { report } => write!(f, "stubborn:{report}")?,
        }
        if self.latency > 0 {
            write!(f, "@{}", self.latency)?;
        }
        Ok(())
    }
}

/// Decision state of one bot seat. Reads only what the seat's screen
/// shows, so bots and people see the same information.
#[derive(Debug, Clone)]
pub struct BotBrain {
    pub policy: BotPolicy,
    rng: ChaCha8Rng,
    period: Option<(u32, u32)>,
    observed: BTreeSet<u32>,
    target: Option<u32>,
}

impl BotBrain {
    pub fn new(policy: BotPolicy, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            policy,
            rng,
            period: None,
            observed: BTreeSet::new(),
            target: None,
        }
    }

    fn logit_draw(&mut self, peak: u32, lambda_e: f64, lambda_d: f64, params: &PayoffParams) -> u32 {
        let probs = if self.observed.is_empty() {
            let w: Vec<f64> = (0..=params.supply)
                .map(|x| if x == peak { lambda_d.exp() } else { 1.0 })
                .collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|x| x / z).collect()
        } else {
            let obs = ObservationSet {
                own_peak: peak,
                observed_partner_reports: self.observed.clone(),
                final_report: peak,
                cluster_id: String::new(),
            };
            choice_probabilities(&obs, &ChoiceParams::new(lambda_e, lambda_d), params)
                .expect("observations lie in the report space")
        };
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        for (x, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return x as u32;
            }
        }
        params.supply
    }

    fn desired(&mut self, f: &StateFrame, peak: u32, params: &PayoffParams) -> u32 {
        let partner = f.partner_tentative.or(f.partner_final);
        match self.policy.kind {
            BotKind::Truthful => peak,
            BotKind::Stubborn { report } => report.min(f.supply),
            BotKind::MyopicBestResponder => {
                let seen = partner.or((f.mechanism == Some(MechanismKind::Pfu)).then_some(f.supply / 2));
                match seen {
                    Some(o) => {
                        let br: Vec<u32> = best_responses(peak, o, params).into_iter().collect();
                        if br.contains(&f.cursor) {
                            f.cursor
                        } else {
                            *br.iter()
                                .min_by_key(|&&b| ((b as i64 - f.cursor as i64).abs(), b))
                                .expect("best-response sets are never empty")
                        }
                    }
                    None => peak,
                }
            }
            BotKind::Logit { lambda_e, lambda_d } => match self.target {
                Some(t) => t,
                None => {
                    let t = self.logit_draw(peak, lambda_e, lambda_d, params);
                    self.target = Some(t);
                    t
                }
            },
        }
    }

    /// Inputs this seat sends in response to `f`.
    pub fn decide(&mut self, f: &StateFrame) -> Vec<AgentInput> {
        let params = PayoffParams {
            supply: f.supply,
            ..PayoffParams::default()
        };
        if self.period != Some((f.period, f.pair)) {
            self.period = Some((f.period, f.pair));
            self.observed.clear();
            self.target = None;
        }
        for seen in [f.partner_tentative, f.partner_final].into_iter().flatten() {
            if self.observed.insert(seen) && matches!(self.policy.kind, BotKind::Logit { .. }) {
                self.target = None;
            }
        }
        let Some(peak) = f.own_peak else {
            return Vec::new();
        };
        if !f.my_turn {
            return Vec::new();
        }
        match f.phase {
            Phase::Reporting => {
                let want = self.desired(f, peak, &params);
                let mut out = Vec::new();
                if want != f.cursor {
                    out.push(AgentInput::Move { value: want });
                }
                if f.mechanism != Some(MechanismKind::Pfu) {
                    out.push(AgentInput::Submit);
                }
                out
            }
            Phase::Clock => {
                let Some(c) = &f.clock else {
                    return Vec::new();
                };
                let target = self.desired(f, peak, &params);
                let own = c.temp[f.seat];
                if c.step == 0 {
                    let amount = match target.cmp(&own) {
                        std::cmp::Ordering::Less => own - 1,
                        std::cmp::Ordering::Equal => own,
                        std::cmp::Ordering::Greater => own + 1,
                    };
                    vec![AgentInput::Choose { amount }]
                } else if c.delta[f.seat] != 0 && (target as i64 - own as i64).signum() == c.delta[f.seat] as i64 {
                    vec![AgentInput::Continue]
                } else {
                    vec![AgentInput::OptOut]
                }
            }
            _ => Vec::new(),
        }
    }
}

/// A bot bound to a seat, seeing partner information `latency` ticks late.
#[derive(Debug, Clone)]
pub struct BotSeat {
    pub brain: BotBrain,
    history: VecDeque<StateFrame>,
}

impl BotSeat {
    pub fn new(brain: BotBrain) -> Self {
        Self {
            brain,
            history: VecDeque::new(),
        }
    }

    /// Records the frame shown to this seat at the current tick.
    pub fn observe(&mut self, f: StateFrame) {
        self.history.push_back(f);
        while self.history.len() > self.brain.policy.latency as usize + 1 {
            self.history.pop_front();
        }
    }

    /// Decides against `live` with the partner fields taken from the oldest
    /// remembered frame. Acts only once the latency has elapsed.
    pub fn act(&mut self, mut live: StateFrame) -> Vec<AgentInput> {
        if self.history.len() <= self.brain.policy.latency as usize {
            return Vec::new();
        }
        let Some(stale) = self.history.front() else {
            return Vec::new();
        };
        if (stale.period, stale.pair) == (live.period, live.pair) {
            live.partner_tentative = stale.partner_tentative;
            live.partner_final = stale.partner_final;
        } else {
            live.partner_tentative = None;
            live.partner_final = None;
        }
        self.brain.decide(&live)
    }
}

pub const PFU_TICK_MS: u64 = 100;

/// Plays one feedback-rule reporting window at 10 Hz between two bots and
/// returns the full event log, ending with the allocation.
pub fn run_pfu_sim(
    valuation: &Valuation,
    policies: [BotPolicy; 2],
    ticks: u32,
    seed: u64,
) -> Result<Vec<SessionEvent>, ProtocolError> {
    if ticks == 0 {
        return Err(ProtocolError::Invalid("a reporting window needs at least one tick".into()));
    }
    let spec = MechanismSpec {
        reporting_ms: u64::from(ticks) * PFU_TICK_MS,
        ..MechanismSpec::new(MechanismKind::Pfu)
    };
    run_bot_period(valuation, spec, policies, seed)
}

/// Any mechanism, bots on both seats, ticking at the spec's rate until the
/// period ends.
pub fn run_bot_period(
    valuation: &Valuation,
    spec: MechanismSpec,
    policies: [BotPolicy; 2],
    seed: u64,
) -> Result<Vec<SessionEvent>, ProtocolError> {
    let tick = spec.tick_ms();
    let setup = PeriodSetup {
        spec,
        valuation: valuation.clone(),
        period: 1,
        pair: 0,
        first_mover: 0,
    };
    let mut seq = SeqCounter::default();
    let (mut engine, _) = PeriodEngine::start(setup, &mut seq)?;
    let mut bots = [
        BotSeat::new(BotBrain::new(policies[0], seed, 1)),
        BotSeat::new(BotBrain::new(policies[1], seed, 2)),
    ];
    let mut k: u64 = 0;
    while !engine.is_finished() {
        let now = k * tick;
        engine.tick(&mut seq, now);
        let frames = [frame(engine.state(), 0), frame(engine.state(), 1)];
        for (a, f) in frames.into_iter().enumerate() {
            bots[a].observe(f);
        }
        for (a, bot) in bots.iter_mut().enumerate() {
            if engine.is_finished() {
                break;
            }
            for input in bot.act(frame(engine.state(), a)) {
                engine.input(&mut seq, now, a, input)?;
                if engine.is_finished() {
                    break;
                }
            }
        }
        k += 1;
    }
    Ok(engine.log().to_vec())
}
