use std::fmt;

use serde::{Deserialize, Serialize};

use super::tree::{available_actions, Action, GameNode, GameTree, NodeId};
use crate::model::PayoffParams;

/// Number of own moves a plan commits to after its anchor action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Horizon {
    Finite(u32),
    Infinite,
}

impl Horizon {
    fn step_down(self) -> Self {
        match self {
            Horizon::Finite(k) => Horizon::Finite(k.saturating_sub(1)),
            Horizon::Infinite => Horizon::Infinite,
        }
    }

    fn exhausted(self) -> bool {
        self == Horizon::Finite(0)
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Horizon::Finite(k) => write!(f, "{k}"),
            Horizon::Infinite => f.write_str("inf"),
        }
    }
}

/// How a plan fills in its committed own actions after the anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prescription {
    /// Move toward the peak while strictly before it, otherwise opt out.
    TowardPeak,
    /// Opt out at every committed node.
    StopNext,
    /// Whatever committed actions maximise the guaranteed utility; a
    /// plan of this kind is simply dominant iff any plan with the same
    /// anchor and horizon is.
    Best,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrategicPlan {
    pub anchor_action: Action,
    pub horizon: Horizon,
    pub committed: Prescription,
}

impl StrategicPlan {
    pub fn new(anchor_action: Action, horizon: Horizon, committed: Prescription) -> Self {
        Self {
            anchor_action,
            horizon,
            committed,
        }
    }

    pub fn anchor_only(anchor_action: Action) -> Self {
        Self::new(anchor_action, Horizon::Finite(0), Prescription::TowardPeak)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanBounds {
    pub worst: i64,
    /// `None` when the anchor is the only available action.
    pub best_deviation: Option<i64>,
}

impl PlanBounds {
    pub fn simply_dominant(&self) -> bool {
        self.best_deviation.is_none_or(|b| self.worst >= b)
    }
}

/// The dominant-strategy action for `agent` with `peak` at a live node.
pub fn ds_action(tree: &GameTree, node: &GameNode, agent: usize, peak: u32) -> Action {
    let own = available_actions(node, agent, &tree.rules);
    let x = node.temp[agent];
    let wanted = if node.step == 0 {
        Action::Choose(match peak.cmp(&x) {
            std::cmp::Ordering::Less => x - 1,
            std::cmp::Ordering::Equal => x,
            std::cmp::Ordering::Greater => x + 1,
        })
    } else if moving_toward(node, agent, peak) {
        Action::Continue
    } else {
        Action::OptOut
    };
    if own.contains(&wanted) {
        wanted
    } else {
        own[0]
    }
}

/// True when continuing moves the agent strictly closer to the peak.
pub(crate) fn moving_toward(node: &GameNode, agent: usize, peak: u32) -> bool {
    let x = node.temp[agent] as i64;
    let d = node.delta[agent] as i64;
    d != 0 && (peak as i64 - x).signum() == d
}

fn payoff(peak: u32, x: u32, params: &PayoffParams) -> i64 {
    params.k - (peak as i64 - x as i64).abs()
}

/// Guaranteed utility and best deviation utility of following `plan` at `node`.
///
/// Beyond the horizon the agent's own moves are treated as adversarial,
/// just like every move of the opponent.
pub fn plan_outcome_bounds(
    tree: &GameTree,
    node: NodeId,
    agent: usize,
    peak: u32,
    plan: &StrategicPlan,
    params: &PayoffParams,
) -> PlanBounds {
    let n = tree.node(node);
    assert!(
        n.movers.contains(&agent),
        "agent {agent} does not move at node {node}"
    );
    let worst = n
        .children
        .iter()
        .filter(|(j, _)| j[agent] == plan.anchor_action)
        .map(|(_, c)| guaranteed(tree, *c, agent, peak, plan.horizon, plan.committed, params))
        .min()
        .expect("anchor action is available");
    let best_deviation = n
        .children
        .iter()
        .filter(|(j, _)| j[agent] != plan.anchor_action)
        .map(|(_, c)| best_reachable(tree, *c, agent, peak, params))
        .max();
    PlanBounds {
        worst,
        best_deviation,
    }
}

fn guaranteed(
    tree: &GameTree,
    id: NodeId,
    agent: usize,
    peak: u32,
    horizon: Horizon,
    committed: Prescription,
    params: &PayoffParams,
) -> i64 {
    let n = tree.node(id);
    if let Some(alloc) = n.terminal_allocation {
        return payoff(peak, alloc[agent], params);
    }
    if horizon.exhausted() || !n.movers.contains(&agent) {
        return n
            .children
            .iter()
            .map(|(_, c)| guaranteed(tree, *c, agent, peak, horizon, committed, params))
            .min()
            .expect("live node has children");
    }
    let own = available_actions(n, agent, &tree.rules);
    let candidates = match committed {
        Prescription::TowardPeak => vec![ds_action(tree, n, agent, peak)],
        Prescription::StopNext if own.contains(&Action::OptOut) => vec![Action::OptOut],
        Prescription::StopNext => vec![ds_action(tree, n, agent, peak)],
        Prescription::Best => own,
    };
    let next = horizon.step_down();
    candidates
        .into_iter()
        .map(|a| {
            n.children
                .iter()
                .filter(|(j, _)| j[agent] == a)
                .map(|(_, c)| guaranteed(tree, *c, agent, peak, next, committed, params))
                .min()
                .expect("committed action is available")
        })
        .max()
        .expect("mover has an action")
}

fn best_reachable(tree: &GameTree, id: NodeId, agent: usize, peak: u32, params: &PayoffParams) -> i64 {
    let n = tree.node(id);
    match n.terminal_allocation {
        Some(alloc) => payoff(peak, alloc[agent], params),
        None => n
            .children
            .iter()
            .map(|(_, c)| best_reachable(tree, *c, agent, peak, params))
            .max()
            .expect("live node has children"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub node: NodeId,
    pub agent: usize,
    pub peak: u32,
    pub anchor: Action,
    pub bounds: PlanBounds,
}

/// Every (live node, agent) where the dominant-strategy anchor has no
/// simply dominant plan of the given horizon.
pub fn dominance_violations(
    tree: &GameTree,
    horizon: Horizon,
    committed: Prescription,
    params: &PayoffParams,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for n in tree.live_nodes() {
        for &agent in &n.movers {
            let peak = tree.valuation.peaks[agent];
            let anchor = ds_action(tree, n, agent, peak);
            let plan = StrategicPlan::new(anchor, horizon, committed);
            let bounds = plan_outcome_bounds(tree, n.id, agent, peak, &plan, params);
            if !bounds.simply_dominant() {
                out.push(Violation {
                    node: n.id,
                    agent,
                    peak,
                    anchor,
                    bounds,
                });
            }
        }
    }
    out
}

/// True iff following the toward-peak strategy for the rest of the game is
/// simply dominant at every decision node of both agents.
pub fn verify_osp(tree: &GameTree, params: &PayoffParams) -> bool {
    dominance_violations(tree, Horizon::Infinite, Prescription::TowardPeak, params).is_empty()
}

/// True iff every dominant-strategy anchor admits a simply dominant plan
/// committing to at most `k` further own actions.
pub fn verify_k_step(tree: &GameTree, k: u32, params: &PayoffParams) -> bool {
    dominance_violations(tree, Horizon::Finite(k), Prescription::Best, params).is_empty()
}
