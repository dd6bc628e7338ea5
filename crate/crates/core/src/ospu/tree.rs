use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Valuation;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("the clock game needs an even supply, got {0}")]
    OddSupply(u32),
    #[error("the clock game is defined for two agents, got {0}")]
    Agents(usize),
    #[error("subjects are matched in pairs, got {0}")]
    OddSubjects(u32),
}

/// A move in the clock game.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Step 0: pick a temporary assignment in {x−1, x, x+1}.
    Choose(u32),
    Continue,
    OptOut,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Choose(x) => write!(f, "choose{x}"),
            Action::Continue => f.write_str("continue"),
            Action::OptOut => f.write_str("optout"),
        }
    }
}

/// Variations of the game form, used to exercise the dominance checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeRules {
    pub allow_opt_out: bool,
}

impl Default for TreeRules {
    fn default() -> Self {
        Self { allow_opt_out: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GameNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub step: u32,
    /// Temporary allotments; they always sum to the supply.
    pub temp: [u32; 2],
    /// Per-agent direction of revision; zero until Step 0 resolves.
    pub delta: [i32; 2],
    pub movers: Vec<usize>,
    /// Joint actions (agent 0, agent 1) and the node they lead to.
    pub children: Vec<([Action; 2], NodeId)>,
    pub terminal_allocation: Option<[u32; 2]>,
}

impl GameNode {
    pub fn is_terminal(&self) -> bool {
        self.terminal_allocation.is_some()
    }

    pub fn is_initial(&self) -> bool {
        self.step == 0 && !self.is_terminal()
    }

    pub fn child(&self, joint: [Action; 2]) -> Option<NodeId> {
        self.children.iter().find(|(a, _)| *a == joint).map(|(_, id)| *id)
    }
}

#[derive(Debug, Clone)]
pub struct GameTree {
    pub valuation: Valuation,
    pub rules: TreeRules,
    pub nodes: Vec<GameNode>,
}

/// Actions open to an agent at a live node.
pub fn available_actions(node: &GameNode, agent: usize, rules: &TreeRules) -> Vec<Action> {
    if node.is_terminal() || !node.movers.contains(&agent) {
        return Vec::new();
    }
    if node.step == 0 {
        let x = node.temp[agent];
        vec![Action::Choose(x - 1), Action::Choose(x), Action::Choose(x + 1)]
    } else if rules.allow_opt_out {
        vec![Action::Continue, Action::OptOut]
    } else {
        vec![Action::Continue]
    }
}

/// Outcome of a joint action at a live node: the next temp, the next
/// directions, and whether play stops there.
pub fn transition(
    step: u32,
    temp: [u32; 2],
    delta: [i32; 2],
    joint: [Action; 2],
    supply: u32,
) -> ([u32; 2], [i32; 2], bool) {
    if step == 0 {
        let chosen = joint.map(|a| match a {
            Action::Choose(x) => x,
            other => panic!("{other} is not a Step 0 action"),
        });
        let stayed = chosen.iter().zip(temp).any(|(c, t)| *c == t);
        if stayed || chosen[0] + chosen[1] != supply {
            (temp, [0, 0], true)
        } else {
            let d = [
                chosen[0] as i32 - temp[0] as i32,
                chosen[1] as i32 - temp[1] as i32,
            ];
            (chosen, d, chosen.contains(&0))
        }
    } else if joint.contains(&Action::OptOut) {
        (temp, delta, true)
    } else {
        let next = [
            (temp[0] as i32 + delta[0]) as u32,
            (temp[1] as i32 + delta[1]) as u32,
        ];
        (next, delta, next.contains(&0))
    }
}

/// Builds the full extensive form of the clock mechanism for a valuation.
pub fn build_tree(valuation: &Valuation) -> Result<GameTree, TreeError> {
    build_tree_with(valuation, TreeRules::default())
}

pub fn build_tree_with(valuation: &Valuation, rules: TreeRules) -> Result<GameTree, TreeError> {
    if valuation.agents() != 2 {
        return Err(TreeError::Agents(valuation.agents()));
    }
    if valuation.supply % 2 != 0 {
        return Err(TreeError::OddSupply(valuation.supply));
    }
    let half = valuation.supply / 2;
    let mut tree = GameTree {
        valuation: valuation.clone(),
        rules,
        nodes: Vec::new(),
    };
    let root = tree.push(None, 0, [half, half], [0, 0], None);
    tree.expand(root);
    Ok(tree)
}

impl GameTree {
    pub fn root(&self) -> &GameNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &GameNode {
        &self.nodes[id]
    }

    pub fn supply(&self) -> u32 {
        self.valuation.supply
    }

    fn push(
        &mut self,
        parent: Option<NodeId>,
        step: u32,
        temp: [u32; 2],
        delta: [i32; 2],
        terminal: Option<[u32; 2]>,
    ) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(GameNode {
            id,
            parent,
            step,
            temp,
            delta,
            movers: if terminal.is_some() { Vec::new() } else { vec![0, 1] },
            children: Vec::new(),
            terminal_allocation: terminal,
        });
        id
    }

    fn expand(&mut self, id: NodeId) {
        let node = self.nodes[id].clone();
        let a0 = available_actions(&node, 0, &self.rules);
        let a1 = available_actions(&node, 1, &self.rules);
        for &x in &a0 {
            for &y in &a1 {
                let joint = [x, y];
                let (temp, delta, stop) =
                    transition(node.step, node.temp, node.delta, joint, self.supply());
                let child = if stop {
                    self.push(Some(id), node.step + 1, temp, delta, Some(temp))
                } else {
                    let c = self.push(Some(id), node.step + 1, temp, delta, None);
                    self.expand(c);
                    c
                };
                self.nodes[id].children.push((joint, child));
            }
        }
    }

    pub fn live_nodes(&self) -> impl Iterator<Item = &GameNode> {
        self.nodes.iter().filter(|n| !n.is_terminal())
    }

    /// Deepest step index among live nodes.
    pub fn max_step(&self) -> u32 {
        self.live_nodes().map(|n| n.step).max().unwrap_or(0)
    }
}
