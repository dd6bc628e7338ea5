use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::dominance::{ds_action, moving_toward, plan_outcome_bounds, Horizon, Prescription, StrategicPlan};
use super::tree::{build_tree, Action, GameTree, NodeId, TreeError};
use crate::model::PayoffParams;
use crate::schedule::Schedule;
use crate::table::{frac_cell, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeCategory {
    Initial1StepOnly,
    Initial0Step,
    WrongDirection,
    BeforePeak1StepOnly,
    BeforePeak0Step,
    AtPeak,
    PastPeak,
}

impl NodeCategory {
    pub const ALL: [NodeCategory; 7] = [
        NodeCategory::Initial1StepOnly,
        NodeCategory::Initial0Step,
        NodeCategory::WrongDirection,
        NodeCategory::BeforePeak1StepOnly,
        NodeCategory::BeforePeak0Step,
        NodeCategory::AtPeak,
        NodeCategory::PastPeak,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NodeCategory::Initial1StepOnly => "initial-1step-only",
            NodeCategory::Initial0Step => "initial-0step",
            NodeCategory::WrongDirection => "wrong-direction",
            NodeCategory::BeforePeak1StepOnly => "before-peak-1step-only",
            NodeCategory::BeforePeak0Step => "before-peak-0step",
            NodeCategory::AtPeak => "at-peak",
            NodeCategory::PastPeak => "past-peak",
        }
    }

    pub fn is_initial(self) -> bool {
        matches!(self, NodeCategory::Initial0Step | NodeCategory::Initial1StepOnly)
    }
}

impl fmt::Display for NodeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeClassification {
    pub category: NodeCategory,
    pub ds_action: Action,
    pub zero_step: bool,
    pub one_step: bool,
}

/// Labels a decision node from one agent's point of view.
pub fn classify_node(
    tree: &GameTree,
    node: NodeId,
    agent: usize,
    peak: u32,
    params: &PayoffParams,
) -> NodeClassification {
    let n = tree.node(node);
    let ds = ds_action(tree, n, agent, peak);
    let check = |h, p| plan_outcome_bounds(tree, node, agent, peak, &StrategicPlan::new(ds, h, p), params).simply_dominant();
    let zero_step = check(Horizon::Finite(0), Prescription::TowardPeak);
    let one_step = check(Horizon::Finite(1), Prescription::Best);
    let x = n.temp[agent];
    let category = if n.step == 0 {
        if zero_step {
            NodeCategory::Initial0Step
        } else {
            NodeCategory::Initial1StepOnly
        }
    } else if x == peak {
        NodeCategory::AtPeak
    } else if moving_toward(n, agent, peak) {
        if zero_step {
            NodeCategory::BeforePeak0Step
        } else {
            NodeCategory::BeforePeak1StepOnly
        }
    } else {
        let start = tree.supply() as i64 / 2;
        if (peak as i64 - start).signum() == n.delta[agent] as i64 {
            NodeCategory::PastPeak
        } else {
            NodeCategory::WrongDirection
        }
    };
    NodeClassification {
        category,
        ds_action: ds,
        zero_step,
        one_step,
    }
}

/// Decision nodes visited when both agents play the dominant strategy,
/// ending in the terminal allocation.
pub fn dominant_path(tree: &GameTree) -> (Vec<NodeId>, [u32; 2]) {
    let mut path = Vec::new();
    let mut id = 0;
    loop {
        let n = tree.node(id);
        if let Some(alloc) = n.terminal_allocation {
            return (path, alloc);
        }
        path.push(id);
        let joint = [0, 1].map(|a| ds_action(tree, n, a, tree.valuation.peaks[a]));
        id = n.child(joint).expect("joint action is in the tree");
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodWalk {
    pub period: u32,
    pub valuation_id: Option<u8>,
    pub peaks: [u32; 2],
    pub nodes: usize,
    pub allocation: [u32; 2],
    pub categories: Vec<[NodeCategory; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkSummary {
    pub subjects: u32,
    pub counts: BTreeMap<NodeCategory, u64>,
    pub periods: Vec<PeriodWalk>,
}

impl WalkSummary {
    pub fn count(&self, c: NodeCategory) -> u64 {
        self.counts.get(&c).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn initial(&self) -> u64 {
        NodeCategory::ALL
            .iter()
            .filter(|c| c.is_initial())
            .map(|c| self.count(*c))
            .sum()
    }

    pub fn non_initial(&self) -> u64 {
        self.total() - self.initial()
    }
}

/// Predicted node visits per category for a session where every pair
/// plays the dominant strategy in every scheduled period.
pub fn schedule_walk(
    schedule: &Schedule,
    subjects: u32,
    params: &PayoffParams,
) -> Result<WalkSummary, TreeError> {
    if subjects % 2 != 0 {
        return Err(TreeError::OddSubjects(subjects));
    }
    let pairs = u64::from(subjects / 2);
    let mut counts: BTreeMap<NodeCategory, u64> = NodeCategory::ALL.iter().map(|c| (*c, 0)).collect();
    let mut periods = Vec::new();
    for p in &schedule.periods {
        let tree = build_tree(&p.valuation)?;
        let (path, allocation) = dominant_path(&tree);
        let mut cats = Vec::new();
        for &id in &path {
            let pair = [0, 1].map(|a| classify_node(&tree, id, a, tree.valuation.peaks[a], params).category);
            for c in pair {
                *counts.entry(c).or_default() += pairs;
            }
            cats.push(pair);
        }
        periods.push(PeriodWalk {
            period: p.period,
            valuation_id: p.valuation.id,
            peaks: [p.valuation.peaks[0], p.valuation.peaks[1]],
            nodes: path.len(),
            allocation,
            categories: cats,
        });
    }
    Ok(WalkSummary {
        subjects,
        counts,
        periods,
    })
}

pub fn node_count_table(summary: &WalkSummary) -> Table {
    let mut t = Table::new(
        "Predicted node visits under dominant-strategy play",
        format!(
            "tree walk of both agents' toward-peak strategy, {} subjects, flags from the plan checker",
            summary.subjects
        ),
        &["category", "count", "share"],
    );
    let total = summary.total() as i64;
    for c in NodeCategory::ALL {
        let n = summary.count(c) as i64;
        t.push(vec![
            c.name().to_string(),
            n.to_string(),
            frac_cell(num_rational::Ratio::new(n, total.max(1)), 3),
        ]);
    }
    t.push(vec!["initial".into(), summary.initial().to_string(), String::new()]);
    t.push(vec!["non-initial".into(), summary.non_initial().to_string(), String::new()]);
    t.push(vec!["total".into(), total.to_string(), String::new()]);
    t
}

/// One line per node: id, step, temp, delta, movers, children, terminal
/// allocation and both agents' labels.
pub fn export_tree(tree: &GameTree, params: &PayoffParams) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# valuation {} supply {} opt_out {}",
        tree.valuation, tree.valuation.supply, tree.rules.allow_opt_out
    );
    for n in &tree.nodes {
        let movers: Vec<String> = n.movers.iter().map(|m| m.to_string()).collect();
        let children: Vec<String> = n
            .children
            .iter()
            .map(|(j, c)| format!("{}/{}>{}", j[0], j[1], c))
            .collect();
        let terminal = n
            .terminal_allocation
            .map(|a| format!("{},{}", a[0], a[1]))
            .unwrap_or_else(|| "-".into());
        let _ = write!(
            out,
            "node={} step={} temp={},{} delta={},{} movers={} children={} terminal={}",
            n.id,
            n.step,
            n.temp[0],
            n.temp[1],
            n.delta[0],
            n.delta[1],
            if movers.is_empty() { "-".into() } else { movers.join(",") },
            if children.is_empty() { "-".into() } else { children.join(";") },
            terminal
        );
        for &a in &n.movers {
            let c = classify_node(tree, n.id, a, tree.valuation.peaks[a], params);
            let _ = write!(out, " class{}={}:{}", a, c.category, c.ds_action);
        }
        out.push('\n');
    }
    out
}
