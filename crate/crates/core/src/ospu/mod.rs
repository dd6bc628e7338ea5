//! The clock implementation of the Uniform rule as an explicit game tree.

mod classify;
mod dominance;
mod tree;

pub use classify::{
    classify_node, dominant_path, export_tree, node_count_table, schedule_walk, NodeCategory,
    NodeClassification, PeriodWalk, WalkSummary,
};
pub use dominance::{
    dominance_violations, ds_action, plan_outcome_bounds, verify_k_step, verify_osp, Horizon,
    PlanBounds, Prescription, StrategicPlan, Violation,
};
pub use tree::{
    available_actions, build_tree, build_tree_with, transition, Action, GameNode, GameTree,
    NodeId, TreeError, TreeRules,
};
