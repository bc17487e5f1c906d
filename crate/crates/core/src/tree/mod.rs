//! Regression trees, their prior, proposal moves and sum-of-trees backfitting.

pub mod design;
pub mod forest;
pub mod leaf;
pub mod moves;
pub mod node;
pub mod prior;
pub mod summary;

pub use design::Design;
pub use forest::{
    evaluate_proposal, mh_tree_update, predict_trees, sample_node_params, ForestState, MhContext,
    MhOutcome, MoveStats,
};
pub use leaf::{node_log_marginal, LeafModel, NodePriorParams};
pub use moves::{draw_rule, grow_proposal, propose, rows_at, Move, Proposal};
pub use node::{DecisionTree, NodeId, SplitRule, TreeRecord, ROOT};
pub use prior::{log_rule_prior, sample_prior_leaves, sample_prior_tree, MoveProbs, TreePrior};
pub use summary::{count_interactions, count_split_usage, forest_interaction_counts, forest_split_counts};
