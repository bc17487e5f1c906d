use nalgebra::DMatrix;

use super::node::DecisionTree;

/// Number of splitting rules using each variable across a forest.
pub fn forest_split_counts(trees: &[DecisionTree], n_vars: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n_vars];
    for tree in trees {
        for id in tree.internal_nodes() {
            if let Some(rule) = tree.rule(id) {
                counts[rule.var] += 1.0;
            }
        }
    }
    counts
}

/// Parent-child split-variable pairs across a forest, as a symmetric matrix.
/// A pair of splits on the same variable counts once on the diagonal.
pub fn forest_interaction_counts(trees: &[DecisionTree], n_vars: usize) -> DMatrix<f64> {
    let mut counts = DMatrix::zeros(n_vars, n_vars);
    for tree in trees {
        for id in tree.internal_nodes() {
            let Some(parent) = tree.node(id).parent else {
                continue;
            };
            let (Some(a), Some(b)) = (tree.rule(parent), tree.rule(id)) else {
                continue;
            };
            if a.var == b.var {
                counts[(a.var, a.var)] += 1.0;
            } else {
                counts[(a.var, b.var)] += 1.0;
                counts[(b.var, a.var)] += 1.0;
            }
        }
    }
    counts
}

/// Average split usage per variable over stored forest draws.
pub fn count_split_usage(draws: &[Vec<DecisionTree>], n_vars: usize) -> Vec<f64> {
    let mut total = vec![0.0; n_vars];
    if draws.is_empty() {
        return total;
    }
    for forest in draws {
        for (t, c) in total.iter_mut().zip(forest_split_counts(forest, n_vars)) {
            *t += c;
        }
    }
    total.iter().map(|t| t / draws.len() as f64).collect()
}

/// Average interaction counts over stored forest draws.
pub fn count_interactions(draws: &[Vec<DecisionTree>], n_vars: usize) -> DMatrix<f64> {
    let mut total = DMatrix::zeros(n_vars, n_vars);
    if draws.is_empty() {
        return total;
    }
    for forest in draws {
        total += forest_interaction_counts(forest, n_vars);
    }
    total / draws.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::node::{SplitRule, ROOT};

    fn rule(var: usize) -> SplitRule {
        SplitRule {
            var,
            cut: 0.5,
            missing_left: true,
        }
    }

    #[test]
    fn single_split_usage() {
        let mut t = DecisionTree::stump(1);
        t.grow(ROOT, rule(3));
        assert_eq!(count_split_usage(&[vec![t]], 5), vec![0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn usage_is_averaged() {
        let mut a = DecisionTree::stump(1);
        a.grow(ROOT, rule(0));
        let mut b = DecisionTree::stump(1);
        let (l, r) = b.grow(ROOT, rule(0));
        b.grow(l, rule(0));
        b.grow(r, rule(0));
        assert_eq!(count_split_usage(&[vec![a], vec![b]], 2), vec![2.0, 0.0]);
    }

    #[test]
    fn stump_has_no_interactions() {
        let mut t = DecisionTree::stump(1);
        t.grow(ROOT, rule(1));
        assert_eq!(count_interactions(&[vec![t]], 3), DMatrix::zeros(3, 3));
    }

    #[test]
    fn chain_interactions() {
        let mut t = DecisionTree::stump(1);
        let (l, _) = t.grow(ROOT, rule(0));
        let (ll, _) = t.grow(l, rule(1));
        t.grow(ll, rule(0));
        let m = count_interactions(&[vec![t]], 2);
        assert_eq!(m[(0, 1)], 2.0);
        assert_eq!(m[(1, 0)], 2.0);
        assert_eq!(m[(0, 0)], 0.0);
    }
}
