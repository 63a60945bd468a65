//! CART classification trees with Gini impurity.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{argmax_prefer_high, check_training_set, MlError, Samples};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode<T> {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
    Leaf { counts: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree<T> {
    /// `nodes[0]` is the root.
    pub nodes: Vec<TreeNode<T>>,
    pub max_depth: usize,
    pub n_classes: usize,
    pub n_features: usize,
}

impl<T: Real> DecisionTree<T> {
    /// Index of the leaf reached by `x`.
    pub fn leaf_index(&self, x: &[T]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
                TreeNode::Leaf { .. } => return i,
            }
        }
    }

    pub fn leaf_counts(&self, x: &[T]) -> &[u32] {
        match &self.nodes[self.leaf_index(x)] {
            TreeNode::Leaf { counts } => counts,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    /// Majority class of the reached leaf, ties toward the slower class.
    pub fn predict(&self, x: &[T]) -> usize {
        argmax_prefer_high(self.leaf_counts(x))
    }

    /// Length of the longest root-to-leaf path in edges.
    pub fn depth(&self) -> usize {
        fn walk<T>(nodes: &[TreeNode<T>], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Split { .. })).count()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.len() - self.n_splits()
    }
}

struct Builder<'a, T, R> {
    x: &'a Samples<T>,
    y: &'a [usize],
    n_classes: usize,
    max_depth: usize,
    subset: usize,
    rng: &'a mut R,
    nodes: Vec<TreeNode<T>>,
}

/// Weighted Gini numerator `n - sum(c^2)/n` (equals `n * gini`).
#[inline]
fn gini_mass(counts: &[u32], n: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let ss: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    n as f64 - ss / n as f64
}

impl<T: Real, R: Rng> Builder<'_, T, R> {
    fn counts(&self, idx: &[usize]) -> Vec<u32> {
        let mut c = vec![0u32; self.n_classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    /// Best threshold on `feature`, as `(impurity mass, threshold)`.
    fn best_split(&self, idx: &[usize], feature: usize, total: &[u32]) -> Option<(f64, T)> {
        let mut pairs: Vec<(T, usize)> = idx.iter().map(|&i| (self.x.row(i)[feature], self.y[i])).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
        if pairs[0].0 == pairs[pairs.len() - 1].0 {
            return None;
        }
        let n = pairs.len() as u32;
        let mut left = vec![0u32; self.n_classes];
        let mut right = total.to_vec();
        let mut best: Option<(f64, T)> = None;
        for i in 0..pairs.len() - 1 {
            let c = pairs[i].1;
            left[c] += 1;
            right[c] -= 1;
            let (v, next) = (pairs[i].0, pairs[i + 1].0);
            if v == next {
                continue;
            }
            let nl = i as u32 + 1;
            let score = gini_mass(&left, nl) + gini_mass(&right, n - nl);
            if best.is_none_or(|(b, _)| score < b) {
                let mut th = (v + next) / T::lit(2.0);
                if !(th >= v && th < next) {
                    th = v;
                }
                best = Some((score, th));
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let slot = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { counts: counts.clone() });
        if depth >= self.max_depth || pure || idx.len() < 2 {
            return slot;
        }

        let mut features: Vec<usize> = (0..self.x.n_features()).collect();
        features.shuffle(self.rng);
        let mut best: Option<(f64, usize, T)> = None;
        for (visited, &f) in features.iter().enumerate() {
            // keep drawing past the subset size only while nothing splits
            if visited >= self.subset && best.is_some() {
                break;
            }
            if let Some((score, th)) = self.best_split(&idx, f, &counts) {
                if best.is_none_or(|(b, _, _)| score < b) {
                    best = Some((score, f, th));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return slot;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x.row(i)[feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[slot] = TreeNode::Split { feature, threshold, left, right };
        slot
    }
}

/// Grows a tree on the given rows. `feature_subset_size` features are
/// examined at each split (more only if none of them separates the node).
pub fn train_tree<T: Real, R: Rng>(
    x: &Samples<T>,
    y: &[usize],
    n_classes: usize,
    max_depth: usize,
    feature_subset_size: usize,
    rng: &mut R,
) -> Result<DecisionTree<T>, MlError> {
    check_training_set(x, y, n_classes)?;
    if feature_subset_size == 0 {
        return Err(MlError::Hyper("feature_subset_size must be positive".into()));
    }
    let mut b = Builder {
        x,
        y,
        n_classes,
        max_depth,
        subset: feature_subset_size.min(x.n_features()),
        rng,
        nodes: Vec::new(),
    };
    b.grow((0..x.len()).collect(), 0);
    Ok(DecisionTree { nodes: b.nodes, max_depth, n_classes, n_features: x.n_features() })
}

/// Conventional random-forest subset size, `ceil(sqrt(n_features))`.
pub fn sqrt_features(n_features: usize) -> usize {
    (n_features as f64).sqrt().ceil() as usize
}
