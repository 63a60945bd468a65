//! Bagged CART ensembles.
//!
//! Each leaf's class distribution is held as fixed-point weights summing to
//! [`LEAF_WEIGHT_MAX`], so the software vote and the generated comparator
//! netlist add up exactly the same integers.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use super::tree::{sqrt_features, train_tree, DecisionTree, TreeNode};
use super::{argmax_prefer_high, check_training_set, stream_rng, Classifier, MlError, Samples};
use crate::scalar::Real;

pub const RF_HEADER: &str = "rffmt v1";

/// Full-scale leaf weight (16 bits).
pub const LEAF_WEIGHT_MAX: u32 = (1 << 16) - 1;

/// Fixed-point class distribution of a leaf, rounded to nearest.
pub fn leaf_weights(counts: &[u32]) -> Vec<u32> {
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    counts
        .iter()
        .map(|&c| ((c as u64 * LEAF_WEIGHT_MAX as u64 + total / 2) / total) as u32)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest<T> {
    pub trees: Vec<DecisionTree<T>>,
    pub n_estimators: usize,
    pub max_depth: usize,
    pub seed: u64,
    pub n_classes: usize,
    pub n_features: usize,
}

impl<T: Real> RandomForest<T> {
    /// Per-class vote totals for `x`.
    pub fn votes(&self, x: &[T]) -> Vec<u64> {
        let mut acc = vec![0u64; self.n_classes];
        for t in &self.trees {
            for (a, w) in acc.iter_mut().zip(leaf_weights(t.leaf_counts(x))) {
                *a += w as u64;
            }
        }
        acc
    }

    /// Total internal (comparator) nodes over all trees.
    pub fn n_splits(&self) -> usize {
        self.trees.iter().map(|t| t.n_splits()).sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{RF_HEADER} n_classes={} n_features={} n_estimators={} max_depth={} seed={}\n",
            self.n_classes, self.n_features, self.n_estimators, self.max_depth, self.seed
        );
        for (ti, t) in self.trees.iter().enumerate() {
            writeln!(out, "tree {ti} {}", t.nodes.len()).unwrap();
            for n in &t.nodes {
                match n {
                    TreeNode::Split { feature, threshold, left, right } => {
                        writeln!(out, "split {feature} {} {left} {right}", threshold.to_f64().unwrap()).unwrap()
                    }
                    TreeNode::Leaf { counts } => {
                        out.push_str("leaf");
                        for c in counts {
                            write!(out, " {c}").unwrap();
                        }
                        out.push('\n');
                    }
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, MlError> {
        let err = |line: usize, msg: String| MlError::Parse { line, msg };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty model file".into()))?;
        let rest = header
            .strip_prefix(RF_HEADER)
            .ok_or_else(|| err(1, format!("expected `{RF_HEADER}` header")))?;
        let mut kv = std::collections::HashMap::new();
        for tok in rest.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| err(1, format!("bad header field `{tok}`")))?;
            kv.insert(k, v);
        }
        let field = |k: &str| -> Result<u64, MlError> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err(1, format!("missing header field `{k}`")))
        };
        let n_classes = field("n_classes")? as usize;
        let n_features = field("n_features")? as usize;
        let n_estimators = field("n_estimators")? as usize;
        let max_depth = field("max_depth")? as usize;
        let seed = field("seed")?;

        let mut trees = Vec::with_capacity(n_estimators);
        while let Some((ln, line)) = lines.next() {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 || f[0] != "tree" {
                return Err(err(ln + 1, "expected `tree <index> <n_nodes>`".into()));
            }
            let n_nodes: usize = f[2].parse().map_err(|_| err(ln + 1, "bad node count".into()))?;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let (ln, line) = lines.next().ok_or_else(|| err(ln + 1, "truncated tree".into()))?;
                let e = |m: &str| err(ln + 1, m.to_string());
                let f: Vec<&str> = line.split_whitespace().collect();
                match f.first().copied() {
                    Some("split") if f.len() == 5 => {
                        let feature: usize = f[1].parse().map_err(|_| e("bad feature"))?;
                        if feature >= n_features {
                            return Err(e("feature index out of range"));
                        }
                        let th: f64 = f[2].parse().map_err(|_| e("bad threshold"))?;
                        nodes.push(TreeNode::Split {
                            feature,
                            threshold: T::lit(th),
                            left: f[3].parse().map_err(|_| e("bad child"))?,
                            right: f[4].parse().map_err(|_| e("bad child"))?,
                        });
                    }
                    Some("leaf") if f.len() == n_classes + 1 => {
                        let counts = f[1..]
                            .iter()
                            .map(|c| c.parse::<u32>().map_err(|_| e("bad count")))
                            .collect::<Result<_, _>>()?;
                        nodes.push(TreeNode::Leaf { counts });
                    }
                    _ => return Err(e("expected split or leaf line")),
                }
            }
            for n in &nodes {
                if let TreeNode::Split { left, right, .. } = n {
                    if *left >= nodes.len() || *right >= nodes.len() {
                        return Err(err(ln + 1, "child index out of range".into()));
                    }
                }
            }
            trees.push(DecisionTree { nodes, max_depth, n_classes, n_features });
        }
        if trees.len() != n_estimators {
            return Err(err(1, format!("header says {n_estimators} trees, found {}", trees.len())));
        }
        Ok(RandomForest { trees, n_estimators, max_depth, seed, n_classes, n_features })
    }
}

impl<T: Real> Classifier<T> for RandomForest<T> {
    fn predict(&self, x: &[T]) -> usize {
        argmax_prefer_high(&self.votes(x))
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }
}

pub fn rf_predict<T: Real>(model: &RandomForest<T>, x: &[T]) -> usize {
    model.predict(x)
}

/// Trains `n_estimators` trees, each on a bootstrap resample of the data
/// with `ceil(sqrt(n_features))` candidate features per split. Tree `i`
/// draws from RNG stream `i` of `seed`, so the result does not depend on
/// thread scheduling.
pub fn rf_train<T: Real>(
    x: &Samples<T>,
    y: &[usize],
    n_classes: usize,
    n_estimators: usize,
    max_depth: usize,
    seed: u64,
) -> Result<RandomForest<T>, MlError> {
    check_training_set(x, y, n_classes)?;
    if n_estimators == 0 || max_depth == 0 {
        return Err(MlError::Hyper("n_estimators and max_depth must be positive".into()));
    }
    let subset = sqrt_features(x.n_features());
    let n = x.len();
    let trees = (0..n_estimators)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let xb = x.select(&idx);
            let yb: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            train_tree(&xb, &yb, n_classes, max_depth, subset, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RandomForest { trees, n_estimators, max_depth, seed, n_classes, n_features: x.n_features() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::cv::{confusion_matrix, f1_macro};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blobs(n: usize, seed: u64) -> (Samples<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let mut r = [0.0f64; 9];
            for v in r.iter_mut() {
                *v = rng.gen::<f64>() * 2.0 - 1.0;
            }
            r[4] += if c == 1 { 0.8 } else { -0.8 };
            r[6] += if c == 1 { 0.5 } else { -0.5 };
            rows.push(r);
            y.push(c);
        }
        (Samples::from_rows(&rows), y)
    }

    #[test]
    fn single_tree_forest_matches_its_tree() {
        let (x, y) = blobs(200, 1);
        let f = rf_train(&x, &y, 2, 1, 8, 3).unwrap();
        assert_eq!(f.trees.len(), 1);
        for r in x.rows() {
            assert_eq!(f.predict(r), f.trees[0].predict(r));
        }
    }

    #[test]
    fn duplicate_data_gives_identical_trees() {
        let mut a = [0.0f64; 9];
        a[2] = 1.0;
        let x = Samples::from_rows(&[a; 12]);
        let y = vec![1; 12];
        let f = rf_train(&x, &y, 2, 7, 5, 11).unwrap();
        assert!(f.trees.iter().all(|t| t == &f.trees[0]));
        assert_eq!(f.predict(&a), f.trees[0].predict(&a));
    }

    #[test]
    fn vote_equals_brute_force_leaf_sum() {
        let (x, y) = blobs(300, 4);
        let f = rf_train(&x, &y, 2, 10, 6, 5).unwrap();
        for r in x.rows().take(100) {
            // independent route: walk each tree by hand and sum its leaf distribution
            let mut sum = [0u64; 2];
            for t in &f.trees {
                let mut i = 0;
                while let TreeNode::Split { feature, threshold, left, right } = &t.nodes[i] {
                    i = if r[*feature] <= *threshold { *left } else { *right };
                }
                let TreeNode::Leaf { counts } = &t.nodes[i] else { unreachable!() };
                let total = (counts[0] + counts[1]) as f64;
                for k in 0..2 {
                    sum[k] += (counts[k] as f64 / total * LEAF_WEIGHT_MAX as f64).round() as u64;
                }
            }
            let want = if sum[1] >= sum[0] { 1 } else { 0 };
            assert_eq!(f.predict(r), want);
        }
    }

    #[test]
    fn deterministic_and_generalizes() {
        let (x, y) = blobs(400, 7);
        let a = rf_train(&x, &y, 2, 20, 10, 9).unwrap();
        let b = rf_train(&x, &y, 2, 20, 10, 9).unwrap();
        assert_eq!(a, b);
        let (xt, yt) = blobs(400, 8);
        let train_f1 = f1_macro(&confusion_matrix(&y, &a.predict_all(&x), 2));
        let test_f1 = f1_macro(&confusion_matrix(&yt, &a.predict_all(&xt), 2));
        assert!(train_f1 >= test_f1);
        assert!(test_f1 > 0.8, "{test_f1}");
    }

    #[test]
    fn text_round_trip() {
        let (x, y) = blobs(150, 2);
        let f = rf_train(&x, &y, 2, 4, 5, 1).unwrap();
        let back = RandomForest::<f64>::from_text(&f.to_text()).unwrap();
        assert_eq!(back, f);
        assert!(RandomForest::<f64>::from_text("rffmt v0\n").is_err());
    }

    #[test]
    fn leaf_weights_full_scale() {
        assert_eq!(leaf_weights(&[0, 9]), vec![0, LEAF_WEIGHT_MAX]);
        assert_eq!(leaf_weights(&[1, 1]), vec![32768, 32768]);
    }
}
