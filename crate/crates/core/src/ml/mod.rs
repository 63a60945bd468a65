//! Delay classifiers trained from scratch: random forests (the deployed
//! model), plus multilayer perceptrons and kernel SVMs for comparison, with
//! stratified k-fold cross-validation and grid search.

pub mod cv;
pub mod forest;
pub mod grid;
pub mod mlp;
pub mod svm;
pub mod tree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use cv::{confusion_matrix, f1_macro, f1_weighted, kfold_cv, stratified_folds, CvReport};
pub use forest::{rf_predict, rf_train, RandomForest, LEAF_WEIGHT_MAX};
pub use grid::{format_grid_csv, grid_search, GridPoint, GridRow, GridSpec, NnGrid, RfGrid, SvmGrid};
pub use mlp::{mlp_train, Activation, MlpConfig, MlpModel, Solver};
pub use svm::{svm_train, GammaMode, Kernel, SvmConfig, SvmModel};
pub use tree::{train_tree, DecisionTree, TreeNode};

#[derive(Debug, Error)]
pub enum MlError {
    #[error("empty training data")]
    EmptyData,
    #[error("label {label} out of range for {n_classes} classes")]
    BadLabel { label: usize, n_classes: usize },
    #[error("data and labels differ in length ({data} vs {labels})")]
    Length { data: usize, labels: usize },
    #[error("invalid hyperparameter: {0}")]
    Hyper(String),
    #[error("training data holds a single class")]
    SingleClass,
    #[error("loss became non-finite after {retries} learning-rate reductions")]
    NonFinite { retries: usize },
    #[error("empty grid")]
    EmptyGrid,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Row-major sample matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples<T> {
    n_features: usize,
    data: Vec<T>,
}

impl<T: Copy> Samples<T> {
    pub fn new(n_features: usize, data: Vec<T>) -> Self {
        assert!(n_features > 0 && data.len().is_multiple_of(n_features), "ragged sample matrix");
        Samples { n_features, data }
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let n_features = rows.first().map_or(1, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n_features);
        for r in rows {
            assert_eq!(r.as_ref().len(), n_features, "ragged sample matrix");
            data.extend_from_slice(r.as_ref());
        }
        Samples { n_features, data }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.n_features
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.n_features)
    }

    pub fn select(&self, idx: &[usize]) -> Samples<T> {
        let mut data = Vec::with_capacity(idx.len() * self.n_features);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Samples { n_features: self.n_features, data }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

/// A trained model mapping one feature row to a class index.
pub trait Classifier<T>: Send + Sync {
    fn predict(&self, x: &[T]) -> usize;

    fn n_classes(&self) -> usize;

    fn predict_all(&self, x: &Samples<T>) -> Vec<usize>
    where
        T: Copy,
    {
        x.rows().map(|r| self.predict(r)).collect()
    }
}

pub(crate) fn check_training_set<T: Copy>(x: &Samples<T>, y: &[usize], n_classes: usize) -> Result<(), MlError> {
    if x.is_empty() {
        return Err(MlError::EmptyData);
    }
    if x.len() != y.len() {
        return Err(MlError::Length { data: x.len(), labels: y.len() });
    }
    if let Some(&label) = y.iter().find(|&&l| l >= n_classes) {
        return Err(MlError::BadLabel { label, n_classes });
    }
    Ok(())
}

/// Number of classes implied by a label vector.
pub fn n_classes_of(y: &[usize]) -> usize {
    y.iter().max().map_or(0, |m| m + 1)
}

/// Independent RNG stream `stream` derived from `seed`. Used so that trees,
/// folds and grid points draw the same numbers regardless of scheduling.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Index of the largest value; ties go to the highest index (the slower,
/// safer delay class).
pub fn argmax_prefer_high<V: PartialOrd + Copy>(v: &[V]) -> usize {
    let mut best = 0;
    for k in 1..v.len() {
        if v[k] >= v[best] {
            best = k;
        }
    }
    best
}
