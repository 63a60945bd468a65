//! F1 scoring and stratified k-fold cross-validation.

use std::time::Instant;

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{stream_rng, Classifier, MlError, Samples};

/// `m[true][predicted]` counts.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize], n_classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        m[t][p] += 1;
    }
    m
}

fn per_class_f1(m: &[Vec<u64>]) -> Vec<f64> {
    let n = m.len();
    (0..n)
        .map(|k| {
            let tp = m[k][k];
            let fp: u64 = (0..n).map(|i| m[i][k]).sum::<u64>() - tp;
            let fn_: u64 = m[k].iter().sum::<u64>() - tp;
            let denom = 2 * tp + fp + fn_;
            if denom == 0 {
                warn!("class {k} absent from both truth and predictions; scoring its F1 as 0");
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        })
        .collect()
}

/// Unweighted mean of per-class F1.
pub fn f1_macro(m: &[Vec<u64>]) -> f64 {
    let f = per_class_f1(m);
    if f.is_empty() {
        return 0.0;
    }
    f.iter().sum::<f64>() / f.len() as f64
}

/// Per-class F1 weighted by class support.
pub fn f1_weighted(m: &[Vec<u64>]) -> f64 {
    let f = per_class_f1(m);
    let support: Vec<u64> = m.iter().map(|r| r.iter().sum()).collect();
    let total: u64 = support.iter().sum();
    if total == 0 {
        return 0.0;
    }
    f.iter().zip(&support).map(|(f, &s)| f * s as f64).sum::<f64>() / total as f64
}

/// Assigns every row to one of `k` folds, dealing each class's shuffled rows
/// round-robin so class proportions match across folds.
pub fn stratified_folds(y: &[usize], k: usize, seed: u64) -> Result<Vec<usize>, MlError> {
    if k < 2 {
        return Err(MlError::Hyper(format!("need at least 2 folds, got {k}")));
    }
    if y.len() < k {
        return Err(MlError::Hyper(format!("{} rows cannot fill {k} folds", y.len())));
    }
    let n_classes = super::n_classes_of(y);
    let mut rng = stream_rng(seed, u64::MAX);
    let mut fold = vec![0usize; y.len()];
    let mut next = 0usize;
    for c in 0..n_classes {
        let mut rows: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        rows.shuffle(&mut rng);
        for r in rows {
            fold[r] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub fold_f1: Vec<f64>,
    pub mean_f1: f64,
    /// Summed over folds, `[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub wall_time_s: f64,
    /// Prediction for every row from the model that did not train on it.
    pub oof_predictions: Vec<usize>,
}

/// Stratified K-fold cross-validation. `train` receives the training rows,
/// their labels and a per-fold seed. Folds run in parallel; the report is
/// identical to a sequential run.
pub fn kfold_cv<T, M, F>(
    train: F,
    x: &Samples<T>,
    y: &[usize],
    n_classes: usize,
    k: usize,
    seed: u64,
    weighted: bool,
) -> Result<CvReport, MlError>
where
    T: Copy + Send + Sync,
    M: Classifier<T>,
    F: Fn(&Samples<T>, &[usize], u64) -> Result<M, MlError> + Sync,
{
    let start = Instant::now();
    super::check_training_set(x, y, n_classes)?;
    let fold = stratified_folds(y, k, seed)?;
    let results = (0..k)
        .into_par_iter()
        .map(|f| {
            let train_idx: Vec<usize> = (0..y.len()).filter(|&i| fold[i] != f).collect();
            let test_idx: Vec<usize> = (0..y.len()).filter(|&i| fold[i] == f).collect();
            let xt = x.select(&train_idx);
            let yt: Vec<usize> = train_idx.iter().map(|&i| y[i]).collect();
            let fold_seed = seed.wrapping_add(1 + f as u64);
            let model = train(&xt, &yt, fold_seed)?;
            let preds: Vec<(usize, usize)> = test_idx.iter().map(|&i| (i, model.predict(x.row(i)))).collect();
            Ok(preds)
        })
        .collect::<Result<Vec<_>, MlError>>()?;

    let mut oof = vec![0usize; y.len()];
    let mut fold_f1 = Vec::with_capacity(k);
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for preds in &results {
        let truth: Vec<usize> = preds.iter().map(|&(i, _)| y[i]).collect();
        let p: Vec<usize> = preds.iter().map(|&(_, p)| p).collect();
        let m = confusion_matrix(&truth, &p, n_classes);
        fold_f1.push(if weighted { f1_weighted(&m) } else { f1_macro(&m) });
        for (row, add) in confusion.iter_mut().zip(&m) {
            for (c, a) in row.iter_mut().zip(add) {
                *c += a;
            }
        }
        for &(i, p) in preds {
            oof[i] = p;
        }
    }
    let mean_f1 = fold_f1.iter().sum::<f64>() / k as f64;
    Ok(CvReport {
        fold_f1,
        mean_f1,
        confusion,
        wall_time_s: start.elapsed().as_secs_f64(),
        oof_predictions: oof,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_is_one() {
        let y = [0, 1, 2, 1, 0];
        assert_eq!(f1_macro(&confusion_matrix(&y, &y, 3)), 1.0);
    }

    #[test]
    fn constant_predictor_scores_a_third() {
        let y: Vec<usize> = (0..6000).map(|i| i % 2).collect();
        let m = confusion_matrix(&y, &vec![0; 6000], 2);
        let f = per_class_f1(&m);
        assert!((f[0] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f[1], 0.0);
        assert!((f1_macro(&m) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn random_predictor_near_half() {
        // Each class F1 = 2*TP/(2*TP+FP+FN) with TP ~ Bin(3000, 1/2):
        // expectation 0.5 and sd about 0.01, so 0.03 is three sigma.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let y: Vec<usize> = (0..6000).map(|i| i % 2).collect();
        let p: Vec<usize> = (0..6000).map(|_| rng.gen_range(0..2)).collect();
        let f = f1_macro(&confusion_matrix(&y, &p, 2));
        assert!((f - 0.5).abs() < 0.03, "{f}");
    }

    #[test]
    fn folds_partition_and_stratify() {
        let y: Vec<usize> = (0..103).map(|i| i % 3).collect();
        let fold = stratified_folds(&y, 5, 1).unwrap();
        for f in 0..5 {
            for c in 0..3 {
                let n = (0..y.len()).filter(|&i| fold[i] == f && y[i] == c).count();
                assert!((6..=7).contains(&n), "fold {f} class {c}: {n}");
            }
        }
        assert!(stratified_folds(&y, 1, 0).is_err());
    }

    /// Answers correctly for rows it trained on and wrongly for any other.
    struct Memorizer(Vec<(Vec<f64>, usize)>);
    impl Classifier<f64> for Memorizer {
        fn predict(&self, x: &[f64]) -> usize {
            self.0
                .iter()
                .find(|(r, _)| r == x)
                .map_or(1 - (x[0] as usize % 2), |(_, l)| *l)
        }
        fn n_classes(&self) -> usize {
            2
        }
    }

    #[test]
    fn no_row_is_scored_by_its_own_training_fold() {
        let rows: Vec<[f64; 1]> = (0..50).map(|i| [i as f64]).collect();
        let x = Samples::from_rows(&rows);
        let y: Vec<usize> = (0..50).map(|i| i % 2).collect();
        let rep = kfold_cv(
            |xt, yt, _| Ok(Memorizer(xt.rows().map(|r| r.to_vec()).zip(yt.iter().copied()).collect())),
            &x,
            &y,
            2,
            5,
            0,
            false,
        )
        .unwrap();
        assert_eq!(rep.fold_f1.len(), 5);
        assert!(rep.oof_predictions.iter().zip(&y).all(|(p, t)| p != t));
        assert_eq!(rep.confusion[0][0] + rep.confusion[1][1], 0);
        assert_eq!(rep.mean_f1, 0.0);
    }
}
