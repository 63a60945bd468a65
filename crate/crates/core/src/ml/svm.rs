//! One-vs-rest kernel SVMs trained by kernelized Pegasos (stochastic
//! sub-gradient descent on the hinge loss).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax_prefer_high, check_training_set, stream_rng, Classifier, MlError, Samples};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaMode {
    /// `1 / (n_features * variance of all entries)`.
    Scale,
    /// `1 / n_features`.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type")]
pub enum Kernel {
    Linear,
    Poly { degree: u32 },
    Rbf,
}

impl Kernel {
    pub fn name(self) -> &'static str {
        match self {
            Kernel::Linear => "linear",
            Kernel::Poly { .. } => "poly",
            Kernel::Rbf => "rbf",
        }
    }

    pub fn degree(self) -> Option<u32> {
        match self {
            Kernel::Poly { degree } => Some(degree),
            _ => None,
        }
    }

    /// Kernel value plus one; the constant absorbs the bias term.
    #[inline]
    fn eval<T: Real>(self, gamma: T, a: &[T], b: &[T]) -> T {
        let k = match self {
            Kernel::Linear => dot(a, b),
            Kernel::Poly { degree } => (gamma * dot(a, b) + T::one()).powi(degree as i32),
            Kernel::Rbf => {
                let d2: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        };
        k + T::one()
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Kernel coefficient for `x` under `mode`.
pub fn gamma_value<T: Real>(mode: GammaMode, x: &Samples<T>) -> T {
    let n_feat = T::from_usize(x.n_features()).unwrap();
    match mode {
        GammaMode::Auto => T::one() / n_feat,
        GammaMode::Scale => {
            let v = x.as_slice();
            let n = T::from_usize(v.len()).unwrap();
            let mean = v.iter().copied().sum::<T>() / n;
            let var = v.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / n;
            if var > T::zero() {
                T::one() / (n_feat * var)
            } else {
                T::one()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmConfig {
    pub kernel: Kernel,
    pub gamma: GammaMode,
    /// Passes over the data; the iteration budget is `epochs * n`.
    pub epochs: usize,
    /// Regularization; `None` means `1 / n`.
    pub lambda: Option<f64>,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { kernel: Kernel::Rbf, gamma: GammaMode::Scale, epochs: 20, lambda: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel<T> {
    pub kernel: Kernel,
    pub gamma: T,
    pub n_features: usize,
    pub n_classes: usize,
    /// Rows with a nonzero coefficient for at least one class.
    pub support: Samples<T>,
    /// `coef[class][sv]`, already divided by `lambda * iterations`.
    pub coef: Vec<Vec<T>>,
}

impl<T: Real> SvmModel<T> {
    pub fn n_support(&self) -> usize {
        if self.coef.iter().all(|c| c.is_empty()) {
            0
        } else {
            self.support.len()
        }
    }

    pub fn decision(&self, x: &[T]) -> Vec<T> {
        let k: Vec<T> = (0..self.n_support()).map(|s| self.kernel.eval(self.gamma, self.support.row(s), x)).collect();
        self.coef.iter().map(|c| dot(c, &k)).collect()
    }
}

impl<T: Real> Classifier<T> for SvmModel<T> {
    fn predict(&self, x: &[T]) -> usize {
        argmax_prefer_high(&self.decision(x))
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }
}

/// Pegasos for one binary problem; returns how often each row was a margin
/// violator (its unnormalized dual weight).
#[allow(clippy::too_many_arguments)]
fn pegasos_binary<T: Real>(x: &Samples<T>, sign: &[T], kernel: Kernel, gamma: T, lambda: T, iters: usize, seed: u64, stream: u64) -> Vec<u32> {
    let n = x.len();
    let mut rng = stream_rng(seed, stream);
    let mut alpha = vec![0u32; n];
    // g[i] = sum_j alpha_j y_j K(x_j, x_i), kept current as alpha changes
    let mut g = vec![T::zero(); n];
    for t in 1..=iters {
        let i = rng.gen_range(0..n);
        let margin = sign[i] * g[i] / (lambda * T::from_usize(t).unwrap());
        if margin < T::one() {
            alpha[i] += 1;
            let xi = x.row(i);
            let s = sign[i];
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += s * kernel.eval(gamma, xi, x.row(j));
            }
        }
    }
    alpha
}

pub fn svm_train<T: Real>(x: &Samples<T>, y: &[usize], n_classes: usize, cfg: &SvmConfig, seed: u64) -> Result<SvmModel<T>, MlError> {
    check_training_set(x, y, n_classes)?;
    if let Kernel::Poly { degree } = cfg.kernel {
        if !(2..=15).contains(&degree) {
            return Err(MlError::Hyper(format!("polynomial degree {degree} outside [2, 15]")));
        }
    }
    if cfg.epochs == 0 {
        return Err(MlError::Hyper("epochs must be positive".into()));
    }
    let present = (0..n_classes).filter(|&c| y.contains(&c)).count();
    if present < 2 {
        return Err(MlError::SingleClass);
    }
    let n = x.len();
    let lambda = T::lit(cfg.lambda.unwrap_or(1.0 / n as f64));
    let gamma = gamma_value(cfg.gamma, x);
    let iters = cfg.epochs * n;
    let alphas: Vec<Vec<u32>> = (0..n_classes)
        .into_par_iter()
        .map(|c| {
            let sign: Vec<T> = y.iter().map(|&l| if l == c { T::one() } else { -T::one() }).collect();
            pegasos_binary(x, &sign, cfg.kernel, gamma, lambda, iters, seed, c as u64)
        })
        .collect();

    let sv: Vec<usize> = (0..n).filter(|&i| alphas.iter().any(|a| a[i] > 0)).collect();
    let scale = lambda * T::from_usize(iters).unwrap();
    let coef = alphas
        .iter()
        .enumerate()
        .map(|(c, a)| {
            sv.iter()
                .map(|&i| {
                    let s = if y[i] == c { T::one() } else { -T::one() };
                    s * T::from_u32(a[i]).unwrap() / scale
                })
                .collect()
        })
        .collect();
    Ok(SvmModel {
        kernel: cfg.kernel,
        gamma,
        n_features: x.n_features(),
        n_classes,
        support: x.select(&sv),
        coef,
    })
}
