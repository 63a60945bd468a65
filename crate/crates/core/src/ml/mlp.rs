//! Fully connected networks with a softmax cross-entropy objective, trained by
//! backpropagation with SGD, Adam or L-BFGS.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax_prefer_high, check_training_set, stream_rng, Classifier, MlError, Samples};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Logistic,
    Relu,
}

impl Activation {
    pub const ALL: [Activation; 4] = [Activation::Identity, Activation::Tanh, Activation::Logistic, Activation::Relu];

    #[inline]
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Logistic => T::one() / (T::one() + (-z).exp()),
            Activation::Relu => z.max(T::zero()),
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    fn slope<T: Real>(self, a: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Tanh => T::one() - a * a,
            Activation::Logistic => a * (T::one() - a),
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Sgd,
    Lbfgs,
    Adam,
}

impl Solver {
    pub const ALL: [Solver; 3] = [Solver::Sgd, Solver::Lbfgs, Solver::Adam];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub solver: Solver,
    pub epochs: usize,
    /// Step size for SGD and Adam; L-BFGS uses a line search.
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// L2 penalty on weights.
    pub alpha: f64,
    /// On a non-finite loss, training restarts with the learning rate divided
    /// by ten, at most this many times.
    pub max_lr_retries: usize,
    pub lbfgs_memory: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![10],
            activation: Activation::Relu,
            solver: Solver::Adam,
            epochs: 200,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 200,
            alpha: 1e-4,
            max_lr_retries: 3,
            lbfgs_memory: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    /// Input size, hidden sizes, output size.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    /// Per layer: weights (row-major, `out x in`) followed by biases.
    pub params: Vec<T>,
    pub initial_loss: T,
    pub final_loss: T,
}

/// Offsets of each layer's weight block and bias block in the flat vector.
fn layout(sizes: &[usize]) -> Vec<(usize, usize)> {
    let mut off = 0;
    sizes
        .windows(2)
        .map(|w| {
            let wb = off;
            let bb = off + w[0] * w[1];
            off = bb + w[1];
            (wb, bb)
        })
        .collect()
}

pub fn n_params(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Forward pass keeping every layer's output; the last entry holds logits.
fn forward<T: Real>(sizes: &[usize], act: Activation, params: &[T], x: &[T]) -> Vec<Vec<T>> {
    let lay = layout(sizes);
    let mut outs: Vec<Vec<T>> = Vec::with_capacity(sizes.len());
    outs.push(x.to_vec());
    let last = sizes.len() - 2;
    for (l, &(wb, bb)) in lay.iter().enumerate() {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let input = &outs[l];
        let mut z = Vec::with_capacity(n_out);
        for j in 0..n_out {
            let w = &params[wb + j * n_in..wb + (j + 1) * n_in];
            let s: T = w.iter().zip(input).map(|(&a, &b)| a * b).sum::<T>() + params[bb + j];
            z.push(if l == last { s } else { act.apply(s) });
        }
        outs.push(z);
    }
    outs
}

fn log_softmax<T: Real>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
    z.iter().map(|&v| v - lse).collect()
}

/// Mean cross-entropy over `rows` plus `alpha/(2n) * |W|^2`, and its gradient.
pub fn loss_and_grad<T: Real>(
    sizes: &[usize],
    act: Activation,
    params: &[T],
    x: &Samples<T>,
    y: &[usize],
    rows: &[usize],
    alpha: T,
) -> (T, Vec<T>) {
    let lay = layout(sizes);
    let mut grad = vec![T::zero(); params.len()];
    let mut loss = T::zero();
    let n_layers = lay.len();
    for &r in rows {
        let outs = forward(sizes, act, params, x.row(r));
        let logp = log_softmax(&outs[n_layers]);
        loss -= logp[y[r]];
        let mut delta: Vec<T> = logp.iter().map(|&lp| lp.exp()).collect();
        delta[y[r]] -= T::one();
        for l in (0..n_layers).rev() {
            let (wb, bb) = lay[l];
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let input = &outs[l];
            for j in 0..n_out {
                let d = delta[j];
                grad[bb + j] += d;
                let g = &mut grad[wb + j * n_in..wb + (j + 1) * n_in];
                for (gi, &a) in g.iter_mut().zip(input) {
                    *gi += d * a;
                }
            }
            if l > 0 {
                let mut prev = vec![T::zero(); n_in];
                for j in 0..n_out {
                    let w = &params[wb + j * n_in..wb + (j + 1) * n_in];
                    for (p, &wv) in prev.iter_mut().zip(w) {
                        *p += wv * delta[j];
                    }
                }
                for (p, &a) in prev.iter_mut().zip(input) {
                    *p *= act.slope(a);
                }
                delta = prev;
            }
        }
    }
    let n = T::from_usize(rows.len()).unwrap();
    loss /= n;
    for g in grad.iter_mut() {
        *g /= n;
    }
    if alpha > T::zero() {
        let mut sq = T::zero();
        for (l, &(wb, bb)) in lay.iter().enumerate() {
            let _ = l;
            for i in wb..bb {
                sq += params[i] * params[i];
                grad[i] += alpha * params[i] / n;
            }
        }
        loss += alpha * sq / (T::lit(2.0) * n);
    }
    (loss, grad)
}

fn glorot_init<T: Real, R: Rng>(sizes: &[usize], act: Activation, rng: &mut R) -> Vec<T> {
    let lay = layout(sizes);
    let mut p = vec![T::zero(); n_params(sizes)];
    for (l, &(wb, bb)) in lay.iter().enumerate() {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let factor = if act == Activation::Logistic { 2.0 } else { 6.0 };
        let bound = (factor / (n_in + n_out) as f64).sqrt();
        for v in &mut p[wb..bb + n_out] {
            *v = T::lit(rng.gen_range(-bound..bound));
        }
    }
    p
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

struct Objective<'a, T> {
    sizes: &'a [usize],
    act: Activation,
    x: &'a Samples<T>,
    y: &'a [usize],
    all: Vec<usize>,
    alpha: T,
}

impl<T: Real> Objective<'_, T> {
    fn full(&self, p: &[T]) -> (T, Vec<T>) {
        loss_and_grad(self.sizes, self.act, p, self.x, self.y, &self.all, self.alpha)
    }

    fn batch(&self, p: &[T], rows: &[usize]) -> (T, Vec<T>) {
        loss_and_grad(self.sizes, self.act, p, self.x, self.y, rows, self.alpha)
    }
}

/// Runs one training attempt; `None` signals a non-finite loss.
fn run_solver<T: Real, R: Rng>(obj: &Objective<T>, cfg: &MlpConfig, lr: f64, mut p: Vec<T>, rng: &mut R) -> Option<(Vec<T>, T)> {
    let (mut best_loss, _) = obj.full(&p);
    if !best_loss.is_finite() {
        return None;
    }
    let mut best = p.clone();
    let n = obj.x.len();
    let batch = cfg.batch_size.clamp(1, n);
    let lr_t = T::lit(lr);
    let mut order: Vec<usize> = (0..n).collect();

    match cfg.solver {
        Solver::Sgd | Solver::Adam => {
            let mut m = vec![T::zero(); p.len()];
            let mut v = vec![T::zero(); p.len()];
            let (b1, b2, eps) = (T::lit(0.9), T::lit(0.999), T::lit(1e-8));
            let mom = T::lit(cfg.momentum);
            let mut step = 0i32;
            for _ in 0..cfg.epochs {
                order.shuffle(rng);
                for chunk in order.chunks(batch) {
                    let (_, g) = obj.batch(&p, chunk);
                    step += 1;
                    if cfg.solver == Solver::Sgd {
                        for ((pi, mi), gi) in p.iter_mut().zip(m.iter_mut()).zip(&g) {
                            *mi = mom * *mi - lr_t * *gi;
                            *pi += *mi;
                        }
                    } else {
                        let c1 = T::one() - b1.powi(step);
                        let c2 = T::one() - b2.powi(step);
                        for i in 0..p.len() {
                            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                            p[i] -= lr_t * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                        }
                    }
                }
                let (l, _) = obj.full(&p);
                if !l.is_finite() {
                    return None;
                }
                if l < best_loss {
                    best_loss = l;
                    best.clone_from(&p);
                }
            }
        }
        Solver::Lbfgs => {
            let (mut f, mut g) = obj.full(&p);
            let mut hist: Vec<(Vec<T>, Vec<T>, T)> = Vec::new();
            for _ in 0..cfg.epochs {
                // two-loop recursion
                let mut q = g.clone();
                let mut alphas = Vec::with_capacity(hist.len());
                for (s, yv, rho) in hist.iter().rev() {
                    let a = *rho * dot(s, &q);
                    for (qi, &yi) in q.iter_mut().zip(yv) {
                        *qi -= a * yi;
                    }
                    alphas.push(a);
                }
                if let Some((s, yv, _)) = hist.last() {
                    let gamma = dot(s, yv) / dot(yv, yv);
                    for qi in q.iter_mut() {
                        *qi *= gamma;
                    }
                } else {
                    let gn = dot(&g, &g).sqrt();
                    if gn == T::zero() {
                        break;
                    }
                    for qi in q.iter_mut() {
                        *qi /= gn;
                    }
                }
                for ((s, yv, rho), a) in hist.iter().zip(alphas.iter().rev()) {
                    let b = *rho * dot(yv, &q);
                    for (qi, &si) in q.iter_mut().zip(s) {
                        *qi += si * (*a - b);
                    }
                }
                let dir: Vec<T> = q.iter().map(|&v| -v).collect();
                let mut slope = dot(&g, &dir);
                let dir = if slope >= T::zero() {
                    hist.clear();
                    slope = -dot(&g, &g);
                    g.iter().map(|&v| -v).collect()
                } else {
                    dir
                };
                // backtracking Armijo search
                let mut t = T::one();
                let mut accepted = None;
                for _ in 0..30 {
                    let cand: Vec<T> = p.iter().zip(&dir).map(|(&a, &d)| a + t * d).collect();
                    let (fc, gc) = obj.full(&cand);
                    if fc.is_finite() && fc <= f + T::lit(1e-4) * t * slope {
                        accepted = Some((cand, fc, gc));
                        break;
                    }
                    t *= T::lit(0.5);
                }
                let Some((cand, fc, gc)) = accepted else { break };
                let s: Vec<T> = cand.iter().zip(&p).map(|(&a, &b)| a - b).collect();
                let yv: Vec<T> = gc.iter().zip(&g).map(|(&a, &b)| a - b).collect();
                let sy = dot(&s, &yv);
                if sy > T::lit(1e-12) {
                    hist.push((s, yv, T::one() / sy));
                    if hist.len() > cfg.lbfgs_memory {
                        hist.remove(0);
                    }
                }
                p = cand;
                f = fc;
                g = gc;
                if f < best_loss {
                    best_loss = f;
                    best.clone_from(&p);
                }
            }
        }
    }
    Some((best, best_loss))
}

/// Trains a network `n_features -> hidden... -> n_classes`. The returned
/// parameters are the best (lowest full-batch loss) seen, so the final loss
/// never exceeds the initial one.
pub fn mlp_train<T: Real>(
    x: &Samples<T>,
    y: &[usize],
    n_classes: usize,
    cfg: &MlpConfig,
    seed: u64,
) -> Result<MlpModel<T>, MlError> {
    check_training_set(x, y, n_classes)?;
    if cfg.hidden.contains(&0) {
        return Err(MlError::Hyper("hidden layers need at least one neuron".into()));
    }
    let mut sizes = vec![x.n_features()];
    sizes.extend(&cfg.hidden);
    sizes.push(n_classes);
    let obj = Objective {
        sizes: &sizes,
        act: cfg.activation,
        x,
        y,
        all: (0..x.len()).collect(),
        alpha: T::lit(cfg.alpha),
    };
    let mut lr = cfg.learning_rate;
    for retry in 0..=cfg.max_lr_retries {
        let mut rng = stream_rng(seed, retry as u64);
        let init = glorot_init(&sizes, cfg.activation, &mut rng);
        let (initial_loss, _) = obj.full(&init);
        if let Some((params, final_loss)) = run_solver(&obj, cfg, lr, init, &mut rng) {
            return Ok(MlpModel {
                layer_sizes: sizes,
                activation: cfg.activation,
                params,
                initial_loss,
                final_loss,
            });
        }
        lr /= 10.0;
    }
    Err(MlError::NonFinite { retries: cfg.max_lr_retries })
}

impl<T: Real> MlpModel<T> {
    pub fn logits(&self, x: &[T]) -> Vec<T> {
        forward(&self.layer_sizes, self.activation, &self.params, x)
            .pop()
            .expect("at least one layer")
    }
}

impl<T: Real> Classifier<T> for MlpModel<T> {
    fn predict(&self, x: &[T]) -> usize {
        argmax_prefer_high(&self.logits(x))
    }

    fn n_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }
}
