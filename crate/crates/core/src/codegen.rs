//! Lowers a trained random forest to a combinational netlist.
//!
//! Each split becomes a constant-threshold magnitude comparator on a
//! fixed-point feature bus. Path conditions are ANDed into one line per leaf,
//! leaf lines select the leaf's class weights, per-class weights are summed
//! by adder trees and a chain of comparators picks the winning class. All
//! trees are evaluated in parallel.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::N_FEATURES;
use crate::hwcost::{rf_cost, UnitCosts};
use crate::ml::forest::leaf_weights;
use crate::ml::{RandomForest, TreeNode};
use crate::netlist::{GateDelays, Netlist, NetlistBuilder, NetlistError, Picos, Signal};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("invalid fixed-point format: {0}")]
    Format(String),
    #[error("tree {tree}: threshold {threshold} on feature {feature} does not fit {total_bits}.{fraction_bits} fixed point")]
    ThresholdOverflow { tree: usize, feature: usize, threshold: f64, total_bits: u32, fraction_bits: u32 },
    #[error("forest expects {0} features; the generator handles {N_FEATURES}")]
    FeatureCount(usize),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
}

/// Signed two's-complement fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedPointSpec {
    pub total_bits: u32,
    pub fraction_bits: u32,
}

impl Default for FixedPointSpec {
    fn default() -> Self {
        FixedPointSpec { total_bits: 16, fraction_bits: 8 }
    }
}

impl FixedPointSpec {
    pub fn validate(&self) -> Result<(), CodegenError> {
        if !(2..=32).contains(&self.total_bits) || self.fraction_bits >= self.total_bits {
            return Err(CodegenError::Format(format!(
                "{} total bits with {} fraction bits",
                self.total_bits, self.fraction_bits
            )));
        }
        Ok(())
    }

    pub fn min_code(&self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    pub fn max_code(&self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    fn scale(&self) -> f64 {
        (1u64 << self.fraction_bits) as f64
    }

    /// Nearest-below code, saturated to the representable range.
    pub fn quantize<T: Real>(&self, x: T) -> i64 {
        let q = (x.to_f64().unwrap() * self.scale()).floor();
        (q as i64).clamp(self.min_code(), self.max_code())
    }

    pub fn dequantize<T: Real>(&self, q: i64) -> T {
        T::lit(q as f64 / self.scale())
    }

    /// Largest code `q` with `q / 2^fraction_bits <= threshold`.
    fn threshold_code(&self, th: f64) -> i64 {
        (th * self.scale()).floor() as i64
    }
}

/// Size and timing of a generated forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestNetlistMeta {
    pub n_trees: usize,
    pub n_classes: usize,
    pub fixed_point: FixedPointSpec,
    /// One per split node.
    pub n_comparators: usize,
    pub n_leaves: usize,
    /// `n_estimators * ceil(log2(max_depth))`, for comparison.
    pub rf_cost_comparators: u64,
    pub gate_count: usize,
    pub ml_stage_delay_ps: Picos,
}

pub struct ForestNetlist {
    pub netlist: Netlist,
    pub meta: ForestNetlistMeta,
    pub class_bits: u32,
    order: Vec<usize>,
}

fn class_bits(n_classes: usize) -> u32 {
    (usize::BITS - (n_classes.max(2) - 1).leading_zeros()).max(1)
}

/// OR of all `xs`, as a balanced tree.
fn or_tree(b: &mut NetlistBuilder, xs: &[Signal]) -> Signal {
    match xs.len() {
        0 => Signal::Const(false),
        1 => xs[0],
        n => {
            let (l, r) = xs.split_at(n / 2);
            let l = or_tree(b, l);
            let r = or_tree(b, r);
            b.or(l, r)
        }
    }
}

/// `q <= c` for a signed bus `q` (LSB first) and constant code `c`, as a
/// ripple chain from the LSB on offset-binary bits.
fn le_const(b: &mut NetlistBuilder, q: &[Signal], q_inv: &[Signal], c: i64) -> Signal {
    let bits = q.len();
    let cu = (c - (-(1i64 << (bits - 1)))) as u64;
    let mut le = Signal::Const(true);
    for i in 0..bits {
        // complement of the offset-binary bit; the sign bit is already flipped
        let u_low = if i == bits - 1 { q[i] } else { q_inv[i] };
        le = if cu >> i & 1 == 1 { b.or(u_low, le) } else { b.and(u_low, le) };
    }
    le
}

fn ripple_add(b: &mut NetlistBuilder, x: &[Signal], y: &[Signal]) -> Vec<Signal> {
    let w = x.len().max(y.len());
    let mut carry = Signal::Const(false);
    let mut out = Vec::with_capacity(w + 1);
    for i in 0..w {
        let xi = x.get(i).copied().unwrap_or(Signal::Const(false));
        let yi = y.get(i).copied().unwrap_or(Signal::Const(false));
        let (s, c) = b.full_add(xi, yi, carry);
        out.push(s);
        carry = c;
    }
    out.push(carry);
    out
}

fn adder_tree(b: &mut NetlistBuilder, mut terms: Vec<Vec<Signal>>) -> Vec<Signal> {
    if terms.is_empty() {
        return vec![Signal::Const(false)];
    }
    while terms.len() > 1 {
        let mut next = Vec::with_capacity(terms.len().div_ceil(2));
        let mut it = terms.into_iter();
        while let Some(x) = it.next() {
            match it.next() {
                Some(y) => next.push(ripple_add(b, &x, &y)),
                None => next.push(x),
            }
        }
        terms = next;
    }
    terms.pop().unwrap()
}

/// Unsigned `x >= y` as the carry out of `x + !y + 1`.
fn ge(b: &mut NetlistBuilder, x: &[Signal], y: &[Signal]) -> Signal {
    let w = x.len().max(y.len());
    let mut carry = Signal::Const(true);
    for i in 0..w {
        let xi = x.get(i).copied().unwrap_or(Signal::Const(false));
        let yi = y.get(i).copied().unwrap_or(Signal::Const(false));
        let ny = b.not(yi);
        carry = b.full_add(xi, ny, carry).1;
    }
    carry
}

/// Builds the comparator netlist of `model`. Inputs are `x{f}[i]` (feature
/// `f`, bit `i`, LSB first); outputs are `class[i]`, the predicted class
/// index in binary.
pub fn forest_to_netlist<T: Real>(
    model: &RandomForest<T>,
    fp: FixedPointSpec,
    delays: GateDelays,
) -> Result<ForestNetlist, CodegenError> {
    fp.validate()?;
    if model.n_features != N_FEATURES {
        return Err(CodegenError::FeatureCount(model.n_features));
    }
    let bits = fp.total_bits;
    let mut b = NetlistBuilder::new(format!("rf_t{}_d{}", model.n_estimators, model.max_depth), delays);
    let buses: Vec<Vec<Signal>> = (0..N_FEATURES).map(|f| b.inputs(&format!("x{f}"), bits)).collect();
    let inv: Vec<Vec<Signal>> = buses.iter().map(|bus| bus.iter().map(|&s| b.not(s)).collect()).collect();

    let n_classes = model.n_classes;
    let mut class_terms: Vec<Vec<Vec<Signal>>> = vec![Vec::new(); n_classes];
    let (mut n_comparators, mut n_leaves) = (0, 0);
    for (ti, tree) in model.trees.iter().enumerate() {
        // reach[i]: the input's path through this tree visits node i
        let mut reach = vec![Signal::Const(false); tree.nodes.len()];
        reach[0] = Signal::Const(true);
        // by weight value, the leaves that carry it, per class
        let mut groups: Vec<BTreeMap<u32, Vec<Signal>>> = vec![BTreeMap::new(); n_classes];
        for (i, node) in tree.nodes.iter().enumerate() {
            match node {
                TreeNode::Split { feature, threshold, left, right } => {
                    let th = threshold.to_f64().unwrap();
                    let code = fp.threshold_code(th);
                    if code < fp.min_code() || code > fp.max_code() {
                        return Err(CodegenError::ThresholdOverflow {
                            tree: ti,
                            feature: *feature,
                            threshold: th,
                            total_bits: fp.total_bits,
                            fraction_bits: fp.fraction_bits,
                        });
                    }
                    n_comparators += 1;
                    let le = le_const(&mut b, &buses[*feature], &inv[*feature], code);
                    let gt = b.not(le);
                    reach[*left] = b.and(reach[i], le);
                    reach[*right] = b.and(reach[i], gt);
                }
                TreeNode::Leaf { counts } => {
                    n_leaves += 1;
                    for (k, w) in leaf_weights(counts).into_iter().enumerate() {
                        if w > 0 {
                            groups[k].entry(w).or_default().push(reach[i]);
                        }
                    }
                }
            }
        }
        for (k, g) in groups.into_iter().enumerate() {
            let lines: Vec<(u32, Signal)> = g.into_iter().map(|(w, leaves)| (w, or_tree(&mut b, &leaves))).collect();
            let word: Vec<Signal> = (0..16)
                .map(|bit| {
                    let set: Vec<Signal> = lines.iter().filter(|(w, _)| w >> bit & 1 == 1).map(|&(_, s)| s).collect();
                    or_tree(&mut b, &set)
                })
                .collect();
            class_terms[k].push(word);
        }
    }

    let sums: Vec<Vec<Signal>> = class_terms.into_iter().map(|t| adder_tree(&mut b, t)).collect();
    let cb = class_bits(n_classes);
    let mut best_val = sums[0].clone();
    let mut best_idx: Vec<Signal> = vec![Signal::Const(false); cb as usize];
    for (k, s) in sums.iter().enumerate().skip(1) {
        let take = ge(&mut b, s, &best_val);
        let w = best_val.len().max(s.len());
        best_val = (0..w)
            .map(|i| {
                let old = best_val.get(i).copied().unwrap_or(Signal::Const(false));
                let new = s.get(i).copied().unwrap_or(Signal::Const(false));
                b.mux(take, old, new)
            })
            .collect();
        best_idx = best_idx
            .iter()
            .enumerate()
            .map(|(i, &old)| b.mux(take, old, Signal::Const(k >> i & 1 == 1)))
            .collect();
    }
    for (i, &s) in best_idx.iter().enumerate() {
        b.output(s, format!("class[{i}]"));
    }
    let netlist = b.finish();
    let order = netlist.topo_order()?;
    let delay = netlist.static_longest_path()?;
    let rf_comparators = rf_cost(model.n_estimators.max(1), model.max_depth.max(1), &UnitCosts::default())
        .map(|c| c.n_comparators)
        .unwrap_or(0);
    let meta = ForestNetlistMeta {
        n_trees: model.trees.len(),
        n_classes,
        fixed_point: fp,
        n_comparators,
        n_leaves,
        rf_cost_comparators: rf_comparators,
        gate_count: netlist.gate_count(),
        ml_stage_delay_ps: delay,
    };
    Ok(ForestNetlist { netlist, meta, class_bits: cb, order })
}

impl ForestNetlist {
    /// Emits a warning when the ML stage does not fit in `period` and
    /// reports whether it fits.
    pub fn check_stage_period(&self, period: Picos) -> bool {
        let fits = self.meta.ml_stage_delay_ps <= period;
        if !fits {
            warn!(
                "ML stage delay {} ps exceeds the {} ps stage period; it would need to be split across pipeline stages",
                self.meta.ml_stage_delay_ps, period
            );
        }
        fits
    }

    /// Predicted classes for up to 64 quantized feature vectors.
    pub fn predict_packed(&self, vectors: &[[i64; N_FEATURES]]) -> Vec<usize> {
        assert!(vectors.len() <= 64);
        let bits = self.meta.fixed_point.total_bits;
        let mut words = vec![0u64; N_FEATURES * bits as usize];
        for (lane, v) in vectors.iter().enumerate() {
            for (f, &q) in v.iter().enumerate() {
                for i in 0..bits {
                    if q >> i & 1 == 1 {
                        words[f * bits as usize + i as usize] |= 1 << lane;
                    }
                }
            }
        }
        let out = self.netlist.evaluate_packed(&self.order, &words);
        (0..vectors.len())
            .map(|lane| out.iter().enumerate().map(|(i, w)| ((w >> lane & 1) as usize) << i).sum())
            .collect()
    }

    pub fn predict(&self, codes: &[i64; N_FEATURES]) -> usize {
        self.predict_packed(std::slice::from_ref(codes))[0]
    }

    pub fn predict_many(&self, vectors: &[[i64; N_FEATURES]]) -> Vec<usize> {
        vectors.chunks(64).flat_map(|c| self.predict_packed(c)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::{rf_train, Classifier, DecisionTree, Samples};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stump(feature: usize, threshold: f64) -> RandomForest<f64> {
        let nodes = vec![
            TreeNode::Split { feature, threshold, left: 1, right: 2 },
            TreeNode::Leaf { counts: vec![5, 1] },
            TreeNode::Leaf { counts: vec![2, 7] },
        ];
        RandomForest {
            trees: vec![DecisionTree { nodes, max_depth: 1, n_classes: 2, n_features: 9 }],
            n_estimators: 1,
            max_depth: 1,
            seed: 0,
            n_classes: 2,
            n_features: 9,
        }
    }

    fn software(model: &RandomForest<f64>, fp: &FixedPointSpec, q: &[i64; 9]) -> usize {
        let x: Vec<f64> = q.iter().map(|&c| fp.dequantize(c)).collect();
        model.predict(&x)
    }

    #[test]
    fn stump_exhaustive_over_feature_codes() {
        let fp = FixedPointSpec::default();
        for th in [0.3, -1.7, 0.0, 127.99, -128.0] {
            let m = stump(4, th);
            let hw = forest_to_netlist(&m, fp, GateDelays::default()).unwrap();
            assert_eq!(hw.meta.n_comparators, 1);
            let vectors: Vec<[i64; 9]> = (fp.min_code()..=fp.max_code())
                .map(|q| {
                    let mut v = [0i64; 9];
                    v[4] = q;
                    v
                })
                .collect();
            let got = hw.predict_many(&vectors);
            for (v, g) in vectors.iter().zip(got) {
                assert_eq!(g, software(&m, &fp, v), "threshold {th}, code {}", v[4]);
            }
        }
    }

    #[test]
    fn single_leaf_is_constant() {
        let mut m = stump(0, 0.0);
        m.trees[0].nodes = vec![TreeNode::Leaf { counts: vec![1, 4] }];
        let hw = forest_to_netlist(&m, FixedPointSpec::default(), GateDelays::default()).unwrap();
        assert_eq!(hw.meta.n_comparators, 0);
        assert_eq!(hw.predict(&[0; 9]), 1);
        assert_eq!(hw.predict(&[-300; 9]), 1);
    }

    #[test]
    fn threshold_overflow() {
        let m = stump(2, 200.0);
        assert!(matches!(
            forest_to_netlist(&m, FixedPointSpec::default(), GateDelays::default()),
            Err(CodegenError::ThresholdOverflow { feature: 2, .. })
        ));
        assert!(FixedPointSpec { total_bits: 8, fraction_bits: 8 }.validate().is_err());
    }

    #[test]
    fn forest_matches_software_on_random_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rows: Vec<[f64; 9]> = (0..600)
            .map(|_| {
                let mut r = [0.0; 9];
                r[rng.gen_range(0..4)] = 1.0;
                for v in &mut r[4..] {
                    *v = rng.gen_range(-3.0..3.0);
                }
                r
            })
            .collect();
        let y: Vec<usize> = rows.iter().map(|r| ((r[4] + r[5] * r[6] > 0.5) as usize) + (r[0] > 0.5) as usize).collect();
        let m = rf_train(&Samples::from_rows(&rows), &y, 3, 10, 8, 4).unwrap();
        let fp = FixedPointSpec::default();
        let hw = forest_to_netlist(&m, fp, GateDelays::default()).unwrap();
        assert_eq!(hw.meta.n_comparators, m.n_splits());
        let vectors: Vec<[i64; 9]> = (0..4000)
            .map(|_| {
                let mut v = [0i64; 9];
                v[rng.gen_range(0..4)] = 256;
                for c in &mut v[4..] {
                    *c = rng.gen_range(-1000..1000);
                }
                v
            })
            .collect();
        for (v, g) in vectors.iter().zip(hw.predict_many(&vectors)) {
            assert_eq!(g, software(&m, &fp, v));
        }
        assert!(hw.meta.ml_stage_delay_ps > 0);
        assert!(!hw.check_stage_period(1));
    }

    #[test]
    fn quantize_floors_and_saturates() {
        let fp = FixedPointSpec::default();
        assert_eq!(fp.quantize(0.999f64), 255);
        assert_eq!(fp.quantize(-0.001f64), -1);
        assert_eq!(fp.quantize(1e9f64), fp.max_code());
        assert_eq!(fp.dequantize::<f64>(-384), -1.5);
    }
}
