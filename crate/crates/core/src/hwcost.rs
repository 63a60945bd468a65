//! Transistor-count estimates for each classifier family, and speedup per
//! million transistors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HwCostError {
    #[error("layer list needs an input size and at least one further layer")]
    EmptyLayers,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

/// Per-unit transistor counts. Engineering estimates, adjustable in config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnitCosts {
    pub multiplier: u64,
    pub adder: u64,
    pub comparator: u64,
}

impl Default for UnitCosts {
    fn default() -> Self {
        UnitCosts { multiplier: 18_000, adder: 900, comparator: 120 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HwCost {
    pub n_mult: u64,
    pub n_add: u64,
    pub n_comparators: u64,
    pub transistors: u64,
    pub transistors_millions: f64,
}

impl HwCost {
    pub fn from_counts(n_mult: u64, n_add: u64, n_comparators: u64, units: &UnitCosts) -> Self {
        let transistors = n_mult * units.multiplier + n_add * units.adder + n_comparators * units.comparator;
        HwCost {
            n_mult,
            n_add,
            n_comparators,
            transistors,
            transistors_millions: transistors as f64 / 1e6,
        }
    }
}

/// Multipliers and adders of a fully connected network whose layer sizes
/// (input first) are `layer_sizes`: each neuron multiplies every input and
/// adds the products pairwise.
pub fn nn_cost(layer_sizes: &[usize], units: &UnitCosts) -> Result<HwCost, HwCostError> {
    if layer_sizes.len() < 2 {
        return Err(HwCostError::EmptyLayers);
    }
    let (mut mult, mut add) = (0u64, 0u64);
    for w in layer_sizes.windows(2) {
        let (inputs, neurons) = (w[0] as u64, w[1] as u64);
        mult += neurons * inputs;
        add += neurons * inputs.saturating_sub(1);
    }
    Ok(HwCost::from_counts(mult, add, 0, units))
}

/// `ceil(log2(n))` for positive `n`.
pub fn ceil_log2(n: u64) -> u32 {
    debug_assert!(n > 0);
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// Comparators for `n_estimators` trees: one per level along a root-to-leaf
/// path, `ceil(log2(max_depth))` levels each.
pub fn rf_cost(n_estimators: usize, max_depth: usize, units: &UnitCosts) -> Result<HwCost, HwCostError> {
    if n_estimators == 0 {
        return Err(HwCostError::NonPositive("n_estimators"));
    }
    if max_depth == 0 {
        return Err(HwCostError::NonPositive("max_depth"));
    }
    let comps = n_estimators as u64 * ceil_log2(max_depth as u64) as u64;
    Ok(HwCost::from_counts(0, 0, comps, units))
}

/// Placeholder SVM estimate: one multiplier and one adder per support-vector
/// feature. Not derived from any published model.
pub fn svm_cost(n_support: usize, n_features: usize, units: &UnitCosts) -> HwCost {
    let n = (n_support * n_features) as u64;
    HwCost::from_counts(n, n, 0, units)
}

/// Speedup per million transistors.
pub fn sph(speedup: f64, cost: &HwCost) -> f64 {
    if speedup == 0.0 {
        return 0.0;
    }
    speedup / cost.transistors_millions
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nn_examples() {
        let u = UnitCosts::default();
        let c = nn_cost(&[9, 20, 10, 4], &u).unwrap();
        assert_eq!((c.n_mult, c.n_add), (420, 386));
        let c = nn_cost(&[9, 1], &u).unwrap();
        assert_eq!((c.n_mult, c.n_add), (9, 8));
        let c = nn_cost(&[9, 2], &u).unwrap();
        assert_eq!((c.n_mult, c.n_add), (18, 16));
        assert_eq!(c.transistors, 18 * 18_000 + 16 * 900);
        assert_eq!(nn_cost(&[9], &u), Err(HwCostError::EmptyLayers));
    }

    #[test]
    fn rf_examples() {
        let u = UnitCosts::default();
        assert_eq!(rf_cost(100, 40, &u).unwrap().n_comparators, 600);
        assert_eq!(rf_cost(1, 2, &u).unwrap().n_comparators, 1);
        assert_eq!(rf_cost(20, 30, &u).unwrap().n_comparators, 2 * rf_cost(10, 30, &u).unwrap().n_comparators);
        assert!(rf_cost(0, 3, &u).is_err());
    }

    #[test]
    fn ceil_log2_values() {
        let want = [(1, 0), (2, 1), (3, 2), (4, 2), (5, 3), (10, 4), (16, 4), (17, 5), (50, 6)];
        for (n, l) in want {
            assert_eq!(ceil_log2(n), l, "{n}");
        }
    }

    #[test]
    fn svm_stub() {
        let u = UnitCosts::default();
        assert_eq!(svm_cost(0, 9, &u).transistors, 0);
        assert_eq!(svm_cost(100, 9, &u).n_mult, 900);
        assert!(svm_cost(101, 9, &u).transistors > svm_cost(100, 9, &u).transistors);
    }

    #[test]
    fn sph_ratio() {
        let c = HwCost { n_mult: 0, n_add: 0, n_comparators: 0, transistors: 461_000, transistors_millions: 0.461 };
        assert!((sph(1.685, &c) - 3.655097613882863).abs() < 1e-12);
        assert_eq!(sph(0.0, &c), 0.0);
        let half = HwCost { transistors_millions: 0.2305, ..c };
        assert!((sph(1.685, &half) - 2.0 * sph(1.685, &c)).abs() < 1e-12);
    }
}
