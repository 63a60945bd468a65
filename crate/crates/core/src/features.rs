//! Feature extraction, quantile-normal preprocessing and delay classes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::isa::OpKind;
use crate::ml::{Classifier, Samples};
use crate::netlist::Picos;
use crate::oracle::{format_record_fields, parse_record_fields, ProfileRecord, PROFILE_HEADER};
use crate::scalar::{Real, Scalar};

/// Number of elements in a feature vector.
pub const N_FEATURES: usize = 9;
/// Number of real-valued (transformable) features.
pub const N_SCALARS: usize = 5;
pub const SCALAR_NAMES: [&str; N_SCALARS] = ["op1", "op2", "xop1", "xop2", "prev_output"];
pub const QT_HEADER: &str = "qtfmt v1";
pub const DATASET_FORMAT: &str = "# datasetfmt v1";
/// Clip applied to CDF positions before the inverse normal CDF.
pub const CDF_CLIP: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("delay {delay} ps exceeds worst case {t_wc} ps")]
    DelayAboveWorstCase { delay: Picos, t_wc: Picos },
    #[error("invalid class config: {0}")]
    InvalidConfig(String),
    #[error("transformer used before fit")]
    NotFitted,
    #[error("cannot fit on an empty dataset")]
    EmptyDataset,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Delay classes as fractions of the worst-case period `t_wc`.
///
/// Class `k` covers `(upper_{k-1}, upper_k]` with class 0 closed at zero;
/// its clock period is its upper edge.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayClassConfig<T> {
    boundaries: Vec<T>,
    t_wc: Picos,
    class_periods: Vec<T>,
}

impl<T: Scalar> DelayClassConfig<T> {
    pub fn new(boundaries: Vec<T>, t_wc: Picos) -> Result<Self, FeatureError> {
        if !(1..=3).contains(&boundaries.len()) {
            return Err(FeatureError::InvalidConfig(format!(
                "{} boundaries given, need 1..=3 (2 to 4 classes)",
                boundaries.len()
            )));
        }
        if t_wc == 0 {
            return Err(FeatureError::InvalidConfig("t_wc must be positive".into()));
        }
        let (zero, one) = (T::zero(), T::one());
        for (i, &b) in boundaries.iter().enumerate() {
            if !(b > zero && b < one) {
                return Err(FeatureError::InvalidConfig(format!("boundary {b} not in (0, 1)")));
            }
            if i > 0 && b <= boundaries[i - 1] {
                return Err(FeatureError::InvalidConfig("boundaries must be strictly ascending".into()));
            }
        }
        let t = T::from_u64_lossy(t_wc);
        let mut class_periods: Vec<T> = boundaries.iter().map(|&b| b * t).collect();
        class_periods.push(t);
        Ok(DelayClassConfig { boundaries, t_wc, class_periods })
    }

    /// The reference boundary sets, 2.2 ns of 4 ns and so on, expressed as
    /// exact fractions of `t_wc`.
    pub fn standard(n_classes: usize, t_wc: Picos) -> Result<Self, FeatureError> {
        let b: Vec<T> = match n_classes {
            2 => vec![T::ratio(22, 40)],
            3 => vec![T::ratio(18, 40), T::ratio(26, 40)],
            4 => vec![T::ratio(10, 40), T::ratio(20, 40), T::ratio(30, 40)],
            n => return Err(FeatureError::InvalidConfig(format!("{n} classes; expected 2, 3 or 4"))),
        };
        Self::new(b, t_wc)
    }

    pub fn n_classes(&self) -> usize {
        self.class_periods.len()
    }

    pub fn boundaries(&self) -> &[T] {
        &self.boundaries
    }

    pub fn t_wc(&self) -> Picos {
        self.t_wc
    }

    pub fn class_periods(&self) -> &[T] {
        &self.class_periods
    }

    pub fn slowest(&self) -> usize {
        self.n_classes() - 1
    }

    /// Re-expresses the same fractions in another scalar type.
    pub fn convert<U: Scalar>(&self) -> DelayClassConfig<U> {
        let b = self
            .boundaries
            .iter()
            .map(|&x| U::from_f64_lossy(x.to_f64_lossy()))
            .collect();
        DelayClassConfig::new(b, self.t_wc).expect("already validated")
    }
}

/// Class index of a measured delay.
pub fn class_of_delay<T: Scalar>(delay: Picos, cfg: &DelayClassConfig<T>) -> Result<usize, FeatureError> {
    if delay > cfg.t_wc {
        return Err(FeatureError::DelayAboveWorstCase { delay, t_wc: cfg.t_wc });
    }
    let d = T::from_u64_lossy(delay);
    Ok(cfg
        .class_periods
        .iter()
        .position(|&upper| d <= upper)
        .unwrap_or(cfg.slowest()))
}

pub fn one_hot(kind: OpKind) -> [bool; 4] {
    let mut code = [false; 4];
    code[kind.index()] = true;
    code
}

/// The nine-element classifier input: operation type one-hot followed by
/// `op1, op2, op1^prev_op1, op2^prev_op2, prev_output`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector<T> {
    pub type_onehot: [bool; 4],
    pub scalars: [T; N_SCALARS],
}

impl<T: Real> FeatureVector<T> {
    pub fn to_array(&self) -> [T; N_FEATURES] {
        let mut out = [T::zero(); N_FEATURES];
        for (o, &b) in out.iter_mut().zip(&self.type_onehot) {
            *o = if b { T::one() } else { T::zero() };
        }
        out[4..].copy_from_slice(&self.scalars);
        out
    }

    /// Inverse of [`FeatureVector::to_array`]; one-hot entries above 0.5
    /// count as set.
    pub fn from_array(a: &[T]) -> Self {
        let half = T::lit(0.5);
        let mut fv = FeatureVector { type_onehot: [false; 4], scalars: [T::zero(); N_SCALARS] };
        for (o, &v) in fv.type_onehot.iter_mut().zip(a) {
            *o = v > half;
        }
        fv.scalars.copy_from_slice(&a[4..N_FEATURES]);
        fv
    }
}

pub fn extract<T: Real>(r: &ProfileRecord) -> FeatureVector<T> {
    let w = |x: u32| T::from_u64_lossy(x as u64);
    FeatureVector {
        type_onehot: one_hot(r.instr.kind),
        scalars: [
            w(r.instr.op1),
            w(r.instr.op2),
            w(r.instr.op1 ^ r.prev_op1),
            w(r.instr.op2 ^ r.prev_op2),
            w(r.prev_output),
        ],
    }
}

/// Maps each scalar feature through its empirical CDF, then through the
/// standard-normal inverse CDF. The one-hot prefix passes through.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTransformer<T> {
    n_quantiles: usize,
    references: Vec<Vec<T>>,
}

impl<T: Real> QuantileTransformer<T> {
    pub const DEFAULT_QUANTILES: usize = 1000;

    pub fn unfitted(n_quantiles: usize) -> Self {
        QuantileTransformer { n_quantiles, references: Vec::new() }
    }

    pub fn fit(data: &[FeatureVector<T>], n_quantiles: usize) -> Result<Self, FeatureError> {
        if data.is_empty() {
            return Err(FeatureError::EmptyDataset);
        }
        let nq = n_quantiles.min(data.len()).max(2);
        let references = (0..N_SCALARS)
            .map(|f| {
                let mut col: Vec<T> = data.iter().map(|v| v.scalars[f]).collect();
                col.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
                (0..nq)
                    .map(|k| {
                        let pos = k as f64 / (nq - 1) as f64 * (col.len() - 1) as f64;
                        let lo = pos.floor() as usize;
                        let hi = (lo + 1).min(col.len() - 1);
                        let frac = T::lit(pos - lo as f64);
                        col[lo] + (col[hi] - col[lo]) * frac
                    })
                    .collect()
            })
            .collect();
        Ok(QuantileTransformer { n_quantiles, references })
    }

    pub fn is_fitted(&self) -> bool {
        !self.references.is_empty()
    }

    pub fn n_quantiles(&self) -> usize {
        self.n_quantiles
    }

    pub fn references(&self) -> &[Vec<T>] {
        &self.references
    }

    /// Empirical CDF position of `x` for scalar feature `f`. Runs of equal
    /// reference quantiles are handled by averaging the left- and
    /// right-continuous interpolants.
    pub fn cdf(&self, f: usize, x: T) -> T {
        let q = &self.references[f];
        let last = q.len() - 1;
        let step = T::one() / T::from_usize(last).unwrap();
        let interp = |i: usize| -> T {
            let span = q[i + 1] - q[i];
            let frac = if span > T::zero() { (x - q[i]) / span } else { T::zero() };
            (T::from_usize(i).unwrap() + frac) * step
        };
        // right-continuous: count of quantiles <= x
        let n_le = q.partition_point(|&v| v <= x);
        let upper = match n_le {
            0 => T::zero(),
            n if n > last => T::one(),
            n => interp(n - 1),
        };
        // left-continuous: count of quantiles < x
        let n_lt = q.partition_point(|&v| v < x);
        let lower = match n_lt {
            0 => T::zero(),
            n if n > last => T::one(),
            n => interp(n - 1),
        };
        (upper + lower) / T::lit(2.0)
    }

    pub fn transform(&self, fv: &FeatureVector<T>) -> Result<FeatureVector<T>, FeatureError> {
        if !self.is_fitted() {
            return Err(FeatureError::NotFitted);
        }
        let normal = Normal::standard();
        let mut out = *fv;
        for (f, s) in out.scalars.iter_mut().enumerate() {
            let p = self.cdf(f, *s).to_f64_lossy().clamp(CDF_CLIP, 1.0 - CDF_CLIP);
            *s = T::lit(normal.inverse_cdf(p));
        }
        Ok(out)
    }

    pub fn transform_all(&self, data: &[FeatureVector<T>]) -> Result<Vec<FeatureVector<T>>, FeatureError> {
        data.iter().map(|v| self.transform(v)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{QT_HEADER} n_quantiles={}\n", self.n_quantiles);
        for (name, refs) in SCALAR_NAMES.iter().zip(&self.references) {
            out.push_str(name);
            for v in refs {
                write!(out, " {}", v.to_f64_lossy()).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, FeatureError> {
        let err = |line: usize, msg: String| FeatureError::Parse { line, msg };
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        let nq = header
            .strip_prefix(QT_HEADER)
            .and_then(|r| r.trim().strip_prefix("n_quantiles="))
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| err(1, format!("expected `{QT_HEADER} n_quantiles=<k>`")))?;
        let mut references = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut parts = line.split_whitespace();
            let name = parts.next().unwrap_or("");
            if name != SCALAR_NAMES.get(i).copied().unwrap_or("") {
                return Err(err(i + 2, format!("unexpected feature `{name}`")));
            }
            let vals = parts
                .map(|p| p.parse::<f64>().map(T::lit).map_err(|_| err(i + 2, format!("bad number `{p}`"))))
                .collect::<Result<Vec<T>, _>>()?;
            if vals.len() < 2 {
                return Err(err(i + 2, "need at least two quantiles".into()));
            }
            references.push(vals);
        }
        if references.len() != N_SCALARS {
            return Err(err(1, format!("expected {N_SCALARS} feature rows, found {}", references.len())));
        }
        Ok(QuantileTransformer { n_quantiles: nq, references })
    }
}

/// Preprocessing applied before classification.
#[derive(Debug, Clone, PartialEq)]
pub enum Scaling<T> {
    Quantile(QuantileTransformer<T>),
    /// Raw features, kept for ablation runs.
    PassThrough,
}

impl<T: Real> Scaling<T> {
    pub fn apply(&self, fv: &FeatureVector<T>) -> Result<FeatureVector<T>, FeatureError> {
        match self {
            Scaling::Quantile(qt) => qt.transform(fv),
            Scaling::PassThrough => Ok(*fv),
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            Scaling::Quantile(qt) => qt.to_text(),
            Scaling::PassThrough => format!("{QT_HEADER} passthrough\n"),
        }
    }

    pub fn from_text(text: &str) -> Result<Self, FeatureError> {
        if text.lines().next().map(str::trim) == Some(&format!("{QT_HEADER} passthrough")) {
            return Ok(Scaling::PassThrough);
        }
        QuantileTransformer::from_text(text).map(Scaling::Quantile)
    }
}

/// A classifier over raw feature rows that scales each row first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledClassifier<T, C> {
    pub scaling: Scaling<T>,
    pub inner: C,
}

impl<T: Real, C: Classifier<T>> Classifier<T> for ScaledClassifier<T, C> {
    fn predict(&self, x: &[T]) -> usize {
        let fv = self.scaling.apply(&FeatureVector::from_array(x)).expect("fitted scaling");
        self.inner.predict(&fv.to_array())
    }

    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }
}

/// Raw feature matrix of `records`.
pub fn feature_matrix<T: Real>(records: &[ProfileRecord]) -> Samples<T> {
    let rows: Vec<[T; N_FEATURES]> = records.iter().map(|r| extract::<T>(r).to_array()).collect();
    Samples::from_rows(&rows)
}

/// Fits the scaling on the rows of `x` (a raw feature matrix).
pub fn fit_scaling<T: Real>(x: &Samples<T>, quantile: bool, n_quantiles: usize) -> Result<Scaling<T>, FeatureError> {
    if !quantile {
        return Ok(Scaling::PassThrough);
    }
    let fvs: Vec<FeatureVector<T>> = x.rows().map(FeatureVector::from_array).collect();
    Ok(Scaling::Quantile(QuantileTransformer::fit(&fvs, n_quantiles)?))
}

/// Applies `scaling` to every row of a raw feature matrix.
pub fn scale_matrix<T: Real>(scaling: &Scaling<T>, x: &Samples<T>) -> Result<Samples<T>, FeatureError> {
    let rows = x
        .rows()
        .map(|r| scaling.apply(&FeatureVector::from_array(r)).map(|v| v.to_array()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Samples::from_rows(&rows))
}

pub fn format_dataset_csv(records: &[ProfileRecord], labels: &[usize]) -> String {
    let mut out = String::with_capacity(90 * (records.len() + 2));
    out.push_str(DATASET_FORMAT);
    out.push('\n');
    out.push_str(PROFILE_HEADER);
    out.push_str(",label\n");
    for (r, l) in records.iter().zip(labels) {
        format_record_fields(r, &mut out);
        writeln!(out, ",{l}").unwrap();
    }
    out
}

pub fn parse_dataset_csv(text: &str) -> Result<(Vec<ProfileRecord>, Vec<usize>), FeatureError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == DATASET_FORMAT => {}
        _ => return Err(FeatureError::Parse { line: 1, msg: format!("expected `{DATASET_FORMAT}`") }),
    }
    let want = format!("{PROFILE_HEADER},label");
    match lines.next() {
        Some((_, h)) if h.trim() == want => {}
        _ => return Err(FeatureError::Parse { line: 2, msg: format!("expected column header `{want}`") }),
    }
    let (mut recs, mut labels) = (Vec::new(), Vec::new());
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| FeatureError::Parse { line: idx + 1, msg };
        let fields: Vec<&str> = line.split(',').collect();
        let (label, rest) = fields.split_last().ok_or_else(|| err("empty row".into()))?;
        recs.push(parse_record_fields(rest).map_err(err)?);
        labels.push(label.parse().map_err(|_| err(format!("bad label `{label}`")))?);
    }
    Ok((recs, labels))
}

pub fn write_dataset_csv(records: &[ProfileRecord], labels: &[usize], path: &Path) -> Result<(), FeatureError> {
    fs::write(path, format_dataset_csv(records, labels))?;
    Ok(())
}

pub fn read_dataset_csv(path: &Path) -> Result<(Vec<ProfileRecord>, Vec<usize>), FeatureError> {
    parse_dataset_csv(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{Instruction, SubOp};
    use num_rational::Ratio;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(op1: u32, prev_op1: u32) -> ProfileRecord {
        ProfileRecord {
            instr: Instruction::new(OpKind::Logical, SubOp::Xor, op1, 7),
            prev_kind: OpKind::Arith,
            prev_subop: SubOp::Add,
            prev_op1,
            prev_op2: 7,
            prev_output: 99,
            delay: 12,
        }
    }

    #[test]
    fn one_hot_codes() {
        assert_eq!(one_hot(OpKind::Arith), [true, false, false, false]);
        assert_eq!(one_hot(OpKind::ArithImm), [false, true, false, false]);
        assert_eq!(one_hot(OpKind::Logical), [false, false, true, false]);
        assert_eq!(one_hot(OpKind::MulDiv), [false, false, false, true]);
        for (i, a) in OpKind::ALL.iter().enumerate() {
            assert_eq!(one_hot(*a).iter().filter(|&&b| b).count(), 1);
            for b in &OpKind::ALL[i + 1..] {
                assert_ne!(one_hot(*a), one_hot(*b));
            }
        }
    }

    #[test]
    fn extract_xors_history() {
        let v: FeatureVector<f64> = extract(&record(0xFFFF_0000, 0x0000_FFFF));
        assert_eq!(v.scalars[2], 0xFFFF_FFFFu32 as f64);
        assert_eq!(v.scalars[3], 0.0);
        assert_eq!(v.scalars[4], 99.0);
        let same: FeatureVector<f64> = extract(&record(0x1234, 0x1234));
        assert_eq!(same.scalars[2], 0.0);
        let arr = v.to_array();
        assert_eq!(arr.len(), N_FEATURES);
        assert_eq!(&arr[..4], &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn class_boundaries_inclusive_upper() {
        let cfg = DelayClassConfig::<f64>::standard(2, 4000).unwrap();
        assert_eq!(class_of_delay(2200, &cfg).unwrap(), 0);
        assert_eq!(class_of_delay(2201, &cfg).unwrap(), 1);
        assert_eq!(class_of_delay(4000, &cfg).unwrap(), 1);
        assert_eq!(class_of_delay(0, &cfg).unwrap(), 0);
        assert!(matches!(class_of_delay(4001, &cfg), Err(FeatureError::DelayAboveWorstCase { .. })));
        let exact = DelayClassConfig::<Ratio<i64>>::standard(2, 4000).unwrap();
        assert_eq!(exact.class_periods(), &[Ratio::from_integer(2200), Ratio::from_integer(4000)]);
    }

    #[test]
    fn invalid_configs() {
        assert!(DelayClassConfig::<f64>::new(vec![], 100).is_err());
        assert!(DelayClassConfig::<f64>::new(vec![0.6, 0.4], 100).is_err());
        assert!(DelayClassConfig::<f64>::new(vec![1.0], 100).is_err());
        assert!(DelayClassConfig::<f64>::standard(5, 100).is_err());
    }

    fn uniform_rows(n: usize, seed: u64) -> Vec<FeatureVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| FeatureVector {
                type_onehot: one_hot(OpKind::ALL[rng.gen_range(0..4)]),
                scalars: [(); 5].map(|_| rng.gen::<u32>() as f64),
            })
            .collect()
    }

    #[test]
    fn median_maps_near_zero_and_onehot_untouched() {
        let rows = uniform_rows(1001, 1);
        let qt = QuantileTransformer::fit(&rows, 1000).unwrap();
        let mut col: Vec<f64> = rows.iter().map(|r| r.scalars[0]).collect();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = col[500];
        let probe = FeatureVector { type_onehot: one_hot(OpKind::MulDiv), scalars: [median; 5] };
        let out = qt.transform(&probe).unwrap();
        assert!(out.scalars[0].abs() < 0.01, "{}", out.scalars[0]);
        assert_eq!(out.type_onehot, probe.type_onehot);
    }

    #[test]
    fn constant_column_is_constant() {
        let mut rows = uniform_rows(200, 2);
        for r in &mut rows {
            r.scalars[4] = 42.0;
        }
        let qt = QuantileTransformer::fit(&rows, 1000).unwrap();
        let outs: Vec<f64> = rows.iter().map(|r| qt.transform(r).unwrap().scalars[4]).collect();
        assert!(outs.iter().all(|&o| o == outs[0]));
        assert_eq!(outs[0], 0.0);
    }

    #[test]
    fn not_fitted_and_persistence() {
        let qt = QuantileTransformer::<f64>::unfitted(1000);
        let v: FeatureVector<f64> = extract(&record(1, 2));
        assert!(matches!(qt.transform(&v), Err(FeatureError::NotFitted)));
        let fitted = QuantileTransformer::fit(&uniform_rows(300, 3), 100).unwrap();
        let back = QuantileTransformer::<f64>::from_text(&fitted.to_text()).unwrap();
        assert_eq!(back, fitted);
        assert!(QuantileTransformer::<f64>::from_text("qtfmt v0 n_quantiles=3\n").is_err());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let recs = vec![record(1, 2), record(0xFFFF_FFFF, 0)];
        let labels = vec![0, 1];
        let (r, l) = parse_dataset_csv(&format_dataset_csv(&recs, &labels)).unwrap();
        assert_eq!((r, l), (recs, labels));
    }

    proptest! {
        #[test]
        fn transform_is_monotone(a in any::<u32>(), b in any::<u32>(), seed in 0u64..4) {
            let qt = QuantileTransformer::fit(&uniform_rows(500, seed), 100).unwrap();
            let fa = FeatureVector { type_onehot: one_hot(OpKind::Arith), scalars: [a as f64; 5] };
            let fb = FeatureVector { type_onehot: one_hot(OpKind::Arith), scalars: [b as f64; 5] };
            let (ta, tb) = (qt.transform(&fa).unwrap(), qt.transform(&fb).unwrap());
            for f in 0..N_SCALARS {
                if a <= b {
                    prop_assert!(ta.scalars[f] <= tb.scalars[f]);
                } else {
                    prop_assert!(ta.scalars[f] >= tb.scalars[f]);
                }
            }
        }
    }
}
