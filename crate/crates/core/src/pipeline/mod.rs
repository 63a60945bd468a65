//! Execution-stage-bound model of an adaptively clocked pipeline.
//!
//! The baseline runs every instruction at the worst-case period. The adaptive
//! pipeline clocks each instruction at the period of its predicted delay
//! class; a result that has not settled by then is caught by the shadow
//! sample and the instruction is re-executed at the worst-case clock.

pub mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{class_of_delay, extract, DelayClassConfig, FeatureError, Scaling};
use crate::isa::Trace;
use crate::ml::Classifier;
use crate::netlist::Picos;
use crate::oracle::ProfileRecord;
use crate::scalar::{Real, Scalar};

pub use report::{format_power_series_csv, render_report, report_document, summarize, BenchmarkResult, Spread, Summary};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("profile has {profile} records but trace has {trace} instructions")]
    Length { trace: usize, profile: usize },
    #[error("profile record {index} does not match trace instruction {index}")]
    Misaligned { index: usize },
    #[error("instruction {index}: predicted class {class} but only {n_classes} classes exist")]
    ClassOutOfRange { index: usize, class: usize, n_classes: usize },
    #[error("instruction {index}: delay {delay} ps exceeds the {reexec} ps re-execution period")]
    UncaughtViolation { index: usize, delay: Picos, reexec: Picos },
    #[error("invalid energy model: {0}")]
    Energy(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig<T> {
    pub classes: DelayClassConfig<T>,
    /// Cycles charged per caught violation (fetch, decode, ML, execute).
    pub penalty_cycles: u32,
    /// Clock period of the penalty cycles.
    pub reexec_period: Picos,
    /// Static delay of the ML stage; reported, and checked against the
    /// fastest class period.
    pub ml_stage_delay: Picos,
    /// Time lost whenever consecutive instructions use different clocks.
    pub switch_latency: Picos,
    /// Extra time per violation for refilling the added pipeline stage.
    pub ml_flush_cost: Picos,
    /// Stride of the per-instruction power series; 0 disables it.
    pub power_series_stride: usize,
}

impl<T: Scalar> PipelineConfig<T> {
    pub fn new(classes: DelayClassConfig<T>) -> Self {
        let t_wc = classes.t_wc();
        PipelineConfig {
            classes,
            penalty_cycles: 4,
            reexec_period: t_wc,
            ml_stage_delay: 0,
            switch_latency: 0,
            ml_flush_cost: 0,
            power_series_stride: 0,
        }
    }

    /// Whether the ML stage settles within the fastest class period.
    pub fn ml_stage_fits(&self) -> bool {
        T::from_u64_lossy(self.ml_stage_delay) <= self.classes.class_periods()[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "watts")]
pub enum PowerMode {
    /// Power scales with clock frequency: `p_baseline * t_wc / period`.
    FrequencyProportional,
    /// Explicit watts per class, fastest first.
    Table(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel<T> {
    /// Power at the worst-case clock; also the power of re-execution.
    pub p_baseline: T,
    /// Power drawn by the ML stage for the whole run.
    pub p_ml: T,
    pub mode: PowerMode,
}

impl<T: Scalar> EnergyModel<T> {
    pub fn frequency_proportional(p_baseline: T, p_ml: T) -> Self {
        EnergyModel { p_baseline, p_ml, mode: PowerMode::FrequencyProportional }
    }

    pub fn power_per_class(&self, classes: &DelayClassConfig<T>) -> Result<Vec<T>, PipelineError> {
        let t_wc = T::from_u64_lossy(classes.t_wc());
        match &self.mode {
            PowerMode::FrequencyProportional => {
                Ok(classes.class_periods().iter().map(|&p| self.p_baseline * t_wc / p).collect())
            }
            PowerMode::Table(w) if w.len() == classes.n_classes() => Ok(w.iter().map(|&v| T::from_f64_lossy(v)).collect()),
            PowerMode::Table(w) => Err(PipelineError::Energy(format!(
                "power table has {} entries for {} classes",
                w.len(),
                classes.n_classes()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult<T> {
    pub n_instructions: usize,
    pub violations: u64,
    pub time_practical: T,
    pub time_nopenalty: T,
    pub time_ideal: T,
    pub time_baseline: T,
    pub speedup_practical: T,
    pub speedup_nopenalty: T,
    pub speedup_ideal: T,
    pub energy: T,
    pub energy_baseline: T,
    pub energy_overhead_pct: f64,
    pub power_overhead_pct: f64,
    /// Instructions per predicted class.
    pub predicted_histogram: Vec<u64>,
    /// `(instructions so far, power overhead in watts averaged so far)`.
    pub power_series: Vec<(usize, f64)>,
}

/// Maps a profiled instruction to a delay class.
pub trait Predictor {
    fn predict(&mut self, record: &ProfileRecord) -> usize;
}

impl<F: FnMut(&ProfileRecord) -> usize> Predictor for F {
    fn predict(&mut self, record: &ProfileRecord) -> usize {
        self(record)
    }
}

/// Knows every true class.
pub struct Perfect<'a, T>(pub &'a DelayClassConfig<T>);

impl<T: Scalar> Predictor for Perfect<'_, T> {
    fn predict(&mut self, r: &ProfileRecord) -> usize {
        class_of_delay(r.delay, self.0).unwrap_or(self.0.slowest())
    }
}

/// Always the worst-case clock.
pub struct AlwaysSlowest(pub usize);

impl Predictor for AlwaysSlowest {
    fn predict(&mut self, _: &ProfileRecord) -> usize {
        self.0
    }
}

pub struct Constant(pub usize);

impl Predictor for Constant {
    fn predict(&mut self, _: &ProfileRecord) -> usize {
        self.0
    }
}

/// Feature extraction, scaling and a trained classifier, as the ML stage
/// would run them.
pub struct ModelPredictor<'a, R, C> {
    pub scaling: &'a Scaling<R>,
    pub model: &'a C,
}

impl<R: Real, C: Classifier<R>> Predictor for ModelPredictor<'_, R, C> {
    fn predict(&mut self, r: &ProfileRecord) -> usize {
        let fv = self.scaling.apply(&extract::<R>(r)).expect("fitted scaling");
        self.model.predict(&fv.to_array())
    }
}

/// `n * t_wc`.
pub fn baseline_time<T: Scalar>(trace: &Trace, classes: &DelayClassConfig<T>) -> T {
    T::from_usize(trace.instructions.len()).unwrap() * T::from_u64_lossy(classes.t_wc())
}

fn speedup<T: Scalar>(baseline: T, t: T) -> T {
    if t == T::zero() {
        T::one()
    } else {
        baseline / t
    }
}

fn pct<T: Scalar>(x: T, base: T) -> f64 {
    if base == T::zero() {
        0.0
    } else {
        ((x - base) / base).to_f64_lossy() * 100.0
    }
}

/// Runs `predictor` over a profiled trace.
pub fn simulate<T: Scalar, P: Predictor + ?Sized>(
    trace: &Trace,
    profile: &[ProfileRecord],
    predictor: &mut P,
    pc: &PipelineConfig<T>,
    em: &EnergyModel<T>,
) -> Result<SimResult<T>, PipelineError> {
    if trace.instructions.len() != profile.len() {
        return Err(PipelineError::Length { trace: trace.instructions.len(), profile: profile.len() });
    }
    if let Some(index) = trace.instructions.iter().zip(profile).position(|(i, r)| *i != r.instr) {
        return Err(PipelineError::Misaligned { index });
    }
    let predicted: Vec<usize> = profile.iter().map(|r| predictor.predict(r)).collect();
    simulate_classes(profile, &predicted, pc, em)
}

/// Accounting for given per-instruction class choices.
pub fn simulate_classes<T: Scalar>(
    profile: &[ProfileRecord],
    predicted: &[usize],
    pc: &PipelineConfig<T>,
    em: &EnergyModel<T>,
) -> Result<SimResult<T>, PipelineError> {
    if predicted.len() != profile.len() {
        return Err(PipelineError::Length { trace: predicted.len(), profile: profile.len() });
    }
    let classes = &pc.classes;
    let n_classes = classes.n_classes();
    let periods = classes.class_periods();
    let power = em.power_per_class(classes)?;
    let t_wc = T::from_u64_lossy(classes.t_wc());
    let reexec = T::from_u32(pc.penalty_cycles).unwrap() * T::from_u64_lossy(pc.reexec_period);
    let per_violation = reexec + T::from_u64_lossy(pc.ml_flush_cost);
    let switch = T::from_u64_lossy(pc.switch_latency);

    let zero = T::zero();
    let (mut t_prac, mut t_nopen, mut t_ideal) = (zero, zero, zero);
    let mut energy_classes = zero;
    let mut energy_reexec = zero;
    let mut violations = 0u64;
    let mut hist = vec![0u64; n_classes];
    let mut series = Vec::new();
    let (mut prev_pred, mut prev_true) = (None, None);

    for (i, (r, &c)) in profile.iter().zip(predicted).enumerate() {
        if c >= n_classes {
            return Err(PipelineError::ClassOutOfRange { index: i, class: c, n_classes });
        }
        let truth = class_of_delay(r.delay, classes)?;
        hist[c] += 1;
        let p = periods[c];
        let sw = if prev_pred.is_some_and(|q| q != c) { switch } else { zero };
        let sw_true = if prev_true.is_some_and(|q| q != truth) { switch } else { zero };
        prev_pred = Some(c);
        prev_true = Some(truth);

        t_prac = t_prac + p + sw;
        energy_classes = energy_classes + power[c] * (p + sw);
        if T::from_u64_lossy(r.delay) > p {
            if r.delay > pc.reexec_period {
                return Err(PipelineError::UncaughtViolation { index: i, delay: r.delay, reexec: pc.reexec_period });
            }
            violations += 1;
            t_prac = t_prac + per_violation;
            t_nopen = t_nopen + p + sw + per_violation;
            energy_reexec = energy_reexec + em.p_baseline * per_violation;
        } else if c > truth {
            t_nopen = t_nopen + periods[truth] + sw;
        } else {
            t_nopen = t_nopen + p + sw;
        }
        t_ideal = t_ideal + periods[truth] + sw_true;

        if pc.power_series_stride > 0 && (i + 1) % pc.power_series_stride == 0 {
            let e = energy_classes + energy_reexec + em.p_ml * t_prac;
            let avg = (e / t_prac).to_f64_lossy() - em.p_baseline.to_f64_lossy();
            series.push((i + 1, avg));
        }
    }

    let n = profile.len();
    let time_baseline = T::from_usize(n).unwrap() * t_wc;
    let energy = energy_classes + energy_reexec + em.p_ml * t_prac;
    let energy_baseline = em.p_baseline * time_baseline;
    let power_overhead_pct = if t_prac == zero { 0.0 } else { pct(energy / t_prac, em.p_baseline) };
    Ok(SimResult {
        n_instructions: n,
        violations,
        time_practical: t_prac,
        time_nopenalty: t_nopen,
        time_ideal: t_ideal,
        time_baseline,
        speedup_practical: speedup(time_baseline, t_prac),
        speedup_nopenalty: speedup(time_baseline, t_nopen),
        speedup_ideal: speedup(time_baseline, t_ideal),
        energy,
        energy_baseline,
        energy_overhead_pct: pct(energy, energy_baseline),
        power_overhead_pct,
        predicted_histogram: hist,
        power_series: series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{Instruction, OpKind, SubOp};
    use num_rational::Ratio;

    type Q = Ratio<i64>;

    fn rec(delay: Picos) -> ProfileRecord {
        ProfileRecord {
            instr: Instruction { kind: OpKind::Arith, subop: SubOp::Add, op1: delay as u32, op2: 0 },
            prev_kind: OpKind::Arith,
            prev_subop: SubOp::Add,
            prev_op1: 0,
            prev_op2: 0,
            prev_output: 0,
            delay,
        }
    }

    fn trace_of(p: &[ProfileRecord]) -> Trace {
        Trace { instructions: p.iter().map(|r| r.instr).collect(), seed: 0 }
    }

    fn two_class() -> PipelineConfig<Q> {
        PipelineConfig::new(DelayClassConfig::standard(2, 4000).unwrap())
    }

    fn em() -> EnergyModel<Q> {
        EnergyModel::frequency_proportional(Q::from_integer(1), Q::from_integer(0))
    }

    #[test]
    fn all_fast_predicted_fast() {
        let prof: Vec<_> = (0..10).map(|i| rec(1000 + i)).collect();
        let r = simulate(&trace_of(&prof), &prof, &mut Constant(0), &two_class(), &em()).unwrap();
        assert_eq!(r.speedup_practical, Q::new(40, 22));
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn slow_predicted_fast_pays_penalty() {
        let prof = vec![rec(3000)];
        let r = simulate(&trace_of(&prof), &prof, &mut Constant(0), &two_class(), &em()).unwrap();
        assert_eq!(r.time_practical, Q::from_integer(2200 + 4 * 4000));
        assert_eq!(r.speedup_practical, Q::new(4000, 18200));
        assert_eq!(r.violations, 1);
    }

    #[test]
    fn perfect_and_slowest_anchors() {
        let prof: Vec<_> = [100, 2200, 2201, 4000, 5, 3999].iter().map(|&d| rec(d)).collect();
        let pc = two_class();
        let t = trace_of(&prof);
        let perfect = simulate(&t, &prof, &mut Perfect(&pc.classes), &pc, &em()).unwrap();
        assert_eq!(perfect.speedup_practical, perfect.speedup_ideal);
        assert_eq!(perfect.energy, perfect.energy_baseline);
        let slow = simulate(&t, &prof, &mut AlwaysSlowest(1), &pc, &em()).unwrap();
        assert_eq!(slow.speedup_practical, Q::from_integer(1));
        assert_eq!(slow.violations, 0);
        assert_eq!(slow.time_practical, baseline_time(&t, &pc.classes));
    }

    #[test]
    fn baseline_examples() {
        let cfg = DelayClassConfig::<Q>::standard(2, 4000).unwrap();
        assert_eq!(baseline_time(&Trace::default(), &cfg), Q::from_integer(0));
        let prof: Vec<_> = (0..10).map(rec).collect();
        assert_eq!(baseline_time(&trace_of(&prof), &cfg), Q::from_integer(40_000));
    }

    #[test]
    fn errors() {
        let prof = vec![rec(10), rec(20)];
        let pc = two_class();
        let t = trace_of(&prof);
        assert!(matches!(simulate(&t, &prof[..1], &mut Constant(0), &pc, &em()), Err(PipelineError::Length { .. })));
        let mut shuffled = prof.clone();
        shuffled.swap(0, 1);
        assert!(matches!(simulate(&t, &shuffled, &mut Constant(0), &pc, &em()), Err(PipelineError::Misaligned { index: 0 })));
        assert!(matches!(simulate(&t, &prof, &mut Constant(2), &pc, &em()), Err(PipelineError::ClassOutOfRange { .. })));
        let bad = EnergyModel { mode: PowerMode::Table(vec![1.0]), ..em() };
        assert!(simulate(&t, &prof, &mut Constant(0), &pc, &bad).is_err());
    }

    #[test]
    fn ml_power_costs_energy() {
        let prof: Vec<_> = (0..20).map(|i| rec(i * 190)).collect();
        let pc = two_class();
        let em = EnergyModel::frequency_proportional(Q::from_integer(1), Q::new(1, 20));
        let r = simulate(&trace_of(&prof), &prof, &mut Perfect(&pc.classes), &pc, &em).unwrap();
        assert!(r.energy_overhead_pct > 0.0);
    }

    #[test]
    fn switch_latency_and_series() {
        let prof: Vec<_> = [100, 3000, 100, 3000].iter().map(|&d| rec(d)).collect();
        let mut pc = two_class();
        pc.switch_latency = 50;
        pc.power_series_stride = 2;
        let r = simulate(&trace_of(&prof), &prof, &mut Perfect(&pc.classes), &pc, &em()).unwrap();
        assert_eq!(r.time_practical, Q::from_integer(2 * 2200 + 2 * 4000 + 3 * 50));
        assert_eq!(r.power_series.len(), 2);
        assert_eq!(r.power_series[1].0, 4);
    }
}
