//! Per-instruction adaptive clocking: a gate-level execution unit with a
//! timing oracle, delay-class features and classifiers, a forest-to-netlist
//! compiler, and a pipeline model that turns predictions into speedup,
//! power and energy figures.
//!
//! The numeric core is generic over [`scalar::Scalar`] (accounting) and
//! [`scalar::Real`] (learning); the aliases below fix the common choices.

pub mod cli;
pub mod codegen;
pub mod features;
pub mod hwcost;
pub mod isa;
pub mod ml;
pub mod netlist;
pub mod oracle;
pub mod pipeline;
pub mod scalar;

use num_rational::Ratio;

/// Exact rational used for class bucketing and cycle accounting.
pub type Exact = Ratio<i64>;

pub type DelayClassConfig64 = features::DelayClassConfig<f64>;
pub type ExactDelayClassConfig = features::DelayClassConfig<Exact>;
pub type QuantileTransformer64 = features::QuantileTransformer<f64>;
pub type Samples64 = ml::Samples<f64>;
pub type RandomForest64 = ml::RandomForest<f64>;
pub type RandomForest32 = ml::RandomForest<f32>;
pub type MlpModel64 = ml::MlpModel<f64>;
pub type SvmModel64 = ml::SvmModel<f64>;
pub type PipelineConfig64 = pipeline::PipelineConfig<f64>;
pub type ExactPipelineConfig = pipeline::PipelineConfig<Exact>;
pub type EnergyModel64 = pipeline::EnergyModel<f64>;
pub type ExactEnergyModel = pipeline::EnergyModel<Exact>;
pub type SimResult64 = pipeline::SimResult<f64>;
pub type ExactSimResult = pipeline::SimResult<Exact>;
