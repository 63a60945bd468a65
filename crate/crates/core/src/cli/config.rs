//! Run configuration: one TOML document covering every stage.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::codegen::FixedPointSpec;
use crate::hwcost::UnitCosts;
use crate::isa::{OpMix, OperandDist};
use crate::ml::{NnGrid, RfGrid, SvmGrid};
use crate::netlist::GateDelays;
use crate::pipeline::PowerMode;

/// The configuration shipped with the tool.
pub const DEFAULT_CONFIG: &str = include_str!("../../config/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub out: PathBuf,
    /// Class configurations to run (2, 3 and/or 4).
    pub classes: Vec<usize>,
    pub exec_unit: ExecUnitConfig,
    pub dataset: DatasetConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub grid: GridConfig,
    pub codegen: FixedPointSpec,
    pub pipeline: PipelineSection,
    pub energy: EnergySection,
    pub hwcost: UnitCosts,
    pub workloads: Vec<WorkloadConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExecUnitConfig {
    pub width: u32,
    pub mul_width: u32,
    pub delays: GateDelays,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_per_class: usize,
    pub mix: OpMix,
    pub operand_dists: Vec<OperandDist>,
    pub max_attempts: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingKind {
    Quantile,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub scaling: ScalingKind,
    pub n_quantiles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub folds: usize,
    /// Support-weighted F1 instead of the unweighted class mean.
    pub weighted_f1: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Rf,
    Nn,
    Svm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub families: Vec<Family>,
    /// Class configurations searched; a subset of the top-level list.
    pub classes: Vec<usize>,
    /// Rows used for the MLP and SVM searches (stratified subsample);
    /// 0 means all.
    pub max_rows_nn_svm: usize,
    pub rf: RfGrid,
    pub nn: NnGrid,
    pub svm: SvmGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub penalty_cycles: u32,
    /// Defaults to the worst-case period.
    pub reexec_period_ps: Option<u64>,
    pub switch_latency_ps: u64,
    pub ml_flush_cost_ps: u64,
    pub power_series_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergySection {
    pub p_baseline_w: f64,
    pub p_ml_w: f64,
    pub power: PowerMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub name: String,
    pub count: usize,
    pub mix: OpMix,
    pub operand_dist: OperandDist,
    /// Combined with the master seed.
    #[serde(default)]
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let wl = |name: &str, mix: [f64; 4], operand_dist, seed| WorkloadConfig {
            name: name.into(),
            count: 20_000,
            mix: OpMix(mix),
            operand_dist,
            seed,
        };
        RunConfig {
            seed: 2024,
            out: PathBuf::from("out"),
            classes: vec![2, 3, 4],
            exec_unit: ExecUnitConfig::default(),
            dataset: DatasetConfig::default(),
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            grid: GridConfig::default(),
            codegen: FixedPointSpec::default(),
            pipeline: PipelineSection::default(),
            energy: EnergySection::default(),
            hwcost: UnitCosts::default(),
            workloads: vec![
                wl("random", [0.25, 0.25, 0.25, 0.25], OperandDist::Uniform32, 1),
                wl("arith", [0.5, 0.3, 0.1, 0.1], OperandDist::SmallMagnitude, 2),
                wl("logic", [0.2, 0.1, 0.6, 0.1], OperandDist::Uniform32, 3),
                wl("sparse", [0.3, 0.2, 0.3, 0.2], OperandDist::SparseBits, 4),
                wl("multiply", [0.3, 0.1, 0.2, 0.4], OperandDist::SmallMagnitude, 5),
            ],
        }
    }
}

impl Default for ExecUnitConfig {
    fn default() -> Self {
        ExecUnitConfig { width: 32, mul_width: 16, delays: GateDelays::default() }
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_per_class: 3000,
            mix: OpMix::uniform(),
            operand_dists: vec![OperandDist::Uniform32, OperandDist::SmallMagnitude, OperandDist::SparseBits],
            max_attempts: 20_000_000,
        }
    }
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { scaling: ScalingKind::Quantile, n_quantiles: 1000 }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { n_estimators: 50, max_depth: 20, folds: 5, weighted_f1: false }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            families: vec![Family::Rf],
            classes: vec![2],
            max_rows_nn_svm: 1500,
            rf: RfGrid::default(),
            nn: NnGrid::default(),
            svm: SvmGrid::default(),
        }
    }
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            penalty_cycles: 4,
            reexec_period_ps: None,
            switch_latency_ps: 0,
            ml_flush_cost_ps: 0,
            power_series_stride: 1000,
        }
    }
}

impl Default for EnergySection {
    fn default() -> Self {
        EnergySection { p_baseline_w: 1.0, p_ml_w: 0.02, power: PowerMode::FrequencyProportional }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Checks cross-field constraints serde cannot express.
    pub fn validate(&self) -> Result<(), String> {
        if self.classes.is_empty() {
            return Err("`classes` is empty".into());
        }
        if let Some(c) = self.classes.iter().find(|c| !(2..=4).contains(*c)) {
            return Err(format!("class count {c} not in 2..=4"));
        }
        if let Some(c) = self.grid.classes.iter().find(|c| !self.classes.contains(c)) {
            return Err(format!("grid class count {c} is not listed in `classes`"));
        }
        if self.train.folds < 2 {
            return Err("`train.folds` must be at least 2".into());
        }
        if self.workloads.is_empty() {
            return Err("no workloads configured".into());
        }
        let mut names: Vec<&str> = self.workloads.iter().map(|w| w.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err("workload names must be unique".into());
        }
        if let Some(w) = self.workloads.iter().find(|w| w.name.is_empty() || !w.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')) {
            return Err(format!("workload name `{}` must be nonempty [A-Za-z0-9_-]", w.name));
        }
        Ok(())
    }
}
