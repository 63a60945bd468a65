//! One function per pipeline stage. Each reads the artifacts of earlier
//! stages from the output directory and writes its own.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use num_rational::Ratio;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{Family, RunConfig, ScalingKind};
use crate::codegen::{forest_to_netlist, ForestNetlistMeta};
use crate::features::{
    class_of_delay, feature_matrix, fit_scaling, read_dataset_csv, scale_matrix, write_dataset_csv, DelayClassConfig, ScaledClassifier, Scaling,
};
use crate::isa::{gen_balanced_dataset, gen_random_trace, parse_trace_file, write_trace_file, DatasetSpec, WorkloadSpec};
use crate::ml::{
    confusion_matrix, f1_macro, f1_weighted, format_grid_csv, grid_search, kfold_cv, rf_train, GridSpec, MlError, RandomForest, Samples,
};
use crate::netlist::{build_exec_unit, read_netlist_file, write_netlist_file, ExecUnit, Picos};
use crate::pipeline::report::REPORT_FORMAT;
use crate::oracle::{read_profile_csv, write_profile_csv, ExecOracle, ProfileRecord};
use crate::pipeline::{
    format_power_series_csv, render_report, report_document, simulate, simulate_classes, BenchmarkResult, EnergyModel, ModelPredictor,
    PipelineConfig, Predictor,
};

pub const CV_FORMAT: &str = "cvfmt v1";
pub const FOREST_META_FORMAT: &str = "forestmetafmt v1";
pub const RESULTS_FORMAT: &str = "resultsfmt v1";

/// Pipeline stages in execution order.
pub const STAGES: [&str; 8] = ["build-exec-unit", "profile", "dataset", "train", "gridsearch", "codegen", "simulate", "report"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Doc,
}

/// Everything a stage needs: the resolved configuration and where to write.
#[derive(Debug, Clone)]
pub struct StageContext {
    pub cfg: RunConfig,
    pub format: ReportFormat,
}

impl StageContext {
    pub fn out(&self) -> &Path {
        &self.cfg.out
    }

    pub fn exec_unit_path(&self) -> PathBuf {
        self.out().join("exec_unit.net")
    }

    pub fn trace_path(&self, name: &str) -> PathBuf {
        self.out().join("workloads").join(format!("{name}.trace"))
    }

    pub fn profile_path(&self, name: &str) -> PathBuf {
        self.out().join("workloads").join(format!("{name}.profile.csv"))
    }

    pub fn dataset_path(&self, n: usize) -> PathBuf {
        self.out().join(format!("dataset_{n}c.csv"))
    }

    pub fn model_path(&self, n: usize) -> PathBuf {
        self.out().join(format!("model_{n}c.rf"))
    }

    pub fn scaler_path(&self, n: usize) -> PathBuf {
        self.out().join(format!("scaler_{n}c.qt"))
    }

    pub fn cv_path(&self, n: usize) -> PathBuf {
        self.out().join(format!("cv_{n}c.json"))
    }

    pub fn grid_path(&self, family: &str, n: usize) -> PathBuf {
        self.out().join(format!("grid_{family}_{n}c.csv"))
    }

    pub fn forest_net_path(&self, n: usize) -> PathBuf {
        self.out().join(format!("forest_{n}c.net"))
    }

    pub fn forest_meta_path(&self, n: usize) -> PathBuf {
        self.out().join(format!("forest_{n}c.json"))
    }

    pub fn results_path(&self, n: usize) -> PathBuf {
        self.out().join(format!("results_{n}c.json"))
    }

    pub fn power_series_path(&self, name: &str, n: usize) -> PathBuf {
        self.out().join("power_series").join(format!("{name}_{n}c.csv"))
    }

    /// Seed for one named use of the master seed.
    pub fn seed_for(&self, tag: &str, index: u64) -> u64 {
        derive_seed(self.cfg.seed, tag, index)
    }
}

/// splitmix64 over the master seed, an FNV-1a hash of `tag` and `index`.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = master ^ h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fails with a message naming the stage that produces `path`.
fn require(path: &Path, producer: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {producer} artifact `{}`; run the `{producer}` stage first", path.display());
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating `{}`", dir.display()))?;
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing `{}`", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, &text)
}

/// Reads a JSON artifact whose `format` field must equal `format`.
fn read_json<T: DeserializeOwned>(path: &Path, producer: &str, format: &str) -> Result<T> {
    require(path, producer)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading `{}`", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing `{}`", path.display()))?;
    match v.get("format").and_then(|f| f.as_str()) {
        Some(f) if f == format => {}
        found => bail!("`{}`: expected format `{format}`, found {found:?}", path.display()),
    }
    serde_json::from_value(v).with_context(|| format!("decoding `{}`", path.display()))
}

fn load_exec_unit(ctx: &StageContext) -> Result<ExecUnit> {
    let path = ctx.exec_unit_path();
    require(&path, "build-exec-unit")?;
    let n = read_netlist_file(&path).with_context(|| format!("reading `{}`", path.display()))?;
    Ok(ExecUnit::from_netlist(n)?)
}

fn t_wc(unit: &ExecUnit) -> Result<Picos> {
    Ok(unit.netlist.static_longest_path()?)
}

fn load_dataset(ctx: &StageContext, n: usize) -> Result<(Vec<ProfileRecord>, Vec<usize>)> {
    let path = ctx.dataset_path(n);
    require(&path, "dataset")?;
    read_dataset_csv(&path).with_context(|| format!("reading `{}`", path.display()))
}

fn load_model(ctx: &StageContext, n: usize) -> Result<(Scaling<f64>, RandomForest<f64>)> {
    let (mp, sp) = (ctx.model_path(n), ctx.scaler_path(n));
    require(&mp, "train")?;
    require(&sp, "train")?;
    let model = RandomForest::from_text(&fs::read_to_string(&mp)?).with_context(|| format!("reading `{}`", mp.display()))?;
    let scaling = Scaling::from_text(&fs::read_to_string(&sp)?).with_context(|| format!("reading `{}`", sp.display()))?;
    if model.n_classes != n {
        bail!("`{}` holds a {}-class model", mp.display(), model.n_classes);
    }
    Ok((scaling, model))
}

fn pipeline_config(ctx: &StageContext, classes: DelayClassConfig<f64>, ml_stage_delay: Picos) -> PipelineConfig<f64> {
    let p = &ctx.cfg.pipeline;
    let mut pc = PipelineConfig::new(classes);
    pc.penalty_cycles = p.penalty_cycles;
    if let Some(r) = p.reexec_period_ps {
        pc.reexec_period = r;
    }
    pc.switch_latency = p.switch_latency_ps;
    pc.ml_flush_cost = p.ml_flush_cost_ps;
    pc.power_series_stride = p.power_series_stride;
    pc.ml_stage_delay = ml_stage_delay;
    pc
}

fn energy_model(ctx: &StageContext) -> EnergyModel<f64> {
    let e = &ctx.cfg.energy;
    EnergyModel { p_baseline: e.p_baseline_w, p_ml: e.p_ml_w, mode: e.power.clone() }
}

fn ml_err(e: impl std::fmt::Display) -> MlError {
    MlError::Hyper(e.to_string())
}

/// Writes `exec_unit.net`.
pub fn build_exec_unit_stage(ctx: &StageContext) -> Result<()> {
    let e = &ctx.cfg.exec_unit;
    let unit = build_exec_unit(e.width, e.mul_width, e.delays)?;
    let path = ctx.exec_unit_path();
    ensure_parent(&path)?;
    write_netlist_file(&unit.netlist, &path)?;
    info!("exec unit: {} gates, static longest path {} ps", unit.netlist.gate_count(), t_wc(&unit)?);
    Ok(())
}

/// Generates each workload trace and its delay profile.
pub fn profile_stage(ctx: &StageContext) -> Result<()> {
    let unit = load_exec_unit(ctx)?;
    let oracle = ExecOracle::new(&unit)?;
    for (i, w) in ctx.cfg.workloads.iter().enumerate() {
        let spec = WorkloadSpec {
            count: w.count,
            mix: w.mix,
            operand_dist: w.operand_dist,
            seed: ctx.seed_for("workload", w.seed.wrapping_add(i as u64)),
        };
        let trace = gen_random_trace(&spec).with_context(|| format!("workload `{}`", w.name))?;
        let profile = oracle.profile_trace(&trace)?;
        ensure_parent(&ctx.trace_path(&w.name))?;
        write_trace_file(&trace, &ctx.trace_path(&w.name))?;
        write_profile_csv(&profile, &ctx.profile_path(&w.name))?;
        info!("workload {}: {} instructions profiled", w.name, trace.len());
    }
    Ok(())
}

/// Builds one class-balanced dataset per class configuration.
pub fn dataset_stage(ctx: &StageContext) -> Result<()> {
    let unit = load_exec_unit(ctx)?;
    let t_wc = t_wc(&unit)?;
    let oracle = ExecOracle::new(&unit)?;
    let d = &ctx.cfg.dataset;
    for &n in &ctx.cfg.classes {
        let classes = DelayClassConfig::<Ratio<i64>>::standard(n, t_wc)?;
        let spec = DatasetSpec {
            n_per_class: d.n_per_class,
            mix: d.mix,
            operand_dists: d.operand_dists.clone(),
            seed: ctx.seed_for("dataset", n as u64),
            max_attempts: d.max_attempts,
        };
        let ds = gen_balanced_dataset(&spec, &classes, |p, c| oracle.record(p, c).expect("stimulus built from the unit's own layout"))
            .with_context(|| format!("{n}-class dataset"))?;
        write_dataset_csv(&ds.records, &ds.labels, &ctx.dataset_path(n))?;
        info!("dataset {n}c: {} records", ds.records.len());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub format: String,
    pub classes: usize,
    pub folds: usize,
    pub n_estimators: usize,
    pub max_depth: usize,
    pub f1_average: String,
    pub fold_f1: Vec<f64>,
    pub mean_f1: f64,
    /// `[true][predicted]`, summed over folds.
    pub confusion: Vec<Vec<u64>>,
}

fn train_scaled_rf(
    xt: &Samples<f64>,
    yt: &[usize],
    n: usize,
    ctx: &StageContext,
    seed: u64,
) -> std::result::Result<ScaledClassifier<f64, RandomForest<f64>>, MlError> {
    let f = &ctx.cfg.features;
    let t = &ctx.cfg.train;
    let scaling = fit_scaling(xt, f.scaling == ScalingKind::Quantile, f.n_quantiles).map_err(ml_err)?;
    let xs = scale_matrix(&scaling, xt).map_err(ml_err)?;
    let inner = rf_train(&xs, yt, n, t.n_estimators, t.max_depth, seed)?;
    Ok(ScaledClassifier { scaling, inner })
}

/// Cross-validates the configured forest, then fits the final model and
/// scaler on the whole dataset.
pub fn train_stage(ctx: &StageContext) -> Result<()> {
    let t = &ctx.cfg.train;
    for &n in &ctx.cfg.classes {
        let (records, y) = load_dataset(ctx, n)?;
        let x = feature_matrix::<f64>(&records);
        let seed = ctx.seed_for("train", n as u64);
        let cv = kfold_cv(|xt, yt, s| train_scaled_rf(xt, yt, n, ctx, s), &x, &y, n, t.folds, seed, t.weighted_f1)?;
        info!("train {n}c: mean F1 {:.4} over {} folds ({:.1} s)", cv.mean_f1, t.folds, cv.wall_time_s);
        let final_model = train_scaled_rf(&x, &y, n, ctx, seed)?;
        write(&ctx.model_path(n), &final_model.inner.to_text())?;
        write(&ctx.scaler_path(n), &final_model.scaling.to_text())?;
        write_json(
            &ctx.cv_path(n),
            &CvSummary {
                format: CV_FORMAT.into(),
                classes: n,
                folds: t.folds,
                n_estimators: t.n_estimators,
                max_depth: t.max_depth,
                f1_average: if t.weighted_f1 { "weighted" } else { "macro" }.into(),
                fold_f1: cv.fold_f1,
                mean_f1: cv.mean_f1,
                confusion: cv.confusion,
            },
        )?;
    }
    Ok(())
}

/// Keeps at most `max_rows` rows, the same number from each class, in
/// dataset order.
fn stratified_head(y: &[usize], n_classes: usize, max_rows: usize) -> Vec<usize> {
    if max_rows == 0 || max_rows >= y.len() {
        return (0..y.len()).collect();
    }
    let per = (max_rows / n_classes).max(1);
    let mut taken = vec![0usize; n_classes];
    (0..y.len())
        .filter(|&i| {
            let keep = taken[y[i]] < per;
            taken[y[i]] += keep as usize;
            keep
        })
        .collect()
}

/// Hyperparameter search per configured family and class count.
pub fn gridsearch_stage(ctx: &StageContext) -> Result<()> {
    let unit = load_exec_unit(ctx)?;
    let t_wc = t_wc(&unit)?;
    let g = &ctx.cfg.grid;
    let em = energy_model(ctx);
    for &n in &g.classes {
        let (records, y) = load_dataset(ctx, n)?;
        let pc = pipeline_config(ctx, DelayClassConfig::standard(n, t_wc)?, 0);
        for &family in &g.families {
            let (spec, rows) = match family {
                Family::Rf => (GridSpec::Rf(g.rf.clone()), (0..y.len()).collect()),
                Family::Nn => (GridSpec::Nn(g.nn.clone()), stratified_head(&y, n, g.max_rows_nn_svm)),
                Family::Svm => (GridSpec::Svm(g.svm.clone()), stratified_head(&y, n, g.max_rows_nn_svm)),
            };
            let recs: Vec<ProfileRecord> = rows.iter().map(|&i| records[i]).collect();
            let ys: Vec<usize> = rows.iter().map(|&i| y[i]).collect();
            let x = feature_matrix::<f64>(&recs);
            let f = &ctx.cfg.features;
            let scaling = fit_scaling(&x, f.scaling == ScalingKind::Quantile, f.n_quantiles)?;
            let xs = scale_matrix(&scaling, &x)?;
            let speedup = |pred: &[usize]| {
                simulate_classes(&recs, pred, &pc, &em).map(|r| r.speedup_practical).unwrap_or(f64::NAN)
            };
            let seed = ctx.seed_for("grid", n as u64);
            let table = grid_search(&spec, &xs, &ys, n, ctx.cfg.train.folds, seed, &ctx.cfg.hwcost, speedup)?;
            write(&ctx.grid_path(spec.family(), n), &format_grid_csv(spec.family(), &table))?;
            info!("gridsearch {} {n}c: {} points, best F1 {:.4}", spec.family(), table.len(), table[0].f1);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestMetaDoc {
    pub format: String,
    #[serde(flatten)]
    pub meta: ForestNetlistMeta,
    /// Whether the stage settles within the fastest class period.
    pub fits_fastest_period: bool,
}

/// Compiles each trained forest into a comparator netlist.
pub fn codegen_stage(ctx: &StageContext) -> Result<()> {
    let unit = load_exec_unit(ctx)?;
    let t_wc = t_wc(&unit)?;
    for &n in &ctx.cfg.classes {
        let (_, model) = load_model(ctx, n)?;
        let forest = forest_to_netlist(&model, ctx.cfg.codegen, ctx.cfg.exec_unit.delays)?;
        let fastest = DelayClassConfig::<f64>::standard(n, t_wc)?.class_periods()[0];
        let fits = forest.meta.ml_stage_delay_ps as f64 <= fastest;
        if !fits {
            warn!("{n}c forest stage delay {} ps exceeds the fastest period {fastest:.1} ps", forest.meta.ml_stage_delay_ps);
        }
        ensure_parent(&ctx.forest_net_path(n))?;
        write_netlist_file(&forest.netlist, &ctx.forest_net_path(n))?;
        write_json(
            &ctx.forest_meta_path(n),
            &ForestMetaDoc { format: FOREST_META_FORMAT.into(), meta: forest.meta.clone(), fits_fastest_period: fits },
        )?;
        info!("codegen {n}c: {} gates, {} comparators", forest.meta.gate_count, forest.meta.n_comparators);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDoc {
    pub format: String,
    pub classes: usize,
    pub t_wc_ps: Picos,
    pub class_periods_ps: Vec<f64>,
    pub ml_stage_delay_ps: Picos,
    pub benchmarks: Vec<BenchmarkResult>,
}

/// Runs every workload through the adaptive pipeline model.
pub fn simulate_stage(ctx: &StageContext) -> Result<()> {
    let unit = load_exec_unit(ctx)?;
    let t_wc = t_wc(&unit)?;
    let em = energy_model(ctx);
    for &n in &ctx.cfg.classes {
        let (scaling, model) = load_model(ctx, n)?;
        let ml_delay = match ctx.forest_meta_path(n) {
            p if p.exists() => read_json::<ForestMetaDoc>(&p, "codegen", FOREST_META_FORMAT)?.meta.ml_stage_delay_ps,
            _ => 0,
        };
        let classes = DelayClassConfig::<f64>::standard(n, t_wc)?;
        let pc = pipeline_config(ctx, classes.clone(), ml_delay);
        let mut benchmarks = Vec::new();
        for w in &ctx.cfg.workloads {
            let (tp, pp) = (ctx.trace_path(&w.name), ctx.profile_path(&w.name));
            require(&tp, "profile")?;
            require(&pp, "profile")?;
            let trace = parse_trace_file(&tp).with_context(|| format!("reading `{}`", tp.display()))?;
            let profile = read_profile_csv(&pp).with_context(|| format!("reading `{}`", pp.display()))?;
            let mut mp = ModelPredictor { scaling: &scaling, model: &model };
            let mut predicted = Vec::with_capacity(profile.len());
            let mut recording = |r: &ProfileRecord| {
                let c = mp.predict(r);
                predicted.push(c);
                c
            };
            let sim = simulate(&trace, &profile, &mut recording, &pc, &em).with_context(|| format!("workload `{}`", w.name))?;
            let truth = profile.iter().map(|r| class_of_delay(r.delay, &classes)).collect::<std::result::Result<Vec<_>, _>>()?;
            let m = confusion_matrix(&truth, &predicted, n);
            let f1 = if ctx.cfg.train.weighted_f1 { f1_weighted(&m) } else { f1_macro(&m) };
            write(&ctx.power_series_path(&w.name, n), &format_power_series_csv(&sim.power_series))?;
            info!("simulate {n}c {}: practical speedup {:.3}", w.name, sim.speedup_practical);
            benchmarks.push(BenchmarkResult::from_sim(w.name.clone(), n, &sim, Some(f1)));
        }
        write_json(
            &ctx.results_path(n),
            &ResultsDoc {
                format: RESULTS_FORMAT.into(),
                classes: n,
                t_wc_ps: t_wc,
                class_periods_ps: classes.class_periods().to_vec(),
                ml_stage_delay_ps: ml_delay,
                benchmarks,
            },
        )?;
    }
    Ok(())
}

pub fn report_csv(rows: &[BenchmarkResult]) -> String {
    let mut out = format!("# {REPORT_FORMAT}\nclasses,benchmark,practical_speedup,power_overhead,energy_overhead,instruction_count,nopenalty_speedup,ideal_speedup,violations,f1_score\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{},{:.6},{:.6},{},{}\n",
            r.classes,
            r.benchmark,
            r.practical_speedup,
            r.power_overhead,
            r.energy_overhead,
            r.instruction_count,
            r.nopenalty_speedup,
            r.ideal_speedup,
            r.violations,
            r.f1_score.map_or(String::new(), |f| format!("{f:.6}"))
        ));
    }
    out
}

/// Writes `report.txt` plus `report.json` or `report.csv`.
pub fn report_stage(ctx: &StageContext) -> Result<()> {
    let mut rows = Vec::new();
    for &n in &ctx.cfg.classes {
        let doc: ResultsDoc = read_json(&ctx.results_path(n), "simulate", RESULTS_FORMAT)?;
        rows.extend(doc.benchmarks);
    }
    write(&ctx.out().join("report.txt"), &format!("# {REPORT_FORMAT}\n{}", render_report(&rows)))?;
    match ctx.format {
        ReportFormat::Doc => write_json(&ctx.out().join("report.json"), &report_document(&rows))?,
        ReportFormat::Csv => write(&ctx.out().join("report.csv"), &report_csv(&rows))?,
    }
    Ok(())
}

/// Runs one stage by name; errors carry the stage name.
pub fn run_stage(ctx: &StageContext, stage: &str) -> Result<()> {
    let r = match stage {
        "build-exec-unit" => build_exec_unit_stage(ctx),
        "profile" => profile_stage(ctx),
        "dataset" => dataset_stage(ctx),
        "train" => train_stage(ctx),
        "gridsearch" => gridsearch_stage(ctx),
        "codegen" => codegen_stage(ctx),
        "simulate" => simulate_stage(ctx),
        "report" => report_stage(ctx),
        other => bail!("unknown stage `{other}`"),
    };
    r.with_context(|| format!("stage `{stage}` failed"))
}

pub fn run_all(ctx: &StageContext) -> Result<()> {
    for s in STAGES {
        info!("stage {s}");
        run_stage(ctx, s)?;
    }
    Ok(())
}
