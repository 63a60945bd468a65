//! Exhaustive hyperparameter search scored by cross-validated F1, speedup,
//! hardware cost and speedup per million transistors.

use std::fmt::Write as _;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{kfold_cv, mlp_train, rf_train, svm_train, Activation, GammaMode, Kernel, MlError, MlpConfig, Samples, Solver, SvmConfig};
use crate::hwcost::{nn_cost, rf_cost, sph, svm_cost, HwCost, UnitCosts};
use crate::scalar::Real;

pub const GRID_FORMAT: &str = "# gridfmt v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfGrid {
    pub n_estimators: Vec<usize>,
    pub max_depth: Vec<usize>,
}

impl Default for RfGrid {
    fn default() -> Self {
        RfGrid { n_estimators: vec![1, 10, 50, 100, 200], max_depth: vec![10, 20, 30, 40, 50] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NnGrid {
    pub hidden: Vec<Vec<usize>>,
    pub activation: Vec<Activation>,
    pub solver: Vec<Solver>,
    /// Shared settings for every point (epochs, learning rate, ...).
    pub base: MlpConfig,
}

impl Default for NnGrid {
    fn default() -> Self {
        NnGrid {
            hidden: vec![vec![5], vec![10], vec![15], vec![20], vec![20, 5], vec![20, 10], vec![20, 15]],
            activation: Activation::ALL.to_vec(),
            solver: Solver::ALL.to_vec(),
            base: MlpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmGrid {
    pub kernels: Vec<String>,
    /// Degrees tried for the polynomial kernel.
    pub degrees: Vec<u32>,
    pub gamma: Vec<GammaMode>,
    pub epochs: usize,
}

impl Default for SvmGrid {
    fn default() -> Self {
        SvmGrid {
            kernels: vec!["linear".into(), "poly".into(), "rbf".into()],
            degrees: (2..=15).collect(),
            gamma: vec![GammaMode::Scale, GammaMode::Auto],
            epochs: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    Rf(RfGrid),
    Nn(NnGrid),
    Svm(SvmGrid),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridPoint {
    Rf { n_estimators: usize, max_depth: usize },
    Nn { hidden: Vec<usize>, activation: Activation, solver: Solver },
    Svm { kernel: Kernel, gamma: GammaMode },
}

impl GridSpec {
    pub fn family(&self) -> &'static str {
        match self {
            GridSpec::Rf(_) => "rf",
            GridSpec::Nn(_) => "nn",
            GridSpec::Svm(_) => "svm",
        }
    }

    pub fn points(&self) -> Result<Vec<GridPoint>, MlError> {
        let mut pts = Vec::new();
        match self {
            GridSpec::Rf(g) => {
                for &n_estimators in &g.n_estimators {
                    for &max_depth in &g.max_depth {
                        pts.push(GridPoint::Rf { n_estimators, max_depth });
                    }
                }
            }
            GridSpec::Nn(g) => {
                for &activation in &g.activation {
                    for &solver in &g.solver {
                        for hidden in &g.hidden {
                            pts.push(GridPoint::Nn { hidden: hidden.clone(), activation, solver });
                        }
                    }
                }
            }
            GridSpec::Svm(g) => {
                for k in &g.kernels {
                    let kernels: Vec<Kernel> = match k.as_str() {
                        "linear" => vec![Kernel::Linear],
                        "poly" => g.degrees.iter().map(|&degree| Kernel::Poly { degree }).collect(),
                        "rbf" => vec![Kernel::Rbf],
                        other => return Err(MlError::Hyper(format!("unknown kernel `{other}`"))),
                    };
                    for kernel in kernels {
                        for &gamma in &g.gamma {
                            pts.push(GridPoint::Svm { kernel, gamma });
                        }
                    }
                }
            }
        }
        if pts.is_empty() {
            return Err(MlError::EmptyGrid);
        }
        Ok(pts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub point: GridPoint,
    pub f1: f64,
    pub speedup: f64,
    pub cost: HwCost,
    pub sph: f64,
    /// Within 1% of the best F1 in the table.
    pub top: bool,
}

/// Scores every grid point with `k`-fold cross-validation. `speedup` maps
/// the out-of-fold predictions (one per row of `x`) to a pipeline speedup.
/// Rows come back sorted by F1, best first; ties keep grid order.
#[allow(clippy::too_many_arguments)]
pub fn grid_search<T, S>(
    spec: &GridSpec,
    x: &Samples<T>,
    y: &[usize],
    n_classes: usize,
    k: usize,
    seed: u64,
    units: &UnitCosts,
    speedup: S,
) -> Result<Vec<GridRow>, MlError>
where
    T: Real,
    S: Fn(&[usize]) -> f64 + Sync,
{
    let points = spec.points()?;
    let n_features = x.n_features();
    let svm_epochs = match spec {
        GridSpec::Svm(g) => g.epochs,
        _ => 20,
    };
    let nn_base = match spec {
        GridSpec::Nn(g) => g.base.clone(),
        _ => MlpConfig::default(),
    };
    let mut rows = points
        .into_par_iter()
        .map(|point| -> Result<GridRow, MlError> {
            let (report, cost) = match &point {
                &GridPoint::Rf { n_estimators, max_depth } => {
                    let rep = kfold_cv(|xt, yt, s| rf_train(xt, yt, n_classes, n_estimators, max_depth, s), x, y, n_classes, k, seed, false)?;
                    let cost = rf_cost(n_estimators, max_depth, units).map_err(|e| MlError::Hyper(e.to_string()))?;
                    (rep, cost)
                }
                GridPoint::Nn { hidden, activation, solver } => {
                    let cfg = MlpConfig { hidden: hidden.clone(), activation: *activation, solver: *solver, ..nn_base.clone() };
                    let rep = kfold_cv(|xt, yt, s| mlp_train(xt, yt, n_classes, &cfg, s), x, y, n_classes, k, seed, false)?;
                    let mut sizes = vec![n_features];
                    sizes.extend(hidden);
                    sizes.push(n_classes);
                    let cost = nn_cost(&sizes, units).map_err(|e| MlError::Hyper(e.to_string()))?;
                    (rep, cost)
                }
                &GridPoint::Svm { kernel, gamma } => {
                    let cfg = SvmConfig { kernel, gamma, epochs: svm_epochs, lambda: None };
                    let supports = Mutex::new(Vec::new());
                    let rep = kfold_cv(
                        |xt, yt, s| {
                            let m = svm_train(xt, yt, n_classes, &cfg, s)?;
                            supports.lock().unwrap().push(m.n_support());
                            Ok(m)
                        },
                        x,
                        y,
                        n_classes,
                        k,
                        seed,
                        false,
                    )?;
                    let sv = supports.into_inner().unwrap();
                    let mean_sv = (sv.iter().sum::<usize>() as f64 / sv.len() as f64).round() as usize;
                    (rep, svm_cost(mean_sv, n_features, units))
                }
            };
            let sp = speedup(&report.oof_predictions);
            Ok(GridRow { point, f1: report.mean_f1, speedup: sp, cost, sph: sph(sp, &cost), top: false })
        })
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| b.f1.partial_cmp(&a.f1).unwrap_or(std::cmp::Ordering::Equal));
    let best = rows[0].f1;
    for r in rows.iter_mut() {
        r.top = r.f1 >= 0.99 * best;
    }
    Ok(rows)
}

/// Grid table as CSV: hyperparameters, then F1, speedup, cost and SPH.
pub fn format_grid_csv(family: &str, rows: &[GridRow]) -> String {
    let mut out = format!("{GRID_FORMAT} family={family}\n");
    let params = match family {
        "rf" => "n_estimators,max_depth",
        "nn" => "activation,solver,neurons",
        _ => "kernel,degree,gamma",
    };
    writeln!(out, "{params},f1_score,speedup,hw_cost_mtransistors,sph,top").unwrap();
    for r in rows {
        match &r.point {
            GridPoint::Rf { n_estimators, max_depth } => write!(out, "{n_estimators},{max_depth}"),
            GridPoint::Nn { hidden, activation, solver } => {
                let neurons: Vec<String> = hidden.iter().map(|h| h.to_string()).collect();
                write!(out, "{},{},{}", lower(activation), lower(solver), neurons.join("x"))
            }
            GridPoint::Svm { kernel, gamma } => write!(
                out,
                "{},{},{}",
                kernel.name(),
                kernel.degree().map_or(String::new(), |d| d.to_string()),
                lower(gamma)
            ),
        }
        .unwrap();
        writeln!(
            out,
            ",{:.6},{:.6},{:.6},{:.6},{}",
            r.f1, r.speedup, r.cost.transistors_millions, r.sph, r.top as u8
        )
        .unwrap();
    }
    out
}

fn lower<V: std::fmt::Debug>(v: &V) -> String {
    format!("{v:?}").to_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data() -> (Samples<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<[f64; 3]> = (0..120).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let y = rows.iter().map(|r| (r[0] + 0.3 * r[1] > 0.65) as usize).collect();
        (Samples::from_rows(&rows), y)
    }

    #[test]
    fn one_point_one_row() {
        let (x, y) = data();
        let spec = GridSpec::Rf(RfGrid { n_estimators: vec![5], max_depth: vec![4] });
        let rows = grid_search(&spec, &x, &y, 2, 5, 1, &UnitCosts::default(), |_| 1.5).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].top);
        assert_eq!(rows[0].cost.n_comparators, 5 * 2);
        assert!((rows[0].sph - 1.5 / rows[0].cost.transistors_millions).abs() < 1e-9);
    }

    #[test]
    fn sorted_and_flagged() {
        let (x, y) = data();
        let spec = GridSpec::Rf(RfGrid { n_estimators: vec![1, 10], max_depth: vec![1, 2, 8] });
        let rows = grid_search(&spec, &x, &y, 2, 5, 2, &UnitCosts::default(), |p| p.len() as f64).unwrap();
        assert_eq!(rows.len(), 6);
        let best = rows[0].f1;
        assert!(rows.iter().all(|r| r.f1 <= best));
        assert!(rows.windows(2).all(|w| w[0].f1 >= w[1].f1));
        for r in &rows {
            assert_eq!(r.top, r.f1 >= 0.99 * best);
        }
        let csv = format_grid_csv("rf", &rows);
        assert_eq!(csv.lines().count(), 8);
        assert!(csv.lines().nth(1).unwrap().starts_with("n_estimators,max_depth,f1_score"));
    }

    #[test]
    fn empty_grid_rejected() {
        let (x, y) = data();
        let spec = GridSpec::Rf(RfGrid { n_estimators: vec![], max_depth: vec![3] });
        assert!(matches!(grid_search(&spec, &x, &y, 2, 5, 0, &UnitCosts::default(), |_| 1.0), Err(MlError::EmptyGrid)));
    }

    #[test]
    fn other_families_run() {
        let (x, y) = data();
        let nn = GridSpec::Nn(NnGrid {
            hidden: vec![vec![5]],
            activation: vec![Activation::Tanh],
            solver: vec![Solver::Lbfgs],
            base: MlpConfig { epochs: 30, ..Default::default() },
        });
        let rows = grid_search(&nn, &x, &y, 2, 3, 0, &UnitCosts::default(), |_| 1.0).unwrap();
        assert_eq!((rows[0].cost.n_mult, rows[0].cost.n_add), (3 * 5 + 5 * 2, 2 * 5 + 4 * 2));
        let svm = GridSpec::Svm(SvmGrid { kernels: vec!["poly".into(), "rbf".into()], degrees: vec![2, 3], gamma: vec![GammaMode::Auto], epochs: 5 });
        let rows = grid_search(&svm, &x, &y, 2, 3, 0, &UnitCosts::default(), |_| 1.0).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.cost.n_mult % 3 == 0));
    }
}
