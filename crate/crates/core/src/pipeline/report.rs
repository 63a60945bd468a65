//! Per-benchmark speedup/power/energy tables and the power-overhead series.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::SimResult;
use crate::scalar::Scalar;

pub const REPORT_FORMAT: &str = "reportfmt v1";
pub const SERIES_HEADER: &str = "n_instructions,avg_power_overhead";

/// One benchmark under one class configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub benchmark: String,
    pub classes: usize,
    pub practical_speedup: f64,
    /// Percent.
    pub power_overhead: f64,
    /// Percent; negative means energy saved.
    pub energy_overhead: f64,
    pub instruction_count: usize,
    pub nopenalty_speedup: f64,
    pub ideal_speedup: f64,
    pub violations: u64,
    pub f1_score: Option<f64>,
}

impl BenchmarkResult {
    pub fn from_sim<T: Scalar>(benchmark: impl Into<String>, classes: usize, r: &SimResult<T>, f1_score: Option<f64>) -> Self {
        BenchmarkResult {
            benchmark: benchmark.into(),
            classes,
            practical_speedup: r.speedup_practical.to_f64_lossy(),
            power_overhead: r.power_overhead_pct,
            energy_overhead: r.energy_overhead_pct,
            instruction_count: r.n_instructions,
            nopenalty_speedup: r.speedup_nopenalty.to_f64_lossy(),
            ideal_speedup: r.speedup_ideal.to_f64_lossy(),
            violations: r.violations,
            f1_score,
        }
    }
}

/// Mean with upper and lower semi-deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub sd_pos: f64,
    pub sd_neg: f64,
}

impl Spread {
    pub fn of(xs: &[f64]) -> Spread {
        if xs.is_empty() {
            return Spread { mean: 0.0, sd_pos: 0.0, sd_neg: 0.0 };
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let semi = |above: bool| {
            let d: Vec<f64> = xs.iter().filter(|&&x| (x > mean) == above && x != mean).map(|x| (x - mean).powi(2)).collect();
            if d.is_empty() {
                0.0
            } else {
                (d.iter().sum::<f64>() / d.len() as f64).sqrt()
            }
        };
        Spread { mean, sd_pos: semi(true), sd_neg: semi(false) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub classes: usize,
    pub n_benchmarks: usize,
    pub practical_speedup: Spread,
    pub power_overhead: Spread,
    pub energy_overhead: Spread,
    pub instruction_count: Spread,
}

/// Averages per class configuration, most classes first.
pub fn summarize(rows: &[BenchmarkResult]) -> Vec<Summary> {
    let mut groups: BTreeMap<usize, Vec<&BenchmarkResult>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.classes).or_default().push(r);
    }
    groups
        .into_iter()
        .rev()
        .map(|(classes, g)| {
            let col = |f: fn(&BenchmarkResult) -> f64| Spread::of(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            Summary {
                classes,
                n_benchmarks: g.len(),
                practical_speedup: col(|r| r.practical_speedup),
                power_overhead: col(|r| r.power_overhead),
                energy_overhead: col(|r| r.energy_overhead),
                instruction_count: col(|r| r.instruction_count as f64),
            }
        })
        .collect()
}

/// Human-readable tables: one block per class configuration, then a
/// comparison block.
pub fn render_report(rows: &[BenchmarkResult]) -> String {
    let mut out = String::new();
    let rule = format!("+{:-<22}+{:-<11}+{:-<11}+{:-<11}+{:-<13}+\n", "", "", "", "", "");
    for s in summarize(rows) {
        writeln!(out, "{} classes", s.classes).unwrap();
        out.push_str(&rule);
        writeln!(
            out,
            "| {:<20} | {:>9} | {:>9} | {:>9} | {:>11} |",
            "Benchmark", "Practical", "Power", "Energy", "Instruction"
        )
        .unwrap();
        writeln!(out, "| {:<20} | {:>9} | {:>9} | {:>9} | {:>11} |", "", "speedup", "overhead", "overhead", "count").unwrap();
        out.push_str(&rule);
        for r in rows.iter().filter(|r| r.classes == s.classes) {
            writeln!(
                out,
                "| {:<20} | {:>9.3} | {:>8.2}% | {:>8.2}% | {:>11} |",
                r.benchmark, r.practical_speedup, r.power_overhead, r.energy_overhead, r.instruction_count
            )
            .unwrap();
        }
        out.push_str(&rule);
        let (p, w, e, n) = (&s.practical_speedup, &s.power_overhead, &s.energy_overhead, &s.instruction_count);
        writeln!(out, "| {:<20} | {:>9.3} | {:>8.2}% | {:>8.2}% | {:>11.1} |", "Average", p.mean, w.mean, e.mean, n.mean).unwrap();
        writeln!(out, "| {:<20} | {:>9.3} | {:>8.2}% | {:>8.2}% | {:>11.1} |", "Positive std dev", p.sd_pos, w.sd_pos, e.sd_pos, n.sd_pos).unwrap();
        writeln!(out, "| {:<20} | {:>9.3} | {:>8.2}% | {:>8.2}% | {:>11.1} |", "Negative std dev", p.sd_neg, w.sd_neg, e.sd_neg, n.sd_neg).unwrap();
        out.push_str(&rule);
        out.push('\n');
    }
    writeln!(out, "Comparison").unwrap();
    writeln!(out, "| {:<12} | {:>7} | {:>16} | {:>15} | {:>8} |", "Algorithm", "Classes", "Performance gain", "Energy overhead", "ML based").unwrap();
    for s in summarize(rows).iter().rev() {
        writeln!(
            out,
            "| {:<12} | {:>7} | {:>15.1}% | {:>14.1}% | {:>8} |",
            "This work",
            s.classes,
            (s.practical_speedup.mean - 1.0) * 100.0,
            s.energy_overhead.mean,
            "Yes"
        )
        .unwrap();
    }
    out
}

/// Machine-readable report: one object per benchmark per class
/// configuration, plus the averages.
pub fn report_document(rows: &[BenchmarkResult]) -> serde_json::Value {
    let summaries = summarize(rows);
    let comparison: Vec<_> = summaries
        .iter()
        .rev()
        .map(|s| {
            json!({
                "algorithm": "This work",
                "classes": s.classes,
                "performance_gain": (s.practical_speedup.mean - 1.0) * 100.0,
                "energy_overhead": s.energy_overhead.mean,
                "ml_based": true,
            })
        })
        .collect();
    json!({
        "format": REPORT_FORMAT,
        "benchmarks": rows,
        "averages": summaries,
        "comparison": comparison,
    })
}

pub fn format_power_series_csv(series: &[(usize, f64)]) -> String {
    let mut out = format!("{SERIES_HEADER}\n");
    for (n, p) in series {
        writeln!(out, "{n},{p:.9e}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, classes: usize, s: f64) -> BenchmarkResult {
        BenchmarkResult {
            benchmark: name.into(),
            classes,
            practical_speedup: s,
            power_overhead: 10.0 * s,
            energy_overhead: -5.0,
            instruction_count: 1000,
            nopenalty_speedup: s,
            ideal_speedup: s,
            violations: 0,
            f1_score: None,
        }
    }

    #[test]
    fn single_benchmark_average_is_itself() {
        let s = summarize(&[row("a", 2, 1.7)]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].practical_speedup.mean, 1.7);
        assert_eq!(s[0].practical_speedup.sd_pos, 0.0);
    }

    #[test]
    fn averages_and_column_order() {
        let rows = [row("a", 2, 1.5), row("b", 2, 1.9), row("c", 2, 1.6), row("a", 4, 2.0)];
        let s = summarize(&rows);
        assert_eq!(s[0].classes, 4);
        assert!((s[1].practical_speedup.mean - (1.5 + 1.9 + 1.6) / 3.0).abs() < 1e-9);
        let text = render_report(&rows);
        let header = text.lines().find(|l| l.contains("Benchmark")).unwrap();
        let cols: Vec<usize> = ["Practical", "Power", "Energy", "Instruction"].iter().map(|c| header.find(c).unwrap()).collect();
        assert!(cols.windows(2).all(|w| w[0] < w[1]));
        let doc = report_document(&rows);
        assert_eq!(doc["benchmarks"].as_array().unwrap().len(), 4);
        assert!(doc["benchmarks"][0]["practical_speedup"].is_number());
        assert!(doc["benchmarks"][0]["instruction_count"].is_number());
    }

    #[test]
    fn semi_deviations() {
        let s = Spread::of(&[1.0, 2.0, 6.0]);
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.sd_pos, 3.0);
        assert!((s.sd_neg - (2.5f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn series_csv() {
        let csv = format_power_series_csv(&[(100, 0.5), (200, 0.25)]);
        assert_eq!(csv.lines().next().unwrap(), SERIES_HEADER);
        assert_eq!(csv.lines().count(), 3);
    }
}
