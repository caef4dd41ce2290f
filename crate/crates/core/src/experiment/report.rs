//! Run summaries and cross-run comparison tables.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SizeReport;
use crate::prune::Strategy;
use crate::train::WinningTicket;

/// Which evaluation metrics a report carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricFamily {
    Accuracy,
    Regression,
}

/// Outcome of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub ticket: WinningTicket,
    pub accuracy: Option<f64>,
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub size: SizeReport,
    pub prune_events: usize,
    pub energy_joules: Option<f64>,
    /// Per-epoch history, relative to the report's directory.
    pub metrics_csv: String,
    pub checkpoint: String,
}

/// Summary of a whole run; aggregates are medians over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub strategy: Strategy,
    pub dataset: String,
    pub feature_group: Option<String>,
    pub metric_family: MetricFamily,
    pub student: String,
    pub teacher: String,
    pub teacher_metric: Option<f64>,
    pub seeds: Vec<SeedReport>,
    pub accuracy: Option<f64>,
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub sparsity: f64,
    pub size_reduction: f64,
    pub energy_joules: Option<f64>,
    pub power_log: Option<String>,
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

fn median_of(seeds: &[SeedReport], f: impl Fn(&SeedReport) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = seeds.iter().filter_map(f).collect();
    if v.len() == seeds.len() {
        median(&v)
    } else {
        None
    }
}

impl RunReport {
    /// Fills the aggregate fields from the per-seed entries.
    pub fn aggregate(&mut self) {
        self.accuracy = median_of(&self.seeds, |s| s.accuracy);
        self.mae = median_of(&self.seeds, |s| s.mae);
        self.mse = median_of(&self.seeds, |s| s.mse);
        self.sparsity = median_of(&self.seeds, |s| Some(s.ticket.sparsity)).unwrap_or(0.0);
        self.size_reduction = median_of(&self.seeds, |s| Some(s.size.reduction_fraction)).unwrap_or(0.0);
        self.energy_joules = median_of(&self.seeds, |s| s.energy_joules);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Reads `summary.json`, or the one inside a run directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join("summary.json") } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file).map_err(|e| Error::ingest(&file, e.to_string()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Percentage change versus a baseline where positive means improvement.
pub fn improvement_pct(baseline: f64, value: f64, higher_is_better: bool) -> Option<f64> {
    if baseline == 0.0 || !baseline.is_finite() || !value.is_finite() {
        return None;
    }
    let raw = if higher_is_better { value - baseline } else { baseline - value };
    let pct = raw / baseline.abs() * 100.0;
    let t = (pct * 100.0).trunc() / 100.0;
    Some(if t == 0.0 { 0.0 } else { t })
}

pub fn format_delta(delta: Option<f64>) -> String {
    delta.map_or_else(|| "n/a".into(), |d| format!("{d:+.2}%"))
}

/// One compared run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    pub strategy: Strategy,
    /// `(metric name, value, delta vs baseline)`.
    pub metrics: Vec<(String, f64, Option<f64>)>,
    pub sparsity: f64,
    pub size_reduction: f64,
    pub energy_joules: Option<f64>,
    pub energy_delta: Option<f64>,
}

/// Runs side by side with deltas against the first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub family: MetricFamily,
    pub rows: Vec<ComparisonRow>,
}

fn metric_values(r: &RunReport) -> Result<Vec<(&'static str, f64, bool)>> {
    let missing = || Error::MetricFamily(format!("report {} lacks aggregate metrics", r.name));
    Ok(match r.metric_family {
        MetricFamily::Accuracy => vec![("accuracy", r.accuracy.ok_or_else(missing)?, true)],
        MetricFamily::Regression => vec![
            ("mae", r.mae.ok_or_else(missing)?, false),
            ("mse", r.mse.ok_or_else(missing)?, false),
        ],
    })
}

/// Builds the comparison table; the first report is the baseline.
pub fn compare(reports: &[RunReport]) -> Result<Comparison> {
    let base = reports
        .first()
        .ok_or_else(|| Error::Empty("compare needs at least one report".into()))?;
    if reports.len() < 2 {
        return Err(Error::Config("compare needs at least two reports".into()));
    }
    if let Some(r) = reports.iter().find(|r| r.metric_family != base.metric_family || r.dataset != base.dataset) {
        return Err(Error::MetricFamily(format!(
            "{} ({} / {:?}) cannot be compared with {} ({} / {:?})",
            r.name, r.dataset, r.metric_family, base.name, base.dataset, base.metric_family
        )));
    }
    let base_metrics = metric_values(base)?;
    let rows = reports
        .iter()
        .map(|r| {
            let metrics = metric_values(r)?
                .into_iter()
                .zip(&base_metrics)
                .map(|((name, v, hib), (_, b, _))| (name.to_string(), v, improvement_pct(*b, v, hib)))
                .collect();
            Ok(ComparisonRow {
                name: r.name.clone(),
                strategy: r.strategy,
                metrics,
                sparsity: r.sparsity,
                size_reduction: r.size_reduction,
                energy_joules: r.energy_joules,
                energy_delta: match (base.energy_joules, r.energy_joules) {
                    (Some(b), Some(e)) => improvement_pct(b, e, false),
                    _ => None,
                },
            })
        })
        .collect::<Result<_>>()?;
    Ok(Comparison {
        family: base.metric_family,
        rows,
    })
}

fn fmt_energy(e: Option<f64>) -> String {
    e.map_or_else(|| "n/a".into(), |v| format!("{v:.1}"))
}

impl Comparison {
    /// Aligned text table.
    pub fn to_text(&self) -> String {
        let mut header = vec!["run".to_string(), "strategy".to_string()];
        if let Some(r) = self.rows.first() {
            header.extend(r.metrics.iter().map(|(n, _, _)| n.clone()));
        }
        header.extend(["sparsity".into(), "size_reduction".into(), "energy_j".into()]);
        let mut table = vec![header];
        for (i, r) in self.rows.iter().enumerate() {
            let mut line = vec![r.name.clone(), r.strategy.to_string()];
            for (_, v, d) in &r.metrics {
                line.push(if i == 0 {
                    format!("{v:.4} (baseline)")
                } else {
                    format!("{v:.4} ({})", format_delta(*d))
                });
            }
            line.push(format!("{:.2}%", r.sparsity * 100.0));
            line.push(format!("{:.2}%", r.size_reduction * 100.0));
            line.push(if i == 0 || r.energy_joules.is_none() {
                fmt_energy(r.energy_joules)
            } else {
                format!("{} ({})", fmt_energy(r.energy_joules), format_delta(r.energy_delta))
            });
            table.push(line);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &table {
            let cells: Vec<String> = line.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    /// CSV with one row per run and a delta column per metric.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["run".to_string(), "strategy".to_string()];
        if let Some(r) = self.rows.first() {
            for (n, _, _) in &r.metrics {
                header.push(n.clone());
                header.push(format!("{n}_delta_pct"));
            }
        }
        header.extend(["sparsity", "size_reduction", "energy_j", "energy_delta_pct"].map(String::from));
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for r in &self.rows {
            let mut rec = vec![r.name.clone(), r.strategy.to_string()];
            for (_, v, d) in &r.metrics {
                rec.push(v.to_string());
                rec.push(opt(*d));
            }
            rec.push(r.sparsity.to_string());
            rec.push(r.size_reduction.to_string());
            rec.push(opt(r.energy_joules));
            rec.push(opt(r.energy_delta));
            w.write_record(&rec)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
            .map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(name: &str, family: MetricFamily, a: f64, b: f64) -> RunReport {
        let (accuracy, mae, mse) = match family {
            MetricFamily::Accuracy => (Some(a), None, None),
            MetricFamily::Regression => (None, Some(a), Some(b)),
        };
        RunReport {
            name: name.into(),
            strategy: Strategy::Sad,
            dataset: "movies".into(),
            feature_group: Some("social".into()),
            metric_family: family,
            student: "s".into(),
            teacher: "t".into(),
            teacher_metric: None,
            seeds: vec![],
            accuracy,
            mae,
            mse,
            sparsity: 0.0,
            size_reduction: 0.0,
            energy_joules: Some(100.0),
            power_log: None,
        }
    }

    #[test]
    fn self_comparison_has_zero_deltas() {
        let r = report("a", MetricFamily::Regression, 0.88, 1.23);
        let c = compare(&[r.clone(), r]).unwrap();
        assert!(c.rows[1].metrics.iter().all(|(_, _, d)| *d == Some(0.0)));
        assert_eq!(c.rows[1].energy_delta, Some(0.0));
        assert!(c.to_text().contains("+0.00%"));
    }

    #[test]
    fn lower_error_is_positive_improvement() {
        let base = report("sad", MetricFamily::Regression, 0.88, 1.23);
        let lth = report("lth", MetricFamily::Regression, 0.81, 1.106);
        let c = compare(&[base, lth]).unwrap();
        let (mae_d, mse_d) = (c.rows[1].metrics[0].2.unwrap(), c.rows[1].metrics[1].2.unwrap());
        // (0.88 - 0.81) / 0.88 = 7.954..% and (1.23 - 1.106) / 1.23 = 10.08..%
        assert_eq!(mae_d, 7.95);
        assert_eq!(mse_d, 10.08);
        assert_eq!(format_delta(Some(mae_d)), "+7.95%");
    }

    #[test]
    fn three_reports_give_two_delta_rows() {
        let a = report("a", MetricFamily::Accuracy, 0.7547, 0.0);
        let b = report("b", MetricFamily::Accuracy, 0.7303, 0.0);
        let c = report("c", MetricFamily::Accuracy, 0.7371, 0.0);
        let cmp = compare(&[a, b, c]).unwrap();
        assert_eq!(cmp.rows.len(), 3);
        assert!(cmp.rows[1].metrics[0].2.unwrap() < 0.0);
        let csv = cmp.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("run,strategy,accuracy,accuracy_delta_pct"));
    }

    #[test]
    fn mixed_families_rejected() {
        let a = report("a", MetricFamily::Accuracy, 0.7, 0.0);
        let b = report("b", MetricFamily::Regression, 0.8, 1.1);
        assert!(matches!(compare(&[a, b]), Err(Error::MetricFamily(_))));
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
