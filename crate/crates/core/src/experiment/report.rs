use std::fmt::Write as _;

use crate::error::Result;
use crate::eval::{avg_gap, gaps, Metric, MetricsReport};
use crate::methods::Method;

/// Accuracy of the forgetting and remaining sets after an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub forget_accuracy: f64,
    pub remaining_accuracy: f64,
}

/// `metric,value,retrain_value,gap` rows, then Avg.Gap and KL_avg.
pub fn report_csv(report: &MetricsReport, retrain: &MetricsReport) -> Result<String> {
    let mut out = String::from("metric,value,retrain_value,gap\n");
    for ((metric, value), (_, gap)) in report.metrics.iter().zip(gaps(report, retrain)?) {
        let reference = retrain.get(*metric).unwrap_or(f64::NAN);
        writeln!(out, "{metric},{value:.4},{reference:.4},{gap:.4}").unwrap();
    }
    writeln!(out, "Avg.Gap,{:.4},,", avg_gap(report, retrain)?).unwrap();
    if let Some(kl) = report.kl_avg {
        writeln!(out, "KL_avg,{kl:.6},,").unwrap();
    }
    Ok(out)
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("epoch,FA,RA\n");
    for p in curve {
        writeln!(out, "{},{:.4},{:.4}", p.epoch, p.forget_accuracy, p.remaining_accuracy).unwrap();
    }
    out
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One aggregated summary row.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    /// Distance of the mean from the retrain mean, where defined.
    pub gap: Option<f64>,
}

impl SummaryRow {
    /// `mean ± std (gap)`.
    pub fn display(&self) -> String {
        match self.gap {
            Some(gap) => format!("{:.2} ± {:.2} ({:.2})", self.mean, self.std, gap),
            None => format!("{:.2} ± {:.2}", self.mean, self.std),
        }
    }
}

/// Aggregates per-seed reports, given as `(method, report)` per seed, into
/// mean ± std rows with gaps against the retrain means.
pub fn summarize(per_seed: &[Vec<(Method, MetricsReport)>]) -> Result<Vec<SummaryRow>> {
    let mut methods: Vec<Method> = per_seed.iter().flatten().map(|(m, _)| *m).collect();
    methods.sort_unstable();
    methods.dedup();
    let reports = |method: Method| -> Vec<&MetricsReport> {
        per_seed
            .iter()
            .filter_map(|runs| runs.iter().find(|(m, _)| *m == method).map(|(_, r)| r))
            .collect()
    };
    let retrain = reports(Method::Retrain);
    let retrain_mean = |metric: Metric| -> Option<f64> {
        let values: Vec<f64> = retrain.iter().filter_map(|r| r.get(metric)).collect();
        (!values.is_empty()).then(|| mean_std(&values).0)
    };

    let mut rows = Vec::new();
    for method in methods {
        let runs = reports(method);
        let Some(first) = runs.first() else { continue };
        for (metric, _) in &first.metrics {
            let values: Vec<f64> = runs.iter().filter_map(|r| r.get(*metric)).collect();
            let (mean, std) = mean_std(&values);
            rows.push(SummaryRow {
                method,
                metric: metric.name().to_string(),
                mean,
                std,
                gap: retrain_mean(*metric).map(|r| (mean - r).abs()),
            });
        }
        if retrain.len() == runs.len() {
            let avg: Vec<f64> = runs
                .iter()
                .zip(&retrain)
                .map(|(r, reference)| avg_gap(r, reference))
                .collect::<Result<_>>()?;
            let (mean, std) = mean_std(&avg);
            rows.push(SummaryRow {
                method,
                metric: "Avg.Gap".into(),
                mean,
                std,
                gap: None,
            });
        }
        let kl: Vec<f64> = runs.iter().filter_map(|r| r.kl_avg).collect();
        if kl.len() == runs.len() {
            let (mean, std) = mean_std(&kl);
            rows.push(SummaryRow {
                method,
                metric: "KL_avg".into(),
                mean,
                std,
                gap: None,
            });
        }
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("method,metric,mean,std,gap,display\n");
    for row in rows {
        let gap = row.gap.map(|g| format!("{g:.4}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{:.4},{:.4},{},{}",
            row.method,
            row.metric,
            row.mean,
            row.std,
            gap,
            row.display()
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(ta: f64, fa: f64) -> MetricsReport {
        MetricsReport::new(vec![
            (Metric::TestAccuracy, ta),
            (Metric::RemainingAccuracy, 100.0),
            (Metric::ForgetAccuracy, fa),
            (Metric::Mia, 50.0),
        ])
    }

    #[test]
    fn mean_std_cases() {
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn self_report_has_zero_gaps() {
        let r = report(90.0, 80.0);
        let csv = report_csv(&r, &r).unwrap();
        assert!(csv.starts_with("metric,value,retrain_value,gap\nTA,90.0000,90.0000,0.0000\n"));
        assert!(csv.contains("Avg.Gap,0.0000,,"));
    }

    #[test]
    fn summary_uses_retrain_means() {
        let seeds = vec![
            vec![(Method::Retrain, report(90.0, 80.0)), (Method::Amnesiac, report(88.0, 60.0))],
            vec![(Method::Retrain, report(92.0, 82.0)), (Method::Amnesiac, report(90.0, 62.0))],
        ];
        let rows = summarize(&seeds).unwrap();
        let fa = rows
            .iter()
            .find(|r| r.method == Method::Amnesiac && r.metric == "FA")
            .unwrap();
        assert_eq!(fa.mean, 61.0);
        assert_eq!(fa.gap, Some(20.0));
        assert_eq!(fa.display(), "61.00 ± 1.41 (20.00)");
        let avg = rows
            .iter()
            .find(|r| r.method == Method::Amnesiac && r.metric == "Avg.Gap")
            .unwrap();
        assert_eq!(avg.mean, 5.5);
        assert!(summary_csv(&rows).lines().count() == rows.len() + 1);
    }
}
