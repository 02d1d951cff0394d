//! Run reports on disk and rendered accuracy tables.

use std::path::Path;

use thiserror::Error;

use crate::train::TrainReport;

/// Published AVA test accuracies, in percent. Static reference rows for the
/// comparison table; desk-scale runs are not expected to approach them.
pub const LITERATURE: &[(&str, f64)] = &[
    ("SCNN", 71.20),
    ("DCNN", 73.25),
    ("BDN", 78.08),
    ("Triple column CNN (reference)", 82.3),
];

/// Reference test accuracies for the three fused configurations, fractional.
pub const REFERENCE_ACCURACY: &[(&str, f64)] = &[
    ("single column", 0.7137),
    ("double column", 0.7444),
    ("triple column", 0.823),
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot read report `{path}`: {detail}")]
    Unreadable { path: String, detail: String },
    #[error("cannot write report `{path}`: {detail}")]
    Unwritable { path: String, detail: String },
    #[error("no valid reports given")]
    Empty,
}

pub fn write_json(report: &TrainReport, path: &Path) -> Result<(), ReportError> {
    let text = serde_json::to_string_pretty(report).map_err(|e| ReportError::Unwritable {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|e| ReportError::Unwritable {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

pub fn read_json(path: &Path) -> Result<TrainReport, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|e| ReportError::Unreadable {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| ReportError::Unreadable {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

fn render_aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.first().map_or(0, Vec::len);
    let mut widths = vec![0usize; cols];
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let sep: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&sep.join("  "));
            out.push('\n');
        }
    }
    out
}

/// One row per run: architecture, fusion arity, and final accuracies.
pub fn render_run_table(reports: &[TrainReport]) -> String {
    let mut rows = vec![vec![
        "Architecture".to_string(),
        "Network".to_string(),
        "Train accuracy".to_string(),
        "Test Accuracy".to_string(),
    ]];
    for r in reports {
        rows.push(vec![
            r.architecture.clone(),
            r.network.clone(),
            format!("{:.4}", r.final_train_accuracy),
            r.final_test_accuracy
                .map_or_else(|| "-".to_string(), |a| format!("{a:.4}")),
        ]);
    }
    render_aligned(&rows)
}

/// Measured runs merged with the published baselines, best first. A run
/// without a test split falls back to its train accuracy, marked as such.
pub fn render_comparison(measured: &[TrainReport]) -> String {
    let mut entries: Vec<(String, f64)> = LITERATURE
        .iter()
        .map(|(name, pct)| ((*name).to_string(), *pct))
        .collect();
    for r in measured {
        let (acc, note) = match r.final_test_accuracy {
            Some(a) => (a, "measured"),
            None => (r.final_train_accuracy, "measured, train split"),
        };
        entries.push((
            format!("{} {} ({note})", r.architecture, r.network),
            acc * 100.0,
        ));
    }
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut rows = vec![vec!["Methods".to_string(), "Accuracy (%)".to_string()]];
    for (name, pct) in entries {
        rows.push(vec![name, format!("{pct:.2}")]);
    }
    render_aligned(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{EpochStat, StageReport};

    fn sample_report(test_acc: Option<f64>, train_acc: f64) -> TrainReport {
        TrainReport {
            architecture: "TINY".into(),
            network: "triple column".into(),
            stages: vec![StageReport {
                stage: "head".into(),
                policy: "HEAD_ONLY".into(),
                epochs_planned: 3,
                epochs_run: 3,
                epoch_stats: vec![EpochStat {
                    epoch: 1,
                    loss: 0.693,
                    accuracy: train_acc,
                }],
                step_losses: vec![0.7, 0.69],
                final_train_accuracy: train_acc,
            }],
            final_train_accuracy: train_acc,
            final_test_accuracy: test_acc,
            wall_seconds: 2.0,
            config_fingerprint: "abc123".into(),
        }
    }

    #[test]
    fn literature_rows_are_pinned() {
        assert_eq!(LITERATURE.len(), 4);
        assert_eq!(LITERATURE[0], ("SCNN", 71.20));
        assert_eq!(LITERATURE[1], ("DCNN", 73.25));
        assert_eq!(LITERATURE[2], ("BDN", 78.08));
        assert_eq!(LITERATURE[3].1, 82.3);
        assert_eq!(REFERENCE_ACCURACY[0].1, 0.7137);
        assert_eq!(REFERENCE_ACCURACY[1].1, 0.7444);
        assert_eq!(REFERENCE_ACCURACY[2].1, 0.823);
    }

    #[test]
    fn json_round_trip_preserves_the_report() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let report = sample_report(Some(0.5), 0.75);
        write_json(&report, &path).unwrap();
        let back = read_json(&path).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn malformed_report_is_unreadable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(
            read_json(&path),
            Err(ReportError::Unreadable { .. })
        ));
        assert!(matches!(
            read_json(&dir.path().join("absent.json")),
            Err(ReportError::Unreadable { .. })
        ));
    }

    #[test]
    fn run_table_has_table_3_columns() {
        let table = render_run_table(&[sample_report(Some(0.5), 0.75), sample_report(None, 0.9)]);
        let mut lines = table.lines();
        let header = lines.next().unwrap();
        for col in ["Architecture", "Network", "Train accuracy", "Test Accuracy"] {
            assert!(header.contains(col), "missing column {col}");
        }
        let body: Vec<&str> = lines.skip(1).collect();
        assert_eq!(body.len(), 2);
        assert!(body[0].contains("0.7500") && body[0].contains("0.5000"));
        assert!(body[1].contains("0.9000") && body[1].contains('-'));
    }

    #[test]
    fn comparison_interleaves_measured_runs_sorted_descending() {
        let good = sample_report(Some(0.90), 0.95);
        let weak = sample_report(Some(0.60), 0.80);
        let table = render_comparison(&[weak, good]);
        let values: Vec<f64> = table
            .lines()
            .skip(2)
            .map(|l| l.rsplit(' ').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(values.len(), 6, "4 literature + 2 measured");
        assert!(values.windows(2).all(|w| w[0] >= w[1]), "descending: {values:?}");
        assert_eq!(values[0], 90.0);
        assert_eq!(values[5], 60.0);
        assert!(table.contains("82.30") && table.contains("71.20"));
    }

    #[test]
    fn single_run_comparison_is_five_rows() {
        let table = render_comparison(&[sample_report(None, 0.5)]);
        // Header + separator + 5 entries.
        assert_eq!(table.lines().count(), 7);
        assert!(table.contains("train split"), "fallback is labeled");
    }
}
