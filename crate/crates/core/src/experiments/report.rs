use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::evaluation::{BalancedAccuracyResult, BootstrapCI, ConfusionMatrix};
use crate::perceptual::{CorrelationResult, Dimension};
use crate::training::EpochMetrics;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub best_epoch: usize,
    pub best_validation_phone_error_rate: f64,
    pub num_params: usize,
    pub train_frames: usize,
    pub validation_frames: usize,
    pub history: Vec<EpochMetrics>,
}

/// A phone group's rows against all columns and against its own members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMatrices {
    pub name: String,
    pub members: Vec<String>,
    pub full: ConfusionMatrix,
    pub restricted: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub dimension: Dimension,
    /// Absent when too few speakers could be paired.
    pub fit: Option<CorrelationResult>,
    pub n_paired: usize,
    pub n_excluded: usize,
    /// Paired speakers rated by fewer than the minimum number of experts.
    pub few_rater_speakers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusResult {
    pub n_frames: usize,
    pub n_speakers: usize,
    /// Percent over all frames, silence included.
    pub micro_accuracy: f64,
    pub balanced_accuracy: BalancedAccuracyResult,
    pub confidence_interval: BootstrapCI,
    pub confusion: ConfusionMatrix,
    pub group_matrices: Vec<GroupMatrices>,
    #[serde(default)]
    pub correlations: Vec<CorrelationEntry>,
}

/// Self-contained outcome of one run; carries the config that produced it
/// and no wall-clock data, so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub run_id: String,
    pub inventory_hash: String,
    pub phone_labels: Vec<String>,
    pub config: ExperimentConfig,
    pub training: TrainingSummary,
    pub test_results: BTreeMap<String, CorpusResult>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: Self = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        report.validate()?;
        Ok(report)
    }

    /// Structural checks: schema version, one entry per configured test
    /// corpus, percentages in range, CI bracketing its point, row sums.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Data(format!("report {}: {m}", self.run_id)));
        if self.schema_version != REPORT_SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} (expected {REPORT_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.run_id != self.config.run_id {
            return bad("run_id differs from the embedded config".into());
        }
        let mut expected = self.config.test_corpora.clone();
        expected.sort();
        let found: Vec<String> = self.test_results.keys().cloned().collect();
        if expected != found {
            return bad(format!("test corpora {found:?} do not match config {expected:?}"));
        }
        let pct = |v: f64| (0.0..=100.0).contains(&v);
        for (tag, r) in &self.test_results {
            let ba = r.balanced_accuracy.value;
            let ci = &r.confidence_interval;
            if !pct(ba) || !pct(r.micro_accuracy) || !pct(ci.low) || !pct(ci.high) {
                return bad(format!("{tag}: accuracy outside [0, 100]"));
            }
            if !(ci.low <= ci.point && ci.point <= ci.high) || (ci.point - ba).abs() > 1e-9 {
                return bad(format!("{tag}: CI [{}, {}] does not bracket {ba}", ci.low, ci.high));
            }
            let k = self.phone_labels.len();
            if r.confusion.values.len() != k || r.confusion.values.iter().any(|row| row.len() != k) {
                return bad(format!("{tag}: confusion matrix is not {k}×{k}"));
            }
            for (i, row) in r.confusion.values.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if r.confusion.row_totals[i] > 0 && (sum - 100.0).abs() > 1e-9 {
                    return bad(format!("{tag}: confusion row {} sums to {sum}", r.confusion.row_labels[i]));
                }
            }
            if r.group_matrices.is_empty() {
                return bad(format!("{tag}: no group submatrices"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub accuracy: f64,
    pub half_width: f64,
    pub low: f64,
    pub high: f64,
    /// Highest accuracy in its column (ties all flagged).
    pub best: bool,
    /// Best in column and its CI is disjoint from every other row's.
    pub significant: bool,
    /// Rows whose CI lies entirely below this cell's.
    pub beats: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub run_id: String,
    pub cells: Vec<TableCell>,
}

/// Runs × test corpora grid of balanced accuracies with CI half-widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

/// Lines reports up by test corpus. Every report must cover the same set.
pub fn tabulate(reports: &[EvaluationReport]) -> Result<ComparisonTable> {
    let Some(first) = reports.first() else {
        return Err(Error::Tabulate("no reports given".into()));
    };
    let columns: Vec<String> = first.test_results.keys().cloned().collect();
    let mut mismatches = Vec::new();
    for r in &reports[1..] {
        let missing: Vec<&String> = columns.iter().filter(|c| !r.test_results.contains_key(*c)).collect();
        let extra: Vec<&String> = r.test_results.keys().filter(|c| !columns.contains(c)).collect();
        if !missing.is_empty() || !extra.is_empty() {
            mismatches.push(format!("{}: missing {missing:?}, extra {extra:?}", r.run_id));
        }
    }
    if !mismatches.is_empty() {
        return Err(Error::Tabulate(format!(
            "test corpora differ from {} {columns:?}: {}",
            first.run_id,
            mismatches.join("; ")
        )));
    }

    let mut rows: Vec<TableRow> = reports
        .iter()
        .map(|r| TableRow {
            run_id: r.run_id.clone(),
            cells: columns
                .iter()
                .map(|c| {
                    let ci = &r.test_results[c].confidence_interval;
                    TableCell {
                        accuracy: ci.point,
                        half_width: ci.half_width,
                        low: ci.low,
                        high: ci.high,
                        best: false,
                        significant: false,
                        beats: Vec::new(),
                    }
                })
                .collect(),
        })
        .collect();

    for j in 0..columns.len() {
        let top = rows.iter().map(|r| r.cells[j].accuracy).fold(f64::NEG_INFINITY, f64::max);
        let snapshot: Vec<(String, f64, f64)> = rows
            .iter()
            .map(|r| (r.run_id.clone(), r.cells[j].low, r.cells[j].high))
            .collect();
        for (i, row) in rows.iter_mut().enumerate() {
            let cell = &mut row.cells[j];
            cell.best = cell.accuracy == top;
            cell.beats = snapshot
                .iter()
                .enumerate()
                .filter(|&(k, &(_, _, high))| k != i && high < cell.low)
                .map(|(_, (id, _, _))| id.clone())
                .collect();
            cell.significant = cell.best && snapshot.len() > 1 && cell.beats.len() == snapshot.len() - 1;
        }
    }
    Ok(ComparisonTable { columns, rows })
}

impl ComparisonTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e))?;
        let mut header = vec!["run_id".to_string()];
        for c in &self.columns {
            for field in ["accuracy", "half_width", "low", "high", "best", "significant"] {
                header.push(format!("{c}_{field}"));
            }
        }
        w.write_record(&header).map_err(|e| Error::io(path, e))?;
        for row in &self.rows {
            let mut rec = vec![row.run_id.clone()];
            for cell in &row.cells {
                rec.extend([
                    cell.accuracy.to_string(),
                    cell.half_width.to_string(),
                    cell.low.to_string(),
                    cell.high.to_string(),
                    cell.best.to_string(),
                    cell.significant.to_string(),
                ]);
            }
            w.write_record(&rec).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Fixed-width text grid. `*` marks the column best, `+` a best cell
    /// whose CI overlaps no other row's.
    pub fn to_text(&self) -> String {
        let cell_text = |c: &TableCell| {
            format!(
                "{:.2} ± {:.2}{}{}",
                c.accuracy,
                c.half_width,
                if c.best { " *" } else { "" },
                if c.significant { "+" } else { "" }
            )
        };
        let mut widths = vec![self.rows.iter().map(|r| r.run_id.chars().count()).max().unwrap_or(0).max(6)];
        for (j, c) in self.columns.iter().enumerate() {
            let w = self
                .rows
                .iter()
                .map(|r| cell_text(&r.cells[j]).chars().count())
                .max()
                .unwrap_or(0);
            widths.push(w.max(c.chars().count()));
        }
        let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w.saturating_sub(s.chars().count())));
        let mut out = String::new();
        let header: Vec<String> = std::iter::once("run_id".to_string())
            .chain(self.columns.iter().cloned())
            .enumerate()
            .map(|(k, s)| pad(&s, widths[k]))
            .collect();
        let _ = writeln!(out, "{}", header.join(" | ").trim_end());
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        let _ = writeln!(out, "{}", rule.join("-+-"));
        for row in &self.rows {
            let cells: Vec<String> = std::iter::once(row.run_id.clone())
                .chain(row.cells.iter().map(cell_text))
                .enumerate()
                .map(|(k, s)| pad(&s, widths[k]))
                .collect();
            let _ = writeln!(out, "{}", cells.join(" | ").trim_end());
        }
        out.push_str("balanced accuracy % ± CI half-width; * best in column; + CI disjoint from all other rows\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::ResampleUnit;

    fn stub_report(run_id: &str, cells: &[(&str, f64, f64, f64)]) -> EvaluationReport {
        let mut config = ExperimentConfig::from_toml(&format!(
            "run_id = \"{run_id}\"\nfinetune_corpora = [\"ft\"]\ntest_corpora = []\n[encoder]\nkind = \"cnn\"\n[corpora]\n"
        ))
        .unwrap();
        let mut test_results = BTreeMap::new();
        for &(tag, point, low, high) in cells {
            config.test_corpora.push(tag.to_string());
            test_results.insert(
                tag.to_string(),
                CorpusResult {
                    n_frames: 10,
                    n_speakers: 1,
                    micro_accuracy: point,
                    balanced_accuracy: BalancedAccuracyResult {
                        value: point,
                        per_phone: BTreeMap::new(),
                        phones_included: vec![],
                    },
                    confidence_interval: BootstrapCI {
                        point,
                        low,
                        high,
                        half_width: (high - low) / 2.0,
                        n_resamples: 1000,
                        alpha: 0.05,
                        seed: 0,
                        unit: ResampleUnit::Frames,
                    },
                    confusion: ConfusionMatrix {
                        row_labels: vec![],
                        col_labels: vec![],
                        counts: vec![],
                        values: vec![],
                        row_totals: vec![],
                    },
                    group_matrices: vec![],
                    correlations: vec![],
                },
            );
        }
        EvaluationReport {
            schema_version: REPORT_SCHEMA_VERSION,
            run_id: run_id.into(),
            inventory_hash: String::new(),
            phone_labels: vec![],
            config,
            training: TrainingSummary {
                best_epoch: 1,
                best_validation_phone_error_rate: 0.5,
                num_params: 0,
                train_frames: 0,
                validation_frames: 0,
                history: vec![],
            },
            test_results,
        }
    }

    #[test]
    fn single_report_gives_one_row_without_significance() {
        let t = tabulate(&[stub_report("a", &[("x", 70.0, 68.0, 72.0)])]).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(t.rows[0].cells[0].best);
        assert!(!t.rows[0].cells[0].significant);
    }

    #[test]
    fn significance_follows_ci_overlap() {
        let a = stub_report("a", &[("x", 80.0, 78.0, 82.0), ("y", 60.0, 55.0, 65.0)]);
        let b = stub_report("b", &[("x", 70.0, 68.0, 72.0), ("y", 62.0, 58.0, 66.0)]);
        let t = tabulate(&[a, b]).unwrap();
        assert_eq!(t.columns, ["x", "y"]);
        let (ra, rb) = (&t.rows[0], &t.rows[1]);
        assert!(ra.cells[0].best && ra.cells[0].significant);
        assert_eq!(ra.cells[0].beats, ["b"]);
        assert!(!rb.cells[0].best && !rb.cells[0].significant);
        assert!(rb.cells[1].best && !rb.cells[1].significant);
        assert!(t.to_text().contains("80.00 ± 2.00 *+"));
    }

    #[test]
    fn touching_intervals_overlap() {
        let a = stub_report("a", &[("x", 80.0, 75.0, 85.0)]);
        let b = stub_report("b", &[("x", 70.0, 65.0, 75.0)]);
        let t = tabulate(&[a, b]).unwrap();
        assert!(!t.rows[0].cells[0].significant);
    }

    #[test]
    fn mismatched_corpora_are_listed() {
        let a = stub_report("a", &[("x", 80.0, 78.0, 82.0)]);
        let b = stub_report("b", &[("z", 70.0, 68.0, 72.0)]);
        let err = tabulate(&[a, b]).unwrap_err().to_string();
        assert!(err.contains("missing [\"x\"]") && err.contains("extra [\"z\"]"), "{err}");
        assert!(tabulate(&[]).is_err());
    }

    #[test]
    fn csv_has_one_line_per_run() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let t = tabulate(&[stub_report("a", &[("x", 80.0, 78.0, 82.0)]), stub_report("b", &[("x", 1.0, 0.0, 2.0)])])
            .unwrap();
        t.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("run_id,x_accuracy,x_half_width"));
    }
}
