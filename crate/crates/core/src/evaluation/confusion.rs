use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, PredictionSet};

pub const DEFAULT_GROUPS: &str = include_str!("../../data/phone_groups.txt");

/// Row-normalized confusion percentages with the raw counts alongside.
///
/// `values[i][j]` is the percent of true-`row_labels[i]` frames predicted as
/// `col_labels[j]`, always relative to the row's full total, so a
/// column-restricted slice keeps the percentages of the full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub values: Vec<Vec<f64>>,
    /// Frames per true phone over all predicted classes.
    pub row_totals: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn is_empty_row(&self, i: usize) -> bool {
        self.row_totals[i] == 0
    }

    pub fn empty_rows(&self) -> Vec<String> {
        (0..self.row_labels.len())
            .filter(|&i| self.is_empty_row(i))
            .map(|i| self.row_labels[i].clone())
            .collect()
    }

    pub fn value(&self, true_label: &str, predicted: &str) -> Option<f64> {
        let i = self.row_labels.iter().position(|l| l == true_label)?;
        let j = self.col_labels.iter().position(|l| l == predicted)?;
        Some(self.values[i][j])
    }

    /// Wide CSV: header `true,<col labels…>`, one row per true phone.
    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| EvalError::io(path, e))?;
        let mut header = vec!["true".to_string()];
        header.extend(self.col_labels.iter().cloned());
        w.write_record(&header).map_err(|e| EvalError::io(path, e))?;
        for (label, row) in self.row_labels.iter().zip(&self.values) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| EvalError::io(path, e))?;
        }
        w.flush().map_err(|e| EvalError::io(path, e))
    }

    /// Long-form heatmap data: `true,predicted,percent,count`.
    pub fn write_heatmap_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| EvalError::io(path, e))?;
        w.write_record(["true", "predicted", "percent", "count"])
            .map_err(|e| EvalError::io(path, e))?;
        for (i, t) in self.row_labels.iter().enumerate() {
            for (j, p) in self.col_labels.iter().enumerate() {
                w.write_record([t.clone(), p.clone(), self.values[i][j].to_string(), self.counts[i][j].to_string()])
                    .map_err(|e| EvalError::io(path, e))?;
            }
        }
        w.flush().map_err(|e| EvalError::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        let mut f = std::fs::File::create(path).map_err(|e| EvalError::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self).map_err(|e| EvalError::io(path, e))?;
        f.write_all(b"\n").map_err(|e| EvalError::io(path, e))
    }
}

/// Full confusion matrix; `labels[k]` names class `k`.
pub fn confusion_matrix(preds: &PredictionSet, labels: &[String]) -> Result<ConfusionMatrix, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let k = preds.num_classes();
    if labels.len() != k {
        return Err(EvalError::Contract(format!("{} labels for {k} classes", labels.len())));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for r in preds.records() {
        counts[r.true_label][r.predicted_label] += 1;
    }
    let row_totals: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
    let values = counts
        .iter()
        .zip(&row_totals)
        .map(|(row, &n)| {
            row.iter()
                .map(|&c| if n == 0 { 0.0 } else { c as f64 * 100.0 / n as f64 })
                .collect()
        })
        .collect();
    Ok(ConfusionMatrix {
        row_labels: labels.to_vec(),
        col_labels: labels.to_vec(),
        counts,
        values,
        row_totals,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneClassGroup {
    pub name: String,
    pub members: Vec<String>,
}

/// Parses `group <name> <phone>…` lines; `#` starts a comment.
pub fn parse_groups(text: &str) -> Result<Vec<PhoneClassGroup>, EvalError> {
    let mut groups = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        match (fields.next(), fields.next()) {
            (Some("group"), Some(name)) => {
                let members: Vec<String> = fields.map(str::to_string).collect();
                if members.is_empty() {
                    return Err(EvalError::Group(format!("line {}: group {name} has no members", n + 1)));
                }
                groups.push(PhoneClassGroup {
                    name: name.to_string(),
                    members,
                });
            }
            _ => return Err(EvalError::Group(format!("line {}: expected `group <name> <phones…>`", n + 1))),
        }
    }
    Ok(groups)
}

/// The shipped obstruent and oral/nasal groups.
pub fn default_groups() -> Vec<PhoneClassGroup> {
    parse_groups(DEFAULT_GROUPS).expect("bundled groups parse")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnSelection {
    #[default]
    Full,
    Restricted,
}

/// Rows (and optionally columns) restricted to the group's members.
pub fn submatrix(
    matrix: &ConfusionMatrix,
    group: &PhoneClassGroup,
    columns: ColumnSelection,
) -> Result<ConfusionMatrix, EvalError> {
    let find = |labels: &[String], m: &str| {
        labels
            .iter()
            .position(|l| l == m)
            .ok_or_else(|| EvalError::Group(format!("group {}: unknown phone {m}", group.name)))
    };
    let rows = group
        .members
        .iter()
        .map(|m| find(&matrix.row_labels, m))
        .collect::<Result<Vec<_>, _>>()?;
    let cols = match columns {
        ColumnSelection::Full => (0..matrix.col_labels.len()).collect(),
        ColumnSelection::Restricted => group
            .members
            .iter()
            .map(|m| find(&matrix.col_labels, m))
            .collect::<Result<Vec<_>, _>>()?,
    };
    let pick = |i: usize| -> (Vec<u64>, Vec<f64>) {
        (
            cols.iter().map(|&j| matrix.counts[i][j]).collect(),
            cols.iter().map(|&j| matrix.values[i][j]).collect(),
        )
    };
    let (counts, values) = rows.iter().map(|&i| pick(i)).unzip();
    Ok(ConfusionMatrix {
        row_labels: rows.iter().map(|&i| matrix.row_labels[i].clone()).collect(),
        col_labels: cols.iter().map(|&j| matrix.col_labels[j].clone()).collect(),
        counts,
        values,
        row_totals: rows.iter().map(|&i| matrix.row_totals[i]).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellChange {
    pub true_label: String,
    pub predicted_label: String,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixComparison {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// `b − a`, elementwise.
    pub delta: Vec<Vec<f64>>,
    /// Off-diagonal cells by decreasing `|Δ|`, then row, then column.
    pub ranked: Vec<CellChange>,
}

pub fn compare_matrices(a: &ConfusionMatrix, b: &ConfusionMatrix) -> Result<MatrixComparison, EvalError> {
    if a.row_labels != b.row_labels || a.col_labels != b.col_labels {
        return Err(EvalError::Contract("confusion matrices have different labels".into()));
    }
    let delta: Vec<Vec<f64>> = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| y - x).collect())
        .collect();
    let mut cells = Vec::new();
    for (i, t) in a.row_labels.iter().enumerate() {
        for (j, p) in a.col_labels.iter().enumerate() {
            if t != p {
                cells.push((i, j));
            }
        }
    }
    cells.sort_by(|&(i1, j1), &(i2, j2)| {
        delta[i2][j2]
            .abs()
            .total_cmp(&delta[i1][j1].abs())
            .then((i1, j1).cmp(&(i2, j2)))
    });
    let ranked = cells
        .into_iter()
        .map(|(i, j)| CellChange {
            true_label: a.row_labels[i].clone(),
            predicted_label: a.col_labels[j].clone(),
            a: a.values[i][j],
            b: b.values[i][j],
            delta: delta[i][j],
        })
        .collect();
    Ok(MatrixComparison {
        row_labels: a.row_labels.clone(),
        col_labels: a.col_labels.clone(),
        delta,
        ranked,
    })
}
