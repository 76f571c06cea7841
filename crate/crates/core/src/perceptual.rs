//! Expert ratings against per-speaker accuracy: averaging, Pearson r,
//! least-squares line and scatter export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{balanced_accuracy, present_phones, PredictionSet};

pub const SCORE_MIN: f64 = 0.0;
pub const SCORE_MAX: f64 = 10.0;
/// Speakers rated by fewer experts than this are flagged.
pub const MIN_RATERS: usize = 6;

#[derive(Debug, Error)]
pub enum PerceptualError {
    #[error("invalid rating: {0}")]
    Validation(String),
    #[error("correlation undefined: {0}")]
    Correlation(String),
    #[error("export: {0}")]
    Export(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl ToString) -> PerceptualError {
    PerceptualError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// One expert's scores for one speaker; either dimension may be missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertRating {
    pub speaker_id: String,
    pub rater_id: String,
    pub severity: Option<f64>,
    pub intelligibility: Option<f64>,
    /// e.g. `patient` or `control`.
    #[serde(default)]
    pub cohort: Option<String>,
}

impl ExpertRating {
    pub fn validate(&self) -> Result<(), PerceptualError> {
        for (name, v) in [("severity", self.severity), ("intelligibility", self.intelligibility)] {
            if let Some(v) = v {
                if !(SCORE_MIN..=SCORE_MAX).contains(&v) {
                    return Err(PerceptualError::Validation(format!(
                        "{name} {v} for speaker {} by rater {} outside [0, 10]",
                        self.speaker_id, self.rater_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Reads `speaker_id,rater_id,severity,intelligibility[,cohort]`.
pub fn read_ratings(path: &Path) -> Result<Vec<ExpertRating>, PerceptualError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let r: ExpertRating = rec.map_err(|e| io_err(path, e))?;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

pub fn write_ratings(path: &Path, ratings: &[ExpertRating]) -> Result<(), PerceptualError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in ratings {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerScore {
    pub speaker_id: String,
    pub mean_severity: Option<f64>,
    pub mean_intelligibility: Option<f64>,
    /// Distinct raters with at least one score for this speaker.
    pub n_raters: usize,
    pub cohort: Option<String>,
    pub few_raters: bool,
}

impl SpeakerScore {
    pub fn score(&self, dim: Dimension) -> Option<f64> {
        match dim {
            Dimension::Severity => self.mean_severity,
            Dimension::Intelligibility => self.mean_intelligibility,
        }
    }
}

/// Order-independent mean: values are summed in sorted order.
fn mean_sorted(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v.iter().sum::<f64>() / v.len() as f64)
}

/// Unweighted per-speaker means over the raters that scored each dimension.
pub fn average_ratings(ratings: &[ExpertRating]) -> Result<Vec<SpeakerScore>, PerceptualError> {
    #[derive(Default)]
    struct Acc<'a> {
        sev: Vec<f64>,
        int: Vec<f64>,
        raters: BTreeSet<&'a str>,
        cohorts: BTreeSet<&'a str>,
    }
    let mut by_speaker: BTreeMap<&str, Acc> = BTreeMap::new();
    for r in ratings {
        r.validate()?;
        let acc = by_speaker.entry(&r.speaker_id).or_default();
        acc.sev.extend(r.severity);
        acc.int.extend(r.intelligibility);
        if r.severity.is_some() || r.intelligibility.is_some() {
            acc.raters.insert(&r.rater_id);
        }
        if let Some(c) = &r.cohort {
            acc.cohorts.insert(c);
        }
    }
    by_speaker
        .into_iter()
        .map(|(speaker, acc)| {
            if acc.cohorts.len() > 1 {
                return Err(PerceptualError::Validation(format!(
                    "speaker {speaker} has conflicting cohorts {:?}",
                    acc.cohorts
                )));
            }
            Ok(SpeakerScore {
                speaker_id: speaker.to_string(),
                mean_severity: mean_sorted(acc.sev),
                mean_intelligibility: mean_sorted(acc.int),
                n_raters: acc.raters.len(),
                cohort: acc.cohorts.into_iter().next().map(str::to_string),
                few_raters: acc.raters.len() < MIN_RATERS,
            })
        })
        .collect()
}

/// Per-speaker phone-balanced accuracy over the phones that speaker produced,
/// minus `exclude` (normally silence). Speakers left with no phone are omitted.
pub fn speaker_balanced_accuracy(preds: &PredictionSet, exclude: Option<usize>) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for speaker in preds.speakers() {
        let subset = preds.filter(|r| r.speaker_id == speaker);
        let phones = present_phones(&subset, exclude);
        if phones.is_empty() {
            continue;
        }
        let value = balanced_accuracy(&subset, &phones).expect("present phones are defined").value;
        out.insert(speaker, value);
    }
    out
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(f64, f64), PerceptualError> {
    if x.len() != y.len() {
        return Err(PerceptualError::Correlation(format!("length mismatch {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(PerceptualError::Correlation(format!("need at least 3 points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(PerceptualError::Correlation("non-finite value".into()));
    }
    let n = x.len() as f64;
    Ok((x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n))
}

/// Product-moment correlation, computed on centered values.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, PerceptualError> {
    let (mx, my) = check_pair(x, y)?;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(PerceptualError::Correlation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Least-squares `y ≈ slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64), PerceptualError> {
    let (mx, my) = check_pair(x, y)?;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    if sxx == 0.0 {
        return Err(PerceptualError::Correlation("zero variance in x".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub slope: f64,
    pub intercept: f64,
    pub n_speakers: usize,
}

/// `x` is accuracy, `y` the perceptual score.
pub fn correlate(x: &[f64], y: &[f64]) -> Result<CorrelationResult, PerceptualError> {
    let r = pearson(x, y)?;
    let (slope, intercept) = linear_fit(x, y)?;
    Ok(CorrelationResult {
        r,
        slope,
        intercept,
        n_speakers: x.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Severity,
    Intelligibility,
}

impl Dimension {
    pub const ALL: [Dimension; 2] = [Dimension::Severity, Dimension::Intelligibility];
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimension::Severity => "severity",
            Dimension::Intelligibility => "intelligibility",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub speaker_id: String,
    pub score: f64,
    pub balanced_accuracy: f64,
    pub cohort: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub speaker_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterExport {
    pub dimension: Dimension,
    pub rows: Vec<ScatterRow>,
    /// Absent when fewer than 3 speakers overlap or a variance is zero.
    pub fit: Option<CorrelationResult>,
    pub exclusions: Vec<Exclusion>,
    pub csv_path: PathBuf,
    pub fit_path: PathBuf,
    pub exclusions_path: PathBuf,
}

/// Pairs scores with accuracies, writes
/// `scatter_{dim}.csv`, `scatter_{dim}_fit.json` and
/// `scatter_{dim}_exclusions.csv` under `out_dir`.
pub fn scatter_export(
    scores: &[SpeakerScore],
    accuracies: &BTreeMap<String, f64>,
    dimension: Dimension,
    out_dir: &Path,
) -> Result<ScatterExport, PerceptualError> {
    let mut rows = Vec::new();
    let mut exclusions = Vec::new();
    let mut seen = BTreeSet::new();
    for s in scores {
        seen.insert(s.speaker_id.as_str());
        match (s.score(dimension), accuracies.get(&s.speaker_id)) {
            (Some(score), Some(&acc)) => rows.push(ScatterRow {
                speaker_id: s.speaker_id.clone(),
                score,
                balanced_accuracy: acc,
                cohort: s.cohort.clone().unwrap_or_default(),
            }),
            (None, _) => exclusions.push(Exclusion {
                speaker_id: s.speaker_id.clone(),
                reason: format!("no {dimension} rating"),
            }),
            (Some(_), None) => exclusions.push(Exclusion {
                speaker_id: s.speaker_id.clone(),
                reason: "no accuracy".into(),
            }),
        }
    }
    for speaker in accuracies.keys() {
        if !seen.contains(speaker.as_str()) {
            exclusions.push(Exclusion {
                speaker_id: speaker.clone(),
                reason: format!("no {dimension} rating"),
            });
        }
    }
    exclusions.sort_by(|a, b| a.speaker_id.cmp(&b.speaker_id));
    if rows.is_empty() {
        return Err(PerceptualError::Export(format!(
            "no speaker has both a {dimension} rating and an accuracy"
        )));
    }
    let x: Vec<f64> = rows.iter().map(|r| r.balanced_accuracy).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let fit = correlate(&x, &y).ok();

    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let csv_path = out_dir.join(format!("scatter_{dimension}.csv"));
    let fit_path = out_dir.join(format!("scatter_{dimension}_fit.json"));
    let exclusions_path = out_dir.join(format!("scatter_{dimension}_exclusions.csv"));

    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| io_err(&csv_path, e))?;
    }
    w.flush().map_err(|e| io_err(&csv_path, e))?;

    let mut f = File::create(&fit_path).map_err(|e| io_err(&fit_path, e))?;
    serde_json::to_writer_pretty(&mut f, &serde_json::json!({ "dimension": dimension, "fit": fit }))
        .map_err(|e| io_err(&fit_path, e))?;
    f.write_all(b"\n").map_err(|e| io_err(&fit_path, e))?;

    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&exclusions_path)
        .map_err(|e| io_err(&exclusions_path, e))?;
    w.write_record(["speaker_id", "reason"]).map_err(|e| io_err(&exclusions_path, e))?;
    for e in &exclusions {
        w.serialize(e).map_err(|err| io_err(&exclusions_path, err))?;
    }
    w.flush().map_err(|e| io_err(&exclusions_path, e))?;

    Ok(ScatterExport {
        dimension,
        rows,
        fit,
        exclusions,
        csv_path,
        fit_path,
        exclusions_path,
    })
}

/// Reloads a scatter CSV written by [`scatter_export`].
pub fn read_scatter(path: &Path) -> Result<Vec<ScatterRow>, PerceptualError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    rdr.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::PredictionRecord;
    use proptest::prelude::*;

    fn rating(s: &str, r: &str, sev: Option<f64>, int: Option<f64>) -> ExpertRating {
        ExpertRating {
            speaker_id: s.into(),
            rater_id: r.into(),
            severity: sev,
            intelligibility: int,
            cohort: None,
        }
    }

    #[test]
    fn averages_and_flags() {
        let scores = average_ratings(&[
            rating("s1", "a", Some(4.0), Some(7.0)),
            rating("s1", "b", Some(6.0), None),
        ])
        .unwrap();
        assert_eq!(scores[0].mean_severity, Some(5.0));
        assert_eq!(scores[0].mean_intelligibility, Some(7.0));
        assert_eq!(scores[0].n_raters, 2);
        assert!(scores[0].few_raters);

        let six: Vec<_> = (0..6).map(|i| rating("s2", &format!("r{i}"), Some(3.3), Some(3.3))).collect();
        let s = &average_ratings(&six).unwrap()[0];
        assert!((s.mean_severity.unwrap() - 3.3).abs() < 1e-12);
        assert!(!s.few_raters);
    }

    #[test]
    fn out_of_range_is_rejected() {
        assert!(matches!(
            average_ratings(&[rating("s", "a", Some(11.0), None)]),
            Err(PerceptualError::Validation(_))
        ));
    }

    #[test]
    fn csv_with_missing_cells_and_cohort() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(
            &p,
            "speaker_id,rater_id,severity,intelligibility,cohort\ns1,a,4,,patient\ns1,b,,8,patient\ns2,a,9,9,control\n",
        )
        .unwrap();
        let ratings = read_ratings(&p).unwrap();
        assert_eq!(ratings[0].intelligibility, None);
        let scores = average_ratings(&ratings).unwrap();
        assert_eq!(scores[0].mean_severity, Some(4.0));
        assert_eq!(scores[0].mean_intelligibility, Some(8.0));
        assert_eq!(scores[0].cohort.as_deref(), Some("patient"));
        std::fs::write(&p, "speaker_id,rater_id,severity,intelligibility\ns1,a,4,5\n").unwrap();
        assert_eq!(read_ratings(&p).unwrap()[0].cohort, None);
    }

    #[test]
    fn speaker_accuracy_uses_produced_phones_only() {
        let rec = |s: &str, t, p| PredictionRecord {
            true_label: t,
            predicted_label: p,
            speaker_id: s.into(),
            utterance_id: String::new(),
        };
        let set = PredictionSet::new(
            vec![rec("x", 0, 0), rec("x", 0, 0), rec("x", 5, 1), rec("x", 5, 2), rec("y", 3, 3), rec("y", 31, 0)],
            32,
        )
        .unwrap();
        let acc = speaker_balanced_accuracy(&set, Some(31));
        assert_eq!(acc["x"], 50.0);
        assert_eq!(acc["y"], 100.0);
    }

    #[test]
    fn pearson_and_fit_by_hand() {
        let x = [2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(linear_fit(&x, &y).unwrap(), (2.0, 3.0));
        assert_eq!(linear_fit(&x, &[4.0; 4]).unwrap(), (0.0, 4.0));
        // x = 1..5, y = 2,4,5,4,5: sxy = 6, sxx = 10, syy = 6
        let r = pearson(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 4.0, 5.0, 4.0, 5.0]).unwrap();
        assert!((r - 6.0 / 60f64.sqrt()).abs() < 1e-14);
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn scatter_export_files() {
        let dir = tempfile::tempdir().unwrap();
        let scores = average_ratings(&[
            rating("a", "r", Some(2.0), None),
            rating("b", "r", Some(5.0), None),
            rating("c", "r", Some(9.0), None),
            rating("d", "r", Some(9.0), None),
        ])
        .unwrap();
        let acc = BTreeMap::from([("a".into(), 40.0), ("b".into(), 55.0), ("c".into(), 80.0), ("e".into(), 70.0)]);
        let out = scatter_export(&scores, &acc, Dimension::Severity, dir.path()).unwrap();
        assert_eq!(out.rows.len(), 3);
        assert_eq!(out.exclusions.len(), 2);
        let fit = out.fit.clone().unwrap();
        let reloaded = read_scatter(&out.csv_path).unwrap();
        assert_eq!(reloaded, out.rows);
        let x: Vec<f64> = reloaded.iter().map(|r| r.balanced_accuracy).collect();
        let y: Vec<f64> = reloaded.iter().map(|r| r.score).collect();
        assert_eq!(pearson(&x, &y).unwrap(), fit.r);
        let excl = std::fs::read_to_string(&out.exclusions_path).unwrap();
        assert_eq!(excl.lines().count(), 3);
        assert!(scatter_export(&scores, &BTreeMap::new(), Dimension::Intelligibility, dir.path()).is_err());
    }

    proptest! {
        #[test]
        fn pearson_affine_invariant_and_symmetric(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..50),
            a in 0.1f64..10.0, b in -50.0f64..50.0, c in 0.1f64..10.0, d in -50.0f64..50.0,
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let Ok(r) = pearson(&x, &y) {
                let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                let ys: Vec<f64> = y.iter().map(|v| c * v + d).collect();
                prop_assert!((pearson(&xs, &ys).unwrap() - r).abs() < 1e-12);
                prop_assert_eq!(pearson(&y, &x).unwrap(), r);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }

        #[test]
        fn residuals_orthogonal_to_x(pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40)) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let Ok((m, q)) = linear_fit(&x, &y) {
                let dot: f64 = x.iter().zip(&y).map(|(a, b)| a * (b - m * a - q)).sum();
                prop_assert!(dot.abs() < 1e-9);
            }
        }

        #[test]
        fn rater_order_does_not_matter(vals in prop::collection::vec(0.0f64..10.0, 1..12), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let ratings: Vec<_> = vals.iter().enumerate().map(|(i, &v)| rating("s", &format!("r{i}"), Some(v), Some(10.0 - v))).collect();
            let mut shuffled = ratings.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(average_ratings(&ratings).unwrap(), average_ratings(&shuffled).unwrap());
        }

        #[test]
        fn pooled_then_split_is_consistent(
            a in prop::collection::vec((0usize..4, 0usize..4), 1..40),
            b in prop::collection::vec((0usize..4, 0usize..4), 1..40),
        ) {
            let mk = |s: &str, pairs: &[(usize, usize)]| -> Vec<PredictionRecord> {
                pairs.iter().map(|&(t, p)| PredictionRecord { true_label: t, predicted_label: p, speaker_id: s.into(), utterance_id: String::new() }).collect()
            };
            let sa = PredictionSet::new(mk("a", &a), 4).unwrap();
            let sb = PredictionSet::new(mk("b", &b), 4).unwrap();
            let mut both = mk("a", &a);
            both.extend(mk("b", &b));
            let pooled = speaker_balanced_accuracy(&PredictionSet::new(both, 4).unwrap(), None);
            prop_assert_eq!(pooled["a"], speaker_balanced_accuracy(&sa, None)["a"]);
            prop_assert_eq!(pooled["b"], speaker_balanced_accuracy(&sb, None)["b"]);
        }
    }
}
