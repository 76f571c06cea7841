//! Synthetic corpora for smoke runs: tone-coded phones, alignments,
//! manifests, expert ratings and a matching experiment config.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inventory::PhoneInventory;
use crate::perceptual::{write_ratings, ExpertRating, SCORE_MAX, SCORE_MIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpusSpec {
    pub tag: String,
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub utterance_s: f64,
    /// Severity drawn uniformly from `[lo, hi]`; 10 is unimpaired.
    pub severity: (f64, f64),
    /// Cohort tag for the ratings file; `None` writes no ratings.
    pub cohort: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub sample_rate_hz: u32,
    pub raters: usize,
    pub corpora: Vec<SynthCorpusSpec>,
}

impl Default for SynthConfig {
    /// About ten minutes of audio: a fine-tuning corpus of unimpaired
    /// speakers, a control cohort and a patient cohort.
    fn default() -> Self {
        let spec = |tag: &str, n, utts, severity, cohort: Option<&str>| SynthCorpusSpec {
            tag: tag.into(),
            n_speakers: n,
            utterances_per_speaker: utts,
            utterance_s: 3.0,
            severity,
            cohort: cohort.map(str::to_string),
        };
        Self {
            seed: 0,
            sample_rate_hz: 16_000,
            raters: 6,
            corpora: vec![
                spec("synth-train", 12, 10, (10.0, 10.0), None),
                spec("synth-control", 6, 4, (8.5, 10.0), Some("control")),
                spec("synth-patient", 12, 4, (1.0, 9.0), Some("patient")),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpeaker {
    pub speaker_id: String,
    pub corpus_tag: String,
    pub gender: String,
    pub severity: f64,
}

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub root: PathBuf,
    pub config_path: PathBuf,
    pub manifests: Vec<(String, PathBuf)>,
    pub speakers: Vec<SynthSpeaker>,
    pub total_seconds: f64,
}

/// Three class-specific partials; distinct for every class index.
fn partials(class: usize) -> [f64; 3] {
    let c = class as f64;
    [
        200.0 + 55.0 * c,
        1000.0 + 170.0 * ((class * 7) % 31) as f64,
        2600.0 + 140.0 * ((class * 13) % 31) as f64,
    ]
}

/// Confusion partner used when a patient mis-produces a phone: voicing and
/// oral/nasal counterparts where the inventory has one.
fn partner(inv: &PhoneInventory, class: usize) -> usize {
    const PAIRS: [(&str, &str); 10] = [
        ("p", "b"),
        ("t", "d"),
        ("k", "g"),
        ("f", "v"),
        ("s", "z"),
        ("ʃ", "ʒ"),
        ("a", "ɑ̃"),
        ("Ô", "ɔ̃"),
        ("Ê", "µ"),
        ("m", "n"),
    ];
    let sym = inv.symbol(class).unwrap_or("");
    for (a, b) in PAIRS {
        let other = if sym == a {
            b
        } else if sym == b {
            a
        } else {
            continue;
        };
        if let Some(i) = inv.lookup(other) {
            return i;
        }
    }
    (class + 1) % inv.phones().len()
}

fn is_fricative(sym: &str) -> bool {
    matches!(sym, "f" | "s" | "ʃ" | "v" | "z" | "ʒ")
}

struct Voice {
    formant_scale: f64,
    f0: f64,
    severity: f64,
}

/// Appends one segment of `class` (or silence) to `out`.
fn render(out: &mut Vec<f64>, class: Option<usize>, sym: &str, dur_s: f64, sr: f64, voice: &Voice, rng: &mut ChaCha8Rng) {
    let n = (dur_s * sr).round() as usize;
    let noise_sd = 0.004 * (1.0 + 0.3 * (10.0 - voice.severity));
    let noise = Normal::new(0.0, noise_sd).expect("positive sd");
    let Some(class) = class else {
        out.extend((0..n).map(|_| noise.sample(rng)));
        return;
    };
    let freqs = partials(class).map(|f| (f * voice.formant_scale).min(0.45 * sr));
    let phases: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..2.0 * PI));
    let ramp = (0.005 * sr) as usize;
    let fric = is_fricative(sym);
    let hiss = Normal::new(0.0, 0.05).expect("positive sd");
    for i in 0..n {
        let t = i as f64 / sr;
        let env = (i.min(n - 1 - i) as f64 / ramp.max(1) as f64).min(1.0);
        let mut v: f64 = freqs
            .iter()
            .zip(&phases)
            .zip([0.25, 0.15, 0.08])
            .map(|((&f, &p), a)| a * (2.0 * PI * f * t + p).sin())
            .sum();
        if fric {
            v = 0.5 * v + hiss.sample(rng);
        } else {
            v *= 1.0 + 0.3 * (2.0 * PI * voice.f0 * t).sin();
        }
        out.push(env * v + noise.sample(rng));
    }
}

fn write_wav(path: &Path, samples: &[f64], sr: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sr,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| Error::io(path, e))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
        w.write_sample(v).map_err(|e| Error::io(path, e))?;
    }
    w.finalize().map_err(|e| Error::io(path, e))
}

fn clamp_score(v: f64) -> f64 {
    ((v.clamp(SCORE_MIN, SCORE_MAX)) * 2.0).round() / 2.0
}

/// Writes the corpora under `root` and returns what was produced.
///
/// Layout: `corpora/{tag}/{manifest.csv, wav/, align/}`,
/// `ratings/{tag}.csv`, `speakers.csv` and `experiment.toml`.
pub fn generate(root: &Path, config: &SynthConfig) -> Result<SynthSummary> {
    let inv = PhoneInventory::french();
    let n_phones = inv.phones().len();
    let sr = config.sample_rate_hz as f64;
    let mut manifests = Vec::new();
    let mut speakers = Vec::new();
    let mut total_seconds = 0.0;

    for (ci, spec) in config.corpora.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(ci as u64);
        let dir = root.join("corpora").join(&spec.tag);
        for sub in ["wav", "align"] {
            fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(&dir, e))?;
        }
        let manifest_path = dir.join("manifest.csv");
        let mut manifest = csv::Writer::from_path(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        manifest
            .write_record(["utterance_id", "audio_path", "speaker_id", "gender", "corpus_tag", "alignment_path"])
            .map_err(|e| Error::io(&manifest_path, e))?;
        let mut ratings = Vec::new();

        for s in 0..spec.n_speakers {
            let speaker_id = format!("{}-spk{s:02}", spec.tag);
            let female = s % 2 == 0;
            let severity = rng.gen_range(spec.severity.0..=spec.severity.1);
            let voice = Voice {
                formant_scale: if female { 1.08 } else { 1.0 } * rng.gen_range(0.97..1.03),
                f0: if female { 210.0 } else { 120.0 } * rng.gen_range(0.9..1.1),
                severity,
            };
            let p_sub = 0.6 * (1.0 - severity / 10.0);
            speakers.push(SynthSpeaker {
                speaker_id: speaker_id.clone(),
                corpus_tag: spec.tag.clone(),
                gender: if female { "F" } else { "M" }.into(),
                severity,
            });

            for u in 0..spec.utterances_per_speaker {
                let utt = format!("{speaker_id}-u{u:02}");
                let mut samples = Vec::new();
                let mut align = String::from("start_s,end_s,phone\n");
                let mut t = 0.0;
                let push = |samples: &mut Vec<f64>, align: &mut String, label: usize, realized: Option<usize>, dur: f64, rng: &mut ChaCha8Rng| {
                    let start = samples.len() as f64 / sr;
                    let sym = realized.and_then(|c| inv.symbol(c)).unwrap_or("");
                    render(samples, realized, sym, dur, sr, &voice, rng);
                    let end = samples.len() as f64 / sr;
                    let _ = writeln!(align, "{start:.4},{end:.4},{}", inv.symbol(label).expect("valid class"));
                };
                let silence = inv.silence_index();
                let lead = rng.gen_range(0.15..0.3);
                push(&mut samples, &mut align, silence, None, lead, &mut rng);
                t += lead;
                while t < spec.utterance_s - 0.3 {
                    if rng.gen_bool(0.08) {
                        let d = rng.gen_range(0.05..0.15);
                        push(&mut samples, &mut align, silence, None, d, &mut rng);
                        t += d;
                    }
                    let c = rng.gen_range(0..n_phones);
                    let realized = if rng.gen_bool(p_sub) { partner(&inv, c) } else { c };
                    let d = rng.gen_range(0.06..0.14);
                    push(&mut samples, &mut align, c, Some(realized), d, &mut rng);
                    t += d;
                }
                let tail = rng.gen_range(0.15..0.3);
                push(&mut samples, &mut align, silence, None, tail, &mut rng);
                total_seconds += samples.len() as f64 / sr;

                let wav = dir.join("wav").join(format!("{utt}.wav"));
                write_wav(&wav, &samples, config.sample_rate_hz)?;
                let ali = dir.join("align").join(format!("{utt}.csv"));
                fs::write(&ali, align).map_err(|e| Error::io(&ali, e))?;
                manifest
                    .write_record([
                        utt.as_str(),
                        &format!("wav/{utt}.wav"),
                        &speaker_id,
                        if female { "F" } else { "M" },
                        &spec.tag,
                        &format!("align/{utt}.csv"),
                    ])
                    .map_err(|e| Error::io(&manifest_path, e))?;
            }

            if let Some(cohort) = &spec.cohort {
                let sev_noise = Normal::new(0.0, 0.6).expect("positive sd");
                let int_noise = Normal::new(0.0, 0.8).expect("positive sd");
                for r in 0..config.raters {
                    ratings.push(ExpertRating {
                        speaker_id: speaker_id.clone(),
                        rater_id: format!("r{r}"),
                        severity: Some(clamp_score(severity + sev_noise.sample(&mut rng))),
                        intelligibility: Some(clamp_score(0.85 * severity + 1.2 + int_noise.sample(&mut rng))),
                        cohort: Some(cohort.clone()),
                    });
                }
            }
        }
        manifest.flush().map_err(|e| Error::io(&manifest_path, e))?;
        if spec.cohort.is_some() {
            let dir = root.join("ratings");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_ratings(&dir.join(format!("{}.csv", spec.tag)), &ratings)?;
        }
        manifests.push((spec.tag.clone(), manifest_path));
    }

    let spk_path = root.join("speakers.csv");
    let mut w = csv::Writer::from_path(&spk_path).map_err(|e| Error::io(&spk_path, e))?;
    for s in &speakers {
        w.serialize(s).map_err(|e| Error::io(&spk_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&spk_path, e))?;

    let config_path = root.join("experiment.toml");
    fs::write(&config_path, example_config(config)).map_err(|e| Error::io(&config_path, e))?;
    Ok(SynthSummary {
        root: root.to_path_buf(),
        config_path,
        manifests,
        speakers,
        total_seconds,
    })
}

/// A small-CNN, two-epoch experiment over the generated corpora: the first
/// corpus fine-tunes, the rest are test sets.
pub fn example_config(config: &SynthConfig) -> String {
    let quoted = |v: Vec<&str>| v.iter().map(|s| format!("\"{s}\"")).collect::<Vec<_>>().join(", ");
    let tags: Vec<&str> = config.corpora.iter().map(|c| c.tag.as_str()).collect();
    let mut s = String::new();
    let _ = writeln!(s, "run_id = \"synth-cnn\"");
    let _ = writeln!(s, "finetune_corpora = [{}]", quoted(tags[..1].to_vec()));
    let _ = writeln!(s, "test_corpora = [{}]", quoted(tags[1..].to_vec()));
    s.push_str(
        "\n[encoder]\nkind = \"cnn\"\nconv_layers = [\n  \
         { out_channels = 8, kernel = [3, 3], pool = [2, 2] },\n  \
         { out_channels = 16, kernel = [3, 3], pool = [2, 2] },\n]\n",
    );
    s.push_str("\n[corpora]\n");
    for t in &tags {
        let _ = writeln!(s, "\"{t}\" = \"corpora/{t}/manifest.csv\"");
    }
    s.push_str("\n[ratings]\n");
    for c in config.corpora.iter().skip(1).filter(|c| c.cohort.is_some()) {
        let _ = writeln!(s, "\"{0}\" = \"ratings/{0}.csv\"", c.tag);
    }
    s.push_str("\n[training]\nepochs = 2\nbatch_size = 64\n\n[balancing]\ntarget_count = 300\n");
    let _ = writeln!(s, "\n[seeds]\nbalance = {0}\nsplit = {0}\ninit = {0}\ntrain = {0}\nbootstrap = {0}", config.seed);
    s
}

/// Per-speaker accuracy as a noisy linear function of a uniform `[0, 10]`
/// severity, with noise scaled so the population correlation is `target_r`.
#[derive(Debug, Clone)]
pub struct LinearCohort {
    pub severity: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub noise_sd: f64,
}

pub fn linear_cohort(n: usize, slope: f64, intercept: f64, target_r: f64, seed: u64) -> LinearCohort {
    assert!(target_r > 0.0 && target_r < 1.0, "target_r must be in (0, 1)");
    let sd_x = 10.0 / 12f64.sqrt();
    let noise_sd = slope.abs() * sd_x * (1.0 / (target_r * target_r) - 1.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).expect("finite sd");
    let severity: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
    let accuracy = severity
        .iter()
        .map(|&x| intercept + slope * x + noise.sample(&mut rng))
        .collect();
    LinearCohort {
        severity,
        accuracy,
        noise_sd,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_alignments;
    use crate::experiments::ExperimentConfig;
    use crate::models::BackendRegistry;
    use crate::perceptual::{pearson, read_ratings};

    fn tiny() -> SynthConfig {
        let mut c = SynthConfig::default();
        for spec in &mut c.corpora {
            spec.n_speakers = 3;
            spec.utterances_per_speaker = 1;
            spec.utterance_s = 1.0;
        }
        c
    }

    #[test]
    fn generated_corpus_parses_and_config_validates() {
        let dir = tempfile::tempdir().unwrap();
        let summary = generate(dir.path(), &tiny()).unwrap();
        let inv = PhoneInventory::french();
        for (_, manifest) in &summary.manifests {
            let utts = parse_alignments(manifest, &inv).unwrap();
            assert_eq!(utts.len(), 3);
            let last = utts[0].segments.last().unwrap();
            assert_eq!(last.label, inv.silence_index());
        }
        let ratings = read_ratings(&dir.path().join("ratings/synth-patient.csv")).unwrap();
        assert_eq!(ratings.len(), 3 * 6);
        let cfg = ExperimentConfig::load(&summary.config_path).unwrap();
        cfg.validate(&BackendRegistry::default()).unwrap();
        assert_eq!(cfg.test_corpora, ["synth-control", "synth-patient"]);
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate(a.path(), &tiny()).unwrap();
        generate(b.path(), &tiny()).unwrap();
        let rel = "corpora/synth-patient/wav/synth-patient-spk01-u00.wav";
        assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap());
    }

    #[test]
    fn default_corpus_is_about_ten_minutes() {
        let c = SynthConfig::default();
        let secs: f64 = c
            .corpora
            .iter()
            .map(|s| (s.n_speakers * s.utterances_per_speaker) as f64 * s.utterance_s)
            .sum();
        assert!((540.0..=660.0).contains(&secs), "{secs}");
    }

    #[test]
    fn partners_are_symmetric_where_paired() {
        let inv = PhoneInventory::french();
        let p = inv.lookup("p").unwrap();
        assert_eq!(partner(&inv, partner(&inv, p)), p);
        assert_eq!(inv.symbol(partner(&inv, p)), Some("b"));
    }

    #[test]
    fn cohort_correlation_near_target() {
        let c = linear_cohort(2000, 3.0, 40.0, 0.9, 1);
        let r = pearson(&c.severity, &c.accuracy).unwrap();
        assert!((r - 0.9).abs() < 0.02, "{r}");
    }
}
