use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sort_frames, CorpusError, FrameRecord, Gender};
use crate::inventory::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BalancingPolicy {
    pub balance_phones: bool,
    pub balance_gender: bool,
    pub seed: u64,
    /// Optional per-class cap applied on top of the minimum class count.
    pub target_count: Option<usize>,
    /// When false, silence neither constrains the per-class minimum nor has
    /// to be present; it is still capped at the common target.
    pub silence_in_minimum: bool,
    pub num_classes: usize,
}

impl Default for BalancingPolicy {
    fn default() -> Self {
        Self {
            balance_phones: true,
            balance_gender: false,
            seed: 0,
            target_count: None,
            silence_in_minimum: true,
            num_classes: NUM_CLASSES,
        }
    }
}

/// Per-class frame counts, indexed by label.
pub fn class_histogram(frames: &[FrameRecord], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for f in frames {
        counts[f.label] += 1;
    }
    counts
}

fn class_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniformly draws `k` of `items` without replacement; order preserved.
fn subsample(items: Vec<FrameRecord>, k: usize, rng: &mut ChaCha8Rng) -> Vec<FrameRecord> {
    if k >= items.len() {
        return items;
    }
    let mut picked = sample(rng, items.len(), k).into_vec();
    picked.sort_unstable();
    let mut slots: Vec<Option<FrameRecord>> = items.into_iter().map(Some).collect();
    picked
        .into_iter()
        .map(|i| slots[i].take().expect("index drawn once"))
        .collect()
}

/// Seeded downsampling to a uniform class histogram, optionally with equal
/// F/M counts inside every class. Output is sorted by
/// `(corpus_tag, utterance_id, center_s)`.
pub fn balance(
    frames: &[FrameRecord],
    policy: &BalancingPolicy,
) -> Result<Vec<FrameRecord>, CorpusError> {
    let n_classes = policy.num_classes;
    let silence = n_classes - 1;

    let mut by_class: Vec<Vec<FrameRecord>> = vec![Vec::new(); n_classes];
    for f in frames {
        if f.label >= n_classes {
            return Err(CorpusError::Balancing(format!(
                "label {} outside [0, {n_classes})",
                f.label
            )));
        }
        by_class[f.label].push(f.clone());
    }
    for class in &mut by_class {
        sort_frames(class);
    }

    let constrains = |c: usize| policy.silence_in_minimum || c != silence;

    // frames each class can offer once gender strata are applied
    let available: Vec<usize> = by_class
        .iter()
        .map(|frames| {
            if policy.balance_gender {
                let f = frames.iter().filter(|r| r.gender == Gender::Female).count();
                let m = frames.iter().filter(|r| r.gender == Gender::Male).count();
                2 * f.min(m)
            } else {
                frames.len()
            }
        })
        .collect();

    let target = if policy.balance_phones {
        for (c, &n) in available.iter().enumerate() {
            if constrains(c) && n == 0 {
                let why = if by_class[c].is_empty() {
                    "has no frames"
                } else {
                    "lacks one of the F/M strata"
                };
                return Err(CorpusError::Balancing(format!("class {c} {why}")));
            }
        }
        let min = available
            .iter()
            .enumerate()
            .filter(|(c, _)| constrains(*c))
            .map(|(_, &n)| n)
            .min()
            .unwrap_or(0);
        let mut t = policy.target_count.map_or(min, |cap| cap.min(min));
        if policy.balance_gender {
            t -= t % 2;
        }
        Some(t)
    } else {
        None
    };

    let mut out = Vec::new();
    for (c, class_frames) in by_class.into_iter().enumerate() {
        let mut rng = class_rng(policy.seed, c as u64);
        if policy.balance_gender {
            let (female, rest): (Vec<_>, Vec<_>) = class_frames
                .into_iter()
                .partition(|r| r.gender == Gender::Female);
            let male: Vec<_> = rest.into_iter().filter(|r| r.gender == Gender::Male).collect();
            let per_gender = match target {
                Some(t) => (t / 2).min(female.len()).min(male.len()),
                None => female.len().min(male.len()),
            };
            out.extend(subsample(female, per_gender, &mut rng));
            out.extend(subsample(male, per_gender, &mut rng));
        } else {
            let k = target.unwrap_or(class_frames.len());
            out.extend(subsample(class_frames, k, &mut rng));
        }
    }
    sort_frames(&mut out);
    Ok(out)
}

/// Per-class seeded split: each class sends `⌊ratio·n_c⌋` frames to train
/// (clamped to `[1, n_c − 1]`) and the rest to validation.
pub fn split_train_validation(
    frames: &[FrameRecord],
    ratio: f64,
    seed: u64,
    num_classes: usize,
) -> Result<(Vec<FrameRecord>, Vec<FrameRecord>), CorpusError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::Split(format!("ratio {ratio} not in (0, 1)")));
    }
    let mut by_class: Vec<Vec<FrameRecord>> = vec![Vec::new(); num_classes];
    for f in frames {
        if f.label >= num_classes {
            return Err(CorpusError::Split(format!("label {} out of range", f.label)));
        }
        by_class[f.label].push(f.clone());
    }

    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (c, mut class_frames) in by_class.into_iter().enumerate() {
        if class_frames.is_empty() {
            continue;
        }
        if class_frames.len() < 2 {
            return Err(CorpusError::Split(format!(
                "class {c} has {} frame(s), need at least 2",
                class_frames.len()
            )));
        }
        sort_frames(&mut class_frames);
        let mut rng = class_rng(seed, c as u64);
        class_frames.shuffle(&mut rng);
        let n = class_frames.len();
        let n_train = ((ratio * n as f64 + 1e-9).floor() as usize).clamp(1, n - 1);
        let held_out = class_frames.split_off(n_train);
        train.extend(class_frames);
        validation.extend(held_out);
    }
    sort_frames(&mut train);
    sort_frames(&mut validation);
    Ok((train, validation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(label: usize, i: usize, gender: Gender) -> FrameRecord {
        FrameRecord {
            corpus_tag: "c".into(),
            utterance_id: format!("u{:03}", i / 50),
            center_s: (i % 50) as f64 * 0.01,
            label,
            speaker_id: format!("s{}", i % 7),
            gender,
        }
    }

    fn counts_two_classes(a: usize, t: usize) -> Vec<FrameRecord> {
        let mut v: Vec<_> = (0..a).map(|i| frame(0, i, Gender::Female)).collect();
        v.extend((0..t).map(|i| frame(1, i, Gender::Male)));
        v
    }

    fn two_class_policy() -> BalancingPolicy {
        BalancingPolicy {
            num_classes: 2,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn downsamples_to_minimum() {
        let out = balance(&counts_two_classes(100, 40), &two_class_policy()).unwrap();
        assert_eq!(class_histogram(&out, 2), vec![40, 40]);
    }

    #[test]
    fn target_count_caps() {
        let policy = BalancingPolicy {
            target_count: Some(25),
            ..two_class_policy()
        };
        let out = balance(&counts_two_classes(100, 40), &policy).unwrap();
        assert_eq!(class_histogram(&out, 2), vec![25, 25]);
    }

    #[test]
    fn balanced_input_is_unchanged() {
        let input = counts_two_classes(30, 30);
        let mut sorted = input.clone();
        sort_frames(&mut sorted);
        assert_eq!(balance(&input, &two_class_policy()).unwrap(), sorted);
    }

    #[test]
    fn missing_class_is_an_error() {
        let frames: Vec<_> = (0..10).map(|i| frame(0, i, Gender::Male)).collect();
        match balance(&frames, &BalancingPolicy::default()) {
            Err(CorpusError::Balancing(msg)) => assert!(msg.contains("class 1 ")),
            other => panic!("expected balancing error, got {other:?}"),
        }
    }

    #[test]
    fn silence_can_be_left_out_of_the_minimum() {
        let mut frames: Vec<_> = (0..40).map(|i| frame(0, i, Gender::Male)).collect();
        frames.extend((0..30).map(|i| frame(1, i, Gender::Male)));
        frames.extend((0..5).map(|i| frame(2, i, Gender::Male)));
        let policy = BalancingPolicy {
            num_classes: 3,
            silence_in_minimum: false,
            ..Default::default()
        };
        assert_eq!(class_histogram(&balance(&frames, &policy).unwrap(), 3), vec![30, 30, 5]);
        let strict = BalancingPolicy { silence_in_minimum: true, ..policy };
        assert_eq!(class_histogram(&balance(&frames, &strict).unwrap(), 3), vec![5, 5, 5]);
    }

    #[test]
    fn gender_balancing_equalizes_strata() {
        let mut frames = Vec::new();
        for i in 0..60 {
            frames.push(frame(0, i, if i < 40 { Gender::Female } else { Gender::Male }));
        }
        for i in 0..60 {
            let g = match i % 3 {
                0 => Gender::Female,
                1 => Gender::Male,
                _ => Gender::Unknown,
            };
            frames.push(frame(1, i, g));
        }
        let policy = BalancingPolicy {
            balance_gender: true,
            ..two_class_policy()
        };
        let out = balance(&frames, &policy).unwrap();
        for c in 0..2 {
            let f = out.iter().filter(|r| r.label == c && r.gender == Gender::Female).count();
            let m = out.iter().filter(|r| r.label == c && r.gender == Gender::Male).count();
            assert_eq!((f, m), (20, 20));
        }
        assert!(out.iter().all(|r| r.gender != Gender::Unknown));
    }

    #[test]
    fn unknown_gender_kept_without_gender_balancing() {
        let frames: Vec<_> = (0..20)
            .map(|i| frame(i % 2, i, Gender::Unknown))
            .collect();
        assert_eq!(balance(&frames, &two_class_policy()).unwrap().len(), 20);
    }

    #[test]
    fn split_is_per_class_ninety_ten() {
        let frames: Vec<_> = (0..32 * 100).map(|i| frame(i % 32, i, Gender::Female)).collect();
        let (train, val) = split_train_validation(&frames, 0.9, 3, 32).unwrap();
        assert_eq!(class_histogram(&train, 32), vec![90; 32]);
        assert_eq!(class_histogram(&val, 32), vec![10; 32]);
    }

    #[test]
    fn split_rejects_bad_ratio_and_tiny_class() {
        let frames: Vec<_> = (0..10).map(|i| frame(0, i, Gender::Female)).collect();
        assert!(split_train_validation(&frames, 1.0, 0, 2).is_err());
        assert!(split_train_validation(&frames, 0.0, 0, 2).is_err());
        let mut tiny = frames.clone();
        tiny.push(frame(1, 0, Gender::Male));
        assert!(matches!(
            split_train_validation(&tiny, 0.9, 0, 2),
            Err(CorpusError::Split(_))
        ));
    }

    #[test]
    fn split_is_deterministic() {
        let frames: Vec<_> = (0..200).map(|i| frame(i % 2, i, Gender::Female)).collect();
        let a = split_train_validation(&frames, 0.9, 11, 2).unwrap();
        let b = split_train_validation(&frames, 0.9, 11, 2).unwrap();
        assert_eq!(a, b);
        let c = split_train_validation(&frames, 0.9, 12, 2).unwrap();
        assert_ne!(a.1, c.1);
    }

    proptest! {
        #[test]
        fn balanced_histogram_is_uniform(counts in proptest::collection::vec(1usize..60, 4), seed in 0u64..1000) {
            let mut frames = Vec::new();
            for (c, &n) in counts.iter().enumerate() {
                frames.extend((0..n).map(|i| frame(c, i, Gender::Male)));
            }
            let policy = BalancingPolicy { num_classes: 4, seed, ..Default::default() };
            let out = balance(&frames, &policy).unwrap();
            let min = *counts.iter().min().unwrap();
            prop_assert_eq!(class_histogram(&out, 4), vec![min; 4]);
            prop_assert_eq!(out.clone(), balance(&frames, &policy).unwrap());
        }

        #[test]
        fn split_partitions_input(counts in proptest::collection::vec(2usize..80, 3), ratio in 0.05f64..0.95, seed in 0u64..100) {
            let mut frames = Vec::new();
            for (c, &n) in counts.iter().enumerate() {
                frames.extend((0..n).map(|i| frame(c, i, Gender::Female)));
            }
            let (train, val) = split_train_validation(&frames, ratio, seed, 3).unwrap();
            let mut union: Vec<_> = train.iter().chain(&val).cloned().collect();
            sort_frames(&mut union);
            let mut input = frames.clone();
            sort_frames(&mut input);
            prop_assert_eq!(union, input);
            for (c, &n) in counts.iter().enumerate() {
                let got = train.iter().filter(|f| f.label == c).count() as f64;
                prop_assert!((got - ratio * n as f64).abs() <= 1.0 + 1e-9);
            }
        }
    }
}
