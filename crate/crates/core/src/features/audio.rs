use std::path::Path;

use rubato::{
    Resampler, SincFixedIn, SincInterpolationParameters, SincInterpolationType, WindowFunction,
};

use super::FeatureError;

/// Reads a WAV file as mono `f32` in `[-1, 1]` at `target_rate_hz`.
///
/// Integer PCM is scaled by full scale, multichannel audio is averaged down
/// to mono, and other rates go through a windowed-sinc resampler.
pub fn load_waveform(path: impl AsRef<Path>, target_rate_hz: u32) -> Result<Vec<f32>, FeatureError> {
    let path = path.as_ref();
    let audio_err = |message: String| FeatureError::Audio {
        path: path.display().to_string(),
        message,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| audio_err(e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;

    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| audio_err(e.to_string()))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()
                .map_err(|e| audio_err(e.to_string()))?
        }
    };

    let mono: Vec<f32> = interleaved
        .chunks(channels)
        .map(|frame| (frame.iter().sum::<f32>() / channels as f32).clamp(-1.0, 1.0))
        .collect();

    if spec.sample_rate == target_rate_hz {
        Ok(mono)
    } else {
        resample(&mono, spec.sample_rate, target_rate_hz)
    }
}

/// Band-limited resampling; output length is `round(len · to / from)`.
pub fn resample(samples: &[f32], from_hz: u32, to_hz: u32) -> Result<Vec<f32>, FeatureError> {
    if from_hz == to_hz || samples.is_empty() {
        return Ok(samples.to_vec());
    }
    let ratio = to_hz as f64 / from_hz as f64;
    let expected = (samples.len() as f64 * ratio).round() as usize;
    let params = SincInterpolationParameters {
        sinc_len: 128,
        f_cutoff: 0.95,
        interpolation: SincInterpolationType::Linear,
        oversampling_factor: 128,
        window: WindowFunction::BlackmanHarris2,
    };
    let chunk = 1024;
    let err = |e: &dyn std::fmt::Display| FeatureError::Resample(e.to_string());
    let mut resampler = SincFixedIn::<f64>::new(ratio, 1.0, params, chunk, 1).map_err(|e| err(&e))?;

    let input: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
    let mut out: Vec<f64> = Vec::with_capacity(expected + chunk);
    let mut pos = 0;
    while pos + chunk <= input.len() {
        let block = resampler
            .process(&[&input[pos..pos + chunk]], None)
            .map_err(|e| err(&e))?;
        out.extend_from_slice(&block[0]);
        pos += chunk;
    }
    if pos < input.len() {
        let block = resampler
            .process_partial(Some(&[&input[pos..]]), None)
            .map_err(|e| err(&e))?;
        out.extend_from_slice(&block[0]);
    }
    // flush the filter tail
    // rubato advances its read position before the first output, so output k
    // lands at input time (k + 1) / ratio; drop that leading sample
    while out.len() < expected + 1 {
        let block = resampler
            .process_partial::<&[f64]>(None, None)
            .map_err(|e| err(&e))?;
        if block[0].is_empty() {
            break;
        }
        out.extend_from_slice(&block[0]);
    }
    out.resize(expected + 1, 0.0);
    Ok(out[1..]
        .iter()
        .map(|&s| (s as f32).clamp(-1.0, 1.0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_wav(path: &Path, rate: u32, channels: u16, frames: &[Vec<i16>]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for frame in frames {
            for &s in frame {
                w.write_sample(s).unwrap();
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn one_second_at_16k() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let frames: Vec<Vec<i16>> = (0..16000).map(|i| vec![(i % 100) as i16 * 300]).collect();
        write_wav(&p, 16000, 1, &frames);
        let s = load_waveform(&p, 16000).unwrap();
        assert_eq!(s.len(), 16000);
        assert!(s.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!((s[1] - 300.0 / 32768.0).abs() < 1e-7);
    }

    #[test]
    fn stereo_is_downmixed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let frames: Vec<Vec<i16>> = (0..100).map(|_| vec![16384, 0]).collect();
        write_wav(&p, 16000, 2, &frames);
        let s = load_waveform(&p, 16000).unwrap();
        assert_eq!(s.len(), 100);
        assert!((s[0] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn eight_k_resampled_to_sixteen_k() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lo.wav");
        let frames: Vec<Vec<i16>> = (0..8000)
            .map(|i| {
                let t = i as f64 / 8000.0;
                vec![((2.0 * std::f64::consts::PI * 440.0 * t).sin() * 10000.0) as i16]
            })
            .collect();
        write_wav(&p, 8000, 1, &frames);
        let s = load_waveform(&p, 16000).unwrap();
        assert_eq!(s.len(), 16000);
        // interior of the resampled tone keeps its amplitude and phase
        for i in (4000..12000).step_by(997) {
            let t = i as f64 / 16000.0;
            let want = (2.0 * std::f64::consts::PI * 440.0 * t).sin() * 10000.0 / 32768.0;
            assert!((s[i] as f64 - want).abs() < 0.01, "sample {i}: {} vs {want}", s[i]);
        }
    }

    #[test]
    fn missing_file_is_audio_error() {
        assert!(matches!(
            load_waveform("/nonexistent/x.wav", 16000),
            Err(FeatureError::Audio { .. })
        ));
    }
}
