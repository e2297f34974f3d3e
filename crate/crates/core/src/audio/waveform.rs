use super::AudioError;

/// Amplitude encoding of digital silence: int16 zero maps to
/// `32768/65535` under the fixed `[0,1]` scaling.
pub const SILENCE: f64 = 32768.0 / 65535.0;

/// Mono audio clip with samples scaled into `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl Waveform {
    /// Validates the range invariant: every sample in `[0,1]`, positive rate.
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: &str) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidWaveform {
                detail: "sample rate must be positive".into(),
            });
        }
        if let Some((i, &v)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(AudioError::InvalidWaveform {
                detail: format!("sample {i} = {v} outside [0,1]"),
            });
        }
        Ok(Waveform {
            samples,
            sample_rate,
            source_id: source_id.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }
}

/// Cut or zero-pad to exactly `clip_seconds * target_rate` samples.
///
/// Shorter clips are padded at the end with digital silence (0.5 under the
/// `[0,1]` mapping, not 0.0 which is full negative amplitude); longer clips
/// keep their beginning. Resampling is out of scope, so the rate must match.
pub fn preprocess(
    w: &Waveform,
    clip_seconds: f64,
    target_rate: u32,
) -> Result<Waveform, AudioError> {
    if w.sample_rate != target_rate {
        return Err(AudioError::SampleRateMismatch {
            got: w.sample_rate,
            expected: target_rate,
        });
    }
    let target_len = (clip_seconds * target_rate as f64).round() as usize;
    let mut samples = Vec::with_capacity(target_len);
    samples.extend_from_slice(&w.samples[..w.len().min(target_len)]);
    samples.resize(target_len, SILENCE);
    Ok(Waveform {
        samples,
        sample_rate: target_rate,
        source_id: w.source_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(n: usize, rate: u32) -> Waveform {
        Waveform::new(vec![0.25; n], rate, "t").unwrap()
    }

    #[test]
    fn range_invariant_enforced() {
        assert!(Waveform::new(vec![0.0, 1.0, 0.5], 8000, "ok").is_ok());
        assert!(Waveform::new(vec![-0.01], 8000, "low").is_err());
        assert!(Waveform::new(vec![1.01], 8000, "high").is_err());
        assert!(Waveform::new(vec![f64::NAN], 8000, "nan").is_err());
        assert!(Waveform::new(vec![0.5], 0, "rate").is_err());
    }

    #[test]
    fn short_input_padded_with_silence() {
        // 4.46 s at 16 kHz padded out to the 6 s / 96000-sample protocol.
        let w = wave(71360, 16000);
        let p = preprocess(&w, 6.0, 16000).unwrap();
        assert_eq!(p.len(), 96000);
        assert_eq!(p.samples[71359], 0.25);
        assert_eq!(p.samples[71360], SILENCE);
        assert_eq!(p.samples[95999], SILENCE);
    }

    #[test]
    fn long_input_keeps_the_beginning() {
        let mut w = wave(128000, 16000);
        w.samples[0] = 0.75;
        let p = preprocess(&w, 6.0, 16000).unwrap();
        assert_eq!(p.len(), 96000);
        assert_eq!(p.samples[0], 0.75);
    }

    #[test]
    fn exact_length_is_identity() {
        let w = wave(96000, 16000);
        let p = preprocess(&w, 6.0, 16000).unwrap();
        assert_eq!(p.samples, w.samples);
    }

    #[test]
    fn rate_mismatch_is_an_error() {
        let w = wave(100, 8000);
        assert!(matches!(
            preprocess(&w, 6.0, 16000),
            Err(AudioError::SampleRateMismatch { .. })
        ));
    }
}
