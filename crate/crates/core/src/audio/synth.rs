//! Deterministic synthetic proxy tasks: class-separable audio generated from
//! a seed, standing in for licensed corpora. Three tasks mirror the usual
//! paralinguistic setups: pitch-band (gender), envelope-modulation-rate
//! (emotion), and resonant-signature (speaker) classification.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use super::waveform::Waveform;
use super::AudioError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    GenderProxy,
    EmotionProxy,
    SpeakerProxy,
}

impl Task {
    pub fn parse(s: &str) -> Result<Task, AudioError> {
        match s {
            "gender_proxy" => Ok(Task::GenderProxy),
            "emotion_proxy" => Ok(Task::EmotionProxy),
            "speaker_proxy" => Ok(Task::SpeakerProxy),
            other => Err(AudioError::UnknownTask(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::GenderProxy => "gender_proxy",
            Task::EmotionProxy => "emotion_proxy",
            Task::SpeakerProxy => "speaker_proxy",
        }
    }

    pub fn labels(&self) -> Vec<String> {
        match self {
            Task::GenderProxy => vec!["low".into(), "high".into()],
            Task::EmotionProxy => vec!["calm".into(), "excited".into()],
            Task::SpeakerProxy => {
                (0..4).map(|i| format!("spk{i}")).collect()
            }
        }
    }

    pub fn num_classes(&self) -> usize {
        self.labels().len()
    }
}

/// Generator parameters shared by every example of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub sample_rate: u32,
    pub clip_seconds: f64,
    /// Additive white noise level relative to the signal.
    pub noise_snr_db: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sample_rate: 8000,
            clip_seconds: 1.2,
            noise_snr_db: 20.0,
        }
    }
}

/// Fundamental-frequency bands for the pitch task.
pub const PITCH_BANDS: [(f64, f64); 2] = [(90.0, 150.0), (190.0, 260.0)];
/// Envelope modulation-rate bands for the emotion task.
pub const MODULATION_BANDS: [(f64, f64); 2] = [(2.0, 4.0), (8.0, 12.0)];
/// Per-speaker resonator signatures `(center_hz, pole_radius)`, two each.
pub const SPEAKER_RESONATORS: [[(f64, f64); 2]; 4] = [
    [(400.0, 0.97), (1200.0, 0.96)],
    [(650.0, 0.97), (1900.0, 0.96)],
    [(950.0, 0.97), (2600.0, 0.96)],
    [(1300.0, 0.97), (3300.0, 0.96)],
];

/// Deterministic per-example seed derivation (splitmix-style).
pub fn example_seed(dataset_seed: u64, class: usize, index: usize) -> u64 {
    let mut z = dataset_seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add((class as u64) << 32 | index as u64)
        .wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Generate one example. Fully determined by `(task, class, ex_seed, cfg)`.
pub fn synth_waveform(
    task: Task,
    class: usize,
    ex_seed: u64,
    cfg: &SynthConfig,
) -> Result<Waveform, AudioError> {
    if class >= task.num_classes() {
        return Err(AudioError::InvalidWaveform {
            detail: format!("class {class} out of range for {}", task.name()),
        });
    }
    let n = (cfg.clip_seconds * cfg.sample_rate as f64).round() as usize;
    let sr = cfg.sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(ex_seed);
    let mut signal = match task {
        Task::GenderProxy => {
            let (lo, hi) = PITCH_BANDS[class];
            let f0 = rng.gen_range(lo..hi);
            harmonic_tone(n, sr, f0, 24, &mut rng)
        }
        Task::EmotionProxy => {
            let f0 = rng.gen_range(140.0..200.0);
            let (lo, hi) = MODULATION_BANDS[class];
            let fm = rng.gen_range(lo..hi);
            let phase = rng.gen_range(0.0..TAU);
            let carrier = harmonic_tone(n, sr, f0, 12, &mut rng);
            carrier
                .into_iter()
                .enumerate()
                .map(|(t, c)| {
                    let env = 0.55 + 0.45 * (TAU * fm * t as f64 / sr + phase).sin();
                    env * c
                })
                .collect()
        }
        Task::SpeakerProxy => {
            // Shared broadband excitation, fixed per-class resonators.
            let excitation: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut filtered = excitation;
            for &(center, radius) in &SPEAKER_RESONATORS[class] {
                filtered = resonate(&filtered, sr, center, radius);
            }
            filtered
        }
    };
    // Peak-normalize, apply amplitude jitter, add noise at the configured SNR,
    // and shift onto the [0,1] silence baseline.
    let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let amp = 0.30 + 0.08 * rng.gen_range(0.0..1.0);
    for v in &mut signal {
        *v *= amp / peak;
    }
    let power = signal.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let noise_sigma = (power / 10f64.powf(cfg.noise_snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, noise_sigma).expect("sigma is finite");
    let samples: Vec<f64> = signal
        .iter()
        .map(|v| (0.5 + v + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    Waveform::new(
        samples,
        cfg.sample_rate,
        &format!("{}/{}/{:016x}", task.name(), class, ex_seed),
    )
}

/// Sawtooth-like harmonic stack with per-harmonic random phase, band-limited
/// below 0.45 * sample rate.
fn harmonic_tone(n: usize, sr: f64, f0: f64, max_harmonics: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let h_count = ((0.45 * sr / f0).floor() as usize).clamp(1, max_harmonics);
    let phases: Vec<f64> = (0..h_count).map(|_| rng.gen_range(0.0..TAU)).collect();
    let mut out = vec![0.0; n];
    for (h, &phase) in phases.iter().enumerate() {
        let freq = f0 * (h + 1) as f64;
        let amp = 1.0 / (h + 1) as f64;
        let step = TAU * freq / sr;
        for (t, o) in out.iter_mut().enumerate() {
            *o += amp * (step * t as f64 + phase).sin();
        }
    }
    out
}

/// Two-pole resonator: `y[n] = x[n] + 2 r cos(theta) y[n-1] - r^2 y[n-2]`.
fn resonate(x: &[f64], sr: f64, center_hz: f64, radius: f64) -> Vec<f64> {
    let theta = TAU * center_hz / sr;
    let a1 = 2.0 * radius * theta.cos();
    let a2 = -radius * radius;
    let mut y = vec![0.0; x.len()];
    let (mut y1, mut y2) = (0.0, 0.0);
    for (o, &xv) in y.iter_mut().zip(x) {
        let v = xv + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = v;
        *o = v;
    }
    y
}
