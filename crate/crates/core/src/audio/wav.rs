//! RIFF/WAVE reader and writer for 16-bit PCM mono files.
//!
//! Integer samples map to `[0,1]` by the fixed, data-independent rule
//! `v -> (v + 32768) / 65535`; writing inverts it with round-to-nearest.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::waveform::Waveform;
use super::AudioError;

pub fn load_wav(path: &Path) -> Result<Waveform, AudioError> {
    let bytes = fs::read(path).map_err(|e| AudioError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let (sample_rate, data) = parse_riff(&bytes, path)?;
    let samples = data
        .chunks_exact(2)
        .map(|b| {
            let v = i16::from_le_bytes([b[0], b[1]]);
            (v as f64 + 32768.0) / 65535.0
        })
        .collect();
    Waveform::new(samples, sample_rate, &path.display().to_string())
}

pub fn save_wav(w: &Waveform, path: &Path) -> Result<(), AudioError> {
    for (i, &s) in w.samples.iter().enumerate() {
        if !(0.0..=1.0).contains(&s) {
            return Err(AudioError::InvalidWaveform {
                detail: format!("sample {i} = {s} outside [0,1]"),
            });
        }
    }
    let data_len = w.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &w.samples {
        let v = (s * 65535.0 - 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| AudioError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    file.write_all(&out).map_err(|e| AudioError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn parse_riff<'a>(bytes: &'a [u8], path: &Path) -> Result<(u32, &'a [u8]), AudioError> {
    let unsupported = |field: &str, detail: String| AudioError::UnsupportedFormat {
        path: path.display().to_string(),
        field: field.to_string(),
        detail,
    };
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(unsupported("container", "not a RIFF/WAVE file".into()));
    }
    let mut sample_rate = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let tag = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = (pos + 8 + size).min(bytes.len());
        let body = &bytes[pos + 8..body_end];
        match tag {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(unsupported("fmt", "fmt chunk too short".into()));
                }
                let format = u16::from_le_bytes([body[0], body[1]]);
                let channels = u16::from_le_bytes([body[2], body[3]]);
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes([body[14], body[15]]);
                if format != 1 {
                    return Err(unsupported(
                        "audio_format",
                        format!("expected PCM (1), got {format}"),
                    ));
                }
                if channels != 1 {
                    return Err(unsupported(
                        "num_channels",
                        format!("expected mono (1), got {channels}"),
                    ));
                }
                if bits != 16 {
                    return Err(unsupported(
                        "bits_per_sample",
                        format!("expected 16, got {bits}"),
                    ));
                }
                sample_rate = Some(rate);
            }
            b"data" => data = Some(body),
            _ => {} // skip ancillary chunks (LIST, fact, ...)
        }
        // chunks are word-aligned
        pos = pos + 8 + size + (size & 1);
    }
    match (sample_rate, data) {
        (Some(r), Some(d)) => Ok((r, d)),
        (None, _) => Err(unsupported("fmt", "missing fmt chunk".into())),
        (_, None) => Err(unsupported("data", "missing data chunk".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("waveadv-wav-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn write_raw(path: &Path, rate: u32, channels: u16, bits: u16, samples: &[i16]) {
        let data_len = samples.len() * 2;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * 2).to_le_bytes());
        out.extend_from_slice(&2u16.to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data_len as u32).to_le_bytes());
        for &s in samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        fs::write(path, out).unwrap();
    }

    #[test]
    fn int16_endpoints_map_to_unit_interval() {
        let p = tmp("endpoints.wav");
        write_raw(&p, 16000, 1, 16, &[-32768, 32767, 0]);
        let w = load_wav(&p).unwrap();
        assert_eq!(w.samples[0], 0.0);
        assert_eq!(w.samples[1], 1.0);
        assert!((w.samples[2] - 32768.0 / 65535.0).abs() < 1e-15);
        assert_eq!(w.sample_rate, 16000);
    }

    #[test]
    fn zero_samples_sit_just_above_half() {
        let p = tmp("zeros.wav");
        write_raw(&p, 8000, 1, 16, &[0; 64]);
        let w = load_wav(&p).unwrap();
        for &s in &w.samples {
            assert!((s - 0.50001).abs() < 1e-4);
        }
    }

    #[test]
    fn stereo_is_rejected_naming_the_field() {
        let p = tmp("stereo.wav");
        write_raw(&p, 8000, 2, 16, &[0, 0]);
        match load_wav(&p) {
            Err(AudioError::UnsupportedFormat { field, .. }) => {
                assert_eq!(field, "num_channels")
            }
            other => panic!("expected unsupported-format error, got {other:?}"),
        }
    }

    #[test]
    fn eight_bit_is_rejected_naming_the_field() {
        let p = tmp("8bit.wav");
        write_raw(&p, 8000, 1, 8, &[0]);
        match load_wav(&p) {
            Err(AudioError::UnsupportedFormat { field, .. }) => {
                assert_eq!(field, "bits_per_sample")
            }
            other => panic!("expected unsupported-format error, got {other:?}"),
        }
    }

    #[test]
    fn save_then_load_roundtrips_integers_exactly() {
        let p = tmp("roundtrip.wav");
        let values: Vec<i16> = vec![-32768, -12345, -1, 0, 1, 999, 32767];
        write_raw(&p, 16000, 1, 16, &values);
        let w = load_wav(&p).unwrap();
        let p2 = tmp("roundtrip2.wav");
        save_wav(&w, &p2).unwrap();
        let w2 = load_wav(&p2).unwrap();
        assert_eq!(w.samples, w2.samples);
    }

    #[test]
    fn arbitrary_samples_roundtrip_within_quantization() {
        let p = tmp("quant.wav");
        let samples: Vec<f64> = (0..512).map(|i| 0.5 + 0.45 * (i as f64 * 0.1).sin()).collect();
        let w = Waveform::new(samples.clone(), 8000, "q").unwrap();
        save_wav(&w, &p).unwrap();
        let back = load_wav(&p).unwrap();
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 65535.0);
        }
    }
}
