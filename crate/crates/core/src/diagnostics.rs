//! Vanishing input-gradient diagnostics for recurrent models.
//!
//! For a tanh RNN whose recurrence matrix has spectral norm below one, the
//! loss gradient with respect to early inputs decays geometrically with the
//! distance to the end of the sequence; a feed-forward model shows no such
//! decay. The contraction demo makes the bound checkable exactly.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::attack::GradientModel;
use crate::autodiff::{Graph, Tensor};
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("invalid window: {detail}")]
    InvalidWindow { detail: String },
    #[error("tail magnitudes are all zero; the ratio is undefined")]
    UndefinedRatio,
    #[error(transparent)]
    Model(#[from] NnError),
}

/// Per-input-sample magnitude of the loss gradient.
#[derive(Debug, Clone)]
pub struct GradientProfile {
    pub magnitudes: Vec<f64>,
    pub sample_rate: u32,
    pub model_kind: String,
}

impl GradientProfile {
    /// Two-column text export (sample index, magnitude) for plotting.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.magnitudes.len() * 24);
        let _ = writeln!(out, "# gradient profile: {}", self.model_kind);
        let _ = writeln!(out, "# sample_rate: {}", self.sample_rate);
        for (i, m) in self.magnitudes.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{m:e}");
        }
        out
    }
}

/// `|dJ/dx_i|` per input sample, unsmoothed.
pub fn input_gradient_profile<M: GradientModel>(
    model: &M,
    samples: &[f64],
    sample_rate: u32,
    model_kind: &str,
    label: usize,
) -> Result<GradientProfile, DiagnosticsError> {
    let (_, grad) = model.loss_and_grad(samples, label)?;
    Ok(GradientProfile {
        magnitudes: grad.into_iter().map(f64::abs).collect(),
        sample_rate,
        model_kind: model_kind.to_string(),
    })
}

/// Mean head magnitude over mean tail magnitude; smaller means more
/// vanishing. Head and tail windows must not overlap.
pub fn vanishing_ratio(
    profile: &GradientProfile,
    head_frac: f64,
    tail_frac: f64,
) -> Result<f64, DiagnosticsError> {
    let n = profile.magnitudes.len();
    if !(head_frac > 0.0 && tail_frac > 0.0) {
        return Err(DiagnosticsError::InvalidWindow {
            detail: format!("fractions must be positive, got {head_frac} and {tail_frac}"),
        });
    }
    let head = ((head_frac * n as f64).floor() as usize).max(1);
    let tail = ((tail_frac * n as f64).floor() as usize).max(1);
    if head + tail > n {
        return Err(DiagnosticsError::InvalidWindow {
            detail: format!("head ({head}) and tail ({tail}) windows overlap on {n} samples"),
        });
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let head_mean = mean(&profile.magnitudes[..head]);
    let tail_mean = mean(&profile.magnitudes[n - tail..]);
    if tail_mean == 0.0 {
        return Err(DiagnosticsError::UndefinedRatio);
    }
    Ok(head_mean / tail_mean)
}

/// Contraction demo output: the measured profile together with the geometric
/// bound `|dJ/dx_i| <= K * s^(n-i)`.
#[derive(Debug, Clone)]
pub struct ContractionDemo {
    pub profile: GradientProfile,
    /// Spectral norm the recurrence matrix was scaled to.
    pub spectral_norm: f64,
    /// Constant `K = ||U||_2 / sqrt(units)` from the input map and loss head.
    pub bound_constant: f64,
}

impl ContractionDemo {
    /// Bound value at step `i` (1-based position in an n-step sequence).
    pub fn bound_at(&self, i: usize) -> f64 {
        let n = self.profile.magnitudes.len();
        self.bound_constant * self.spectral_norm.powi((n - 1 - i) as i32)
    }

    /// True when every measured magnitude respects the geometric bound.
    pub fn respects_bound(&self) -> bool {
        self.profile
            .magnitudes
            .iter()
            .enumerate()
            .all(|(i, &m)| m <= self.bound_at(i) * (1.0 + 1e-9))
    }
}

/// Single-layer tanh RNN `s_t = tanh(U x_t + W s_{t-1})` with `W` scaled to
/// the requested spectral norm and loss `J = mean(s_n)`; returns per-step
/// input-gradient magnitudes (one scalar input per step).
pub fn contraction_rnn_demo(n_steps: usize, spectral_norm: f64, seed: u64) -> ContractionDemo {
    assert!(n_steps >= 2, "demo needs at least 2 steps");
    assert!(spectral_norm >= 0.0, "spectral norm must be non-negative");
    let units = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u_vals: Vec<f64> = (0..units).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w_raw: Vec<f64> = (0..units * units).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w_vals = scale_to_spectral_norm(&w_raw, units, spectral_norm);
    let xs: Vec<f64> = (0..n_steps).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut g = Graph::new();
    let x = g.input("x", &[n_steps, 1]);
    let u = g.param("u", Tensor::from_values(&[units, 1], u_vals.clone()).unwrap());
    let w = g.param("w", Tensor::from_values(&[units, units], w_vals).unwrap());
    let last = g.tanh_rnn_last(x, u, w, units).unwrap();
    let loss = g.mean(last).unwrap();
    g.set_loss(loss).unwrap();
    g.forward_with(&[("x", &xs)]).expect("demo forward");
    let grads = g.backward().expect("demo backward");

    let u_norm = u_vals.iter().map(|v| v * v).sum::<f64>().sqrt();
    ContractionDemo {
        profile: GradientProfile {
            magnitudes: grads["x"].values.iter().map(|v| v.abs()).collect(),
            sample_rate: 0,
            model_kind: format!("contraction_rnn(s={spectral_norm})"),
        },
        spectral_norm,
        bound_constant: u_norm / (units as f64).sqrt(),
    }
}

/// Scale a square matrix so its largest singular value equals `target`.
fn scale_to_spectral_norm(m: &[f64], n: usize, target: f64) -> Vec<f64> {
    if target == 0.0 {
        return vec![0.0; m.len()];
    }
    let current = spectral_norm(m, n);
    m.iter().map(|v| v * target / current).collect()
}

/// Largest singular value via power iteration on `M^T M`.
fn spectral_norm(m: &[f64], n: usize) -> f64 {
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut mv = vec![0.0; n];
    let mut sigma = 0.0;
    for _ in 0..10_000 {
        // mv = M v
        for i in 0..n {
            let row = &m[i * n..(i + 1) * n];
            mv[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        // v' = M^T mv
        let mut next = vec![0.0; n];
        for i in 0..n {
            let row = &m[i * n..(i + 1) * n];
            for (nx, &r) in next.iter_mut().zip(row) {
                *nx += r * mv[i];
            }
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        next.iter_mut().for_each(|x| *x /= norm);
        let new_sigma = norm.sqrt();
        let converged = (new_sigma - sigma).abs() <= 1e-13 * new_sigma.max(1.0);
        sigma = new_sigma;
        v = next;
        if converged {
            break;
        }
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::LinearModel;

    #[test]
    fn linear_model_profile_is_abs_weights() {
        let model = LinearModel {
            w: vec![0.5, -2.0, 0.0, 3.0],
        };
        let p = input_gradient_profile(&model, &[0.1, 0.2, 0.3, 0.4], 8000, "linear", 0).unwrap();
        assert_eq!(p.magnitudes, vec![0.5, 2.0, 0.0, 3.0]);
    }

    #[test]
    fn uniform_profile_has_ratio_one() {
        let p = GradientProfile {
            magnitudes: vec![0.3; 100],
            sample_rate: 0,
            model_kind: "flat".into(),
        };
        assert_eq!(vanishing_ratio(&p, 0.1, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn zero_head_profile_has_ratio_zero() {
        let mut m = vec![0.0; 50];
        m.extend(vec![1.0; 50]);
        let p = GradientProfile {
            magnitudes: m,
            sample_rate: 0,
            model_kind: "step".into(),
        };
        assert_eq!(vanishing_ratio(&p, 0.1, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn zero_tail_is_an_undefined_ratio() {
        let mut m = vec![1.0; 50];
        m.extend(vec![0.0; 50]);
        let p = GradientProfile {
            magnitudes: m,
            sample_rate: 0,
            model_kind: "rev".into(),
        };
        assert!(matches!(
            vanishing_ratio(&p, 0.1, 0.1),
            Err(DiagnosticsError::UndefinedRatio)
        ));
    }

    #[test]
    fn overlapping_windows_are_rejected() {
        let p = GradientProfile {
            magnitudes: vec![1.0; 10],
            sample_rate: 0,
            model_kind: "tiny".into(),
        };
        assert!(vanishing_ratio(&p, 0.6, 0.6).is_err());
        assert!(vanishing_ratio(&p, 0.0, 0.1).is_err());
    }

    #[test]
    fn spectral_norm_of_diagonal_matrix() {
        // diag(3, -1): largest singular value 3.
        let m = vec![3.0, 0.0, 0.0, -1.0];
        assert!((spectral_norm(&m, 2) - 3.0).abs() < 1e-9);
        let scaled = scale_to_spectral_norm(&m, 2, 0.5);
        assert!((spectral_norm(&scaled, 2) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn zero_recurrence_kills_all_but_the_last_step() {
        let demo = contraction_rnn_demo(20, 0.0, 7);
        let m = &demo.profile.magnitudes;
        assert_eq!(m.len(), 20);
        for &v in &m[..19] {
            assert_eq!(v, 0.0);
        }
        assert!(m[19] > 0.0);
    }

    #[test]
    fn contraction_half_norm_collapses_over_100_steps() {
        let demo = contraction_rnn_demo(100, 0.5, 11);
        let m = &demo.profile.magnitudes;
        assert!(demo.respects_bound());
        let ratio = m[0] / m[99];
        // Model-derived constant: bound at step 1 over the measured last step.
        let c = demo.bound_constant / m[99];
        assert!(ratio <= 0.5f64.powi(99) * c * (1.0 + 1e-9));
        assert!(ratio < 1e-20, "ratio {ratio:e}");
    }

    #[test]
    fn moderate_contraction_decays_towards_the_head() {
        let demo = contraction_rnn_demo(60, 0.9, 13);
        let m = &demo.profile.magnitudes;
        for i in 0..m.len() - 1 {
            assert!(
                m[i] <= 10.0 * m[i + 1],
                "non-monotone beyond tolerance at {i}: {} vs {}",
                m[i],
                m[i + 1]
            );
        }
    }

    #[test]
    fn profile_text_has_two_columns() {
        let demo = contraction_rnn_demo(5, 0.5, 3);
        let text = demo.profile.to_text();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 5);
        for (i, row) in rows.iter().enumerate() {
            let (idx, mag) = row.split_once('\t').unwrap();
            assert_eq!(idx.parse::<usize>().unwrap(), i);
            mag.parse::<f64>().unwrap();
        }
    }
}
