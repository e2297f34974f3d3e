//! Fast gradient sign attacks on raw waveforms, plus the accumulation-effect
//! diagnostic: at fixed per-sample magnitude, the activation shift of a
//! neuron grows linearly with input dimensionality.

use thiserror::Error;

use crate::audio::Waveform;
use crate::nn::{Model, NnError};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack config: {detail}")]
    InvalidConfig { detail: String },
    #[error(transparent)]
    Model(#[from] NnError),
}

/// Anything that exposes a differentiable loss over a waveform. Attacks are
/// written against this surface so hand-built analytic models and the neural
/// models share one code path.
pub trait GradientModel: Sync {
    fn num_classes(&self) -> usize;
    /// Class probabilities for the given samples.
    fn predict_samples(&self, x: &[f64]) -> Result<Vec<f64>, NnError>;
    /// Loss and its gradient with respect to the input samples.
    fn loss_and_grad(&self, x: &[f64], label: usize) -> Result<(f64, Vec<f64>), NnError>;
}

impl GradientModel for Model {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn predict_samples(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let w = Waveform::new(x.to_vec(), self.config.sample_rate, "attack")
            .map_err(|e| NnError::WrongInput {
                detail: e.to_string(),
            })?;
        self.predict(&w)
    }

    fn loss_and_grad(&self, x: &[f64], label: usize) -> Result<(f64, Vec<f64>), NnError> {
        let w = Waveform::new(x.to_vec(), self.config.sample_rate, "attack")
            .map_err(|e| NnError::WrongInput {
                detail: e.to_string(),
            })?;
        self.loss_and_input_grad(&w, label)
    }
}

/// Linear loss `J = w . x` with a two-way softmax readout. Used to pin the
/// attack arithmetic against closed-form expectations.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub w: Vec<f64>,
}

impl GradientModel for LinearModel {
    fn num_classes(&self) -> usize {
        2
    }

    fn predict_samples(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let s: f64 = self.w.iter().zip(x).map(|(a, b)| a * b).sum();
        let mut probs = vec![0.0; 2];
        crate::autodiff::ops::softmax_stable(&[s, 0.0], &mut probs);
        Ok(probs)
    }

    fn loss_and_grad(&self, x: &[f64], _label: usize) -> Result<(f64, Vec<f64>), NnError> {
        let loss = self.w.iter().zip(x).map(|(a, b)| a * b).sum();
        Ok((loss, self.w.clone()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttackConfig {
    /// Per-step perturbation magnitude, in the input's [0,1] amplitude units.
    pub epsilon: f64,
    /// 1 = single FGSM step; 2 = the iterated variant.
    pub steps: usize,
    pub clip_min: f64,
    pub clip_max: f64,
    /// Total L-infinity budget around the original; defaults to steps * epsilon.
    pub ball: Option<f64>,
}

impl AttackConfig {
    pub fn fgsm(epsilon: f64) -> Self {
        AttackConfig {
            epsilon,
            steps: 1,
            clip_min: 0.0,
            clip_max: 1.0,
            ball: None,
        }
    }

    pub fn iterated(epsilon: f64, steps: usize) -> Self {
        AttackConfig {
            steps,
            ..AttackConfig::fgsm(epsilon)
        }
    }

    pub fn ball(&self) -> f64 {
        self.ball.unwrap_or(self.steps as f64 * self.epsilon)
    }

    fn validate(&self) -> Result<(), AttackError> {
        let invalid = |detail: String| Err(AttackError::InvalidConfig { detail });
        if !(self.epsilon >= 0.0) {
            return invalid(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        if self.clip_min >= self.clip_max {
            return invalid(format!(
                "clip range [{}, {}] is empty",
                self.clip_min, self.clip_max
            ));
        }
        if self.steps == 0 {
            return invalid("steps must be at least 1".into());
        }
        if self.ball() < self.epsilon {
            return invalid(format!(
                "ball {} smaller than a single step of {}",
                self.ball(),
                self.epsilon
            ));
        }
        Ok(())
    }
}

/// Outcome of one attacked example.
///
/// `eta` is the generated perturbation after projection onto the L-infinity
/// ball (`adversarial = clip(original + eta)` holds exactly); distortion of
/// the clipped waveform is the evaluation module's concern.
#[derive(Debug, Clone)]
pub struct AdversarialResult {
    pub original: Waveform,
    pub eta: Vec<f64>,
    pub adversarial: Waveform,
    pub pred_before: Vec<f64>,
    pub pred_after: Vec<f64>,
    pub loss_before: f64,
    pub loss_after: f64,
    pub linf: f64,
    pub l2: f64,
    /// Set when the gradient was identically zero and no direction existed.
    pub null_gradient: bool,
}

/// `sign` with `sign(0) = 0`: no perturbation where the gradient gives no
/// direction.
pub fn sign_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Single-step fast gradient sign attack: `eta = epsilon * sign(grad J)`.
pub fn fgsm<M: GradientModel>(
    model: &M,
    x: &Waveform,
    label: usize,
    cfg: &AttackConfig,
) -> Result<AdversarialResult, AttackError> {
    if cfg.steps != 1 {
        return Err(AttackError::InvalidConfig {
            detail: format!("fgsm requires steps = 1, got {}", cfg.steps),
        });
    }
    iterative_fgsm(model, x, label, cfg)
}

/// Iterated FGSM: each step adds `epsilon * sign(grad)` at the current
/// point, then projects back into the L-infinity ball around the original
/// and the valid amplitude range. The attack only ever uses the ground-truth
/// label (untargeted).
pub fn iterative_fgsm<M: GradientModel>(
    model: &M,
    x: &Waveform,
    label: usize,
    cfg: &AttackConfig,
) -> Result<AdversarialResult, AttackError> {
    cfg.validate()?;
    let ball = cfg.ball();
    let n = x.len();
    let (loss_before, first_grad) = model.loss_and_grad(&x.samples, label)?;
    let pred_before = model.predict_samples(&x.samples)?;
    let null_gradient = first_grad.iter().all(|&g| g == 0.0);

    let mut eta = vec![0.0; n];
    let mut current = x.samples.clone();
    let mut grad = first_grad;
    for step in 0..cfg.steps {
        if step > 0 {
            grad = model.loss_and_grad(&current, label)?.1;
        }
        for i in 0..n {
            eta[i] = (eta[i] + cfg.epsilon * sign_zero(grad[i])).clamp(-ball, ball);
            current[i] = (x.samples[i] + eta[i]).clamp(cfg.clip_min, cfg.clip_max);
        }
    }

    let adversarial = Waveform::new(current, x.sample_rate, &format!("{}#adv", x.source_id))
        .map_err(|e| NnError::WrongInput {
            detail: e.to_string(),
        })?;
    let loss_after = model.loss_and_grad(&adversarial.samples, label)?.0;
    let pred_after = model.predict_samples(&adversarial.samples)?;
    let linf = eta.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let l2 = eta.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(AdversarialResult {
        original: x.clone(),
        eta,
        adversarial,
        pred_before,
        pred_after,
        loss_before,
        loss_after,
        linf,
        l2,
        null_gradient,
    })
}

/// Accumulation-effect report for a neuron with weight vector `w` under an
/// FGSM perturbation of magnitude `epsilon`:
/// `delta = epsilon * w^T sign(w) = epsilon * sum |w_i| = epsilon * m * n`.
#[derive(Debug, Clone, Copy)]
pub struct AccumulationReport {
    /// Exact activation change `epsilon * w^T sign(w)`.
    pub delta_activation: f64,
    /// Mean absolute weight `m`.
    pub mean_abs_weight: f64,
    /// Dimensionality `n`.
    pub n: usize,
    /// The linear-growth prediction `epsilon * m * n`.
    pub predicted: f64,
}

impl AccumulationReport {
    /// The two routes agree to rounding.
    pub fn consistent(&self) -> bool {
        let scale = self.delta_activation.abs().max(self.predicted.abs()).max(1e-300);
        (self.delta_activation - self.predicted).abs() / scale < 1e-12
    }
}

pub fn accumulation_effect(w: &[f64], epsilon: f64) -> AccumulationReport {
    // Midpoint-split pairwise sums so that concatenating w with itself
    // doubles the total bit-exactly.
    let signed: Vec<f64> = w.iter().map(|&v| v * sign_zero(v)).collect();
    let total = pairwise_sum(&signed);
    let n = w.len();
    let mean_abs_weight = if n == 0 { 0.0 } else { total / n as f64 };
    AccumulationReport {
        delta_activation: epsilon * total,
        mean_abs_weight,
        n,
        predicted: epsilon * mean_abs_weight * n as f64,
    }
}

/// Sum with a midpoint-split recursion; the tree shape depends only on the
/// slice length, so `sum(w ++ w) == 2 * sum(w)` exactly.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 4 {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 8000, "t").unwrap()
    }

    #[test]
    fn fgsm_on_linear_model_matches_sign_of_weights() {
        let model = LinearModel {
            w: vec![1.0, -2.0, 3.0],
        };
        let x = wave(vec![0.5, 0.5, 0.5]);
        let r = fgsm(&model, &x, 0, &AttackConfig::fgsm(0.1)).unwrap();
        assert_eq!(r.eta, vec![0.1, -0.1, 0.1]);
        assert_eq!(r.adversarial.samples, vec![0.6, 0.4, 0.6]);
        assert!(!r.null_gradient);
        assert_eq!(r.linf, 0.1);
    }

    #[test]
    fn clipping_keeps_samples_in_range() {
        let model = LinearModel { w: vec![5.0] };
        let x = wave(vec![0.99]);
        let r = fgsm(&model, &x, 0, &AttackConfig::fgsm(0.02)).unwrap();
        assert_eq!(r.adversarial.samples, vec![1.0]);
        // eta itself is the generated perturbation
        assert_eq!(r.eta, vec![0.02]);
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let model = LinearModel {
            w: vec![1.0, -1.0],
        };
        let x = wave(vec![0.3, 0.7]);
        let r = fgsm(&model, &x, 0, &AttackConfig::fgsm(0.0)).unwrap();
        assert_eq!(r.adversarial.samples, x.samples);
        assert_eq!(r.pred_before, r.pred_after);
    }

    #[test]
    fn zero_gradient_is_flagged_not_an_error() {
        let model = LinearModel { w: vec![0.0, 0.0] };
        let x = wave(vec![0.4, 0.6]);
        let r = fgsm(&model, &x, 0, &AttackConfig::fgsm(0.05)).unwrap();
        assert!(r.null_gradient);
        assert_eq!(r.eta, vec![0.0, 0.0]);
        assert_eq!(r.adversarial.samples, x.samples);
    }

    #[test]
    fn one_step_iterative_is_bit_identical_to_fgsm() {
        let model = LinearModel {
            w: vec![0.7, -0.3, 0.0, 1.5],
        };
        let x = wave(vec![0.2, 0.8, 0.5, 0.4]);
        let cfg = AttackConfig::fgsm(0.03);
        let a = fgsm(&model, &x, 0, &cfg).unwrap();
        let b = iterative_fgsm(&model, &x, 0, &cfg).unwrap();
        assert_eq!(a.eta, b.eta);
        assert_eq!(a.adversarial.samples, b.adversarial.samples);
        assert_eq!(a.loss_after.to_bits(), b.loss_after.to_bits());
    }

    #[test]
    fn two_steps_on_linear_interior_equal_one_double_step() {
        let model = LinearModel {
            w: vec![0.7, -0.3, 1.5],
        };
        // interior: 2*eps away from both bounds
        let x = wave(vec![0.4, 0.6, 0.5]);
        let two = iterative_fgsm(&model, &x, 0, &AttackConfig::iterated(0.01, 2)).unwrap();
        let one = fgsm(&model, &x, 0, &AttackConfig::fgsm(0.02)).unwrap();
        assert_eq!(two.eta, one.eta);
        assert_eq!(two.adversarial.samples, one.adversarial.samples);
    }

    #[test]
    fn ball_bounds_the_perturbation() {
        let model = LinearModel {
            w: vec![2.0, -2.0],
        };
        let x = wave(vec![0.5, 0.5]);
        let r = iterative_fgsm(&model, &x, 0, &AttackConfig::iterated(0.05, 3)).unwrap();
        assert!(r.linf <= 3.0 * 0.05 + 1e-12);
        for (adv, eta) in r.adversarial.samples.iter().zip(&r.eta) {
            assert!((0.0..=1.0).contains(adv));
            assert!(eta.abs() <= 0.15);
        }
        // invariant: adversarial = clip(original + eta), exactly
        for i in 0..2 {
            assert_eq!(
                r.adversarial.samples[i],
                (r.original.samples[i] + r.eta[i]).clamp(0.0, 1.0)
            );
        }
    }

    #[test]
    fn fgsm_rejects_multi_step_config() {
        let model = LinearModel { w: vec![1.0] };
        let x = wave(vec![0.5]);
        assert!(matches!(
            fgsm(&model, &x, 0, &AttackConfig::iterated(0.1, 2)),
            Err(AttackError::InvalidConfig { .. })
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_eps = AttackConfig {
            epsilon: -0.1,
            ..AttackConfig::fgsm(0.0)
        };
        assert!(bad_eps.validate().is_err());
        let bad_range = AttackConfig {
            clip_min: 1.0,
            clip_max: 0.0,
            ..AttackConfig::fgsm(0.1)
        };
        assert!(bad_range.validate().is_err());
        let bad_ball = AttackConfig {
            ball: Some(0.01),
            ..AttackConfig::fgsm(0.1)
        };
        assert!(bad_ball.validate().is_err());
    }

    #[test]
    fn accumulation_effect_substitution() {
        // epsilon 0.01, m = 0.5, n = 1000 -> delta = 5.0.
        let w = vec![0.5; 1000];
        let r = accumulation_effect(&w, 0.01);
        assert_eq!(r.delta_activation, 5.0);
        assert_eq!(r.mean_abs_weight, 0.5);
        assert_eq!(r.n, 1000);
        assert!(r.consistent());
    }

    #[test]
    fn accumulation_effect_zero_weights() {
        let r = accumulation_effect(&[0.0; 32], 0.7);
        assert_eq!(r.delta_activation, 0.0);
        assert!(r.consistent());
    }

    #[test]
    fn signed_route_equals_abs_route_exactly() {
        let w: Vec<f64> = (0..257)
            .map(|i| ((i * 71 % 97) as f64 - 48.0) / 17.0)
            .collect();
        let direct = accumulation_effect(&w, 0.013).delta_activation;
        let abs: Vec<f64> = w.iter().map(|v| v.abs()).collect();
        assert_eq!(direct, 0.013 * pairwise_sum(&abs));
    }

    #[test]
    fn doubling_n_doubles_delta_exactly() {
        let w: Vec<f64> = (0..123)
            .map(|i| ((i * 31 % 53) as f64 - 26.0) * 0.037)
            .collect();
        let doubled: Vec<f64> = w.iter().chain(&w).copied().collect();
        let single = accumulation_effect(&w, 0.02).delta_activation;
        let double = accumulation_effect(&doubled, 0.02).delta_activation;
        assert_eq!(double, 2.0 * single);
    }
}
