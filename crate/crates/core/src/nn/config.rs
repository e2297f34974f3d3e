use serde::{Deserialize, Serialize};

use super::NnError;

/// Nonlinearity applied after each convolution and the hidden dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Tanh
    }
}

/// Architecture hyperparameters shared by WaveCNN and WaveRNN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub sample_rate: u32,
    pub clip_seconds: f64,
    /// Frame duration; the front end processes each frame independently.
    pub frame_ms: f64,
    pub frontend_blocks: usize,
    pub backend_blocks: usize,
    pub conv_features: usize,
    pub kernel_len: usize,
    pub pool: usize,
    pub rnn_units: usize,
    pub fc_units: usize,
    pub num_classes: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk(2)
    }
}

impl ModelConfig {
    /// Full-scale configuration: 16 kHz, 6 s clips, 8 front-end and 6
    /// back-end blocks with 32 features.
    pub fn paper(num_classes: usize) -> Self {
        ModelConfig {
            sample_rate: 16000,
            clip_seconds: 6.0,
            frame_ms: 40.0,
            frontend_blocks: 8,
            backend_blocks: 6,
            conv_features: 32,
            kernel_len: 40,
            pool: 2,
            rnn_units: 64,
            fc_units: 64,
            num_classes,
            activation: Activation::Tanh,
        }
    }

    /// Reduced configuration sized for minutes-scale runs while keeping the
    /// full structure: 8 kHz, 1.2 s clips, 4+3 blocks, 16 features.
    pub fn desk(num_classes: usize) -> Self {
        ModelConfig {
            sample_rate: 8000,
            clip_seconds: 1.2,
            frame_ms: 40.0,
            frontend_blocks: 4,
            backend_blocks: 3,
            conv_features: 16,
            kernel_len: 40,
            pool: 2,
            rnn_units: 64,
            fc_units: 64,
            num_classes,
            activation: Activation::Tanh,
        }
    }

    pub fn n_samples(&self) -> usize {
        (self.clip_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn frame_len(&self) -> usize {
        (self.frame_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn n_frames(&self) -> usize {
        self.n_samples() / self.frame_len()
    }

    /// Per-frame output length after the front-end pooling chain.
    pub fn frontend_out_len(&self) -> usize {
        let mut len = self.frame_len();
        for _ in 0..self.frontend_blocks {
            len /= self.pool;
        }
        len
    }

    /// Time length after the back-end pooling chain (WaveCNN only).
    pub fn backend_out_len(&self) -> usize {
        let mut len = self.n_frames() * self.frontend_out_len();
        for _ in 0..self.backend_blocks {
            len /= self.pool;
        }
        len
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let invalid = |detail: String| Err(NnError::InvalidConfig { detail });
        if self.num_classes < 2 {
            return invalid(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.conv_features == 0 || self.kernel_len == 0 || self.pool < 2 {
            return invalid("conv_features, kernel_len must be positive and pool at least 2".into());
        }
        if self.rnn_units == 0 || self.fc_units == 0 {
            return invalid("rnn_units and fc_units must be positive".into());
        }
        let frame_len = self.frame_len();
        if frame_len == 0 {
            return invalid(format!("frame of {} ms is empty at {} Hz", self.frame_ms, self.sample_rate));
        }
        if self.n_samples() % frame_len != 0 {
            return invalid(format!(
                "clip of {} samples is not divisible by the {}-sample frame",
                self.n_samples(),
                frame_len
            ));
        }
        let mut len = frame_len;
        for block in 0..self.frontend_blocks {
            len /= self.pool;
            if len == 0 {
                return Err(NnError::EmptyFeatureMap {
                    stage: "frontend",
                    block,
                });
            }
        }
        let mut len = self.n_frames() * len;
        for block in 0..self.backend_blocks {
            len /= self.pool;
            if len == 0 {
                return Err(NnError::EmptyFeatureMap {
                    stage: "backend",
                    block,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_config_shapes() {
        let c = ModelConfig::paper(2);
        c.validate().unwrap();
        assert_eq!(c.n_samples(), 96000);
        assert_eq!(c.frame_len(), 640);
        assert_eq!(c.n_frames(), 150);
        // 640 halved eight times with floor: ... 5 -> 2.
        assert_eq!(c.frontend_out_len(), 2);
        // 150*2 = 300 halved six times: 300,150,75,37,18,9 -> 4.
        assert_eq!(c.backend_out_len(), 4);
    }

    #[test]
    fn desk_config_shapes() {
        let c = ModelConfig::desk(4);
        c.validate().unwrap();
        assert_eq!(c.n_samples(), 9600);
        assert_eq!(c.frame_len(), 320);
        assert_eq!(c.n_frames(), 30);
        assert_eq!(c.frontend_out_len(), 20);
        assert_eq!(c.backend_out_len(), 75);
    }

    #[test]
    fn too_many_blocks_name_the_offending_block() {
        let mut c = ModelConfig::desk(2);
        c.frontend_blocks = 12; // 320 supports at most 8 halvings
        match c.validate() {
            Err(NnError::EmptyFeatureMap { stage, block }) => {
                assert_eq!(stage, "frontend");
                assert_eq!(block, 8);
            }
            other => panic!("expected empty-feature-map error, got {other:?}"),
        }
    }

    #[test]
    fn indivisible_clip_is_rejected() {
        let mut c = ModelConfig::desk(2);
        c.clip_seconds = 1.25; // 10000 samples, frame 320
        assert!(matches!(c.validate(), Err(NnError::InvalidConfig { .. })));
    }
}
