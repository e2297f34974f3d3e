//! Versioned checkpoint container: a JSON header describing config, kind,
//! labels, and tensor shapes, followed by the parameter arrays as
//! little-endian 32-bit floats. Round-trips are loss-free at f32 precision.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::config::ModelConfig;
use super::model::{Model, ModelKind};
use super::NnError;

const MAGIC: &[u8; 4] = b"WADV";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: ModelConfig,
    class_labels: Vec<String>,
    tensors: Vec<TensorInfo>,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

pub fn model_to_bytes(model: &Model) -> Result<Vec<u8>, NnError> {
    let tensors: Vec<TensorInfo> = model
        .params
        .iter()
        .map(|(name, t)| TensorInfo {
            name: name.clone(),
            shape: t.shape.clone(),
        })
        .collect();
    let header = Header {
        kind: model.kind,
        config: model.config,
        class_labels: model.class_labels.clone(),
        tensors,
    };
    let header_json = serde_json::to_vec(&header).map_err(|e| NnError::Checkpoint {
        detail: format!("header encode: {e}"),
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    for t in model.params.values() {
        for &v in &t.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model, NnError> {
    let bad = |detail: String| NnError::Checkpoint { detail };
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(bad("not a waveadv checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}, expected {VERSION}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + header_len {
        return Err(bad("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| bad(format!("header decode: {e}")))?;
    let mut pos = 16 + header_len;
    let mut params = BTreeMap::new();
    for info in &header.tensors {
        let n: usize = info.shape.iter().product();
        let end = pos + 4 * n;
        if bytes.len() < end {
            return Err(bad(format!("truncated data for tensor '{}'", info.name)));
        }
        let values: Vec<f64> = bytes[pos..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let tensor = Tensor::from_values(&info.shape, values)
            .map_err(|e| bad(format!("tensor '{}': {e}", info.name)))?;
        params.insert(info.name.clone(), tensor);
        pos = end;
    }
    header.config.validate()?;
    Ok(Model {
        config: header.config,
        kind: header.kind,
        params,
        class_labels: header.class_labels,
    })
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), NnError> {
    fs::write(path, model_to_bytes(model)?).map_err(|e| NnError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_model(path: &Path) -> Result<Model, NnError> {
    let bytes = fs::read(path).map_err(|e| NnError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::build_wavernn;

    fn test_model() -> Model {
        let mut cfg = ModelConfig::desk(3);
        cfg.clip_seconds = 0.2;
        cfg.frontend_blocks = 2;
        cfg.conv_features = 4;
        cfg.rnn_units = 5;
        build_wavernn(&cfg, 11).unwrap()
    }

    #[test]
    fn roundtrip_is_lossless_at_f32() {
        let m = test_model();
        let bytes = model_to_bytes(&m).unwrap();
        let back = model_from_bytes(&bytes).unwrap();
        assert_eq!(back.kind, m.kind);
        assert_eq!(back.config, m.config);
        assert_eq!(back.class_labels, m.class_labels);
        for (name, t) in &m.params {
            let restored = &back.params[name];
            assert_eq!(restored.shape, t.shape);
            for (a, b) in t.values.iter().zip(&restored.values) {
                assert_eq!(*a as f32, *b as f32, "tensor {name}");
            }
        }
        // A second save of the loaded model is byte-identical.
        let bytes2 = model_to_bytes(&back).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = model_to_bytes(&test_model()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            model_from_bytes(&bytes),
            Err(NnError::Checkpoint { .. })
        ));
    }

    #[test]
    fn truncated_data_is_rejected() {
        let bytes = model_to_bytes(&test_model()).unwrap();
        assert!(model_from_bytes(&bytes[..bytes.len() - 8]).is_err());
    }
}
