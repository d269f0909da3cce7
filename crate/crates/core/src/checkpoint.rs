//! Self-describing JSON checkpoints of trained models.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::FeatureScaler;
use crate::error::{Error, Result};
use crate::recurrent::{CellKind, Network};
use crate::training::{TrainConfig, TrainedModel};

const FORMAT: &str = "hsicgru-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    cell: CellKind,
    input_size: usize,
    hidden_size: usize,
    layers: usize,
    stride: usize,
    config_hash: String,
    config: TrainConfig,
    scaler: FeatureScaler,
    tensors: Vec<Tensor>,
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn to_json(model: &TrainedModel) -> Result<String> {
    let net = &model.network;
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        cell: net.kind(),
        input_size: net.input_size(),
        hidden_size: net.hidden_size(),
        layers: net.num_layers(),
        stride: model.stride,
        config_hash: model.config.config_hash(),
        config: model.config.clone(),
        scaler: model.scaler.clone(),
        tensors: net
            .named_tensors()
            .into_iter()
            .map(|(name, rows, cols, data)| Tensor {
                name,
                rows,
                cols,
                data: data.to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn from_json(text: &str) -> Result<TrainedModel> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(Error::Data(format!(
            "not a version {VERSION} checkpoint (format `{}`, version {})",
            file.format, file.version
        )));
    }
    if file.config_hash != file.config.config_hash() {
        return Err(Error::Data(format!(
            "checkpoint config hash {} does not match its configuration ({})",
            file.config_hash,
            file.config.config_hash()
        )));
    }
    if file.config.cell != file.cell
        || file.config.hidden_size != file.hidden_size
        || file.config.layers != file.layers
        || file.config.stride != file.stride
    {
        return Err(Error::Data("checkpoint architecture does not match its configuration".into()));
    }
    if file.scaler.channels.len() != file.input_size
        || file.scaler.min.len() != file.input_size
        || file.scaler.max.len() != file.input_size
    {
        return Err(Error::Data(format!(
            "scaler covers {} channels, network expects {}",
            file.scaler.channels.len(),
            file.input_size
        )));
    }
    let mut network = Network::zeros(file.cell, file.input_size, file.hidden_size, file.layers)?;
    let expected = network.named_tensors();
    if expected.len() != file.tensors.len() {
        return Err(Error::Data(format!(
            "checkpoint has {} tensors, a {} {}x{}x{} network has {}",
            file.tensors.len(),
            file.cell,
            file.input_size,
            file.hidden_size,
            file.layers,
            expected.len()
        )));
    }
    let mut flat = Vec::with_capacity(network.param_count());
    for ((name, rows, cols, _), t) in expected.iter().zip(&file.tensors) {
        if *name != t.name || *rows != t.rows || *cols != t.cols || t.data.len() != rows * cols {
            return Err(Error::Data(format!(
                "tensor `{}` ({}x{}, {} values) where `{name}` ({rows}x{cols}) was expected",
                t.name,
                t.rows,
                t.cols,
                t.data.len()
            )));
        }
        flat.extend_from_slice(&t.data);
    }
    drop(expected);
    network.set_flat_params(&flat)?;
    if !network.is_finite() {
        return Err(Error::Data("checkpoint holds non-finite parameters".into()));
    }
    Ok(TrainedModel {
        network,
        scaler: file.scaler,
        stride: file.stride,
        config: file.config,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &TrainedModel) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text).map_err(|e| match e {
        Error::Json(j) => Error::Data(format!("{}: {j}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn model(kind: CellKind) -> TrainedModel {
        let mut rng = Rng::new(2);
        let config = TrainConfig {
            cell: kind,
            layers: 2,
            channels: vec!["voltage".into(), "current".into()],
            ..TrainConfig::default()
        };
        TrainedModel {
            network: Network::init(kind, 2, 2, 2, &mut rng).unwrap(),
            scaler: FeatureScaler {
                channels: config.channels.clone(),
                min: vec![3.0, -2.0],
                max: vec![4.2, 0.0],
            },
            stride: 1,
            config,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for kind in CellKind::ALL {
            let m = model(kind);
            let back = from_json(&to_json(&m).unwrap()).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = model(CellKind::Gru);
        save_checkpoint(&path, &m).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), m);
        assert!(load_checkpoint(dir.path().join("missing.json")).is_err());
    }

    #[test]
    fn tampering_is_detected() {
        let text = to_json(&model(CellKind::Gru)).unwrap();
        let edited = text.replacen("\"seed\": 13", "\"seed\": 14", 1);
        assert_ne!(edited, text);
        assert!(from_json(&edited).unwrap_err().to_string().contains("hash"));
        let renamed = text.replacen("layer0.w_r", "layer0.w_x", 1);
        assert!(from_json(&renamed).is_err());
    }

    #[test]
    fn digest_of_known_input() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
