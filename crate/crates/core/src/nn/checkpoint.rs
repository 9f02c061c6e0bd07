//! JSON model checkpoints: a header, the normalizer, then every parameter
//! tensor in declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::mat::Mat;
use super::model::{DynamicsModel, ModelSpec, Normalizer};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: usize,
    pub depth: usize,
    pub delta_mode: bool,
    pub action_steps: usize,
    pub dropout: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Checkpoint {
    header: CheckpointHeader,
    normalizer: Normalizer,
    tensors: Vec<Mat>,
}

pub fn to_json(model: &DynamicsModel) -> Result<String> {
    let s = model.spec();
    let ck = Checkpoint {
        header: CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            state_dim: s.state_dim,
            action_dim: s.action_dim,
            hidden: s.hidden,
            depth: s.depth,
            delta_mode: s.delta_mode,
            action_steps: s.action_steps,
            dropout: s.dropout,
        },
        normalizer: model.normalizer().clone(),
        tensors: model.params().to_vec(),
    };
    Ok(serde_json::to_string(&ck)?)
}

pub fn from_json(text: &str) -> Result<DynamicsModel> {
    let ck: Checkpoint = serde_json::from_str(text)?;
    if ck.header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: ck.header.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let h = ck.header;
    let spec = ModelSpec {
        state_dim: h.state_dim,
        action_dim: h.action_dim,
        action_steps: h.action_steps,
        hidden: h.hidden,
        depth: h.depth,
        delta_mode: h.delta_mode,
        dropout: h.dropout,
    };
    for t in &ck.tensors {
        Mat::from_vec(t.rows(), t.cols(), t.as_slice().to_vec())?;
    }
    DynamicsModel::from_parts(spec, ck.tensors, ck.normalizer)
}

pub fn save(model: &DynamicsModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_json(model)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<DynamicsModel> {
    from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let spec = ModelSpec::one_step(5, 1, 6, 2);
        let m = DynamicsModel::new(spec, 11).unwrap();
        let back = from_json(&to_json(&m).unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let m = DynamicsModel::new(ModelSpec::one_step(2, 1, 3, 1), 0).unwrap();
        let text = to_json(&m).unwrap().replace("\"format_version\":1", "\"format_version\":9");
        assert!(matches!(from_json(&text), Err(Error::Version { found: 9, .. })));
    }
}
