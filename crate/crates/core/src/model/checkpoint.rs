//! Checkpoint directories: `checkpoint.json` (head layout, step, seed) and
//! `params.f64` with every parameter concatenated in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, ClassifierHead, Linear, Mlp, ModelError, ProjectionModel};
use crate::blockfile::{read_block, write_block, BlockError};
use crate::numerics::Matrix;

const MANIFEST: &str = "checkpoint.json";
const PARAMS: &str = "params.f64";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ProjectionModel,
    pub classifier: Option<ClassifierHead>,
    pub step: u64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct HeadLayout {
    dims: Vec<usize>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    step: u64,
    seed: u64,
    object_head: HeadLayout,
    text_head: HeadLayout,
    category_head: Option<HeadLayout>,
    classifier: Option<(usize, usize)>,
    params: Vec<(usize, usize)>,
}

fn layout(h: &Mlp) -> HeadLayout {
    HeadLayout { dims: h.dims(), activation: h.activation }
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<(), ModelError> {
    fs::create_dir_all(dir)?;
    let mut mats: Vec<&Matrix> = ckpt.model.parameters();
    if let Some(c) = &ckpt.classifier {
        mats.extend(c.parameters());
    }
    let manifest = Manifest {
        format: "attralign-checkpoint/1".into(),
        step: ckpt.step,
        seed: ckpt.seed,
        object_head: layout(&ckpt.model.object_head),
        text_head: layout(&ckpt.model.text_head),
        category_head: ckpt.model.category_head.as_ref().map(layout),
        classifier: ckpt.classifier.as_ref().map(|c| c.weight.shape()),
        params: mats.iter().map(|m| m.shape()).collect(),
    };
    let flat: Vec<f64> = mats.iter().flat_map(|m| m.as_slice().iter().copied()).collect();
    write_block(&dir.join(PARAMS), &flat)?;
    fs::write(
        dir.join(MANIFEST),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, ModelError> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| ModelError::Format(format!("{MANIFEST} line {}: {e}", e.line())))?;
    let total: usize = m.params.iter().map(|(r, c)| r * c).sum();
    let flat = read_block(&dir.join(PARAMS), total).map_err(|e| match e {
        BlockError::Io(io) => ModelError::Io(io),
        other => ModelError::Format(format!("{PARAMS}: {other}")),
    })?;
    let mut mats = Vec::with_capacity(m.params.len());
    let mut offset = 0;
    for &(r, c) in &m.params {
        mats.push(Matrix::new(r, c, flat[offset..offset + r * c].to_vec())?);
        offset += r * c;
    }
    let mut it = mats.into_iter();
    let mut head = |l: &HeadLayout| -> Result<Mlp, ModelError> {
        let mut layers = Vec::new();
        for w in l.dims.windows(2) {
            let (weight, bias) = (it.next(), it.next());
            let (Some(weight), Some(bias)) = (weight, bias) else {
                return Err(ModelError::Format("parameter list shorter than layout".into()));
            };
            if weight.shape() != (w[0], w[1]) || bias.shape() != (1, w[1]) {
                return Err(ModelError::Format(format!("layer shape mismatch for dims {:?}", l.dims)));
            }
            layers.push(Linear { weight, bias });
        }
        Ok(Mlp { activation: l.activation, layers })
    };
    let object_head = head(&m.object_head)?;
    let text_head = head(&m.text_head)?;
    let category_head = m.category_head.as_ref().map(&mut head).transpose()?;
    let model = ProjectionModel::from_heads(object_head, text_head, category_head)?;
    let classifier = match m.classifier {
        Some(shape) => {
            let (Some(weight), Some(bias)) = (it.next(), it.next()) else {
                return Err(ModelError::Format("missing classifier parameters".into()));
            };
            if weight.shape() != shape {
                return Err(ModelError::Format("classifier shape mismatch".into()));
            }
            Some(ClassifierHead { weight, bias })
        }
        None => None,
    };
    Ok(Checkpoint { model, classifier, step: m.step, seed: m.seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    #[test]
    fn round_trip() {
        for tie in [true, false] {
            let model = ProjectionModel::new(&ModelSpec { tie_text_heads: tie, ..ModelSpec::for_dims(6, 4) }, 3).unwrap();
            let ckpt = Checkpoint {
                model,
                classifier: Some(ClassifierHead::new(5, 64, 1).unwrap()),
                step: 17,
                seed: 3,
            };
            let dir = tempfile::tempdir().unwrap();
            save_checkpoint(&ckpt, dir.path()).unwrap();
            assert_eq!(load_checkpoint(dir.path()).unwrap(), ckpt);
        }
    }
}
