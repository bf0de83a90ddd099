use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DotError, Result};
use crate::io::create;
use crate::numeric::Matrix;

use super::config::TrainConfig;
use super::net::{Activation, ClassifierHead, DenseLayer, ProjectionNet};
use super::params::ModelParams;

pub const CHECKPOINT_VERSION: u32 = 1;

/// One dense layer in a checkpoint: `weight` is `rows × cols` row-major and
/// `bias` has `cols` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    name: String,
    rows: usize,
    cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<Activation>,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    seed: u64,
    config: TrainConfig,
    layers: Vec<LayerRecord>,
}

/// Trained parameters plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let p = &self.params;
        let net_layers = |prefix: &str, net: &ProjectionNet| -> Vec<LayerRecord> {
            net.layers()
                .iter()
                .enumerate()
                .map(|(i, l)| LayerRecord {
                    name: format!("{prefix}.{i}"),
                    rows: l.weight.rows(),
                    cols: l.weight.cols(),
                    activation: Some(l.activation),
                    weight: l.weight.as_slice().to_vec(),
                    bias: l.bias.as_slice().to_vec(),
                })
                .collect()
        };
        let mut layers = net_layers("source", &p.source);
        layers.extend(net_layers("target", &p.target));
        layers.push(LayerRecord {
            name: "classifier".into(),
            rows: p.classifier.weight.rows(),
            cols: p.classifier.weight.cols(),
            activation: None,
            weight: p.classifier.weight.as_slice().to_vec(),
            bias: p.classifier.bias.as_slice().to_vec(),
        });
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            seed: p.seed,
            config: self.config.clone(),
            layers,
        };
        let mut s = serde_json::to_string_pretty(&file).expect("checkpoint serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| DotError::Schema(format!("checkpoint: {e}")))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(DotError::Schema(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                file.version
            )));
        }
        let mut source = Vec::new();
        let mut target = Vec::new();
        let mut classifier = None;
        for rec in file.layers {
            let (weight, bias) = tensors(&rec)?;
            let (group, index) = match rec.name.split_once('.') {
                Some((g, i)) => (g, i.parse::<usize>().ok()),
                None => (rec.name.as_str(), None),
            };
            let layers = match group {
                "source" => &mut source,
                "target" => &mut target,
                "classifier" if index.is_none() && classifier.is_none() => {
                    classifier = Some(
                        ClassifierHead::new(weight, bias)
                            .map_err(|e| DotError::Schema(format!("classifier: {e}")))?,
                    );
                    continue;
                }
                _ => return Err(DotError::Schema(format!("unexpected layer {:?}", rec.name))),
            };
            if index != Some(layers.len()) {
                return Err(DotError::Schema(format!(
                    "layer {:?} out of order",
                    rec.name
                )));
            }
            let activation = rec.activation.ok_or_else(|| {
                DotError::Schema(format!("layer {:?} lacks an activation", rec.name))
            })?;
            layers.push(DenseLayer {
                weight,
                bias,
                activation,
            });
        }
        let net = |name: &str, layers: Vec<DenseLayer>| {
            ProjectionNet::new(layers).map_err(|e| DotError::Schema(format!("{name} net: {e}")))
        };
        let classifier =
            classifier.ok_or_else(|| DotError::Schema("checkpoint has no classifier".into()))?;
        let params = ModelParams::new(
            net("source", source)?,
            net("target", target)?,
            classifier,
            file.seed,
        )
        .map_err(|e| DotError::Schema(e.to_string()))?;
        Ok(Checkpoint {
            params,
            config: file.config,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = create(path)?;
        w.write_all(self.to_json().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| DotError::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DotError::io(path, e))?;
        Self::from_json(&text)
    }
}

fn tensors(rec: &LayerRecord) -> Result<(Matrix, Matrix)> {
    if rec.weight.len() != rec.rows * rec.cols || rec.bias.len() != rec.cols {
        return Err(DotError::Schema(format!(
            "layer {:?}: {} weights and {} biases for a {}x{} layer",
            rec.name,
            rec.weight.len(),
            rec.bias.len(),
            rec.rows,
            rec.cols
        )));
    }
    let w = Matrix::new(rec.rows, rec.cols, rec.weight.clone())
        .map_err(|e| DotError::Schema(e.to_string()))?;
    let b =
        Matrix::new(1, rec.cols, rec.bias.clone()).map_err(|e| DotError::Schema(e.to_string()))?;
    Ok((w, b))
}
