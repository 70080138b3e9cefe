//! Versioned JSON serialization of a trained flow + hypersphere.
//!
//! Floats are written as shortest-round-trip decimal literals (serde_json's
//! f64 encoding), which reload bit-exactly; saving the same model twice
//! yields byte-identical files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{CouplingLayer, FlowModel, Mlp, ScalingLayer};
use crate::svdd::SvddHead;
use crate::tensor::Tensor;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad model file {path}: {detail}")]
    Format { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, ModelIoError>;

#[derive(Serialize, Deserialize)]
struct CouplingJson {
    passive: Vec<usize>,
    active: Vec<usize>,
    // weight matrices as nested row-major arrays
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    format_version: u32,
    input_dim: usize,
    scaling_enabled: bool,
    couplings: Vec<CouplingJson>,
    log_scales: Vec<f64>,
    center: Vec<f64>,
    radius_sq: f64,
    nu: f64,
    /// Digest of the run manifest that produced the model.
    config_digest: String,
    seed: u64,
}

pub struct ModelMeta {
    pub config_digest: String,
    pub seed: u64,
}

pub fn save_model(
    path: &Path,
    model: &FlowModel,
    head: &SvddHead,
    meta: &ModelMeta,
) -> Result<()> {
    let doc = ModelJson {
        format_version: MODEL_FORMAT_VERSION,
        input_dim: model.input_dim,
        scaling_enabled: model.scaling_enabled,
        couplings: model
            .couplings
            .iter()
            .map(|c| CouplingJson {
                passive: c.passive.clone(),
                active: c.active.clone(),
                weights: c
                    .mlp
                    .weights
                    .iter()
                    .map(|w| {
                        (0..w.shape()[0])
                            .map(|i| w.row(i).to_vec())
                            .collect()
                    })
                    .collect(),
                biases: c.mlp.biases.iter().map(|b| b.data().to_vec()).collect(),
            })
            .collect(),
        log_scales: model.scaling.log_scales.data().to_vec(),
        center: head.center.data().to_vec(),
        radius_sq: head.radius_sq,
        nu: head.nu,
        config_digest: meta.config_digest.clone(),
        seed: meta.seed,
    };
    let text = serde_json::to_string_pretty(&doc).expect("serializable model");
    std::fs::write(path, text)
        .map_err(|e| ModelIoError::Io { path: path.display().to_string(), source: e })
}

pub fn load_model(path: &Path) -> Result<(FlowModel, SvddHead, ModelMeta)> {
    let pstr = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ModelIoError::Io { path: pstr.clone(), source: e })?;
    let doc: ModelJson = serde_json::from_str(&text)
        .map_err(|e| ModelIoError::Format { path: pstr.clone(), detail: e.to_string() })?;
    if doc.format_version != MODEL_FORMAT_VERSION {
        return Err(ModelIoError::Format {
            path: pstr,
            detail: format!("unsupported format_version {}", doc.format_version),
        });
    }
    let bad = |detail: String| ModelIoError::Format { path: path.display().to_string(), detail };

    let mut couplings = Vec::with_capacity(doc.couplings.len());
    for c in &doc.couplings {
        let mut weights = Vec::new();
        for w in &c.weights {
            let rows = w.len();
            let cols = w.first().map_or(0, |r| r.len());
            let flat: Vec<f64> = w.iter().flatten().copied().collect();
            weights.push(
                Tensor::matrix(rows, cols, flat)
                    .map_err(|e| bad(format!("weight matrix: {}", e)))?,
            );
        }
        let mut biases = Vec::new();
        for b in &c.biases {
            biases.push(
                Tensor::vector(b.clone()).map_err(|e| bad(format!("bias vector: {}", e)))?,
            );
        }
        if weights.len() != biases.len() {
            return Err(bad("weights/biases length mismatch".into()));
        }
        couplings.push(CouplingLayer {
            passive: c.passive.clone(),
            active: c.active.clone(),
            mlp: Mlp { weights, biases },
        });
    }
    let model = FlowModel {
        input_dim: doc.input_dim,
        couplings,
        scaling: ScalingLayer {
            log_scales: Tensor::vector(doc.log_scales)
                .map_err(|e| bad(format!("log_scales: {}", e)))?,
        },
        scaling_enabled: doc.scaling_enabled,
    };
    let head = SvddHead {
        center: Tensor::vector(doc.center).map_err(|e| bad(format!("center: {}", e)))?,
        radius_sq: doc.radius_sq,
        nu: doc.nu,
    };
    Ok((model, head, ModelMeta { config_digest: doc.config_digest, seed: doc.seed }))
}
