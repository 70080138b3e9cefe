//! Metrics and figure-data generation: AUC, F1 at a known contamination
//! ratio, center-proximity rankings, and 2-d boundary grids.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowModel;
use crate::svdd::{self, SvddHead};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("labels contain a single class; both classes are required")]
    SingleClass,
    #[error("scores and labels differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("ratio must be in (0,1), got {0}")]
    DegenerateRatio(f64),
    #[error("k = {k} exceeds the number of examples {m}")]
    KTooLarge { k: usize, m: usize },
    #[error("boundary grid requires a 2-d model, got D = {0}")]
    NotTwoDimensional(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Area under the ROC curve via the Mann-Whitney rank statistic:
/// P(score_anomaly > score_nominal) + P(tie)/2, anomalies positive,
/// higher score = more anomalous.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // midranks for tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let midrank = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            if labels[k] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Threshold at the known contamination ratio: flag the top ceil(ratio*m)
/// scores as anomalies and compute F1 with anomalies positive. Ties at the
/// cut are broken by stable index order. Returns (f1, threshold).
pub fn f1_at_ratio(scores: &[f64], labels: &[u8], ratio: f64) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EvalError::DegenerateRatio(ratio));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(EvalError::SingleClass);
    }
    let m = scores.len();
    let k = ((ratio * m as f64).ceil() as usize).clamp(1, m);
    let mut idx: Vec<usize> = (0..m).collect();
    // descending by score, stable on index
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    let flagged = &idx[..k];
    let threshold = scores[*flagged.last().expect("k >= 1")];
    let tp = flagged.iter().filter(|&&i| labels[i] == 1).count() as f64;
    let fp = k as f64 - tp;
    let fn_ = n_pos as f64 - tp;
    let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
    Ok((f1, threshold))
}

/// Indices of the k smallest (best nominal) and k largest (worst nominal)
/// scores, stable under ties.
pub fn rank_extremes(scores: &[f64], k: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let m = scores.len();
    if k > m {
        return Err(EvalError::KTooLarge { k, m });
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    let best = idx[..k].to_vec();
    let mut worst = idx[m - k..].to_vec();
    worst.reverse();
    Ok((best, worst))
}

/// One scored cell of a 2-d boundary grid, with its latent position.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPoint {
    pub x: f64,
    pub y: f64,
    pub distance: f64,
    pub inlier: bool,
    pub latent_x: f64,
    pub latent_y: f64,
}

/// Uniform grid over `bounds = [xmin, xmax, ymin, ymax]`, scored by the
/// decision rule; latent coordinates are the normalized embeddings, giving
/// both the input-space bounding region and its latent-space sphere.
pub fn boundary_grid(
    model: &FlowModel,
    head: &SvddHead,
    bounds: [f64; 4],
    resolution: usize,
) -> Result<Vec<GridPoint>> {
    if model.input_dim != 2 {
        return Err(EvalError::NotTwoDimensional(model.input_dim));
    }
    let [xmin, xmax, ymin, ymax] = bounds;
    let mut coords = Vec::with_capacity(resolution * resolution * 2);
    for iy in 0..resolution {
        for ix in 0..resolution {
            let fx = if resolution == 1 { 0.5 } else { ix as f64 / (resolution - 1) as f64 };
            let fy = if resolution == 1 { 0.5 } else { iy as f64 / (resolution - 1) as f64 };
            coords.push(xmin + fx * (xmax - xmin));
            coords.push(ymin + fy * (ymax - ymin));
        }
    }
    let grid = Tensor::matrix(resolution * resolution, 2, coords)?;
    let z = model.normalized_embed(&grid)?;
    let d = svdd::distances(&z, &head.center);
    let r = head.radius();
    Ok((0..grid.rows())
        .map(|i| GridPoint {
            x: grid.row(i)[0],
            y: grid.row(i)[1],
            distance: d[i],
            inlier: d[i] <= r,
            latent_x: z.row(i)[0],
            latent_y: z.row(i)[1],
        })
        .collect())
}

pub fn grid_to_csv(grid: &[GridPoint]) -> String {
    let mut out = String::from("x,y,distance,inlier,latent_x,latent_y\n");
    for p in grid {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.x,
            p.y,
            p.distance,
            u8::from(p.inlier),
            p.latent_x,
            p.latent_y
        ));
    }
    out
}

/// Serialized evaluation result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub auc: Option<f64>,
    pub f1: Option<f64>,
    /// Score threshold realizing the reported F1 (known-contamination
    /// top-fraction convention).
    pub threshold: Option<f64>,
    pub anomaly_ratio: Option<f64>,
    pub violation_fraction: f64,
    pub scores: Vec<f64>,
    pub labels: Option<Vec<u8>>,
    pub top_k: Vec<usize>,
    pub bottom_k: Vec<usize>,
    pub config_digest: String,
    pub seed: u64,
}

pub const REPORT_FORMAT_VERSION: u32 = 1;
