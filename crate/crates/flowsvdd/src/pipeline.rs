//! Command implementations behind the CLI and the C API: train, eval, grid,
//! rank. Each writes its outputs under the run's output directory and
//! returns the paths it produced.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::Dataset;
use crate::eval::{self, EvalReport, REPORT_FORMAT_VERSION};
use crate::manifest::{DatasetManifest, ManifestError, RunManifest};
use crate::model_io::{self, ModelIoError, ModelMeta};
use crate::svdd;
use crate::train::{self, TrainError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    ModelIo(#[from] ModelIoError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| PipelineError::Io { path: parent.display().to_string(), source: e })?;
    }
    std::fs::write(path, content)
        .map_err(|e| PipelineError::Io { path: path.display().to_string(), source: e })
}

pub struct TrainArtifacts {
    pub model_path: PathBuf,
    pub history_path: PathBuf,
    pub manifest_echo_path: PathBuf,
    pub final_radius_sq: f64,
    pub final_violation_fraction: f64,
}

/// `train` command: fit on the manifest's training split, write the model,
/// the per-epoch history CSV, and an echo of the effective configuration.
pub fn cmd_train(manifest_path: &Path, seed_override: Option<u64>) -> Result<TrainArtifacts> {
    let mut run = RunManifest::load(manifest_path)?;
    if let Some(seed) = seed_override {
        run.train.seed = seed;
    }
    let (train_set, _) = run.dataset.realize()?;
    let outcome = train::fit(&train_set.features, &run.train)?;

    let model_path = run.output_dir.join("model.json");
    let history_path = run.output_dir.join("history.csv");
    let manifest_echo_path = run.output_dir.join("effective.manifest");

    if let Some(parent) = model_path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| PipelineError::Io { path: parent.display().to_string(), source: e })?;
    }
    model_io::save_model(
        &model_path,
        &outcome.model,
        &outcome.head,
        &ModelMeta { config_digest: run.digest.clone(), seed: run.train.seed },
    )?;
    write_file(&history_path, &train::history_to_csv(&outcome.history))?;
    write_file(&manifest_echo_path, &run.effective_text())?;

    let last = outcome.history.last();
    Ok(TrainArtifacts {
        model_path,
        history_path,
        manifest_echo_path,
        final_radius_sq: outcome.head.radius_sq,
        final_violation_fraction: last.map_or(0.0, |h| h.violation_fraction),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Test,
    /// Test when the manifest produces one, otherwise train.
    Auto,
}

fn pick_split(
    split: EvalSplit,
    train: Dataset,
    test: Option<Dataset>,
) -> Result<Dataset> {
    match (split, test) {
        (EvalSplit::Train, _) => Ok(train),
        (EvalSplit::Test, Some(t)) => Ok(t),
        (EvalSplit::Test, None) => {
            Err(PipelineError::Invalid("dataset manifest produces no test split".into()))
        }
        (EvalSplit::Auto, Some(t)) => Ok(t),
        (EvalSplit::Auto, None) => Ok(train),
    }
}

/// `eval` command: score a split and write the metrics report. AUC and F1
/// require labels with both classes present; without labels only scores and
/// the violation fraction are reported.
pub fn cmd_eval(
    model_path: &Path,
    dataset_manifest_path: &Path,
    split: EvalSplit,
    ratio: Option<f64>,
    out_path: &Path,
) -> Result<EvalReport> {
    let (model, head, meta) = model_io::load_model(model_path)?;
    let data_manifest = DatasetManifest::load(dataset_manifest_path)?;
    let (train_set, test_set) = data_manifest.realize()?;
    let ds = pick_split(split, train_set, test_set)?;
    if ds.dim() != model.input_dim {
        return Err(PipelineError::Invalid(format!(
            "dataset dimension {} does not match model dimension {}",
            ds.dim(),
            model.input_dim
        )));
    }

    let scored = svdd::score(&ds.features, &model, &head)?;
    let violation_fraction =
        scored.outlier.iter().filter(|&&o| o).count() as f64 / scored.outlier.len().max(1) as f64;

    let labeled = ds.labels.as_ref().filter(|l| {
        let pos = l.iter().filter(|&&x| x == 1).count();
        pos > 0 && pos < l.len()
    });
    let (auc_v, f1_v, thr_v, ratio_v) = match labeled {
        Some(labels) => {
            let auc = eval::auc(&scored.distances, labels)?;
            let ratio = ratio.unwrap_or_else(|| {
                labels.iter().filter(|&&x| x == 1).count() as f64 / labels.len() as f64
            });
            let (f1, thr) = eval::f1_at_ratio(&scored.distances, labels, ratio)?;
            (Some(auc), Some(f1), Some(thr), Some(ratio))
        }
        None => (None, None, None, None),
    };

    let k = 10.min(scored.distances.len());
    let (best, worst) = eval::rank_extremes(&scored.distances, k)?;
    let report = EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        auc: auc_v,
        f1: f1_v,
        threshold: thr_v,
        anomaly_ratio: ratio_v,
        violation_fraction,
        scores: scored.distances,
        labels: ds.labels.clone(),
        top_k: worst,
        bottom_k: best,
        config_digest: meta.config_digest,
        seed: meta.seed,
    };
    write_file(out_path, &serde_json::to_string_pretty(&report).expect("serializable report"))?;
    Ok(report)
}

pub struct GridArtifacts {
    pub grid_path: PathBuf,
    pub latent_path: Option<PathBuf>,
}

/// `grid` command: boundary grid CSV over a 2-d box, plus optional latent
/// embeddings of a dataset's training split for the latent-space panel.
pub fn cmd_grid(
    model_path: &Path,
    bounds: [f64; 4],
    resolution: usize,
    out_path: &Path,
    dataset_manifest_path: Option<&Path>,
    latent_out: Option<&Path>,
) -> Result<GridArtifacts> {
    if resolution < 1 {
        return Err(PipelineError::Invalid("resolution must be >= 1".into()));
    }
    let (model, head, _) = model_io::load_model(model_path)?;
    let grid = eval::boundary_grid(&model, &head, bounds, resolution)?;
    write_file(out_path, &eval::grid_to_csv(&grid))?;

    let latent_path = match (dataset_manifest_path, latent_out) {
        (Some(dp), Some(lp)) => {
            let (train_set, _) = DatasetManifest::load(dp)?.realize()?;
            let z = model.normalized_embed(&train_set.features)?;
            let d = svdd::distances(&z, &head.center);
            let r = head.radius();
            let mut csv = String::from("x,y,latent_x,latent_y,distance,inlier\n");
            for i in 0..train_set.n() {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    train_set.features.row(i)[0],
                    train_set.features.row(i)[1],
                    z.row(i)[0],
                    z.row(i)[1],
                    d[i],
                    u8::from(d[i] <= r),
                ));
            }
            write_file(lp, &csv)?;
            Some(lp.to_path_buf())
        }
        _ => None,
    };
    Ok(GridArtifacts { grid_path: out_path.to_path_buf(), latent_path })
}

/// `rank` command: best-k and worst-k nominal examples by center distance.
pub fn cmd_rank(
    model_path: &Path,
    dataset_manifest_path: &Path,
    split: EvalSplit,
    k: usize,
    out_path: &Path,
) -> Result<serde_json::Value> {
    let (model, head, meta) = model_io::load_model(model_path)?;
    let data_manifest = DatasetManifest::load(dataset_manifest_path)?;
    let (train_set, test_set) = data_manifest.realize()?;
    let ds = pick_split(split, train_set, test_set)?;
    let scored = svdd::score(&ds.features, &model, &head)?;
    let (best, worst) = eval::rank_extremes(&scored.distances, k)?;
    let doc = serde_json::json!({
        "format_version": REPORT_FORMAT_VERSION,
        "k": k,
        "best": best.iter().map(|&i| serde_json::json!({
            "index": i, "score": scored.distances[i]
        })).collect::<Vec<_>>(),
        "worst": worst.iter().map(|&i| serde_json::json!({
            "index": i, "score": scored.distances[i]
        })).collect::<Vec<_>>(),
        "config_digest": meta.config_digest,
        "seed": meta.seed,
    });
    write_file(out_path, &serde_json::to_string_pretty(&doc).expect("serializable ranks"))?;
    Ok(doc)
}
