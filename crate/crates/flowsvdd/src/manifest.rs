//! Plain-text key = value manifests. A dataset manifest fully describes how
//! to obtain and preprocess data; a run manifest points at a dataset
//! manifest and fixes every training knob, so any experiment is re-runnable
//! from the manifest plus the input files alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{self, CsvSchema, Dataset, SplitMode, SyntheticKind};
use crate::flow::FlowConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected `key = value`, got {text:?}")]
    Syntax { path: String, line: usize, text: String },
    #[error("{path}: unknown key {key:?}")]
    UnknownKey { path: String, key: String },
    #[error("{path}: missing required key {key:?}")]
    MissingKey { path: String, key: String },
    #[error("{path}: bad value for {key:?}: {detail}")]
    BadValue { path: String, key: String, detail: String },
    #[error(transparent)]
    Data(#[from] data::DataError),
}

pub type Result<T> = std::result::Result<T, ManifestError>;

/// Raw parsed key/value file plus provenance.
struct KvFile {
    path: String,
    dir: PathBuf,
    text: String,
    map: BTreeMap<String, String>,
}

impl KvFile {
    fn load(path: &Path) -> Result<KvFile> {
        let pstr = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ManifestError::Io { path: pstr.clone(), source: e })?;
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ManifestError::Syntax {
                path: pstr.clone(),
                line: i + 1,
                text: line.to_string(),
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KvFile {
            path: pstr,
            dir: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            text,
            map,
        })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key).ok_or_else(|| ManifestError::MissingKey {
            path: self.path.clone(),
            key: key.to_string(),
        })
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| ManifestError::BadValue {
                path: self.path.clone(),
                key: key.to_string(),
                detail: e.to_string(),
            }),
        }
    }

    fn finish(self) -> Result<(String, PathBuf, String)> {
        if let Some(key) = self.map.into_keys().next() {
            return Err(ManifestError::UnknownKey { path: self.path, key });
        }
        Ok((self.path, self.dir, self.text))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic { kind: SyntheticKind, n: usize, noise: f64, outlier_rate: f64, seed: u64 },
    Csv { path: PathBuf, schema: CsvSchema, anomaly_complement: bool },
    /// Pre-split train/test files sharing one schema.
    Provided { train_path: PathBuf, test_path: PathBuf, schema: CsvSchema, anomaly_complement: bool },
}

/// Everything needed to materialize a (train, test) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub source: DataSource,
    pub split_mode: Option<SplitMode>,
    pub standardize: bool,
    /// Seeded subsample cap on training rows (desk-scale runs).
    pub max_train_rows: Option<usize>,
    pub subsample_seed: u64,
    pub text: String,
}

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

fn check_version(kv: &mut KvFile) -> Result<()> {
    let v: u32 = kv.parse("format_version", MANIFEST_FORMAT_VERSION)?;
    if v != MANIFEST_FORMAT_VERSION {
        return Err(ManifestError::BadValue {
            path: kv.path.clone(),
            key: "format_version".into(),
            detail: format!("unsupported version {}", v),
        });
    }
    Ok(())
}

fn csv_list(s: Option<String>) -> Vec<String> {
    s.map(|v| {
        v.split(',')
            .map(|x| x.trim().to_string())
            .filter(|x| !x.is_empty())
            .collect()
    })
    .unwrap_or_default()
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let mut kv = KvFile::load(path)?;
        check_version(&mut kv)?;
        let kind = kv.require("kind")?;
        let bad = |kv: &KvFile, key: &str, detail: String| ManifestError::BadValue {
            path: kv.path.clone(),
            key: key.into(),
            detail,
        };

        let source = match kind.as_str() {
            "synthetic" => {
                let skind: SyntheticKind = kv
                    .require("synthetic_kind")?
                    .parse()
                    .map_err(|e| bad(&kv, "synthetic_kind", e))?;
                DataSource::Synthetic {
                    kind: skind,
                    n: kv.parse("n", 1000usize)?,
                    noise: kv.parse("noise", 0.05f64)?,
                    outlier_rate: kv.parse("outlier_rate", 0.0f64)?,
                    seed: kv.parse("data_seed", 0u64)?,
                }
            }
            "csv" => {
                let rel = kv.require("path")?;
                DataSource::Csv {
                    path: kv.dir.join(rel),
                    schema: CsvSchema {
                        label_column: kv.take("label_column"),
                        anomaly_values: csv_list(kv.take("anomaly_values")),
                        categorical_columns: csv_list(kv.take("categorical_columns")),
                        has_header: kv.parse("has_header", true)?,
                    },
                    anomaly_complement: kv.parse("anomaly_complement", false)?,
                }
            }
            "provided" => {
                let train_rel = kv.require("train_path")?;
                let test_rel = kv.require("test_path")?;
                DataSource::Provided {
                    train_path: kv.dir.join(train_rel),
                    test_path: kv.dir.join(test_rel),
                    schema: CsvSchema {
                        label_column: kv.take("label_column"),
                        anomaly_values: csv_list(kv.take("anomaly_values")),
                        categorical_columns: csv_list(kv.take("categorical_columns")),
                        has_header: kv.parse("has_header", true)?,
                    },
                    anomaly_complement: kv.parse("anomaly_complement", false)?,
                }
            }
            other => {
                return Err(bad(&kv, "kind", format!("expected synthetic|csv|provided, got {:?}", other)))
            }
        };

        let split_mode = match kv.take("split_mode").as_deref() {
            None | Some("none") => None,
            Some("nominal-half") => Some(SplitMode::NominalHalf {
                train_fraction: kv.parse("train_fraction", 0.5f64)?,
                seed: kv.parse("split_seed", 0u64)?,
            }),
            Some("one-vs-rest") => Some(SplitMode::OneVsRest {
                nominal_class: kv.require("nominal_class")?,
                train_fraction: kv.parse("train_fraction", 0.5f64)?,
                seed: kv.parse("split_seed", 0u64)?,
            }),
            Some(other) => {
                return Err(ManifestError::BadValue {
                    path: kv.path.clone(),
                    key: "split_mode".into(),
                    detail: format!("expected none|nominal-half|one-vs-rest, got {:?}", other),
                })
            }
        };

        let standardize = kv.parse("standardize", true)?;
        let max_train_rows = match kv.take("max_train_rows") {
            None => None,
            Some(v) => Some(v.parse().map_err(|e: std::num::ParseIntError| {
                ManifestError::BadValue {
                    path: kv.path.clone(),
                    key: "max_train_rows".into(),
                    detail: e.to_string(),
                }
            })?),
        };
        let subsample_seed = kv.parse("subsample_seed", 0u64)?;
        let (_, _, text) = kv.finish()?;
        Ok(DatasetManifest { source, split_mode, standardize, max_train_rows, subsample_seed, text })
    }

    /// Materialize train and (optional) test datasets: load, split,
    /// standardize with train statistics, subsample.
    pub fn realize(&self) -> Result<(Dataset, Option<Dataset>)> {
        let flip = |d: &mut Dataset, complement: bool| {
            if complement {
                if let Some(l) = &mut d.labels {
                    for v in l.iter_mut() {
                        *v = 1 - *v;
                    }
                }
            }
        };
        let (mut train, mut test) = match &self.source {
            DataSource::Synthetic { kind, n, noise, outlier_rate, seed } => {
                let d = data::make_synthetic(*kind, *n, *noise, *outlier_rate, *seed)?;
                match &self.split_mode {
                    Some(mode) => {
                        let (tr, te) = data::split(&d, mode)?;
                        (tr, Some(te))
                    }
                    None => (d, None),
                }
            }
            DataSource::Csv { path, schema, anomaly_complement } => {
                let mut d = data::load_csv(path, schema)?;
                flip(&mut d, *anomaly_complement);
                match &self.split_mode {
                    Some(mode) => {
                        let (tr, te) = data::split(&d, mode)?;
                        (tr, Some(te))
                    }
                    None => (d, None),
                }
            }
            DataSource::Provided { train_path, test_path, schema, anomaly_complement } => {
                let mut tr = data::load_csv(train_path, schema)?;
                let mut te = data::load_csv(test_path, schema)?;
                flip(&mut tr, *anomaly_complement);
                flip(&mut te, *anomaly_complement);
                (tr, Some(te))
            }
        };

        if let Some(cap) = self.max_train_rows {
            if train.n() > cap {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.subsample_seed);
                let mut rows: Vec<usize> = (0..train.n()).collect();
                rows.shuffle(&mut rng);
                rows.truncate(cap);
                rows.sort_unstable();
                train = subset(&train, &rows);
            }
        }

        if self.standardize {
            let all: Vec<usize> = (0..train.n()).collect();
            let st = data::standardize(&mut train, &all)?;
            if let Some(te) = &mut test {
                data::apply_standardization(te, &st);
            }
        }
        Ok((train, test))
    }
}

// dataset subsetting lives here only for the subsample cap; split() owns the
// general case
fn subset(d: &Dataset, rows: &[usize]) -> Dataset {
    let dim = d.dim();
    let mut data_v = Vec::with_capacity(rows.len() * dim);
    for &r in rows {
        data_v.extend_from_slice(d.features.row(r));
    }
    Dataset {
        features: crate::tensor::Tensor::matrix(rows.len(), dim, data_v).expect("finite subset"),
        labels: d.labels.as_ref().map(|l| rows.iter().map(|&r| l[r]).collect()),
        class_labels: d.class_labels.as_ref().map(|l| rows.iter().map(|&r| l[r].clone()).collect()),
        feature_names: d.feature_names.clone(),
        standardization: d.standardization.clone(),
    }
}

/// A full training run: dataset manifest plus every trainer knob.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub dataset_path: PathBuf,
    pub dataset: DatasetManifest,
    pub output_dir: PathBuf,
    pub train: TrainConfig,
    /// sha-256 over the run and dataset manifest texts.
    pub digest: String,
    pub text: String,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest> {
        let mut kv = KvFile::load(path)?;
        check_version(&mut kv)?;
        let dataset_rel = kv.require("dataset")?;
        let dataset_path = kv.dir.join(&dataset_rel);
        let output_dir_rel: String = kv.parse("output_dir", String::from("out"))?;
        let output_dir = kv.dir.join(output_dir_rel);

        let grad_clip = match kv.take("grad_clip").as_deref() {
            None => Some(10.0),
            Some("none") => None,
            Some(v) => Some(v.parse().map_err(|e: std::num::ParseFloatError| {
                ManifestError::BadValue {
                    path: kv.path.clone(),
                    key: "grad_clip".into(),
                    detail: e.to_string(),
                }
            })?),
        };
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            nu: kv.parse("nu", defaults.nu)?,
            epochs: kv.parse("epochs", defaults.epochs)?,
            batch_size: kv.parse("batch_size", defaults.batch_size)?,
            learning_rate: kv.parse("learning_rate", defaults.learning_rate)?,
            beta1: kv.parse("beta1", defaults.beta1)?,
            beta2: kv.parse("beta2", defaults.beta2)?,
            epsilon: kv.parse("epsilon", defaults.epsilon)?,
            seed: kv.parse("seed", defaults.seed)?,
            radius_update_period: kv.parse("radius_update_period", defaults.radius_update_period)?,
            grad_clip,
            flow: FlowConfig {
                coupling_layers: kv.parse("coupling_layers", defaults.flow.coupling_layers)?,
                hidden_layers: kv.parse("hidden_layers", defaults.flow.hidden_layers)?,
                hidden_dim: kv.parse("hidden_dim", defaults.flow.hidden_dim)?,
                scaling_enabled: kv.parse("scaling_enabled", defaults.flow.scaling_enabled)?,
            },
        };
        let (_, _, text) = kv.finish()?;
        let dataset = DatasetManifest::load(&dataset_path)?;
        let digest = digest_hex(&[&text, &dataset.text]);
        Ok(RunManifest { dataset_path, dataset, output_dir, train, digest, text })
    }

    /// Echo of the effective configuration, written next to every output.
    pub fn effective_text(&self) -> String {
        let t = &self.train;
        format!(
            "format_version = {}\n\
             digest = {}\n\
             dataset = {}\n\
             output_dir = {}\n\
             nu = {}\nepochs = {}\nbatch_size = {}\nlearning_rate = {}\n\
             beta1 = {}\nbeta2 = {}\nepsilon = {}\nseed = {}\n\
             radius_update_period = {}\ngrad_clip = {}\n\
             coupling_layers = {}\nhidden_layers = {}\nhidden_dim = {}\n\
             scaling_enabled = {}\n",
            MANIFEST_FORMAT_VERSION,
            self.digest,
            self.dataset_path.display(),
            self.output_dir.display(),
            t.nu,
            t.epochs,
            t.batch_size,
            t.learning_rate,
            t.beta1,
            t.beta2,
            t.epsilon,
            t.seed,
            t.radius_update_period,
            t.grad_clip.map_or("none".to_string(), |v| v.to_string()),
            t.flow.coupling_layers,
            t.flow.hidden_layers,
            t.flow.hidden_dim,
            t.flow.scaling_enabled,
        )
    }
}

pub fn digest_hex(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    let out = h.finalize();
    out.iter().map(|b| format!("{:02x}", b)).collect()
}
