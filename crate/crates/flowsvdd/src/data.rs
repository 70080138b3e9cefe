//! Dataset ingestion, preprocessing, splitting, and synthetic generators.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path} is empty")]
    EmptyFile { path: String },
    #[error("unparseable rows in {path} at lines {lines:?}")]
    BadRows { path: String, lines: Vec<u64> },
    #[error("column {0} not found in header")]
    MissingColumn(String),
    #[error("operation requires labels but the dataset has none")]
    MissingLabels,
    #[error("one-vs-rest requires multiclass labels")]
    NotMulticlass,
    #[error("invalid split spec: {0}")]
    InvalidSplit(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Per-feature statistics captured from the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Standardized feature matrix with optional anomaly labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Tensor,
    /// 1 = anomaly, 0 = nominal.
    pub labels: Option<Vec<u8>>,
    /// Raw class labels when the source is multiclass (one-vs-rest splits).
    pub class_labels: Option<Vec<String>>,
    pub feature_names: Vec<String>,
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    fn subset(&self, rows: &[usize]) -> Dataset {
        let d = self.dim();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            data.extend_from_slice(self.features.row(r));
        }
        Dataset {
            features: Tensor::matrix(rows.len(), d, data).expect("finite subset"),
            labels: self.labels.as_ref().map(|l| rows.iter().map(|&r| l[r]).collect()),
            class_labels: self
                .class_labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r].clone()).collect()),
            feature_names: self.feature_names.clone(),
            standardization: self.standardization.clone(),
        }
    }
}

/// How to read a CSV: which column carries labels, which label values count
/// as anomalies, and which columns get one-hot expansion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CsvSchema {
    pub label_column: Option<String>,
    /// Label values mapped to "anomaly"; when empty, raw class labels are
    /// kept for one-vs-rest splitting instead of a binary mapping.
    pub anomaly_values: Vec<String>,
    pub categorical_columns: Vec<String>,
    pub has_header: bool,
}

/// Load a CSV into a numeric matrix. Categorical columns expand to one-hot
/// blocks appended after the numeric columns, levels in lexicographic order.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let pstr = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(false)
        .from_path(path)
        .map_err(|e| DataError::Csv { path: pstr.clone(), source: e })?;

    let headers: Vec<String> = if schema.has_header {
        rdr.headers()
            .map_err(|e| DataError::Csv { path: pstr.clone(), source: e })?
            .iter()
            .map(|s| s.to_string())
            .collect()
    } else {
        Vec::new()
    };

    let mut records: Vec<csv::StringRecord> = Vec::new();
    for rec in rdr.records() {
        records.push(rec.map_err(|e| DataError::Csv { path: pstr.clone(), source: e })?);
    }
    if records.is_empty() {
        return Err(DataError::EmptyFile { path: pstr });
    }
    let width = records[0].len();
    let headers = if headers.is_empty() {
        (0..width).map(|i| format!("c{}", i)).collect::<Vec<_>>()
    } else {
        headers
    };

    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let label_idx = match &schema.label_column {
        Some(c) => Some(col_index(c)?),
        None => None,
    };
    let mut cat_idx = Vec::new();
    for c in &schema.categorical_columns {
        cat_idx.push(col_index(c)?);
    }

    let numeric_cols: Vec<usize> = (0..width)
        .filter(|i| Some(*i) != label_idx && !cat_idx.contains(i))
        .collect();

    // first pass: collect categorical levels (lexicographic via BTreeSet)
    let mut levels: Vec<BTreeSet<String>> = vec![BTreeSet::new(); cat_idx.len()];
    for rec in &records {
        for (k, &ci) in cat_idx.iter().enumerate() {
            levels[k].insert(rec.get(ci).unwrap_or("").to_string());
        }
    }
    let levels: Vec<Vec<String>> =
        levels.into_iter().map(|s| s.into_iter().collect()).collect();

    let mut feature_names: Vec<String> =
        numeric_cols.iter().map(|&i| headers[i].clone()).collect();
    for (k, &ci) in cat_idx.iter().enumerate() {
        for lv in &levels[k] {
            feature_names.push(format!("{}={}", headers[ci], lv));
        }
    }
    let dim = feature_names.len();

    let mut data = Vec::new();
    let mut raw_labels = Vec::new();
    let mut bad_lines = Vec::new();
    let mut kept = 0usize;
    for (row_i, rec) in records.iter().enumerate() {
        let line = row_i as u64 + 1 + schema.has_header as u64;
        let mut row = Vec::with_capacity(dim);
        let mut ok = rec.len() == width;
        if ok {
            for &ci in &numeric_cols {
                match rec.get(ci).unwrap_or("").trim().parse::<f64>() {
                    Ok(v) if v.is_finite() => row.push(v),
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
        }
        if ok {
            for (k, &ci) in cat_idx.iter().enumerate() {
                let val = rec.get(ci).unwrap_or("");
                for lv in &levels[k] {
                    row.push(if lv == val { 1.0 } else { 0.0 });
                }
            }
        }
        if !ok {
            bad_lines.push(line);
            continue;
        }
        data.extend(row);
        if let Some(li) = label_idx {
            raw_labels.push(rec.get(li).unwrap_or("").trim().to_string());
        }
        kept += 1;
    }
    if !bad_lines.is_empty() {
        return Err(DataError::BadRows { path: pstr, lines: bad_lines });
    }

    let features = Tensor::matrix(kept, dim, data)?;
    let (labels, class_labels) = if label_idx.is_some() {
        if schema.anomaly_values.is_empty() {
            (None, Some(raw_labels))
        } else {
            let bin = raw_labels
                .iter()
                .map(|l| u8::from(schema.anomaly_values.iter().any(|a| a == l)))
                .collect();
            (Some(bin), Some(raw_labels))
        }
    } else {
        (None, None)
    };

    Ok(Dataset { features, labels, class_labels, feature_names, standardization: None })
}

/// Write features (+ binary label column when present) as RFC-4180 CSV.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let pstr = path.display().to_string();
    let file = std::fs::File::create(path)
        .map_err(|e| DataError::Io { path: pstr.clone(), source: e })?;
    let mut w = std::io::BufWriter::new(file);
    let mut io = |s: String| -> Result<()> {
        w.write_all(s.as_bytes())
            .map_err(|e| DataError::Io { path: pstr.clone(), source: e })
    };
    let mut header = data.feature_names.join(",");
    if data.labels.is_some() {
        header.push_str(",label");
    }
    header.push('\n');
    io(header)?;
    for i in 0..data.n() {
        let mut line = data
            .features
            .row(i)
            .iter()
            .map(|v| format!("{}", v))
            .collect::<Vec<_>>()
            .join(",");
        if let Some(l) = &data.labels {
            line.push_str(&format!(",{}", l[i]));
        }
        line.push('\n');
        io(line)?;
    }
    Ok(())
}

/// Z-score all rows using statistics from `train_rows` only. Constant
/// features get a std floor so they map to exact zeros.
pub fn standardize(data: &mut Dataset, train_rows: &[usize]) -> Result<Standardization> {
    if train_rows.is_empty() {
        return Err(DataError::InvalidSplit("standardize needs nonempty train rows".into()));
    }
    let d = data.dim();
    let m = train_rows.len() as f64;
    let mut mean = vec![0.0; d];
    for &r in train_rows {
        for (j, v) in data.features.row(r).iter().enumerate() {
            mean[j] += v;
        }
    }
    for v in &mut mean {
        *v /= m;
    }
    let mut var = vec![0.0; d];
    for &r in train_rows {
        for (j, v) in data.features.row(r).iter().enumerate() {
            var[j] += (v - mean[j]) * (v - mean[j]);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / m).sqrt().max(1e-8)).collect();

    let n = data.n();
    let raw = data.features.data_mut();
    for i in 0..n {
        for j in 0..d {
            raw[i * d + j] = (raw[i * d + j] - mean[j]) / std[j];
        }
    }
    let st = Standardization { mean, std };
    data.standardization = Some(st.clone());
    Ok(st)
}

/// Apply previously captured training statistics to another dataset.
pub fn apply_standardization(data: &mut Dataset, st: &Standardization) {
    let d = data.dim();
    let n = data.n();
    let raw = data.features.data_mut();
    for i in 0..n {
        for j in 0..d {
            raw[i * d + j] = (raw[i * d + j] - st.mean[j]) / st.std[j];
        }
    }
    data.standardization = Some(st.clone());
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitMode {
    /// Seeded random fraction of nominal rows trains; remaining nominal plus
    /// all anomalies test.
    NominalHalf { train_fraction: f64, seed: u64 },
    /// One class is nominal, every other class is an anomaly; nominal rows
    /// split as in NominalHalf.
    OneVsRest { nominal_class: String, train_fraction: f64, seed: u64 },
}

/// Split into (train, test) per the evaluation protocol.
pub fn split(data: &Dataset, spec: &SplitMode) -> Result<(Dataset, Dataset)> {
    match spec {
        SplitMode::NominalHalf { train_fraction, seed } => {
            let labels = data.labels.as_ref().ok_or(DataError::MissingLabels)?;
            split_nominal(data, labels, *train_fraction, *seed)
        }
        SplitMode::OneVsRest { nominal_class, train_fraction, seed } => {
            let classes = data.class_labels.as_ref().ok_or(DataError::MissingLabels)?;
            let distinct: BTreeSet<&String> = classes.iter().collect();
            if distinct.len() < 3 {
                return Err(DataError::NotMulticlass);
            }
            let labels: Vec<u8> =
                classes.iter().map(|c| u8::from(c != nominal_class)).collect();
            let mut relabeled = data.clone();
            relabeled.labels = Some(labels.clone());
            split_nominal(&relabeled, &labels, *train_fraction, *seed)
        }
    }
}

fn split_nominal(
    data: &Dataset,
    labels: &[u8],
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidSplit(format!(
            "train_fraction must be in (0,1), got {}",
            train_fraction
        )));
    }
    let mut nominal: Vec<usize> = (0..data.n()).filter(|&i| labels[i] == 0).collect();
    let anomalies: Vec<usize> = (0..data.n()).filter(|&i| labels[i] == 1).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    nominal.shuffle(&mut rng);
    let n_train = ((nominal.len() as f64) * train_fraction).round() as usize;
    let (train_rows, rest) = nominal.split_at(n_train);
    let mut train_rows = train_rows.to_vec();
    train_rows.sort_unstable();
    let mut test_rows: Vec<usize> = rest.iter().chain(&anomalies).copied().collect();
    test_rows.sort_unstable();
    Ok((data.subset(&train_rows), data.subset(&test_rows)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    Ring,
    TwoMoons,
    GaussianBlobs,
}

impl std::str::FromStr for SyntheticKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ring" => Ok(SyntheticKind::Ring),
            "two-moons" => Ok(SyntheticKind::TwoMoons),
            "gaussian-blobs" => Ok(SyntheticKind::GaussianBlobs),
            other => Err(format!("unknown synthetic kind {:?}", other)),
        }
    }
}

/// 2-d synthetic benchmark clouds. `outlier_rate` > 0 plants labeled
/// anomalies drawn uniformly from the bounding box but kept clear of the
/// nominal support, so labels remain meaningful ground truth.
pub fn make_synthetic(
    kind: SyntheticKind,
    n: usize,
    noise: f64,
    outlier_rate: f64,
    seed: u64,
) -> Result<Dataset> {
    if n < 10 {
        return Err(DataError::InvalidSplit(format!("synthetic n must be >= 10, got {}", n)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_out = ((n as f64) * outlier_rate).round() as usize;
    let n_in = n - n_out;
    let normal = Normal::new(0.0, noise.max(0.0)).expect("finite noise");

    let mut rows: Vec<[f64; 2]> = Vec::with_capacity(n);
    match kind {
        SyntheticKind::Ring => {
            for _ in 0..n_in {
                let theta = rng.random_range(0.0..2.0 * PI);
                let r = 1.0 + normal.sample(&mut rng);
                rows.push([r * theta.cos(), r * theta.sin()]);
            }
            // outliers: uniform on the box, excluded from a band around the
            // unit circle and from the enclosed disc
            let clear = (1.0 + 5.0 * noise).max(1.25);
            for _ in 0..n_out {
                loop {
                    let x: f64 = rng.random_range(-2.0..2.0);
                    let y: f64 = rng.random_range(-2.0..2.0);
                    if (x * x + y * y).sqrt() > clear {
                        rows.push([x, y]);
                        break;
                    }
                }
            }
        }
        SyntheticKind::TwoMoons => {
            for i in 0..n_in {
                let t = rng.random_range(0.0..PI);
                let (mut x, mut y) = if i % 2 == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                x += normal.sample(&mut rng);
                y += normal.sample(&mut rng);
                rows.push([x, y]);
            }
            let clear = (0.3 + 5.0 * noise).max(0.35);
            for _ in 0..n_out {
                loop {
                    let x = rng.random_range(-2.0..3.0);
                    let y = rng.random_range(-1.5..2.0);
                    if moons_distance(x, y) > clear {
                        rows.push([x, y]);
                        break;
                    }
                }
            }
        }
        SyntheticKind::GaussianBlobs => {
            let centers = [[-1.2, -1.0], [1.3, -0.8], [0.0, 1.4]];
            let sigma = noise.max(0.05);
            let blob = Normal::new(0.0, sigma).expect("finite noise");
            for i in 0..n_in {
                let c = centers[i % centers.len()];
                rows.push([c[0] + blob.sample(&mut rng), c[1] + blob.sample(&mut rng)]);
            }
            let clear = 5.0 * sigma;
            for _ in 0..n_out {
                loop {
                    let x = rng.random_range(-3.0..3.0);
                    let y = rng.random_range(-3.0..3.0);
                    let d = centers
                        .iter()
                        .map(|c| ((x - c[0]).powi(2) + (y - c[1]).powi(2)).sqrt())
                        .fold(f64::INFINITY, f64::min);
                    if d > clear {
                        rows.push([x, y]);
                        break;
                    }
                }
            }
        }
    }

    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    let labels = if n_out > 0 {
        Some((0..n).map(|i| u8::from(i >= n_in)).collect())
    } else {
        None
    };
    Ok(Dataset {
        features: Tensor::matrix(n, 2, data)?,
        labels,
        class_labels: None,
        feature_names: vec!["x".into(), "y".into()],
        standardization: None,
    })
}

// distance to the noiseless two-moons centerlines
fn moons_distance(x: f64, y: f64) -> f64 {
    let d1 = ((x * x + y * y).sqrt() - 1.0).abs().max(if y < 0.0 {
        // below the upper moon's half-plane: use endpoint distance
        ((x.abs() - 1.0).max(0.0).powi(2) + y * y).sqrt()
    } else {
        0.0
    });
    let (ux, uy) = (x - 1.0, y - 0.5);
    let d2 = ((ux * ux + uy * uy).sqrt() - 1.0).abs().max(if uy > 0.0 {
        (((ux.abs() - 1.0).max(0.0)).powi(2) + uy * uy).sqrt()
    } else {
        0.0
    });
    d1.min(d2)
}
