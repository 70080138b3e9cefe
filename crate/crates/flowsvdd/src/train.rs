//! Seeded mini-batch training loop.
//!
//! Block-coordinate scheme: flow parameters and the center move by Adam on
//! the hinge loss with R^2 held fixed within an epoch; R^2 is recomputed in
//! closed form from the full training set every `radius_update_period`
//! epochs and once more at the end.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::flow::{FlowConfig, FlowModel};
use crate::svdd::{self, SvddHead};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(
        "non-finite loss at epoch {epoch}, step {step}; \
         try a smaller learning rate or enable gradient clipping"
    )]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("training set has {n} rows, need at least {need}")]
    TooFewRows { n: usize, need: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub nu: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Recompute R^2 from the full training set every this many epochs.
    pub radius_update_period: usize,
    /// Global-norm gradient clip; None disables.
    pub grad_clip: Option<f64>,
    pub flow: FlowConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            nu: 0.05,
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            radius_update_period: 1,
            grad_clip: Some(10.0),
            flow: FlowConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(TrainError::InvalidConfig(format!("nu must be in (0, 1], got {}", self.nu)));
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(TrainError::InvalidConfig("epochs and batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(TrainError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.radius_update_period < 1 {
            return Err(TrainError::InvalidConfig("radius_update_period must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of the training history CSV.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub radius_sq: f64,
    pub violation_fraction: f64,
    pub log_w: f64,
}

pub struct TrainOutcome {
    pub model: FlowModel,
    pub head: SvddHead,
    pub history: Vec<EpochStats>,
}

/// Adam moment buffers, one pair per trainable tensor.
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(param_sizes: &[usize]) -> Self {
        AdamState {
            m: param_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: param_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
        }
    }
}

/// Standard Adam update with bias-corrected moments.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::InvalidConfig("adam_step: parameter/gradient count mismatch".into()));
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - beta1.powf(t);
    let bc2 = 1.0 - beta2.powf(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if p.len() != g.len() {
            return Err(TrainError::Tensor(TensorError::ShapeMismatch {
                op: "adam_step",
                detail: format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
            }));
        }
        for (i, (&gi, pi)) in g.data().iter().zip(p.data_mut().iter_mut()).enumerate() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) {
    let total: f64 = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if total > max_norm {
        let scale = max_norm / total;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
}

fn gather_rows(features: &Tensor, rows: &[usize]) -> Tensor {
    let d = features.cols();
    let mut data = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        data.extend_from_slice(features.row(r));
    }
    Tensor::matrix(rows.len(), d, data).expect("row gather of finite data")
}

fn recompute_radius(
    features: &Tensor,
    model: &FlowModel,
    head: &mut SvddHead,
) -> Result<f64> {
    let d = svdd::embed_distances(features, model, head)?;
    let sq: Vec<f64> = d.iter().map(|x| x * x).collect();
    head.radius_sq = svdd::optimal_radius_sq(&sq, head.nu)?;
    let strict = sq.iter().filter(|&&s| s > head.radius_sq).count();
    Ok(strict as f64 / sq.len() as f64)
}

/// Train a flow + hypersphere on `features` (rows assumed nominal, or a
/// mixture with contamination at most nu).
pub fn fit(features: &Tensor, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = features.rows();
    if n < 1 {
        return Err(TrainError::TooFewRows { n, need: 1 });
    }
    let batch_size = cfg.batch_size.min(n);
    let dim = features.cols();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = FlowModel::new(dim, &cfg.flow, &mut rng)?;

    // identity-at-init flow: initial center is the data mean, initial R^2 the
    // nu-quantile of squared distances
    let z0 = model.normalized_embed(features)?;
    let mut head = SvddHead {
        center: svdd::init_center(&z0)?,
        radius_sq: 0.0,
        nu: cfg.nu,
    };
    let mut violation = recompute_radius(features, &model, &mut head)?;

    let param_sizes: Vec<usize> = {
        let mut s: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
        s.push(head.center.len());
        s
    };
    let mut adam = AdamState::new(&param_sizes);
    let trainable_scaling = cfg.flow.scaling_enabled;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;

        for (step, chunk) in order.chunks(batch_size).enumerate() {
            let batch = gather_rows(features, chunk);
            let graph = svdd::build_loss_graph(&model, &head, &batch)?;
            let loss_val = graph.tape.value(graph.loss).item();
            if !loss_val.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step });
            }
            let grads = graph.tape.backward(graph.loss)?;

            let mut flow_vars = FlowModel::param_vars(&graph.param_vars);
            let center_var = graph.center_var;
            flow_vars.push(center_var);
            let mut grad_tensors: Vec<Tensor> =
                flow_vars.iter().map(|&v| grads.get(v)).collect();

            // log-scales are the second-to-last entry; freeze when scaling is
            // disabled
            if !trainable_scaling {
                let idx = grad_tensors.len() - 2;
                grad_tensors[idx] = Tensor::zeros(grad_tensors[idx].shape().to_vec());
            }
            if let Some(max_norm) = cfg.grad_clip {
                clip_global_norm(&mut grad_tensors, max_norm);
            }

            let mut params = model.params_mut();
            params.push(&mut head.center);
            adam_step(
                &mut params,
                &grad_tensors,
                &mut adam,
                cfg.learning_rate,
                cfg.beta1,
                cfg.beta2,
                cfg.epsilon,
            )?;

            epoch_loss += loss_val;
            steps += 1;
        }

        if (epoch + 1) % cfg.radius_update_period == 0 {
            violation = recompute_radius(features, &model, &mut head)?;
        }
        history.push(EpochStats {
            epoch,
            mean_loss: epoch_loss / steps as f64,
            radius_sq: head.radius_sq,
            violation_fraction: violation,
            log_w: model.log_jacobian(),
        });
    }

    // final closed-form radius pass
    let violation = recompute_radius(features, &model, &mut head)?;
    if let Some(last) = history.last_mut() {
        last.radius_sq = head.radius_sq;
        last.violation_fraction = violation;
    }

    Ok(TrainOutcome { model, head, history })
}

/// Serialize history as the CSV emitted next to every trained model.
pub fn history_to_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,mean_loss,radius_sq,violation_fraction,log_w\n");
    for h in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            h.epoch, h.mean_loss, h.radius_sq, h.violation_fraction, h.log_w
        ));
    }
    out
}
