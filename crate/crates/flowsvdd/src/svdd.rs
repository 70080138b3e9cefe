//! The soft-margin hypersphere objective over normalized embeddings, the
//! closed-form radius update, and the test-phase decision rule.
//!
//! Loss: R^2 + 1/(nu*n) * sum_i max(0, ||z_i - c||^2 - R^2), with
//! z_i = f(x_i)/w^(1/D). The radius is not learned by gradient: the exact
//! minimizer over R^2 is an order statistic of the squared distances.

use crate::flow::{FlowModel, ParamVars};
use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

/// Hypersphere state in normalized latent coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SvddHead {
    pub center: Tensor,
    pub radius_sq: f64,
    pub nu: f64,
}

impl SvddHead {
    pub fn radius(&self) -> f64 {
        self.radius_sq.sqrt()
    }
}

/// Per-example anomaly scores and decision flags.
#[derive(Debug, Clone)]
pub struct ScoreVector {
    /// d_i = ||f(x_i)/w^(1/D) - c||; the continuous anomaly score.
    pub distances: Vec<f64>,
    /// d_i > R
    pub outlier: Vec<bool>,
}

/// Builds the loss on the tape with R^2 and nu as constants for the step.
/// `z` are normalized embeddings [n, D]; `c` is the center leaf.
pub fn svdd_loss_tape(
    tape: &mut Tape,
    z: Var,
    c: Var,
    radius_sq: f64,
    nu: f64,
) -> Result<Var> {
    let n = tape.value(z).rows();
    if n == 0 {
        return Err(TensorError::EmptyInput("svdd_loss"));
    }
    let diff = tape.sub(z, c)?;
    let sq_dist = tape.sq_norm_rows(diff)?;
    let excess = tape.offset(sq_dist, -radius_sq)?;
    let hinge = tape.relu(excess)?;
    let total = tape.sum(hinge)?;
    let penalty = tape.scale(total, 1.0 / (nu * n as f64))?;
    tape.offset(penalty, radius_sq)
}

/// Loss value for already-computed embeddings.
pub fn svdd_loss(z: &Tensor, head: &SvddHead) -> Result<f64> {
    let mut tape = Tape::new();
    let zv = tape.leaf(z.clone());
    let cv = tape.leaf(head.center.clone());
    let loss = svdd_loss_tape(&mut tape, zv, cv, head.radius_sq, head.nu)?;
    Ok(tape.value(loss).item())
}

/// Smallest minimizer of the loss over R^2: the k-th smallest squared
/// distance with k = ceil((1 - nu) * n), clamped to [1, n].
pub fn optimal_radius_sq(sq_distances: &[f64], nu: f64) -> Result<f64> {
    if sq_distances.is_empty() {
        return Err(TensorError::EmptyInput("optimal_radius_sq"));
    }
    let n = sq_distances.len();
    let k = (((1.0 - nu) * n as f64).ceil() as usize).clamp(1, n);
    let mut sorted = sq_distances.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    Ok(sorted[k - 1])
}

/// Coordinate-wise mean of the rows of `z`.
pub fn init_center(z: &Tensor) -> Result<Tensor> {
    let (n, d) = (z.rows(), z.cols());
    if n == 0 {
        return Err(TensorError::EmptyInput("init_center"));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (j, v) in z.row(i).iter().enumerate() {
            mean[j] += v;
        }
    }
    for v in &mut mean {
        *v /= n as f64;
    }
    Tensor::vector(mean)
}

/// Distances of normalized embeddings to the center.
pub fn distances(z: &Tensor, center: &Tensor) -> Vec<f64> {
    debug_assert_eq!(z.cols(), center.len());
    (0..z.rows())
        .map(|i| {
            z.row(i)
                .iter()
                .zip(center.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Score a batch: continuous distance plus the outlier flag d > R.
pub fn score(x: &Tensor, model: &FlowModel, head: &SvddHead) -> Result<ScoreVector> {
    if head.center.len() != model.input_dim {
        return Err(TensorError::ShapeMismatch {
            op: "score",
            detail: format!(
                "center dim {} vs model dim {}",
                head.center.len(),
                model.input_dim
            ),
        });
    }
    let z = model.normalized_embed(x)?;
    let d = distances(&z, &head.center);
    let r = head.radius();
    let outlier = d.iter().map(|&di| di > r).collect();
    Ok(ScoreVector { distances: d, outlier })
}

/// The equivalent input-space form of the decision rule:
/// ||f(x) - w^(1/D) c|| > R * w^(1/D).
pub fn score_unnormalized_form(
    x: &Tensor,
    model: &FlowModel,
    head: &SvddHead,
) -> Result<ScoreVector> {
    let y = model.forward(x)?;
    let w_pow = (model.log_jacobian() / model.input_dim as f64).exp();
    let scaled_center: Vec<f64> = head.center.data().iter().map(|c| c * w_pow).collect();
    let scaled_center = Tensor::vector(scaled_center)?;
    let d = distances(&y, &scaled_center);
    let r = head.radius() * w_pow;
    let outlier = d.iter().map(|&di| di > r).collect();
    Ok(ScoreVector { distances: d, outlier })
}

/// Convenience used by the trainer and evaluation: normalized-embed then
/// distances to the head center.
pub fn embed_distances(x: &Tensor, model: &FlowModel, head: &SvddHead) -> Result<Vec<f64>> {
    let z = model.normalized_embed(x)?;
    Ok(distances(&z, &head.center))
}

/// Helper for the trainer: register params, embed a batch, build the loss.
pub struct LossGraph {
    pub tape: Tape,
    pub param_vars: ParamVars,
    pub center_var: Var,
    pub loss: Var,
}

pub fn build_loss_graph(
    model: &FlowModel,
    head: &SvddHead,
    batch: &Tensor,
) -> Result<LossGraph> {
    let mut tape = Tape::new();
    let x = tape.leaf(batch.clone());
    let pv = model.register_params(&mut tape);
    let c = tape.leaf(head.center.clone());
    let z = model.normalized_embed_tape(&mut tape, x, &pv)?;
    let loss = svdd_loss_tape(&mut tape, z, c, head.radius_sq, head.nu)?;
    Ok(LossGraph { tape, param_vars: pv, center_var: c, loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loss_is_radius_sq_when_all_inside() {
        let z = Tensor::matrix(3, 2, vec![0.1, 0.0, 0.0, 0.2, -0.1, -0.1]).unwrap();
        let head = SvddHead { center: Tensor::zeros(vec![2]), radius_sq: 1.0, nu: 0.05 };
        assert_eq!(svdd_loss(&z, &head).unwrap(), 1.0);
    }

    #[test]
    fn loss_hand_arithmetic() {
        // n=2, nu=0.5, c=0, R^2=1, squared distances {0.5, 2}
        let z = Tensor::matrix(2, 1, vec![0.5f64.sqrt(), 2f64.sqrt()]).unwrap();
        let head = SvddHead { center: Tensor::zeros(vec![1]), radius_sq: 1.0, nu: 0.5 };
        assert!((svdd_loss(&z, &head).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_empty_batch() {
        let z = Tensor::zeros(vec![0, 2]);
        let head = SvddHead { center: Tensor::zeros(vec![2]), radius_sq: 1.0, nu: 0.5 };
        assert!(svdd_loss(&z, &head).is_err());
    }

    #[test]
    fn loss_matches_direct_formula_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.random_range(1..30);
            let d = rng.random_range(1..6);
            let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let z = Tensor::matrix(n, d, data).unwrap();
            let center =
                Tensor::vector((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let head = SvddHead {
                center: center.clone(),
                radius_sq: rng.random_range(0.0..4.0),
                nu: rng.random_range(0.01..1.0),
            };
            // independent straight-line evaluation
            let mut acc = 0.0;
            for i in 0..n {
                let sq: f64 = z
                    .row(i)
                    .iter()
                    .zip(center.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                acc += (sq - head.radius_sq).max(0.0);
            }
            let expect = head.radius_sq + acc / (head.nu * n as f64);
            assert!((svdd_loss(&z, &head).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn radius_rule_examples() {
        let d: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        assert_eq!(optimal_radius_sq(&d, 0.1).unwrap(), 9.0);
        assert_eq!(optimal_radius_sq(&d, 1.0).unwrap(), 1.0);
        assert_eq!(optimal_radius_sq(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 2.0);
        assert!(optimal_radius_sq(&[], 0.5).is_err());
    }

    #[test]
    fn radius_rule_stable_under_duplicates() {
        let d = vec![2.0, 1.0, 2.0, 2.0, 3.0];
        assert_eq!(optimal_radius_sq(&d, 0.2).unwrap(), 2.0);
    }

    #[test]
    fn init_center_examples() {
        let z = Tensor::matrix(2, 2, vec![1.0, 1.0, 3.0, 3.0]).unwrap();
        assert_eq!(init_center(&z).unwrap().data(), &[2.0, 2.0]);
        let single = Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(init_center(&single).unwrap().data(), &[0.5, -1.0, 2.0]);
        // symmetric cloud
        let sym = Tensor::matrix(4, 2, vec![1.0, 0.0, -1.0, 0.0, 0.0, 2.0, 0.0, -2.0]).unwrap();
        for v in init_center(&sym).unwrap().data() {
            assert!(v.abs() < 1e-12);
        }
    }

    fn random_trained_like_model(dim: usize, seed: u64) -> FlowModel {
        let cfg = FlowConfig {
            coupling_layers: 2,
            hidden_layers: 2,
            hidden_dim: 8,
            scaling_enabled: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = FlowModel::new(dim, &cfg, &mut rng).unwrap();
        for p in m.params_mut() {
            for v in p.data_mut() {
                *v += rng.random_range(-0.4..0.4);
            }
        }
        m
    }

    #[test]
    fn decision_rule_forms_agree() {
        let model = random_trained_like_model(3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let head = SvddHead {
            center: Tensor::vector(vec![0.3, -0.2, 0.1]).unwrap(),
            radius_sq: 1.3,
            nu: 0.05,
        };
        let n = 10_000;
        let x = Tensor::matrix(
            n,
            3,
            (0..n * 3).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let a = score(&x, &model, &head).unwrap();
        let b = score_unnormalized_form(&x, &model, &head).unwrap();
        let w_pow = (model.log_jacobian() / 3.0).exp();
        let r = head.radius();
        for i in 0..n {
            // flags agree outside a tolerance band around the boundary
            if (a.distances[i] - r).abs() > 1e-12 {
                assert_eq!(a.outlier[i], b.outlier[i], "row {}", i);
            }
            // the two distances differ exactly by the w^(1/D) factor
            assert!((a.distances[i] * w_pow - b.distances[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn center_preimage_scores_zero() {
        let model = random_trained_like_model(2, 9);
        let head = SvddHead {
            center: Tensor::vector(vec![0.4, -0.7]).unwrap(),
            radius_sq: 0.5,
            nu: 0.05,
        };
        let w_pow = (model.log_jacobian() / 2.0).exp();
        let latent = Tensor::matrix(
            1,
            2,
            head.center.data().iter().map(|c| c * w_pow).collect(),
        )
        .unwrap();
        let x = model.inverse(&latent).unwrap();
        let s = score(&x, &model, &head).unwrap();
        assert!(s.distances[0] < 1e-7);
        assert!(!s.outlier[0]);
    }

    #[test]
    fn score_dimension_mismatch_rejected() {
        let model = random_trained_like_model(3, 1);
        let head = SvddHead { center: Tensor::zeros(vec![2]), radius_sq: 1.0, nu: 0.05 };
        let x = Tensor::matrix(1, 3, vec![0.0, 0.0, 0.0]).unwrap();
        assert!(score(&x, &model, &head).is_err());
    }
}
