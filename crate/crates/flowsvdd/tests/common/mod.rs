//! Independent numeric oracles shared by the integration suites: central
//! finite differences, a finite-difference Jacobian log-determinant, and a
//! grid-search minimizer of the loss in R^2. None of them call into the
//! library's own gradient or radius code paths.
//!
//! Each test binary uses its own subset of these helpers.
#![allow(dead_code)]

use flowsvdd::flow::FlowModel;
use flowsvdd::svdd::{build_loss_graph, SvddHead};
use flowsvdd::tensor::Tensor;

/// Loss value as a plain function of the current model/head state.
pub fn loss_value(model: &FlowModel, head: &SvddHead, batch: &Tensor) -> f64 {
    let g = build_loss_graph(model, head, batch).expect("loss graph");
    g.tape.value(g.loss).item()
}

/// Central finite difference of `f` under perturbation of one scalar slot.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x0: f64, h: f64) -> f64 {
    (f(x0 + h) - f(x0 - h)) / (2.0 * h)
}

/// log|det A| by Gaussian elimination with partial pivoting, A row-major d*d.
pub fn log_abs_det(a: &[f64], d: usize) -> f64 {
    assert_eq!(a.len(), d * d);
    let mut m = a.to_vec();
    let mut log_det = 0.0;
    for col in 0..d {
        let pivot_row = (col..d)
            .max_by(|&i, &j| {
                m[i * d + col]
                    .abs()
                    .partial_cmp(&m[j * d + col].abs())
                    .expect("finite matrix")
            })
            .expect("nonempty column");
        let pivot = m[pivot_row * d + col];
        assert!(pivot != 0.0, "singular Jacobian");
        if pivot_row != col {
            for k in 0..d {
                m.swap(pivot_row * d + k, col * d + k);
            }
        }
        log_det += m[col * d + col].abs().ln();
        for row in col + 1..d {
            let factor = m[row * d + col] / m[col * d + col];
            for k in col..d {
                m[row * d + k] -= factor * m[col * d + k];
            }
        }
    }
    log_det
}

/// Finite-difference Jacobian of a map R^d -> R^d at one point.
pub fn numeric_jacobian(mut f: impl FnMut(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<f64> {
    let d = x.len();
    let mut jac = vec![0.0; d * d];
    for j in 0..d {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let fp = f(&xp);
        let fm = f(&xm);
        for i in 0..d {
            jac[i * d + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Numeric log|det J| of the raw flow map at `x`.
pub fn numeric_log_det(model: &FlowModel, x: &[f64]) -> f64 {
    let d = x.len();
    let jac = numeric_jacobian(
        |p| {
            let t = Tensor::matrix(1, d, p.to_vec()).unwrap();
            model.forward(&t).unwrap().data().to_vec()
        },
        x,
        1e-5,
    );
    log_abs_det(&jac, d)
}

/// Numeric log|det| of the normalized map f/w^(1/D) at `x`.
pub fn numeric_log_det_normalized(model: &FlowModel, x: &[f64]) -> f64 {
    let d = x.len();
    let jac = numeric_jacobian(
        |p| {
            let t = Tensor::matrix(1, d, p.to_vec()).unwrap();
            model.normalized_embed(&t).unwrap().data().to_vec()
        },
        x,
        1e-5,
    );
    log_abs_det(&jac, d)
}

/// Loss as a function of R^2 only, squared distances fixed.
pub fn loss_in_radius_sq(sq_distances: &[f64], nu: f64, radius_sq: f64) -> f64 {
    let n = sq_distances.len() as f64;
    let hinge: f64 = sq_distances.iter().map(|&d| (d - radius_sq).max(0.0)).sum();
    radius_sq + hinge / (nu * n)
}

/// Grid-search minimizer over R^2: every squared distance, every midpoint
/// between consecutive sorted values, zero, and one past the maximum. The
/// loss is piecewise linear in R^2 with breakpoints exactly at the squared
/// distances, so this candidate set contains a global minimizer.
pub fn grid_search_radius_sq(sq_distances: &[f64], nu: f64) -> (f64, f64) {
    let mut sorted = sq_distances.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let mut candidates = vec![0.0, sorted.last().unwrap() + 1.0];
    candidates.extend_from_slice(&sorted);
    for w in sorted.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    let mut best = (f64::INFINITY, 0.0);
    for &c in &candidates {
        let v = loss_in_radius_sq(sq_distances, nu, c);
        if v < best.0 {
            best = (v, c);
        }
    }
    (best.1, best.0)
}
