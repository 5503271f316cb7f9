use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ScreenError;
use crate::irt::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

impl LinearModel {
    pub fn decision(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| self.intercept + self.weights.iter().enumerate().map(|(j, w)| w * x[(i, j)]).sum::<f64>())
            .collect()
    }
}

/// Minimizes ‖y − b − Xw‖² + λ‖w‖²; the intercept is not penalized.
pub fn fit_ridge(x: &DMatrix<f64>, y: &[f64], penalty: f64) -> Result<LinearModel, ScreenError> {
    let (n, p) = x.shape();
    if n == 0 || y.len() != n {
        return Err(ScreenError::InsufficientData { n, required: 1 });
    }
    if !(penalty >= 0.0) {
        return Err(ScreenError::InvalidSpec(format!("penalty must be non-negative, got {penalty}")));
    }
    let x_mean: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = xc.transpose() * &xc;
    for j in 0..p {
        gram[(j, j)] += penalty;
    }
    let rhs = xc.transpose() * yc;
    let w = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        // singular only when λ = 0 and the design is rank deficient
        None => gram
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| ScreenError::InvalidSpec(e.to_string()))?,
    };
    let intercept = y_mean - w.iter().zip(&x_mean).map(|(a, b)| a * b).sum::<f64>();
    Ok(LinearModel { intercept, weights: w.iter().copied().collect() })
}

const LOGISTIC_MAX_ITER: usize = 100;
const LOGISTIC_TOL: f64 = 1e-8;

/// Penalized negative log-likelihood Σ[log(1+eᶻ) − y·z] + λ/2‖w‖² at `beta`
/// (intercept first).
pub fn logistic_loss(x: &DMatrix<f64>, y: &[bool], penalty: f64, beta: &[f64]) -> f64 {
    let mut loss = 0.5 * penalty * beta[1..].iter().map(|w| w * w).sum::<f64>();
    for i in 0..x.nrows() {
        let z = beta[0] + (0..x.ncols()).map(|j| beta[j + 1] * x[(i, j)]).sum::<f64>();
        // log(1+e^z) computed without overflow
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        loss += softplus - if y[i] { z } else { 0.0 };
    }
    loss
}

/// Gradient of [`logistic_loss`].
pub fn logistic_gradient(x: &DMatrix<f64>, y: &[bool], penalty: f64, beta: &[f64]) -> Vec<f64> {
    let p = x.ncols();
    let mut g = vec![0.0; p + 1];
    for i in 0..x.nrows() {
        let z = beta[0] + (0..p).map(|j| beta[j + 1] * x[(i, j)]).sum::<f64>();
        let r = sigmoid(z) - if y[i] { 1.0 } else { 0.0 };
        g[0] += r;
        for j in 0..p {
            g[j + 1] += r * x[(i, j)];
        }
    }
    for j in 0..p {
        g[j + 1] += penalty * beta[j + 1];
    }
    g
}

/// L2-penalized logistic regression by damped Newton iterations from zero.
///
/// Converges when the gradient norm drops below 1e-8. If step halving can no
/// longer lower the loss in floating point while the gradient is already
/// within 1e-6 per observation, that point is accepted as the optimum.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[bool], penalty: f64) -> Result<LinearModel, ScreenError> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(ScreenError::InsufficientData { n: y.len(), required: n });
    }
    if !y.iter().any(|&v| v) || y.iter().all(|&v| v) {
        return Err(ScreenError::SingleClass);
    }
    if !(penalty >= 0.0) {
        return Err(ScreenError::InvalidSpec(format!("penalty must be non-negative, got {penalty}")));
    }
    let xa = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let mut beta = vec![0.0; p + 1];
    let mut loss = logistic_loss(x, y, penalty, &beta);
    let mut grad_norm = f64::INFINITY;
    for _ in 0..LOGISTIC_MAX_ITER {
        let g = DVector::from_vec(logistic_gradient(x, y, penalty, &beta));
        grad_norm = g.norm();
        if grad_norm < LOGISTIC_TOL {
            return Ok(model(beta));
        }
        let mut h = DMatrix::zeros(p + 1, p + 1);
        for i in 0..n {
            let z: f64 = (0..=p).map(|j| beta[j] * xa[(i, j)]).sum();
            let s = sigmoid(z);
            let w = s * (1.0 - s);
            let row = xa.row(i);
            h += w * row.transpose() * row;
        }
        for j in 1..=p {
            h[(j, j)] += penalty;
        }
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&g),
            None => h.svd(true, true).solve(&g, 1e-12).unwrap_or_else(|_| g.clone()),
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..50 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b - t * s).collect();
            let l = logistic_loss(x, y, penalty, &cand);
            if l < loss {
                beta = cand;
                loss = l;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            if grad_norm < 1e-6 * n.max(1) as f64 {
                return Ok(model(beta));
            }
            break;
        }
    }
    let g = logistic_gradient(x, y, penalty, &beta);
    let final_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if final_norm < LOGISTIC_TOL {
        return Ok(model(beta));
    }
    Err(ScreenError::NonConvergence { iterations: LOGISTIC_MAX_ITER, grad_norm: final_norm.min(grad_norm) })
}

fn model(beta: Vec<f64>) -> LinearModel {
    LinearModel { intercept: beta[0], weights: beta[1..].to_vec() }
}
