//! Training objective: prediction loss plus the DAG loss (feature
//! reconstruction, the trace-exponential acyclicity term, and L1 on the
//! adjacency matrix), with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::jointnet::{reconstruction, AdjacencyMatrix, JointNetwork, Params, Task};
use crate::netcore::{matrix_exponential, trace_exp_gradient, Matrix};
use crate::scalar::Real;

const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the whole DAG loss.
    pub eta: f64,
    /// Acyclicity weight inside the DAG loss.
    pub beta: f64,
    /// L1 weight inside the DAG loss.
    pub lambda1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            eta: 1.0,
            beta: 1.0,
            lambda1: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta", self.eta), ("beta", self.beta), ("lambda1", self.lambda1)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Loss components for one evaluation.
///
/// `total = prediction + eta * (reconstruction + beta * acyclicity + lambda1 * l1)`
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub prediction: f64,
    pub reconstruction: f64,
    pub acyclicity: f64,
    pub l1: f64,
    pub total: f64,
}

pub fn prediction_loss<T: Real>(pred: &[T], truth: &[T], task: Task) -> Result<T> {
    if pred.len() != truth.len() {
        return Err(shape_err("prediction_loss", format!("{} vs {}", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Domain("prediction loss of an empty batch".into()));
    }
    let n = T::lit(pred.len() as f64);
    let sum: T = match task {
        Task::Regression => pred.iter().zip(truth).map(|(&p, &y)| (p - y) * (p - y)).sum(),
        Task::Classification => {
            let lo = T::lit(PROB_CLAMP);
            let hi = T::one() - lo;
            pred.iter()
                .zip(truth)
                .map(|(&p, &y)| {
                    let p = p.max(lo).min(hi);
                    -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
                })
                .sum()
        }
    };
    Ok(sum / n)
}

/// Mean over features of the per-feature mean squared error.
pub fn reconstruction_loss<T: Real>(recon: &Matrix<T>, truth: &Matrix<T>) -> Result<T> {
    if recon.shape() != truth.shape() {
        return Err(shape_err(
            "reconstruction_loss",
            format!("{:?} vs {:?}", recon.shape(), truth.shape()),
        ));
    }
    if recon.as_slice().is_empty() {
        return Err(Error::Domain("reconstruction loss of an empty batch".into()));
    }
    let sum: T = recon
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sum / T::lit((recon.rows() * recon.cols()) as f64))
}

/// `trace(e^{W∘W}) − n`
pub fn acyclicity_penalty<T: Real>(w: &AdjacencyMatrix<T>) -> Result<T> {
    Ok(acyclicity_with_exp(w)?.0)
}

/// The penalty together with `e^{W∘W}`, from which the gradient
/// `∂h/∂W = (e^{W∘W})ᵀ ∘ 2W` follows.
pub fn acyclicity_with_exp<T: Real>(w: &AdjacencyMatrix<T>) -> Result<(T, Matrix<T>)> {
    let m = w.matrix();
    let exp = matrix_exponential(&m.hadamard(m)?)?;
    let h = exp.trace() - T::lit(w.size() as f64);
    Ok((h.max(T::zero()), exp))
}

pub fn acyclicity_gradient<T: Real>(w: &AdjacencyMatrix<T>) -> Result<Matrix<T>> {
    let (_, exp) = acyclicity_with_exp(w)?;
    trace_exp_gradient(&exp).hadamard(&w.matrix().scale(T::lit(2.0)))
}

/// Sum of the off-diagonal adjacency entries.
pub fn l1_penalty<T: Real>(w: &AdjacencyMatrix<T>) -> T {
    w.off_diagonal().into_iter().sum()
}

fn data_terms<T: Real>(net: &JointNetwork<T>, batch: &Matrix<T>) -> Result<(crate::jointnet::ForwardPass<T>, T, T)> {
    let pass = net.forward_pass(batch)?;
    let truth = batch.column(0);
    let pred = prediction_loss(&net.prediction(&pass), &truth, net.task())?;
    let target_cols = Matrix::from_fn(batch.rows(), batch.cols() - 1, |r, c| batch[(r, c + 1)]);
    let recon = reconstruction_loss(&reconstruction(&pass), &target_cols)?;
    Ok((pass, pred, recon))
}

fn report<T: Real>(weights: &LossWeights, pred: T, recon: T, acyc: T, l1: T) -> LossReport {
    let (p, r, a, l) = (pred.as_f64(), recon.as_f64(), acyc.as_f64(), l1.as_f64());
    LossReport {
        prediction: p,
        reconstruction: r,
        acyclicity: a,
        l1: l,
        total: p + weights.eta * (r + weights.beta * a + weights.lambda1 * l),
    }
}

/// Loss components without gradients.
pub fn evaluate_loss<T: Real>(net: &JointNetwork<T>, batch: &Matrix<T>, weights: &LossWeights) -> Result<LossReport> {
    let (_, pred, recon) = data_terms(net, batch)?;
    let adj = net.compute_adjacency();
    let acyc = acyclicity_penalty(&adj)?;
    Ok(report(weights, pred, recon, acyc, l1_penalty(&adj)))
}

/// Loss components and the gradient of `total` for every parameter.
/// Gradients of masked input-weight groups are exactly zero.
pub fn total_loss<T: Real>(net: &JointNetwork<T>, batch: &Matrix<T>, weights: &LossWeights) -> Result<(LossReport, Params<T>)> {
    let (pass, pred, recon) = data_terms(net, batch)?;
    let b = batch.rows();
    let n = net.node_count();
    let eta = T::lit(weights.eta);

    let mut d_out = Matrix::zeros(b, n);
    let inv_b = T::one() / T::lit(b as f64);
    match net.task() {
        Task::Regression => {
            for r in 0..b {
                d_out[(r, 0)] = T::lit(2.0) * (pass.outputs[(r, 0)] - batch[(r, 0)]) * inv_b;
            }
        }
        Task::Classification => {
            let lo = T::lit(PROB_CLAMP);
            for r in 0..b {
                let p = crate::jointnet::sigmoid(pass.outputs[(r, 0)]);
                if p > lo && p < T::one() - lo {
                    d_out[(r, 0)] = (p - batch[(r, 0)]) * inv_b;
                }
            }
        }
    }
    let recon_scale = eta * T::lit(2.0) / T::lit((b * (n - 1)) as f64);
    for r in 0..b {
        for k in 1..n {
            d_out[(r, k)] = recon_scale * (pass.outputs[(r, k)] - batch[(r, k)]);
        }
    }
    let mut grad = net.backward(batch, &pass, &d_out)?;

    let adj = net.compute_adjacency();
    let (acyc, exp) = acyclicity_with_exp(&adj)?;
    let l1 = l1_penalty(&adj);
    // dh/dΘ[i][j][k] = 2·exp[k][i]·Θ[i][j][k]; dL1/dΘ = Θ / w_ik
    let acyc_scale = eta * T::lit(weights.beta) * T::lit(2.0);
    let l1_scale = eta * T::lit(weights.lambda1);
    let theta = &net.params().input_weights;
    for k in 0..n {
        for i in 0..n {
            if i == k || !net.mask().allowed(i, k) {
                continue;
            }
            let w = adj.get(i, k);
            let a = acyc_scale * exp[(k, i)];
            let l = if w > T::zero() { l1_scale / w } else { T::zero() };
            let g_row = grad.input_weights[k].row_mut(i);
            for (g, &t) in g_row.iter_mut().zip(theta[k].row(i)) {
                *g = *g + (a + l) * t;
            }
        }
    }
    net.mask_gradient(&mut grad);
    Ok((report(weights, pred, recon, acyc, l1), grad))
}
