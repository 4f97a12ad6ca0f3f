#![allow(dead_code)]

use contestable::jointnet::{JointNetwork, NetworkSpec, Task};
use contestable::losses::{evaluate_loss, total_loss, LossWeights};
use contestable::netcore::{Matrix, SeededRng};

pub const FD_STEP: f64 = 1e-5;

/// `|a − b| / max(|a|, |b|, floor)`; the floor keeps vanishing gradients from
/// turning rounding noise into large relative errors.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub struct GradCheck {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
}

/// Central differences of `total` for every parameter entry, compared with
/// the analytic gradient.
pub fn gradient_check(net: &JointNetwork<f64>, batch: &Matrix<f64>, weights: &LossWeights) -> GradCheck {
    let (_, grad) = total_loss(net, batch, weights).unwrap();
    let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.as_slice().to_vec()).collect();
    let mut out = GradCheck {
        checked: 0,
        worst: 0.0,
        worst_at: String::new(),
    };
    let tensor_count = analytic.len();
    for t in 0..tensor_count {
        let len = analytic[t].len();
        for e in 0..len {
            let mut plus = net.clone();
            plus.params_mut().tensors_mut()[t].as_mut_slice()[e] += FD_STEP;
            let mut minus = net.clone();
            minus.params_mut().tensors_mut()[t].as_mut_slice()[e] -= FD_STEP;
            let lp = evaluate_loss(&plus, batch, weights).unwrap().total;
            let lm = evaluate_loss(&minus, batch, weights).unwrap().total;
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            let a = analytic[t][e];
            // masked entries: analytic gradient is discarded by contract
            let masked = net.params().tensors()[t].as_slice()[e] == 0.0 && a == 0.0;
            if masked {
                continue;
            }
            let err = rel_err(a, numeric, 1e-6);
            out.checked += 1;
            if err > out.worst {
                out.worst = err;
                out.worst_at = format!("tensor {t} entry {e}: analytic {a:e} numeric {numeric:e}");
            }
        }
    }
    out
}

pub fn random_batch(rows: usize, cols: usize, task: Task, rng: &mut SeededRng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, c| {
        if c == 0 && task == Task::Classification {
            if rng.coin() {
                1.0
            } else {
                0.0
            }
        } else {
            rng.uniform(-1.0, 1.0)
        }
    })
}

/// Small random network with nonzero biases so ReLU units are active.
pub fn random_network(d: usize, hidden: Vec<usize>, task: Task, seed: u64) -> JointNetwork<f64> {
    let mut net: JointNetwork<f64> = JointNetwork::new(&NetworkSpec {
        features: d,
        hidden,
        task,
        seed,
        input_scale: 1.0,
    })
    .unwrap();
    let mut rng = SeededRng::with_stream(seed, 9);
    let p = net.params_mut();
    for t in [&mut p.input_bias, &mut p.head_bias] {
        for v in t.as_mut_slice() {
            *v = rng.uniform(-0.5, 0.5);
        }
    }
    for l in &mut p.shared {
        for v in l.bias.as_mut_slice() {
            *v = rng.uniform(0.0, 0.5);
        }
    }
    net
}
