//! The joint network: `d + 1` sub-networks, each reconstructing one feature
//! from the others through a private masked input layer, a stack of shared
//! hidden layers and a private output head.
//!
//! Sub-network `k`'s input weights are stored as a `(d + 1) × h` matrix whose
//! entry `(i, j)` is the weight from input `i` to hidden unit `j`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graphs::MaskMatrix;
use crate::netcore::{Matrix, SeededRng};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Dense<T> {
    /// `in × out`
    pub weights: Matrix<T>,
    /// `1 × out`
    pub bias: Matrix<T>,
}

/// Every trainable tensor of a [`JointNetwork`]. Also used for gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Params<T> {
    pub input_weights: Vec<Matrix<T>>,
    /// Row `k` is sub-network `k`'s first-layer bias.
    pub input_bias: Matrix<T>,
    pub shared: Vec<Dense<T>>,
    /// Column `k` is sub-network `k`'s head.
    pub head_weights: Matrix<T>,
    pub head_bias: Matrix<T>,
}

impl<T: Real> Params<T> {
    pub fn zeros_like(other: &Params<T>) -> Self {
        let z = |m: &Matrix<T>| Matrix::zeros(m.rows(), m.cols());
        Params {
            input_weights: other.input_weights.iter().map(z).collect(),
            input_bias: z(&other.input_bias),
            shared: other
                .shared
                .iter()
                .map(|l| Dense {
                    weights: z(&l.weights),
                    bias: z(&l.bias),
                })
                .collect(),
            head_weights: z(&other.head_weights),
            head_bias: z(&other.head_bias),
        }
    }

    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        let mut out: Vec<&Matrix<T>> = self.input_weights.iter().collect();
        out.push(&self.input_bias);
        for l in &self.shared {
            out.push(&l.weights);
            out.push(&l.bias);
        }
        out.push(&self.head_weights);
        out.push(&self.head_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out: Vec<&mut Matrix<T>> = self.input_weights.iter_mut().collect();
        out.push(&mut self.input_bias);
        for l in &mut self.shared {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
        }
        out.push(&mut self.head_weights);
        out.push(&mut self.head_bias);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Construction parameters for [`JointNetwork::new`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Feature count, excluding the target.
    pub features: usize,
    /// First entry is the per-sub-network hidden width; the rest are shared.
    pub hidden: Vec<usize>,
    pub task: Task,
    pub seed: u64,
    /// Multiplier on the Glorot range of the input layer.
    pub input_scale: f64,
}

impl NetworkSpec {
    pub fn new(features: usize, task: Task, seed: u64) -> Self {
        Self {
            features,
            hidden: default_hidden_sizes(features + 1),
            task,
            seed,
            input_scale: DEFAULT_INPUT_SCALE,
        }
    }
}

pub const DEFAULT_INPUT_SCALE: f64 = 0.01;

/// Three hidden layers of widths `2|V|`, `⌈2|V|/3⌉`, `2|V|`.
pub fn default_hidden_sizes(node_count: usize) -> Vec<usize> {
    let v = node_count;
    vec![2 * v, ((2 * v).div_ceil(3)).max(1), 2 * v]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct JointNetwork<T> {
    features: usize,
    hidden: Vec<usize>,
    task: Task,
    seed: u64,
    mask: MaskMatrix,
    params: Params<T>,
}

/// Cached activations from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    /// `B × (d + 1)` raw head outputs.
    pub outputs: Matrix<T>,
    /// Post-ReLU activations: the first (per-sub-network) layer, then each
    /// shared layer. Sub-network `k` owns rows `k·B .. (k + 1)·B`.
    activations: Vec<Matrix<T>>,
    batch: usize,
}

impl<T: Real> ForwardPass<T> {
    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

pub fn init_network<T: Real>(features: usize, hidden: &[usize], task: Task, seed: u64) -> Result<JointNetwork<T>> {
    JointNetwork::new(&NetworkSpec {
        features,
        hidden: hidden.to_vec(),
        task,
        seed,
        input_scale: DEFAULT_INPUT_SCALE,
    })
}

fn glorot<T: Real>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, scale: f64, rng: &mut SeededRng) -> Matrix<T> {
    let limit = scale * (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| T::lit(rng.uniform(-limit, limit)))
}

impl<T: Real> JointNetwork<T> {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        if spec.features == 0 {
            return Err(Error::Config("a network needs at least one feature besides the target".into()));
        }
        if spec.hidden.is_empty() || spec.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid hidden sizes {:?}", spec.hidden)));
        }
        if !(spec.input_scale.is_finite() && spec.input_scale > 0.0) {
            return Err(Error::Config("input scale must be positive".into()));
        }
        let n = spec.features + 1;
        let h = spec.hidden[0];
        let mut rng = SeededRng::new(spec.seed);

        let input_weights = (0..n).map(|_| glorot(n, h, n - 1, h, spec.input_scale, &mut rng)).collect();
        let mut shared = Vec::new();
        for pair in spec.hidden.windows(2) {
            shared.push(Dense {
                weights: glorot(pair[0], pair[1], pair[0], pair[1], 1.0, &mut rng),
                bias: Matrix::zeros(1, pair[1]),
            });
        }
        let last = *spec.hidden.last().expect("nonempty");
        let head_weights = glorot(last, n, last, 1, 1.0, &mut rng);

        let mut net = JointNetwork {
            features: spec.features,
            hidden: spec.hidden.clone(),
            task: spec.task,
            seed: spec.seed,
            mask: MaskMatrix::unconstrained(n),
            params: Params {
                input_weights,
                input_bias: Matrix::zeros(n, h),
                shared,
                head_weights,
                head_bias: Matrix::zeros(1, n),
            },
        };
        net.enforce_mask();
        Ok(net)
    }

    pub fn features(&self) -> usize {
        self.features
    }

    /// `d + 1`
    pub fn node_count(&self) -> usize {
        self.features + 1
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.hidden
    }

    pub fn first_hidden(&self) -> usize {
        self.hidden[0]
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mask(&self) -> &MaskMatrix {
        &self.mask
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    /// Mutable access to the raw parameters. Callers must re-apply the mask
    /// (see [`JointNetwork::enforce_mask`]) if they touch input weights.
    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    /// `Θ₁[i][j][k]`
    pub fn input_weight(&self, i: usize, j: usize, k: usize) -> T {
        self.params.input_weights[k][(i, j)]
    }

    /// Replaces the stored mask and zeroes every masked weight group.
    pub fn apply_mask(&mut self, mask: MaskMatrix) -> Result<()> {
        if mask.size() != self.node_count() {
            return Err(shape_err(
                "apply_mask",
                format!("mask of size {} for {} nodes", mask.size(), self.node_count()),
            ));
        }
        self.mask = mask;
        self.enforce_mask();
        Ok(())
    }

    pub fn enforce_mask(&mut self) {
        let n = self.node_count();
        for k in 0..n {
            let theta = &mut self.params.input_weights[k];
            for i in 0..n {
                if !self.mask.allowed(i, k) {
                    theta.row_mut(i).iter_mut().for_each(|w| *w = T::zero());
                }
            }
        }
    }

    /// Zeroes gradient entries of masked input-weight groups.
    pub fn mask_gradient(&self, grad: &mut Params<T>) {
        let n = self.node_count();
        for k in 0..n {
            for i in 0..n {
                if !self.mask.allowed(i, k) {
                    grad.input_weights[k].row_mut(i).iter_mut().for_each(|g| *g = T::zero());
                }
            }
        }
    }

    pub fn forward_pass(&self, batch: &Matrix<T>) -> Result<ForwardPass<T>> {
        let n = self.node_count();
        if batch.cols() != n {
            return Err(shape_err(
                "forward",
                format!("batch has {} columns, network expects {n}", batch.cols()),
            ));
        }
        let b = batch.rows();
        let h = self.first_hidden();

        let mut first = Matrix::zeros(n * b, h);
        for k in 0..n {
            let theta = &self.params.input_weights[k];
            let inputs: Vec<usize> = (0..n).filter(|&i| self.mask.allowed(i, k)).collect();
            let bias = self.params.input_bias.row(k);
            for r in 0..b {
                let x = batch.row(r);
                let out = first.row_mut(k * b + r);
                out.copy_from_slice(bias);
                for &i in &inputs {
                    let xi = x[i];
                    for (o, &w) in out.iter_mut().zip(theta.row(i)) {
                        *o = *o + xi * w;
                    }
                }
                relu_in_place(out);
            }
        }

        let mut activations = vec![first];
        for layer in &self.params.shared {
            let prev = activations.last().expect("nonempty");
            let mut z = prev.matmul(&layer.weights)?;
            for r in 0..z.rows() {
                let row = z.row_mut(r);
                for (v, &bias) in row.iter_mut().zip(layer.bias.as_slice()) {
                    *v = *v + bias;
                }
                relu_in_place(row);
            }
            activations.push(z);
        }

        let last = activations.last().expect("nonempty");
        let heads = &self.params.head_weights;
        let mut outputs = Matrix::zeros(b, n);
        for k in 0..n {
            let c = self.params.head_bias[(0, k)];
            for r in 0..b {
                let a = last.row(k * b + r);
                let mut s = c;
                for (j, &v) in a.iter().enumerate() {
                    s = s + v * heads[(j, k)];
                }
                outputs[(r, k)] = s;
            }
        }
        Ok(ForwardPass {
            outputs,
            activations,
            batch: b,
        })
    }

    /// Target prediction (probabilities for classification) and the
    /// `B × d` reconstruction of the non-target features.
    pub fn forward(&self, batch: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>)> {
        let pass = self.forward_pass(batch)?;
        Ok((self.prediction(&pass), reconstruction(&pass)))
    }

    pub fn prediction(&self, pass: &ForwardPass<T>) -> Vec<T> {
        let raw = pass.outputs.column(0);
        match self.task {
            Task::Regression => raw,
            Task::Classification => raw.into_iter().map(sigmoid).collect(),
        }
    }

    pub fn predict(&self, batch: &Matrix<T>) -> Result<Vec<T>> {
        Ok(self.prediction(&self.forward_pass(batch)?))
    }

    /// Gradients of the data terms given `∂L/∂outputs` (shape `B × (d + 1)`).
    /// Masked input-weight gradients are zero.
    pub fn backward(&self, batch: &Matrix<T>, pass: &ForwardPass<T>, d_outputs: &Matrix<T>) -> Result<Params<T>> {
        let n = self.node_count();
        let b = pass.batch;
        if d_outputs.shape() != (b, n) {
            return Err(shape_err("backward", format!("output gradient {:?}", d_outputs.shape())));
        }
        let mut grad = Params::zeros_like(&self.params);
        let last = pass.activations.last().expect("nonempty");
        let heads = &self.params.head_weights;
        let width = heads.rows();

        let mut d_act = Matrix::zeros(n * b, width);
        for k in 0..n {
            let mut bias_grad = T::zero();
            for r in 0..b {
                let g = d_outputs[(r, k)];
                if g == T::zero() {
                    continue;
                }
                bias_grad = bias_grad + g;
                let a = last.row(k * b + r);
                for (j, &v) in a.iter().enumerate() {
                    grad.head_weights[(j, k)] = grad.head_weights[(j, k)] + v * g;
                }
                let da = d_act.row_mut(k * b + r);
                for (j, slot) in da.iter_mut().enumerate() {
                    *slot = heads[(j, k)] * g;
                }
            }
            grad.head_bias[(0, k)] = bias_grad;
        }

        for (l, layer) in self.params.shared.iter().enumerate().rev() {
            let out = &pass.activations[l + 1];
            relu_backward(&mut d_act, out);
            let input = &pass.activations[l];
            grad.shared[l].weights = input.t_matmul(&d_act)?;
            grad.shared[l].bias = column_sums(&d_act);
            d_act = d_act.matmul_t(&layer.weights)?;
        }

        relu_backward(&mut d_act, &pass.activations[0]);
        let h = self.first_hidden();
        for k in 0..n {
            let g_theta = &mut grad.input_weights[k];
            let inputs: Vec<usize> = (0..n).filter(|&i| self.mask.allowed(i, k)).collect();
            for r in 0..b {
                let dz = d_act.row(k * b + r);
                let x = batch.row(r);
                for &i in &inputs {
                    let xi = x[i];
                    for (g, &d) in g_theta.row_mut(i).iter_mut().zip(dz) {
                        *g = *g + xi * d;
                    }
                }
                for (j, &d) in dz.iter().enumerate().take(h) {
                    grad.input_bias[(k, j)] = grad.input_bias[(k, j)] + d;
                }
            }
        }
        Ok(grad)
    }

    pub fn compute_adjacency(&self) -> AdjacencyMatrix<T> {
        let n = self.node_count();
        let w = Matrix::from_fn(n, n, |i, k| {
            if i == k {
                T::zero()
            } else {
                self.params.input_weights[k].row(i).iter().map(|&v| v * v).sum::<T>().sqrt()
            }
        });
        AdjacencyMatrix { w }
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            network: self,
        })?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let ck: OwnedCheckpoint<T> = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unknown checkpoint format {:?}", ck.format)));
        }
        let net = ck.network;
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let n = self.node_count();
        let h = self.first_hidden();
        let p = &self.params;
        let ok = self.mask.size() == n
            && p.input_weights.len() == n
            && p.input_weights.iter().all(|m| m.shape() == (n, h))
            && p.input_bias.shape() == (n, h)
            && p.shared.len() + 1 == self.hidden.len()
            && p.shared
                .iter()
                .zip(self.hidden.windows(2))
                .all(|(l, w)| l.weights.shape() == (w[0], w[1]) && l.bias.shape() == (1, w[1]))
            && p.head_weights.shape() == (*self.hidden.last().unwrap_or(&0), n)
            && p.head_bias.shape() == (1, n);
        if !ok {
            return Err(shape_err("checkpoint", "tensor shapes inconsistent with declared sizes"));
        }
        Ok(())
    }
}

const CHECKPOINT_FORMAT: &str = "joint-network/v1";

#[derive(Serialize)]
#[serde(bound = "T: Real")]
struct Checkpoint<'a, T> {
    format: String,
    network: &'a JointNetwork<T>,
}

#[derive(Deserialize)]
#[serde(bound = "T: Real")]
struct OwnedCheckpoint<T> {
    format: String,
    network: JointNetwork<T>,
}

pub fn reconstruction<T: Real>(pass: &ForwardPass<T>) -> Matrix<T> {
    let out = &pass.outputs;
    Matrix::from_fn(out.rows(), out.cols() - 1, |r, c| out[(r, c + 1)])
}

/// Nonnegative hollow matrix of input-weight group norms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AdjacencyMatrix<T> {
    w: Matrix<T>,
}

impl<T: Real> AdjacencyMatrix<T> {
    pub fn new(w: Matrix<T>) -> Result<Self> {
        if !w.is_square() {
            return Err(shape_err("adjacency", "matrix must be square"));
        }
        for i in 0..w.rows() {
            if w[(i, i)] != T::zero() {
                return Err(Error::Domain("adjacency diagonal must be zero".into()));
            }
        }
        if w.as_slice().iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::Domain("adjacency entries must be finite and nonnegative".into()));
        }
        Ok(Self { w })
    }

    pub fn size(&self) -> usize {
        self.w.rows()
    }

    pub fn get(&self, i: usize, k: usize) -> T {
        self.w[(i, k)]
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.w
    }

    pub fn off_diagonal(&self) -> Vec<T> {
        let n = self.size();
        (0..n)
            .flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| (i, k)))
            .map(|(i, k)| self.w[(i, k)])
            .collect()
    }
}

#[inline]
fn relu_in_place<T: Real>(row: &mut [T]) {
    for v in row {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

fn relu_backward<T: Real>(grad: &mut Matrix<T>, activated: &Matrix<T>) {
    for (g, &a) in grad.as_mut_slice().iter_mut().zip(activated.as_slice()) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

fn column_sums<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (o, &v) in out.as_mut_slice().iter_mut().zip(m.row(r)) {
            *o = *o + v;
        }
    }
    out
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::MaskMatrix;

    fn net(d: usize, seed: u64) -> JointNetwork<f64> {
        init_network(d, &[4, 3], Task::Regression, seed).unwrap()
    }

    fn batch(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = SeededRng::new(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.standard_normal())
    }

    /// Straight-line recomputation for one row, written without the batched layout.
    fn oracle_row(net: &JointNetwork<f64>, x: &[f64]) -> Vec<f64> {
        let n = net.node_count();
        let p = net.params();
        (0..n)
            .map(|k| {
                let mut a: Vec<f64> = (0..net.first_hidden())
                    .map(|j| {
                        let mut s = p.input_bias[(k, j)];
                        for (i, &xi) in x.iter().enumerate() {
                            if net.mask().allowed(i, k) {
                                s += xi * net.input_weight(i, j, k);
                            }
                        }
                        s.max(0.0)
                    })
                    .collect();
                for layer in &p.shared {
                    a = (0..layer.weights.cols())
                        .map(|o| {
                            let s: f64 = a.iter().enumerate().map(|(j, v)| v * layer.weights[(j, o)]).sum();
                            (s + layer.bias[(0, o)]).max(0.0)
                        })
                        .collect();
                }
                a.iter().enumerate().map(|(j, v)| v * p.head_weights[(j, k)]).sum::<f64>() + p.head_bias[(0, k)]
            })
            .collect()
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(net(4, 9), net(4, 9));
        assert_ne!(net(4, 9), net(4, 10));
    }

    #[test]
    fn default_first_width_for_ten_nodes() {
        let spec = NetworkSpec::new(9, Task::Regression, 0);
        assert_eq!(spec.hidden, vec![20, 7, 20]);
        let n: JointNetwork<f64> = JointNetwork::new(&spec).unwrap();
        assert_eq!(n.first_hidden(), 20);
    }

    #[test]
    fn zero_features_rejected() {
        assert!(init_network::<f64>(0, &[4], Task::Regression, 0).is_err());
        assert!(init_network::<f64>(2, &[], Task::Regression, 0).is_err());
    }

    #[test]
    fn self_mask_after_init() {
        let n = net(5, 1);
        for k in 0..6 {
            for j in 0..4 {
                assert_eq!(n.input_weight(k, j, k), 0.0);
            }
        }
    }

    #[test]
    fn zero_weights_give_biases() {
        let mut n = net(3, 2);
        for t in n.params_mut().tensors_mut() {
            t.fill(0.0);
        }
        n.params_mut().head_bias = Matrix::from_vec(1, 4, vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        let (pred, recon) = n.forward(&batch(5, 4, 3)).unwrap();
        assert!(pred.iter().all(|&p| p == 0.5));
        for r in 0..5 {
            assert_eq!(recon.row(r), &[-1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn masked_input_does_not_reach_subnetwork() {
        let mut n = net(3, 4);
        let mut mask = MaskMatrix::unconstrained(4);
        mask.forbid(2, 0);
        n.apply_mask(mask).unwrap();
        let x = batch(3, 4, 5);
        let mut y = x.clone();
        for r in 0..3 {
            y[(r, 2)] += 10.0;
        }
        let a = n.forward_pass(&x).unwrap().outputs.column(0);
        let b = n.forward_pass(&y).unwrap().outputs.column(0);
        assert_eq!(a, b);
    }

    #[test]
    fn forward_matches_oracle() {
        let n: JointNetwork<f64> = init_network(4, &[6, 5, 3], Task::Regression, 17).unwrap();
        let x = batch(3, 5, 18);
        let pass = n.forward_pass(&x).unwrap();
        for r in 0..3 {
            let want = oracle_row(&n, x.row(r));
            for (k, w) in want.iter().enumerate() {
                assert!((pass.outputs[(r, k)] - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn classification_head_is_sigmoid() {
        let n: JointNetwork<f64> = init_network(2, &[3], Task::Classification, 1).unwrap();
        let x = batch(4, 3, 2);
        let pass = n.forward_pass(&x).unwrap();
        let pred = n.prediction(&pass);
        for r in 0..4 {
            assert!((pred[r] - sigmoid(pass.outputs[(r, 0)])).abs() < 1e-15);
        }
    }

    #[test]
    fn column_mismatch() {
        assert!(net(3, 1).forward(&batch(2, 3, 0)).is_err());
    }

    #[test]
    fn adjacency_basics() {
        let mut n: JointNetwork<f64> = init_network(2, &[2], Task::Regression, 0).unwrap();
        n.params_mut().input_weights.iter_mut().for_each(|t| t.fill(0.0));
        assert!(n.compute_adjacency().off_diagonal().iter().all(|&v| v == 0.0));
        n.params_mut().input_weights[2][(1, 0)] = 3.0;
        n.params_mut().input_weights[2][(1, 1)] = 4.0;
        assert_eq!(n.compute_adjacency().get(1, 2), 5.0);
    }

    #[test]
    fn adjacency_matches_direct_sum() {
        let n = net(4, 33);
        let adj = n.compute_adjacency();
        for i in 0..5 {
            for k in 0..5 {
                let mut s = 0.0;
                for j in 0..4 {
                    s += n.input_weight(i, j, k).powi(2);
                }
                assert!((adj.get(i, k) - s.sqrt()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn adjacency_ignores_signs() {
        let n = net(3, 8);
        let mut flipped = n.clone();
        flipped.params_mut().input_weights[1][(2, 0)] *= -1.0;
        flipped.params_mut().input_weights[3][(0, 2)] *= -1.0;
        assert_eq!(n.compute_adjacency(), flipped.compute_adjacency());
    }

    #[test]
    fn mask_zeroes_adjacency_entry() {
        let mut n = net(3, 5);
        let before = n.clone();
        n.apply_mask(MaskMatrix::unconstrained(4)).unwrap();
        assert_eq!(n, before);
        let mut m = MaskMatrix::unconstrained(4);
        m.forbid(1, 0);
        n.apply_mask(m).unwrap();
        assert_eq!(n.compute_adjacency().get(1, 0), 0.0);
        assert!(n.apply_mask(MaskMatrix::unconstrained(3)).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut n: JointNetwork<f64> = JointNetwork::new(&NetworkSpec::new(4, Task::Classification, 77)).unwrap();
        let mut m = MaskMatrix::unconstrained(5);
        m.forbid(3, 1);
        n.apply_mask(m).unwrap();
        let text = n.to_checkpoint_json().unwrap();
        let back = JointNetwork::<f64>::from_checkpoint_json(&text).unwrap();
        assert_eq!(back, n);
        for (a, b) in back.params().tensors().iter().zip(n.params().tensors()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn permuting_features_permutes_outputs() {
        let n = net(4, 12);
        let x = batch(3, 5, 13);
        // swap features 1 and 3 in both the data and the network
        let perm = [0usize, 3, 2, 1, 4];
        let mut p = n.clone();
        {
            let src = n.params();
            let dst = p.params_mut();
            for k in 0..5 {
                for i in 0..5 {
                    let row = src.input_weights[perm[k]].row(perm[i]).to_vec();
                    dst.input_weights[k].row_mut(i).copy_from_slice(&row);
                }
                let brow = src.input_bias.row(perm[k]).to_vec();
                dst.input_bias.row_mut(k).copy_from_slice(&brow);
                for j in 0..src.head_weights.rows() {
                    dst.head_weights[(j, k)] = src.head_weights[(j, perm[k])];
                }
                dst.head_bias[(0, k)] = src.head_bias[(0, perm[k])];
            }
        }
        let xp = Matrix::from_fn(3, 5, |r, c| x[(r, perm[c])]);
        let a = n.forward_pass(&x).unwrap().outputs;
        let b = p.forward_pass(&xp).unwrap().outputs;
        for r in 0..3 {
            for k in 0..5 {
                assert!((b[(r, k)] - a[(r, perm[k])]).abs() < 1e-12);
            }
        }
    }
}
