//! Graph injection: derive a mask from a causal graph, zero the masked input
//! weight groups, and train the remaining parameters with early stopping.
//! Unconstrained training is injection of the complete partial graph.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graphs::{Knowledge, MaskMatrix, PartialGraph};
use crate::jointnet::{JointNetwork, Params};
use crate::losses::{evaluate_loss, total_loss, LossReport, LossWeights};
use crate::netcore::{adam_update, AdamConfig, AdamState, Matrix, SeededRng};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatienceUnit {
    /// Validate once per pass over the training rows.
    Epoch,
    /// Validate after every update.
    Step,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Maximum number of mini-batch updates.
    pub max_steps: usize,
    /// Validation evaluations without improvement before stopping.
    pub patience: usize,
    pub patience_unit: PatienceUnit,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: LossWeights,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_steps: 1000,
            patience: 50,
            patience_unit: PatienceUnit::Epoch,
            batch_size: 32,
            learning_rate: 1e-3,
            loss: LossWeights::default(),
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        if self.patience >= self.max_steps {
            return Err(Error::Config(format!(
                "patience ({}) must be smaller than max_steps ({})",
                self.patience, self.max_steps
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
        }
        self.loss.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub step: usize,
    /// Mean of the mini-batch reports since the previous record.
    pub train: LossReport,
    pub validation_total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainResult<T> {
    /// Parameters restored to the best validation loss.
    pub network: JointNetwork<T>,
    pub steps_taken: usize,
    pub best_validation_loss: f64,
    pub trace: Vec<EpochRecord>,
}

/// Seeded shuffle; the last `fraction` of it is the validation split.
pub fn train_validation_split(rows: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if rows < 2 {
        return Err(Error::Domain(format!(
            "need at least two rows to hold out validation data, got {rows}"
        )));
    }
    let perm = SeededRng::new(seed).permutation(rows);
    let val = ((fraction * rows as f64).round() as usize).clamp(1, rows - 1);
    let cut = rows - val;
    Ok((perm[..cut].to_vec(), perm[cut..].to_vec()))
}

pub fn inject_graph<T: Real>(data: &Dataset, net: JointNetwork<T>, config: &TrainConfig, graph: &Knowledge) -> Result<TrainResult<T>> {
    if graph.node_count() != net.node_count() {
        return Err(Error::Config(format!(
            "graph has {} nodes, network has {}",
            graph.node_count(),
            net.node_count()
        )));
    }
    inject_mask(data, net, config, graph.mask(), |_| {})
}

pub fn train_unconstrained<T: Real>(data: &Dataset, net: JointNetwork<T>, config: &TrainConfig) -> Result<TrainResult<T>> {
    let complete = PartialGraph::complete(crate::graphs::default_names(net.node_count()));
    inject_graph(data, net, config, &Knowledge::Partial(complete))
}

/// Core training loop. `progress` sees every metrics record as it is produced.
pub fn inject_mask<T: Real>(
    data: &Dataset,
    mut net: JointNetwork<T>,
    config: &TrainConfig,
    mask: MaskMatrix,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainResult<T>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Domain("cannot train on an empty dataset".into()));
    }
    if data.cols() != net.node_count() {
        return Err(Error::Config(format!(
            "dataset has {} columns, network expects {}",
            data.cols(),
            net.node_count()
        )));
    }
    if data.task() != net.task() {
        return Err(Error::Config("dataset task differs from network task".into()));
    }
    net.apply_mask(mask)?;

    let all = data.matrix::<T>();
    let (train_idx, val_idx) = train_validation_split(data.rows(), config.validation_fraction, config.seed)?;
    let validation = all.select_rows(&val_idx);
    let mut shuffle_rng = SeededRng::with_stream(config.seed, 2);

    let adam = config.adam();
    let mut states: Vec<AdamState<T>> = net.params().tensors().iter().map(|t| AdamState::for_param(t, adam)).collect();

    let mut best_loss = f64::INFINITY;
    let mut best_params: Params<T> = net.params().clone();
    let mut since_best = 0usize;
    let mut steps = 0usize;
    let mut trace = Vec::new();
    let mut window = ReportMean::default();
    let per_step = config.patience_unit == PatienceUnit::Step;

    'training: loop {
        let mut order = train_idx.clone();
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let batch: Matrix<T> = all.select_rows(chunk);
            let (report, mut grad) = total_loss(&net, &batch, &config.loss)?;
            net.mask_gradient(&mut grad);
            {
                let params = net.params_mut();
                for ((p, g), st) in params.tensors_mut().into_iter().zip(grad.tensors()).zip(&mut states) {
                    adam_update(p, g, st)?;
                }
            }
            net.enforce_mask();
            steps += 1;
            window.push(&report);

            let out_of_steps = steps >= config.max_steps;
            if per_step || out_of_steps {
                if validate_and_check(
                    &net,
                    &validation,
                    config,
                    steps,
                    &mut window,
                    &mut trace,
                    &mut progress,
                    &mut best_loss,
                    &mut best_params,
                    &mut since_best,
                )? {
                    break 'training;
                }
                if out_of_steps {
                    break 'training;
                }
            }
        }
        if !per_step
            && validate_and_check(
                &net,
                &validation,
                config,
                steps,
                &mut window,
                &mut trace,
                &mut progress,
                &mut best_loss,
                &mut best_params,
                &mut since_best,
            )?
        {
            break;
        }
    }

    *net.params_mut() = best_params;
    net.enforce_mask();
    Ok(TrainResult {
        network: net,
        steps_taken: steps,
        best_validation_loss: best_loss,
        trace,
    })
}

/// Records one validation evaluation; returns true when patience is exhausted.
#[allow(clippy::too_many_arguments)]
fn validate_and_check<T: Real>(
    net: &JointNetwork<T>,
    validation: &Matrix<T>,
    config: &TrainConfig,
    steps: usize,
    window: &mut ReportMean,
    trace: &mut Vec<EpochRecord>,
    progress: &mut impl FnMut(&EpochRecord),
    best_loss: &mut f64,
    best_params: &mut Params<T>,
    since_best: &mut usize,
) -> Result<bool> {
    if window.count == 0 {
        return Ok(false);
    }
    let val = evaluate_loss(net, validation, &config.loss)?.total;
    let record = EpochRecord {
        step: steps,
        train: window.take(),
        validation_total: val,
    };
    progress(&record);
    trace.push(record);
    if val < *best_loss {
        *best_loss = val;
        *best_params = net.params().clone();
        *since_best = 0;
    } else {
        *since_best += 1;
    }
    Ok(*since_best >= config.patience)
}

#[derive(Default)]
struct ReportMean {
    sum: LossReport,
    count: usize,
}

impl ReportMean {
    fn push(&mut self, r: &LossReport) {
        self.sum.prediction += r.prediction;
        self.sum.reconstruction += r.reconstruction;
        self.sum.acyclicity += r.acyclicity;
        self.sum.l1 += r.l1;
        self.sum.total += r.total;
        self.count += 1;
    }

    fn take(&mut self) -> LossReport {
        let c = self.count as f64;
        let s = std::mem::take(&mut self.sum);
        self.count = 0;
        LossReport {
            prediction: s.prediction / c,
            reconstruction: s.reconstruction / c,
            acyclicity: s.acyclicity / c,
            l1: s.l1 / c,
            total: s.total / c,
        }
    }
}
