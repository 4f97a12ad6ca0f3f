//! Tabular datasets: CSV ingestion, standardization, fold splitting and the
//! synthetic structural-equation generator.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{CausalGraph, PartialGraph};
use crate::jointnet::Task;
use crate::netcore::{Matrix, SeededRng};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub std: f64,
}

/// Rows × (d + 1) values with the target in column 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    values: Matrix<f64>,
    names: Vec<String>,
    task: Task,
    scaling: Option<Vec<ColumnScale>>,
}

impl Dataset {
    pub fn new(values: Matrix<f64>, names: Vec<String>, task: Task) -> Result<Self> {
        if names.len() != values.cols() {
            return Err(Error::Config(format!("{} column names for {} columns", names.len(), values.cols())));
        }
        if values.cols() < 2 {
            return Err(Error::Config("dataset needs a target and at least one feature".into()));
        }
        if !values.is_finite() {
            return Err(Error::Domain("dataset contains non-finite values".into()));
        }
        if task == Task::Classification {
            if let Some(r) = (0..values.rows()).find(|&r| values[(r, 0)] != 0.0 && values[(r, 0)] != 1.0) {
                return Err(Error::Domain(format!(
                    "classification target must be 0 or 1, row {r} has {}",
                    values[(r, 0)]
                )));
            }
        }
        Ok(Self {
            values,
            names,
            task,
            scaling: None,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn features(&self) -> usize {
        self.cols() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.rows() == 0
    }

    pub fn values(&self) -> &Matrix<f64> {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn target(&self) -> Vec<f64> {
        self.values.column(0)
    }

    /// Parameters of the standardization applied to this dataset, if any.
    pub fn scaling(&self) -> Option<&[ColumnScale]> {
        self.scaling.as_deref()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            values: self.values.select_rows(indices),
            names: self.names.clone(),
            task: self.task,
            scaling: self.scaling.clone(),
        }
    }

    pub fn matrix<T: Real>(&self) -> Matrix<T> {
        self.values.cast()
    }

    /// Per-column mean and sample standard deviation. The classification
    /// target keeps the identity transform.
    pub fn fit_scaling(&self) -> Result<Vec<ColumnScale>> {
        let n = self.rows();
        if n < 2 {
            return Err(Error::Domain("standardization needs at least two rows".into()));
        }
        (0..self.cols())
            .map(|c| {
                if c == 0 && self.task == Task::Classification {
                    return Ok(ColumnScale { mean: 0.0, std: 1.0 });
                }
                let col = self.values.column(c);
                let mean = col.iter().sum::<f64>() / n as f64;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                let std = var.sqrt();
                if !(std > 0.0) || std < 1e-12 * mean.abs().max(1.0) {
                    return Err(Error::Domain(format!("column {:?} has zero variance", self.names[c])));
                }
                Ok(ColumnScale { mean, std })
            })
            .collect()
    }

    pub fn standardize(&self) -> Result<Dataset> {
        let scales = self.fit_scaling()?;
        self.standardize_with(&scales)
    }

    /// Applies externally fitted parameters (e.g. from a training fold).
    pub fn standardize_with(&self, scales: &[ColumnScale]) -> Result<Dataset> {
        if scales.len() != self.cols() {
            return Err(Error::Config("scaling parameters do not match column count".into()));
        }
        let values = Matrix::from_fn(self.rows(), self.cols(), |r, c| {
            let s = scales[c];
            (self.values[(r, c)] - s.mean) / s.std
        });
        Ok(Dataset {
            values,
            names: self.names.clone(),
            task: self.task,
            scaling: Some(scales.to_vec()),
        })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.names)?;
        for r in 0..self.rows() {
            w.write_record(self.values.row(r).iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Label → integer code per categorical column, read from a JSON sidecar
/// `{"column": {"label": code, ...}, ...}`.
pub type CategoryMap = HashMap<String, HashMap<String, f64>>;

pub fn read_category_map(path: impl AsRef<Path>) -> Result<CategoryMap> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Loaded dataset plus the number of rows dropped for missing cells.
#[derive(Clone, Debug)]
pub struct CsvLoad {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

pub fn load_csv(path: impl AsRef<Path>, target: &str, task: Task) -> Result<Dataset> {
    Ok(read_csv(path, target, task, None)?.dataset)
}

pub fn read_csv(path: impl AsRef<Path>, target: &str, task: Task, categories: Option<&CategoryMap>) -> Result<CsvLoad> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::Config(format!("target column {target:?} not found")))?;
    let order: Vec<usize> = std::iter::once(target_idx)
        .chain((0..headers.len()).filter(|&c| c != target_idx))
        .collect();

    let mut data = Vec::new();
    let mut rows = 0usize;
    let mut dropped = 0usize;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let line = r + 1;
        if record.len() != headers.len() {
            return Err(Error::Ingest {
                row: line,
                column: String::new(),
                message: format!("{} cells, header has {}", record.len(), headers.len()),
            });
        }
        if record.iter().any(|cell| cell.trim().is_empty()) {
            dropped += 1;
            continue;
        }
        for &c in &order {
            let cell = record[c].trim();
            let name = &headers[c];
            let value = match categories.and_then(|m| m.get(name)) {
                Some(codes) => *codes.get(cell).ok_or_else(|| Error::Ingest {
                    row: line,
                    column: name.clone(),
                    message: format!("label {cell:?} missing from category map"),
                })?,
                None => cell.parse::<f64>().map_err(|_| Error::Ingest {
                    row: line,
                    column: name.clone(),
                    message: format!("cannot parse {cell:?} as a number"),
                })?,
            };
            data.push(value);
        }
        rows += 1;
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} row(s) with missing values");
    }
    let names = order.iter().map(|&c| headers[c].clone()).collect();
    let dataset = Dataset::new(Matrix::from_vec(rows, headers.len(), data)?, names, task)?;
    Ok(CsvLoad {
        dataset,
        dropped_rows: dropped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle cut into `k` test blocks whose sizes differ by at most one.
pub fn kfold_splits(rows: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config("k-fold needs k >= 2".into()));
    }
    if k > rows {
        return Err(Error::Config(format!("{k} folds for {rows} rows")));
    }
    let perm = SeededRng::new(seed).permutation(rows);
    let base = rows / k;
    let extra = rows % k;
    let mut start = 0;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let test: Vec<usize> = perm[start..start + len].to_vec();
        let train: Vec<usize> = perm[..start].iter().chain(&perm[start + len..]).copied().collect();
        folds.push(Fold { train, test });
        start += len;
    }
    Ok(folds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// |V|, the number of causal nodes.
    pub nodes: usize,
    /// |E| = |V| · edge_multiplier
    pub edge_multiplier: usize,
    /// N = |V| · sample_multiplier
    pub sample_multiplier: usize,
    /// Extra disconnected standard-normal columns, as a fraction of |V|.
    pub noise_fraction: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(nodes: usize, edge_multiplier: usize, sample_multiplier: usize, seed: u64) -> Self {
        Self {
            nodes,
            edge_multiplier,
            sample_multiplier,
            noise_fraction: 0.0,
            seed,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.nodes * self.edge_multiplier
    }

    pub fn rows(&self) -> usize {
        self.nodes * self.sample_multiplier
    }

    pub fn noise_columns(&self) -> usize {
        (self.noise_fraction * self.nodes as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::Config("synthetic graphs need at least two nodes".into()));
        }
        let max = self.nodes * (self.nodes - 1) / 2;
        if self.edge_count() > max {
            return Err(Error::Config(format!(
                "{} edges do not fit a DAG on {} nodes (max {max})",
                self.edge_count(),
                self.nodes
            )));
        }
        if self.edge_count() == 0 {
            return Err(Error::Config("edge multiplier must be at least 1".into()));
        }
        if self.sample_multiplier == 0 {
            return Err(Error::Config("sample multiplier must be at least 1".into()));
        }
        if !(self.noise_fraction.is_finite() && self.noise_fraction >= 0.0) {
            return Err(Error::Config("noise fraction must be >= 0".into()));
        }
        Ok(())
    }
}

/// Output of [`generate_synthetic`].
#[derive(Clone, Debug)]
pub struct Synthetic {
    /// Standardized data; causal nodes first (target at 0), noise columns last.
    pub data: Dataset,
    /// True DAG over the causal nodes only.
    pub graph: CausalGraph,
    /// The generator's topological order, in dataset column indices.
    pub order: Vec<usize>,
    pub spec: SyntheticSpec,
}

impl Synthetic {
    pub fn causal_nodes(&self) -> usize {
        self.spec.nodes
    }
}

const SEM_NOISE_STD: f64 = 0.5;
const COEF_MIN: f64 = 0.5;
const COEF_MAX: f64 = 2.0;

/// Random DAG plus samples from `x = tanh(Σ c·parent) + ε`, `ε ~ N(0, 0.5²)`,
/// roots `N(0, 1)`, coefficients uniform on `±[0.5, 2]`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    spec.validate()?;
    let v = spec.nodes;
    let mut rng = SeededRng::new(spec.seed);

    // forward pairs of a random topological order
    let order = rng.permutation(v);
    let forward: Vec<(usize, usize)> = (0..v).flat_map(|a| (a + 1..v).map(move |b| (a, b))).collect();
    let picks = rng.sample_indices(forward.len(), spec.edge_count());
    let mut edges: Vec<(usize, usize, f64)> = picks
        .into_iter()
        .map(|p| {
            let (a, b) = forward[p];
            let magnitude = rng.uniform(COEF_MIN, COEF_MAX);
            let c = if rng.coin() { magnitude } else { -magnitude };
            (order[a], order[b], c)
        })
        .collect();
    edges.sort_by_key(|e| (e.0, e.1));

    let with_parents: Vec<usize> = (0..v).filter(|&node| edges.iter().any(|e| e.1 == node)).collect();
    let target = with_parents[rng.below(with_parents.len())];

    let rows = spec.rows();
    let mut raw = Matrix::<f64>::zeros(rows, v);
    for r in 0..rows {
        for &node in &order {
            let mut s = 0.0;
            let mut has_parent = false;
            for &(from, to, c) in &edges {
                if to == node {
                    s += c * raw[(r, from)];
                    has_parent = true;
                }
            }
            raw[(r, node)] = if has_parent {
                s.tanh() + SEM_NOISE_STD * rng.standard_normal()
            } else {
                rng.standard_normal()
            };
        }
    }

    // relabel: target first, remaining causal nodes in id order, then noise
    let mut relabel = vec![0usize; v];
    let mut next = 1;
    for node in 0..v {
        if node == target {
            relabel[node] = 0;
        } else {
            relabel[node] = next;
            next += 1;
        }
    }
    let noise = spec.noise_columns();
    let cols = v + noise;
    let mut noise_rng = SeededRng::with_stream(spec.seed, 1);
    let mut values = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for node in 0..v {
            values[(r, relabel[node])] = raw[(r, node)];
        }
        for c in v..cols {
            values[(r, c)] = noise_rng.standard_normal();
        }
    }
    let mut names = crate::graphs::default_names(v);
    names.extend((1..=noise).map(|i| format!("N{i}")));

    let graph = CausalGraph::new(names[..v].to_vec(), edges.iter().map(|&(a, b, _)| (relabel[a], relabel[b])))?;
    let data = Dataset::new(values, names, Task::Regression)?.standardize()?;
    Ok(Synthetic {
        data,
        graph,
        order: order.iter().map(|&node| relabel[node]).collect(),
        spec: spec.clone(),
    })
}

/// Partial knowledge built from a random sample of true edges: each sampled
/// `i → j` stays allowed while `j → i` is forbidden; every other pair among the
/// sampled endpoints stays allowed both ways.
pub fn sample_known_edges(g: &CausalGraph, fraction: f64, seed: u64) -> Result<PartialGraph> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("known-edge fraction must be in (0, 1], got {fraction}")));
    }
    let all: Vec<(usize, usize)> = g.edges().iter().copied().collect();
    let count = ((fraction * all.len() as f64).round() as usize).min(all.len());
    let mut rng = SeededRng::new(seed);
    let sampled: Vec<(usize, usize)> = rng.sample_indices(all.len(), count).into_iter().map(|i| all[i]).collect();
    let known: BTreeSet<usize> = sampled.iter().flat_map(|&(i, k)| [i, k]).collect();
    let forbidden: BTreeSet<(usize, usize)> = sampled.iter().map(|&(i, k)| (k, i)).collect();
    let edges: Vec<(usize, usize)> = known
        .iter()
        .flat_map(|&i| known.iter().map(move |&k| (i, k)))
        .filter(|&(i, k)| i != k && !forbidden.contains(&(i, k)))
        .collect();
    PartialGraph::new(g.names().to_vec(), known, edges)
}
