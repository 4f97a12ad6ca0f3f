//! Graph extraction from a trained network, the threshold sweep, and the
//! expert contestation loop.

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{kfold_splits, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate_fold, MetricName, MetricReport};
use crate::graphs::{
    break_cycles, default_names, is_acyclic, mask_from_full, CausalGraph, Edge, GraphJson, Knowledge, MaskMatrix, WeightedEdge,
};
use crate::injector::{inject_graph, inject_mask, train_unconstrained, train_validation_split, EpochRecord, TrainConfig};
use crate::jointnet::{AdjacencyMatrix, JointNetwork, NetworkSpec};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    pub tau: f64,
    pub repair_cycles: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            tau: 0.0,
            repair_cycles: true,
        }
    }
}

impl ExtractionConfig {
    pub fn at(tau: f64) -> Self {
        Self { tau, ..Self::default() }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("threshold must be finite and >= 0, got {tau}")))
    }
}

/// Edges `i → k` with `w_ik > w_ki` and `w_ik > τ`, before any cycle repair.
pub fn extract_edges<T: Real>(w: &AdjacencyMatrix<T>, tau: f64) -> Vec<WeightedEdge> {
    let n = w.size();
    let mut out = Vec::new();
    for i in 0..n {
        for k in 0..n {
            if i == k {
                continue;
            }
            let (ik, ki) = (w.get(i, k).as_f64(), w.get(k, i).as_f64());
            if ik > ki && ik > tau {
                out.push(WeightedEdge {
                    from: i,
                    to: k,
                    weight: ik,
                });
            }
        }
    }
    out
}

pub fn extract_dag<T: Real>(w: &AdjacencyMatrix<T>, config: &ExtractionConfig) -> Result<CausalGraph> {
    extract_dag_named(w, config, default_names(w.size()))
}

/// Thresholded, oriented graph. Without repair a cyclic result is an error.
pub fn extract_dag_named<T: Real>(w: &AdjacencyMatrix<T>, config: &ExtractionConfig, names: Vec<String>) -> Result<CausalGraph> {
    check_tau(config.tau)?;
    if names.len() != w.size() {
        return Err(Error::Config("node names do not match the adjacency size".into()));
    }
    let edges = extract_edges(w, config.tau);
    let n = w.size();
    let kept: BTreeSet<Edge> = if is_acyclic(edges.iter().map(|e| (e.from, e.to)), n) {
        edges.iter().map(|e| (e.from, e.to)).collect()
    } else if config.repair_cycles {
        break_cycles(&edges, n).kept
    } else {
        return Err(Error::Graph(format!(
            "extraction at tau = {} is cyclic and repair is disabled",
            config.tau
        )));
    };
    CausalGraph::new(names, kept)
}

/// Edge list annotated with weights, plus the full adjacency so a client can
/// re-threshold locally.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraphJson {
    #[serde(flatten)]
    pub graph: GraphJson,
    pub weights: Vec<EdgeWeight>,
    pub adjacency: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeWeight {
    pub edge: [usize; 2],
    pub w: f64,
}

pub fn annotate<T: Real>(g: &CausalGraph, w: &AdjacencyMatrix<T>) -> WeightedGraphJson {
    let n = w.size();
    WeightedGraphJson {
        graph: g.to_json(),
        weights: g
            .edges()
            .iter()
            .map(|&(i, k)| EdgeWeight {
                edge: [i, k],
                w: w.get(i, k).as_f64(),
            })
            .collect(),
        adjacency: (0..n).map(|i| (0..n).map(|k| w.get(i, k).as_f64()).collect()).collect(),
    }
}

/// `points` log-spaced thresholds from 1e-3 to the 90th percentile of the
/// off-diagonal weights.
pub fn default_tau_grid<T: Real>(w: &AdjacencyMatrix<T>, points: usize) -> Vec<f64> {
    const LOW: f64 = 1e-3;
    let mut off: Vec<f64> = w.off_diagonal().into_iter().map(Real::as_f64).collect();
    off.sort_by(f64::total_cmp);
    let p90 = if off.is_empty() {
        0.0
    } else {
        let pos = 0.9 * (off.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        off[lo] + (off[hi] - off[lo]) * (pos - lo as f64)
    };
    let high = p90.max(2.0 * LOW);
    if points < 2 {
        return vec![LOW];
    }
    let (a, b) = (LOW.ln(), high.ln());
    (0..points).map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub edges_per_fold: Vec<usize>,
    pub mean_edges: f64,
    pub metric: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub metric: MetricName,
    pub rows: Vec<SweepRow>,
    /// Unconstrained networks on the same folds.
    pub baseline: MetricReport,
    pub tie_tolerance: f64,
    pub tie_standard_errors: f64,
    /// Half-width of the band around the best mean inside which rows tie.
    pub tie_band: f64,
    pub selected: usize,
    pub selected_tau: f64,
    /// Graph extracted at the selected threshold from a network trained
    /// unconstrained on all rows.
    pub selected_graph: GraphJson,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub folds: usize,
    pub repair_cycles: bool,
    /// Absolute part of the tie band around the best metric mean.
    pub tie_tolerance: f64,
    /// Multiples of the best row's standard error added to the tie band.
    pub tie_standard_errors: f64,
    pub grid_points: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            repair_cycles: true,
            tie_tolerance: 0.0,
            tie_standard_errors: 1.0,
            grid_points: 12,
        }
    }
}

fn best_row(rows: &[SweepRow], metric: MetricName) -> Option<usize> {
    let better = |a: f64, b: f64| if metric.higher_is_better() { a > b } else { a < b };
    rows.iter()
        .enumerate()
        .filter(|(_, r)| r.metric.mean.is_finite())
        .reduce(|a, b| if better(b.1.metric.mean, a.1.metric.mean) { b } else { a })
        .map(|(i, _)| i)
}

/// `tolerance + standard_errors · SE`, where SE is the standard error of the
/// fold scores of the row with the best mean.
pub fn tie_band(rows: &[SweepRow], metric: MetricName, tolerance: f64, standard_errors: f64) -> f64 {
    let se = best_row(rows, metric).map_or(0.0, |i| {
        let m = &rows[i].metric;
        if m.n > 1 && m.std.is_finite() {
            m.std / (m.n as f64).sqrt()
        } else {
            0.0
        }
    });
    tolerance + standard_errors * se
}

/// Best metric mean; among rows within `band` of it, fewest edges; then the
/// better metric; then the earlier row.
pub fn select_threshold(rows: &[SweepRow], metric: MetricName, band: f64) -> Option<usize> {
    let better = |a: f64, b: f64| if metric.higher_is_better() { a > b } else { a < b };
    let best = rows[best_row(rows, metric)?].metric.mean;
    let tied = |m: f64| (m - best).abs() <= band;
    let mut choice: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if !r.metric.mean.is_finite() || !tied(r.metric.mean) {
            continue;
        }
        choice = match choice {
            None => Some(i),
            Some(c) => {
                let cur = &rows[c];
                if r.mean_edges < cur.mean_edges || (r.mean_edges == cur.mean_edges && better(r.metric.mean, cur.metric.mean)) {
                    Some(i)
                } else {
                    Some(c)
                }
            }
        };
    }
    choice
}

/// For every threshold: train unconstrained on each training fold, extract
/// the graph at that threshold, inject it back (warm start) and score the
/// held-out fold. Each test fold is standardized with its training fold's
/// parameters.
pub fn threshold_sweep(
    data: &Dataset,
    spec: &NetworkSpec,
    config: &TrainConfig,
    grid: Option<&[f64]>,
    options: &SweepOptions,
) -> Result<SweepReport> {
    if options.folds < 2 {
        return Err(Error::Config("threshold sweep needs at least two folds".into()));
    }
    if let Some(g) = grid {
        if g.is_empty() {
            return Err(Error::Config("threshold grid is empty".into()));
        }
        if g.windows(2).any(|p| p[0] > p[1]) {
            return Err(Error::Config("threshold grid must be sorted ascending".into()));
        }
        g.iter().try_for_each(|&t| check_tau(t))?;
    }
    if spec.features + 1 != data.cols() {
        return Err(Error::Config("network spec does not match the dataset".into()));
    }
    let metric = MetricName::for_task(data.task());

    let full_fit = train_unconstrained(data, JointNetwork::<f64>::new(spec)?, config)?.network;
    let full_w = full_fit.compute_adjacency();
    let grid: Vec<f64> = match grid {
        Some(g) => g.to_vec(),
        None => default_tau_grid(&full_w, options.grid_points),
    };

    let folds = kfold_splits(data.rows(), options.folds, config.seed)?;
    let mut edges = vec![Vec::with_capacity(folds.len()); grid.len()];
    let mut scores = vec![Vec::with_capacity(folds.len()); grid.len()];
    let mut baseline = Vec::with_capacity(folds.len());
    for fold in &folds {
        let train_raw = data.subset(&fold.train);
        let scales = train_raw.fit_scaling()?;
        let train = train_raw.standardize_with(&scales)?;
        let test = data.subset(&fold.test).standardize_with(&scales)?;

        let base = train_unconstrained(&train, JointNetwork::<f64>::new(spec)?, config)?.network;
        baseline.push(evaluate_fold(&base, &test)?);
        let w = base.compute_adjacency();
        for (t, &tau) in grid.iter().enumerate() {
            let g = extract_dag_named(
                &w,
                &ExtractionConfig {
                    tau,
                    repair_cycles: options.repair_cycles,
                },
                data.names().to_vec(),
            )?;
            edges[t].push(g.edge_count());
            let injected = inject_graph(&train, base.clone(), config, &Knowledge::Full(g))?.network;
            scores[t].push(evaluate_fold(&injected, &test)?);
        }
    }

    let rows: Vec<SweepRow> = grid
        .iter()
        .zip(edges)
        .zip(scores)
        .map(|((&tau, e), s)| SweepRow {
            tau,
            mean_edges: e.iter().sum::<usize>() as f64 / e.len() as f64,
            edges_per_fold: e,
            metric: MetricReport::new(metric, s),
        })
        .collect();
    if !(options.tie_tolerance >= 0.0 && options.tie_standard_errors >= 0.0) {
        return Err(Error::Config("tie tolerance and standard errors must be non-negative".into()));
    }
    let band = tie_band(&rows, metric, options.tie_tolerance, options.tie_standard_errors);
    let selected = select_threshold(&rows, metric, band).ok_or_else(|| Error::Domain("no threshold produced a finite metric".into()))?;
    let selected_tau = rows[selected].tau;
    let selected_graph = extract_dag_named(
        &full_w,
        &ExtractionConfig {
            tau: selected_tau,
            repair_cycles: options.repair_cycles,
        },
        data.names().to_vec(),
    )?;
    Ok(SweepReport {
        metric,
        rows,
        baseline: MetricReport::new(metric, baseline),
        tie_tolerance: options.tie_tolerance,
        tie_standard_errors: options.tie_standard_errors,
        tie_band: band,
        selected,
        selected_tau,
        selected_graph: selected_graph.to_json(),
    })
}

/// What an expert sends back after inspecting the current graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Revision {
    SetTau {
        tau: f64,
    },
    CutEdges {
        removed_edges: Vec<[usize; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tau: Option<f64>,
    },
    Accept,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Open,
    Accepted,
    Aborted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub metric: MetricName,
    /// Score on the session's validation split.
    pub value: f64,
    pub edges: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub revision: usize,
    /// `None` for the initial extraction.
    pub applied: Option<Revision>,
    pub tau: f64,
    /// Graph injected by this revision, if it retrained.
    pub injected: Option<GraphJson>,
    pub extracted: GraphJson,
    pub metrics: SessionMetrics,
    pub retrained: bool,
}

/// Mutable state of one contestation loop.
#[derive(Clone, Debug)]
pub struct ContestSession<T> {
    id: String,
    data: Arc<Dataset>,
    network: JointNetwork<T>,
    config: TrainConfig,
    extraction: ExtractionConfig,
    status: SessionStatus,
    banned: BTreeSet<Edge>,
    current: CausalGraph,
    history: Vec<HistoryRecord>,
}

/// Read-only snapshot handed to a [`Reviser`] and serialized by the service.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub status: SessionStatus,
    pub tau: f64,
    pub graph: WeightedGraphJson,
    pub banned: Vec<[usize; 2]>,
    pub history: Vec<HistoryRecord>,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub graph: CausalGraph,
    pub metrics: SessionMetrics,
}

impl<T: Real> ContestSession<T> {
    /// Opens a session on an already trained network and extracts the first graph.
    pub fn new(
        id: impl Into<String>,
        data: Arc<Dataset>,
        network: JointNetwork<T>,
        config: TrainConfig,
        extraction: ExtractionConfig,
    ) -> Result<Self> {
        config.validate()?;
        check_tau(extraction.tau)?;
        if data.cols() != network.node_count() {
            return Err(Error::Config("dataset does not match the network".into()));
        }
        let current = extract_dag_named(&network.compute_adjacency(), &extraction, data.names().to_vec())?;
        let mut session = Self {
            id: id.into(),
            data,
            network,
            config,
            extraction,
            status: SessionStatus::Open,
            banned: BTreeSet::new(),
            current,
            history: Vec::new(),
        };
        let metrics = session.metrics()?;
        session.record(None, None, metrics, false);
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn contested(&self) -> bool {
        self.status == SessionStatus::Open
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn tau(&self) -> f64 {
        self.extraction.tau
    }

    pub fn network(&self) -> &JointNetwork<T> {
        &self.network
    }

    pub fn graph(&self) -> &CausalGraph {
        &self.current
    }

    pub fn banned(&self) -> &BTreeSet<Edge> {
        &self.banned
    }

    pub fn history(&self) -> &[HistoryRecord] {
        &self.history
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            session_id: self.id.clone(),
            status: self.status,
            tau: self.extraction.tau,
            graph: annotate(&self.current, &self.network.compute_adjacency()),
            banned: self.banned.iter().map(|&(i, k)| [i, k]).collect(),
            history: self.history.clone(),
        }
    }

    pub fn abort(&mut self) {
        if self.status == SessionStatus::Open {
            self.status = SessionStatus::Aborted;
        }
    }

    fn metrics(&self) -> Result<SessionMetrics> {
        let (_, val_idx) = train_validation_split(self.data.rows(), self.config.validation_fraction, self.config.seed)?;
        let holdout = self.data.subset(&val_idx);
        Ok(SessionMetrics {
            metric: MetricName::for_task(self.data.task()),
            value: evaluate_fold(&self.network, &holdout)?,
            edges: self.current.edge_count(),
        })
    }

    fn record(&mut self, applied: Option<Revision>, injected: Option<GraphJson>, metrics: SessionMetrics, retrained: bool) {
        self.history.push(HistoryRecord {
            revision: self.history.len(),
            applied,
            tau: self.extraction.tau,
            injected,
            extracted: self.current.to_json(),
            metrics,
            retrained,
        });
    }

    fn re_extract(&mut self) -> Result<()> {
        self.current = extract_dag_named(&self.network.compute_adjacency(), &self.extraction, self.data.names().to_vec())?;
        Ok(())
    }

    /// Checks a revision against the current state without applying it.
    pub fn check_revision(&self, revision: &Revision) -> Result<()> {
        if !self.contested() {
            return Err(Error::State(format!("session {} is closed", self.id)));
        }
        match revision {
            Revision::SetTau { tau } => check_tau(*tau),
            Revision::CutEdges { removed_edges, tau } => {
                if let Some(t) = tau {
                    check_tau(*t)?;
                }
                if removed_edges.is_empty() {
                    return Err(Error::Validation("cut-edges revision without edges".into()));
                }
                for e in removed_edges {
                    if !self.current.has_edge(e[0], e[1]) {
                        return Err(Error::Validation(format!("edge ({}, {}) is not in the current graph", e[0], e[1])));
                    }
                }
                Ok(())
            }
            Revision::Accept => Ok(()),
        }
    }

    /// Applies one revision. Threshold changes only re-extract; edge cuts
    /// inject the revised graph (with every banned edge masked) and retrain.
    pub fn contest_step(&mut self, revision: Revision) -> Result<StepOutcome> {
        self.contest_step_with_progress(revision, |_| {})
    }

    pub fn contest_step_with_progress(&mut self, revision: Revision, progress: impl FnMut(&EpochRecord)) -> Result<StepOutcome> {
        self.check_revision(&revision)?;
        match &revision {
            Revision::SetTau { tau } => {
                self.extraction.tau = *tau;
                self.re_extract()?;
                let metrics = self.metrics()?;
                self.record(Some(revision), None, metrics, false);
            }
            Revision::CutEdges { removed_edges, tau } => {
                let removed: BTreeSet<Edge> = removed_edges.iter().map(|e| (e[0], e[1])).collect();
                self.banned.extend(removed.iter().copied());
                let revised = self.current.without_edges(&removed);
                let mut mask = mask_from_full(&revised);
                mask = mask.intersect(&self.banned_mask());
                let trained = inject_mask(&self.data, self.network.clone(), &self.config, mask, progress)?;
                self.network = trained.network;
                if let Some(t) = tau {
                    self.extraction.tau = *t;
                }
                self.re_extract()?;
                let metrics = self.metrics()?;
                self.record(Some(revision.clone()), Some(revised.to_json()), metrics, true);
            }
            Revision::Accept => {
                self.status = SessionStatus::Accepted;
                let metrics = self.metrics()?;
                self.record(Some(revision), None, metrics, false);
            }
        }
        Ok(StepOutcome {
            graph: self.current.clone(),
            metrics: self.history.last().expect("recorded").metrics,
        })
    }

    fn banned_mask(&self) -> MaskMatrix {
        let mut m = MaskMatrix::unconstrained(self.network.node_count());
        for &(i, k) in &self.banned {
            m.forbid(i, k);
        }
        m
    }
}

/// Source of expert revisions.
pub trait Reviser {
    fn revise(&mut self, view: &SessionView) -> std::result::Result<Revision, String>;
}

/// Replays a fixed list of revisions.
#[derive(Clone, Debug, Default)]
pub struct ScriptedReviser {
    queue: VecDeque<Revision>,
}

impl ScriptedReviser {
    pub fn new(revisions: impl IntoIterator<Item = Revision>) -> Self {
        Self {
            queue: revisions.into_iter().collect(),
        }
    }
}

impl Reviser for ScriptedReviser {
    fn revise(&mut self, _view: &SessionView) -> std::result::Result<Revision, String> {
        self.queue.pop_front().ok_or_else(|| "script exhausted before accept".to_string())
    }
}

/// Cuts every shown edge pointing into one of `protected` until none remain,
/// then accepts.
#[derive(Clone, Debug)]
pub struct NoParentsReviser {
    pub protected: BTreeSet<usize>,
}

impl Reviser for NoParentsReviser {
    fn revise(&mut self, view: &SessionView) -> std::result::Result<Revision, String> {
        let cuts: Vec<[usize; 2]> = view
            .graph
            .graph
            .edges
            .iter()
            .filter(|e| self.protected.contains(&e[1]))
            .copied()
            .collect();
        Ok(if cuts.is_empty() {
            Revision::Accept
        } else {
            Revision::CutEdges {
                removed_edges: cuts,
                tau: None,
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct ContestOutcome<T> {
    pub graph: CausalGraph,
    pub network: JointNetwork<T>,
    pub history: Vec<HistoryRecord>,
}

/// Drives a session until the reviser accepts. On reviser failure the
/// session is aborted and keeps its history.
pub fn run_contest<T: Real>(session: &mut ContestSession<T>, reviser: &mut dyn Reviser) -> Result<()> {
    while session.contested() {
        let revision = match reviser.revise(&session.view()) {
            Ok(r) => r,
            Err(msg) => {
                session.abort();
                return Err(Error::Reviser(msg));
            }
        };
        session.contest_step(revision)?;
    }
    Ok(())
}

pub fn contest_graph<T: Real>(
    data: Arc<Dataset>,
    network: JointNetwork<T>,
    config: TrainConfig,
    extraction: ExtractionConfig,
    reviser: &mut dyn Reviser,
) -> Result<ContestOutcome<T>> {
    let mut session = ContestSession::new("local", data, network, config, extraction)?;
    run_contest(&mut session, reviser)?;
    Ok(ContestOutcome {
        graph: session.current.clone(),
        network: session.network.clone(),
        history: session.history.clone(),
    })
}
