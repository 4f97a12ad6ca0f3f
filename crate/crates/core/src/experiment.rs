//! Synthetic recovery trials: the unconstrained baseline versus injection of
//! a sampled fraction of the true edges, scored against the generating DAG.

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, sample_known_edges, Dataset, Synthetic, SyntheticSpec};
use crate::discovery::{extract_dag_named, ExtractionConfig};
use crate::error::Result;
use crate::eval::{edge_mismatches, evaluate_fold, false_positive_edges, reconstruction_accuracy};
use crate::graphs::{CausalGraph, Knowledge, PartialGraph};
use crate::injector::{inject_graph, train_validation_split, TrainConfig};
use crate::jointnet::{default_hidden_sizes, AdjacencyMatrix, JointNetwork, NetworkSpec, Task, DEFAULT_INPUT_SCALE};
use crate::netcore::SeededRng;

/// Network shape options shared by every command that builds a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkOptions {
    /// Hidden sizes; `None` uses the defaults for the node count.
    pub hidden: Option<Vec<usize>>,
    pub input_scale: f64,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        Self {
            hidden: None,
            input_scale: DEFAULT_INPUT_SCALE,
        }
    }
}

impl NetworkOptions {
    pub fn spec(&self, features: usize, task: Task, seed: u64) -> NetworkSpec {
        NetworkSpec {
            features,
            hidden: self.hidden.clone().unwrap_or_else(|| default_hidden_sizes(features + 1)),
            task,
            seed,
            input_scale: self.input_scale,
        }
    }
}

/// Extraction at the threshold with the fewest mismatches against `truth`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchedExtraction {
    pub tau: f64,
    /// Extracted graph over all network nodes.
    pub graph: CausalGraph,
    /// Restriction of `graph` to the nodes of `truth`.
    pub causal: CausalGraph,
    pub mismatches: usize,
    pub accuracy: f64,
}

/// Scans τ = 0 and every distinct off-diagonal weight, keeping the lowest
/// threshold that reaches the minimum number of mismatches on the nodes of
/// `truth` (which must be the leading nodes of `w`).
pub fn best_match_extraction(
    w: &AdjacencyMatrix<f64>,
    truth: &CausalGraph,
    names: Vec<String>,
    repair_cycles: bool,
) -> Result<MatchedExtraction> {
    let mut taus = w.off_diagonal();
    taus.push(0.0);
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let n = truth.node_count();
    let mut best: Option<MatchedExtraction> = None;
    for tau in taus {
        let graph = extract_dag_named(w, &ExtractionConfig { tau, repair_cycles }, names.clone())?;
        let causal = graph.restricted(n);
        let mismatches = edge_mismatches(&causal, truth);
        if best.as_ref().is_none_or(|b| mismatches < b.mismatches) {
            let accuracy = reconstruction_accuracy(&causal, truth)?;
            best = Some(MatchedExtraction {
                tau,
                graph,
                causal,
                mismatches,
                accuracy,
            });
        }
    }
    Ok(best.expect("at least tau = 0 is scanned"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Unconstrained training followed by extraction.
    #[serde(rename = "castle+")]
    Baseline,
    Injected,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Baseline => "castle+",
            Scenario::Injected => "injected",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub scenario: Scenario,
    pub tau: f64,
    pub reconstruction_accuracy: f64,
    pub mismatches: usize,
    pub false_positives: usize,
    /// Held-out prediction error.
    pub mse: f64,
    pub edges: usize,
    /// Extracted edges with an endpoint among the noise columns.
    pub noise_edges: usize,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialSettings {
    pub network: NetworkOptions,
    pub train: TrainConfig,
    /// Share of rows held out for the prediction error.
    pub test_fraction: f64,
    pub repair_cycles: bool,
}

impl Default for TrialSettings {
    fn default() -> Self {
        Self {
            network: NetworkOptions::default(),
            train: TrainConfig::default(),
            test_fraction: 0.2,
            repair_cycles: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrialRun {
    pub synthetic: Synthetic,
    pub baseline: TrialOutcome,
    /// One entry per requested fraction, in request order.
    pub injected: Vec<InjectedOutcome>,
}

#[derive(Clone, Debug)]
pub struct InjectedOutcome {
    pub fraction: f64,
    pub known: PartialGraph,
    pub outcome: TrialOutcome,
}

fn score(
    scenario: Scenario,
    net: &JointNetwork<f64>,
    steps: usize,
    synthetic: &Synthetic,
    test: &Dataset,
    repair_cycles: bool,
) -> Result<TrialOutcome> {
    let data = &synthetic.data;
    let m = best_match_extraction(&net.compute_adjacency(), &synthetic.graph, data.names().to_vec(), repair_cycles)?;
    let causal = synthetic.causal_nodes();
    Ok(TrialOutcome {
        scenario,
        tau: m.tau,
        reconstruction_accuracy: m.accuracy,
        mismatches: m.mismatches,
        false_positives: false_positive_edges(&m.causal, &synthetic.graph),
        mse: evaluate_fold(net, test)?,
        edges: m.graph.edge_count(),
        noise_edges: m.graph.edges().iter().filter(|&&(i, k)| i >= causal || k >= causal).count(),
        steps,
    })
}

/// Generates one synthetic dataset, trains the baseline and, for every
/// fraction, a network injected with that share of the true edges. All
/// networks start from the same initial weights and train on the same rows.
pub fn run_trial(spec: &SyntheticSpec, fractions: &[f64], settings: &TrialSettings) -> Result<TrialRun> {
    let synthetic = generate_synthetic(spec)?;
    let data = &synthetic.data;
    let (train_idx, test_idx) = train_validation_split(data.rows(), settings.test_fraction, spec.seed ^ 0x7e57)?;
    let train = data.subset(&train_idx);
    let test = data.subset(&test_idx);
    let net_spec = settings.network.spec(data.features(), Task::Regression, spec.seed);
    let train_cfg = TrainConfig {
        seed: spec.seed,
        ..settings.train.clone()
    };

    let complete = Knowledge::Partial(PartialGraph::complete(data.names().to_vec()));
    let base = inject_graph(&train, JointNetwork::new(&net_spec)?, &train_cfg, &complete)?;
    let baseline = score(
        Scenario::Baseline,
        &base.network,
        base.steps_taken,
        &synthetic,
        &test,
        settings.repair_cycles,
    )?;

    let mut injected = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let sampled = sample_known_edges(&synthetic.graph, fraction, SeededRng::with_stream(spec.seed, 3).next_u64())?;
        let known = sampled.extended(data.names().to_vec())?;
        let inj = inject_graph(
            &train,
            JointNetwork::new(&net_spec)?,
            &train_cfg,
            &Knowledge::Partial(known.clone()),
        )?;
        let outcome = score(
            Scenario::Injected,
            &inj.network,
            inj.steps_taken,
            &synthetic,
            &test,
            settings.repair_cycles,
        )?;
        injected.push(InjectedOutcome { fraction, known, outcome });
    }
    Ok(TrialRun {
        synthetic,
        baseline,
        injected,
    })
}

/// `baseline + fraction · (1 − baseline)`: the accuracy expected if knowing
/// a share of the edges helped exactly in proportion.
pub fn rebased(baseline: f64, fraction: f64) -> f64 {
    baseline + fraction * (1.0 - baseline)
}
