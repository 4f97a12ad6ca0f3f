//! The synthetic experiment grid: one trial per (|V|, e, s, noise, repeat),
//! a long-format report CSV and a summary with means and t-tests.

use std::collections::BTreeMap;
use std::path::Path;

use contestable::data::SyntheticSpec;
use contestable::eval::{mean_std, two_sample_ttest, TTestResult};
use contestable::experiment::{rebased, run_trial, TrialOutcome, TrialSettings};
use serde::{Deserialize, Serialize};

use crate::error::{GatewayError, GatewayResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GridMetric {
    ReconstructionAccuracy,
    Mse,
    FalsePositives,
    NoiseEdges,
}

impl GridMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            GridMetric::ReconstructionAccuracy => "reconstruction-accuracy",
            GridMetric::Mse => "mse",
            GridMetric::FalsePositives => "false-positives",
            GridMetric::NoiseEdges => "noise-edges",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [Self::ReconstructionAccuracy, Self::Mse, Self::FalsePositives, Self::NoiseEdges]
            .into_iter()
            .find(|m| m.as_str() == name)
    }

    fn value(self, o: &TrialOutcome) -> f64 {
        match self {
            GridMetric::ReconstructionAccuracy => o.reconstruction_accuracy,
            GridMetric::Mse => o.mse,
            GridMetric::FalsePositives => o.false_positives as f64,
            GridMetric::NoiseEdges => o.noise_edges as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub nodes: Vec<usize>,
    pub edge_multipliers: Vec<usize>,
    pub sample_multipliers: Vec<usize>,
    pub fractions: Vec<f64>,
    pub noise_fractions: Vec<f64>,
    pub repeats: usize,
    pub base_seed: u64,
    pub metrics: Vec<GridMetric>,
}

impl GridSpec {
    pub fn trial_count(&self) -> usize {
        self.nodes.len() * self.edge_multipliers.len() * self.sample_multipliers.len() * self.noise_fractions.len() * self.repeats
    }

    /// Report rows the grid will produce: one per trial, scenario and metric.
    pub fn row_count(&self) -> usize {
        self.trial_count() * (1 + self.fractions.len()) * self.metrics.len()
    }

    pub fn validate(&self) -> GatewayResult<()> {
        let empty = |what: &str| GatewayError::Usage(format!("grid needs at least one {what}"));
        if self.nodes.is_empty() {
            return Err(empty("node count"));
        }
        if self.edge_multipliers.is_empty() {
            return Err(empty("edge multiplier"));
        }
        if self.sample_multipliers.is_empty() {
            return Err(empty("sample multiplier"));
        }
        if self.noise_fractions.is_empty() {
            return Err(empty("noise fraction"));
        }
        if self.metrics.is_empty() {
            return Err(empty("metric"));
        }
        if self.repeats == 0 {
            return Err(GatewayError::Usage("repeats must be positive".into()));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(GatewayError::Usage(format!("injected fraction {f} outside (0, 1]")));
        }
        Ok(())
    }
}

/// One line of the report CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    #[serde(rename = "|V|")]
    pub nodes: usize,
    pub e: usize,
    pub s: usize,
    #[serde(rename = "fraction-injected")]
    pub fraction_injected: f64,
    pub seed: u64,
    #[serde(rename = "metric-name")]
    pub metric_name: String,
    pub value: f64,
}

fn scenario_label(base: &str, noise: f64) -> String {
    if noise > 0.0 {
        format!("{base}+noise{noise}")
    } else {
        base.to_string()
    }
}

/// Splits a scenario label into its method and noise fraction.
pub fn parse_scenario(label: &str) -> (String, f64) {
    match label.split_once("+noise") {
        Some((base, noise)) => (base.to_string(), noise.parse().unwrap_or(0.0)),
        None => (label.to_string(), 0.0),
    }
}

pub fn run_grid(grid: &GridSpec, settings: &TrialSettings, mut progress: impl FnMut(usize, usize)) -> GatewayResult<Vec<ReportRow>> {
    grid.validate()?;
    let total = grid.trial_count();
    let mut rows = Vec::with_capacity(grid.row_count());
    let mut done = 0;
    for &nodes in &grid.nodes {
        for &e in &grid.edge_multipliers {
            for &s in &grid.sample_multipliers {
                for &noise in &grid.noise_fractions {
                    for r in 0..grid.repeats {
                        let seed = grid.base_seed + r as u64;
                        let spec = SyntheticSpec {
                            noise_fraction: noise,
                            ..SyntheticSpec::new(nodes, e, s, seed)
                        };
                        let trial = run_trial(&spec, &grid.fractions, settings)?;
                        let mut push = |scenario: &str, fraction: f64, o: &TrialOutcome| {
                            for &m in &grid.metrics {
                                rows.push(ReportRow {
                                    scenario: scenario_label(scenario, noise),
                                    nodes,
                                    e,
                                    s,
                                    fraction_injected: fraction,
                                    seed,
                                    metric_name: m.as_str().to_string(),
                                    value: m.value(o),
                                });
                            }
                        };
                        push(trial.baseline.scenario.as_str(), 0.0, &trial.baseline);
                        for inj in &trial.injected {
                            push(inj.outcome.scenario.as_str(), inj.fraction, &inj.outcome);
                        }
                        done += 1;
                        progress(done, total);
                    }
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> GatewayResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(contestable::Error::Csv)?;
    for row in rows {
        w.serialize(row).map_err(contestable::Error::Csv)?;
    }
    w.flush().map_err(|e| GatewayError::file(path, e))
}

pub fn read_report(path: &Path) -> GatewayResult<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(contestable::Error::Csv)?;
    r.deserialize()
        .collect::<Result<Vec<ReportRow>, _>>()
        .map_err(|e| contestable::Error::Csv(e).into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Moments {
    fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self {
            mean,
            std,
            n: values.len(),
        }
    }
}

/// Injected versus baseline within one cell of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    #[serde(rename = "|V|")]
    pub nodes: usize,
    pub e: usize,
    pub s: usize,
    pub noise: f64,
    pub fraction_injected: f64,
    pub metric: String,
    pub baseline: Moments,
    pub injected: Moments,
    /// Proportional-gain reference for reconstruction accuracy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rebased_baseline: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ttest: Option<TTestResult>,
}

/// Clean versus noisy data for one method within one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseComparison {
    #[serde(rename = "|V|")]
    pub nodes: usize,
    pub e: usize,
    pub s: usize,
    pub scenario: String,
    pub fraction_injected: f64,
    pub noise: f64,
    pub metric: String,
    pub clean: Moments,
    pub noisy: Moments,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ttest: Option<TTestResult>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub rows: usize,
    pub comparisons: Vec<Comparison>,
    pub noise_comparisons: Vec<NoiseComparison>,
}

type CellKey = (usize, usize, usize, String, u64, String, u64);

fn key_f(x: f64) -> u64 {
    x.to_bits()
}

fn ttest_if_possible(a: &[f64], b: &[f64]) -> Option<TTestResult> {
    two_sample_ttest(a, b).ok()
}

/// Groups report rows and compares injected against baseline, and noisy
/// against clean, with two-sample t-tests.
pub fn summarize(rows: &[ReportRow]) -> GridSummary {
    // (|V|, e, s, method, noise bits, metric, fraction bits) → values in seed order
    let mut cells: BTreeMap<CellKey, Vec<(u64, f64)>> = BTreeMap::new();
    for r in rows {
        let (method, noise) = parse_scenario(&r.scenario);
        cells
            .entry((
                r.nodes,
                r.e,
                r.s,
                method,
                key_f(noise),
                r.metric_name.clone(),
                key_f(r.fraction_injected),
            ))
            .or_default()
            .push((r.seed, r.value));
    }
    let values = |k: &CellKey| -> Vec<f64> {
        let mut v = cells[k].clone();
        v.sort_by_key(|p| p.0);
        v.into_iter().map(|p| p.1).collect()
    };

    let mut comparisons = Vec::new();
    let mut noise_comparisons = Vec::new();
    for key in cells.keys() {
        let (nodes, e, s, method, noise, metric, fraction) = key;
        if method == "injected" {
            let base_key = (*nodes, *e, *s, "castle+".to_string(), *noise, metric.clone(), key_f(0.0));
            if cells.contains_key(&base_key) {
                let (b, i) = (values(&base_key), values(key));
                let frac = f64::from_bits(*fraction);
                let baseline = Moments::of(&b);
                comparisons.push(Comparison {
                    nodes: *nodes,
                    e: *e,
                    s: *s,
                    noise: f64::from_bits(*noise),
                    fraction_injected: frac,
                    metric: metric.clone(),
                    rebased_baseline: (metric == "reconstruction-accuracy").then(|| rebased(baseline.mean, frac)),
                    baseline,
                    injected: Moments::of(&i),
                    ttest: ttest_if_possible(&i, &b),
                });
            }
        }
        if f64::from_bits(*noise) > 0.0 {
            let clean_key = (*nodes, *e, *s, method.clone(), key_f(0.0), metric.clone(), *fraction);
            if cells.contains_key(&clean_key) {
                let (c, n) = (values(&clean_key), values(key));
                noise_comparisons.push(NoiseComparison {
                    nodes: *nodes,
                    e: *e,
                    s: *s,
                    scenario: method.clone(),
                    fraction_injected: f64::from_bits(*fraction),
                    noise: f64::from_bits(*noise),
                    metric: metric.clone(),
                    clean: Moments::of(&c),
                    noisy: Moments::of(&n),
                    ttest: ttest_if_possible(&n, &c),
                });
            }
        }
    }
    GridSummary {
        rows: rows.len(),
        comparisons,
        noise_comparisons,
    }
}
