use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use contestable::data::{generate_synthetic, read_category_map, read_csv, Dataset, SyntheticSpec};
use contestable::discovery::{annotate, extract_dag_named, run_contest, threshold_sweep, ContestSession, Revision, ScriptedReviser};
use contestable::eval::{evaluate_fold, MetricName};
use contestable::experiment::TrialSettings;
use contestable::graphs::{default_names, Knowledge, PartialGraph};
use contestable::injector::{inject_mask, EpochRecord, TrainResult};
use contestable::jointnet::{JointNetwork, Task};

use crate::cli::{Command, DataArgs, TrainArgs};
use crate::config::RunConfig;
use crate::error::{GatewayError, GatewayResult};
use crate::grid::{read_report, run_grid, summarize, write_report, GridSpec};
use crate::manifest::{write_json, DataSource, RunManifest};
use crate::server;

pub fn dispatch(command: Command, argv: Vec<String>) -> GatewayResult<()> {
    let name = command.name();
    match command {
        Command::Train { data, train, out } => cmd_train(name, argv, &data, &train, None, None, &out),
        Command::Inject {
            data,
            train,
            graph,
            init,
            out,
        } => cmd_train(name, argv, &data, &train, Some(&graph), init.as_deref(), &out),
        Command::Extract {
            checkpoint,
            tau,
            no_repair,
            config,
            out,
        } => cmd_extract(argv, &checkpoint, tau, no_repair, config.as_deref(), &out),
        Command::Sweep {
            data,
            train,
            grid,
            folds,
            grid_points,
            tie_tolerance,
            tie_standard_errors,
            no_repair,
            out,
        } => {
            let mut cfg = train.resolve()?;
            set_opt(&mut cfg.sweep.folds, folds);
            set_opt(&mut cfg.sweep.grid_points, grid_points);
            set_opt(&mut cfg.sweep.tie_tolerance, tie_tolerance);
            set_opt(&mut cfg.sweep.tie_standard_errors, tie_standard_errors);
            if no_repair {
                cfg.sweep.repair_cycles = false;
            }
            cmd_sweep(argv, &data, cfg, grid, &out)
        }
        Command::Synth {
            nodes,
            edge_mult,
            sample_mult,
            noise_fraction,
            seed,
            out,
        } => {
            let seed = seed.unwrap_or_else(|| {
                log::info!("seed = 0 (not given on the command line)");
                0
            });
            let spec = SyntheticSpec {
                noise_fraction,
                ..SyntheticSpec::new(nodes, edge_mult, sample_mult, seed)
            };
            cmd_synth(argv, spec, &out)
        }
        Command::Grid {
            nodes,
            edge_mult,
            sample_mult,
            inject,
            noise,
            repeats,
            metrics,
            test_fraction,
            train,
            out,
        } => {
            let cfg = train.resolve()?;
            let grid = GridSpec {
                nodes,
                edge_multipliers: edge_mult,
                sample_multipliers: sample_mult,
                fractions: inject,
                noise_fractions: noise,
                repeats,
                base_seed: cfg.train.seed,
                metrics,
            };
            cmd_grid(argv, grid, cfg, test_fraction, &out)
        }
        Command::Eval {
            checkpoint,
            data,
            target,
            task,
            categories,
            no_standardize,
            report,
            out,
        } => match (checkpoint, report) {
            (Some(checkpoint), _) => {
                let data = DataArgs {
                    data: data.ok_or_else(|| GatewayError::Usage("--checkpoint needs --data".into()))?,
                    target,
                    task,
                    categories,
                    no_standardize,
                };
                cmd_eval_checkpoint(argv, &checkpoint, &data, &out)
            }
            (None, Some(report)) => cmd_eval_report(argv, &report, &out),
            (None, None) => Err(GatewayError::Usage("eval needs --checkpoint or --report".into())),
        },
        Command::Contest {
            data,
            train,
            checkpoint,
            revisions,
            tau,
            out,
        } => cmd_contest(argv, &data, &train, &checkpoint, &revisions, tau, &out),
        Command::Serve { addr, sessions_dir, train } => {
            let cfg = train.resolve()?;
            std::fs::create_dir_all(&sessions_dir).map_err(|e| GatewayError::file(&sessions_dir, e))?;
            let mut manifest = RunManifest::start("serve", argv, &cfg);
            manifest.extra.insert("addr".into(), serde_json::json!(addr.to_string()));
            manifest.finish(&sessions_dir)?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| GatewayError::Internal(e.to_string()))?;
            runtime.block_on(server::serve(addr, server::AppState::new(cfg, sessions_dir)))
        }
    }
}

fn set_opt<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn ensure_dir(dir: &Path) -> GatewayResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| GatewayError::file(dir, e))
}

/// Reads, cleans and (unless disabled) standardizes a CSV dataset.
pub fn load_dataset(args: &DataArgs) -> GatewayResult<(Dataset, DataSource)> {
    let categories = args.categories.as_ref().map(read_category_map).transpose()?;
    let task: Task = args.task.into();
    let load = read_csv(&args.data, &args.target, task, categories.as_ref())?;
    let data = if args.no_standardize {
        load.dataset
    } else {
        load.dataset.standardize()?
    };
    log::info!("loaded {} rows x {} columns from {}", data.rows(), data.cols(), args.data.display());
    let source = DataSource {
        path: args.data.clone(),
        target: args.target.clone(),
        task,
        categories: args.categories.clone(),
        standardized: !args.no_standardize,
        rows: data.rows(),
        columns: data.cols(),
        dropped_rows: load.dropped_rows,
    };
    Ok((data, source))
}

fn write_trace(path: &Path, trace: &[EpochRecord]) -> GatewayResult<()> {
    let mut f = std::fs::File::create(path).map_err(|e| GatewayError::file(path, e))?;
    for rec in trace {
        let line = serde_json::to_string(rec).map_err(contestable::Error::Json)?;
        writeln!(f, "{line}").map_err(|e| GatewayError::file(path, e))?;
    }
    Ok(())
}

fn log_progress(rec: &EpochRecord) {
    log::debug!(
        "step {}: train {:.6} (pred {:.6}, recon {:.6}, h {:.3e}), validation {:.6}",
        rec.step,
        rec.train.total,
        rec.train.prediction,
        rec.train.reconstruction,
        rec.train.acyclicity,
        rec.validation_total
    );
}

fn resolve_knowledge(graph: Option<&str>, data: &Dataset) -> GatewayResult<Knowledge> {
    match graph {
        None | Some("complete") => Ok(Knowledge::Partial(PartialGraph::complete(default_names(data.cols())))),
        Some(path) => {
            let k = Knowledge::read(path)?;
            if k.node_count() != data.cols() {
                return Err(contestable::Error::Config(format!(
                    "graph has {} nodes but the data has {} columns",
                    k.node_count(),
                    data.cols()
                ))
                .into());
            }
            Ok(k)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    name: &str,
    argv: Vec<String>,
    data_args: &DataArgs,
    train: &TrainArgs,
    graph: Option<&str>,
    init: Option<&Path>,
    out: &Path,
) -> GatewayResult<()> {
    let cfg = train.resolve()?;
    let (data, source) = load_dataset(data_args)?;
    let knowledge = resolve_knowledge(graph, &data)?;
    let net = match init {
        Some(path) => JointNetwork::<f64>::load_checkpoint(path)?,
        None => JointNetwork::new(&cfg.network.spec(data.features(), data.task(), cfg.train.seed))?,
    };
    let result: TrainResult<f64> = inject_mask(&data, net, &cfg.train, knowledge.mask(), log_progress)?;
    log::info!(
        "{name}: {} steps, best validation loss {:.6}",
        result.steps_taken,
        result.best_validation_loss
    );

    ensure_dir(out)?;
    let mut manifest = RunManifest::start(name, argv, &cfg);
    manifest.data = Some(source);
    let checkpoint = out.join("checkpoint.json");
    result.network.save_checkpoint(&checkpoint)?;
    manifest.artifact("checkpoint", &checkpoint);
    let trace = out.join("trace.jsonl");
    write_trace(&trace, &result.trace)?;
    manifest.artifact("trace", &trace);
    let w = result.network.compute_adjacency();
    let g = extract_dag_named(&w, &cfg.extraction, data.names().to_vec())?;
    let graph_path = out.join("graph.json");
    write_json(&graph_path, &annotate(&g, &w))?;
    manifest.artifact("graph", &graph_path);
    if graph.is_some() {
        manifest.extra.insert(
            "injected_graph".into(),
            serde_json::to_value(knowledge.to_json()).map_err(contestable::Error::Json)?,
        );
    }
    manifest.extra.insert("steps_taken".into(), result.steps_taken.into());
    manifest
        .extra
        .insert("best_validation_loss".into(), result.best_validation_loss.into());
    manifest.finish(out)?;
    Ok(())
}

fn cmd_extract(
    argv: Vec<String>,
    checkpoint: &Path,
    tau: Option<f64>,
    no_repair: bool,
    config: Option<&Path>,
    out: &Path,
) -> GatewayResult<()> {
    let mut cfg = match config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    set_opt(&mut cfg.extraction.tau, tau);
    if no_repair {
        cfg.extraction.repair_cycles = false;
    }
    cfg.validate()?;
    let net = JointNetwork::<f64>::load_checkpoint(checkpoint)?;
    let w = net.compute_adjacency();
    let g = extract_dag_named(&w, &cfg.extraction, default_names(net.node_count()))?;
    log::info!("extracted {} edges at tau = {}", g.edge_count(), cfg.extraction.tau);
    ensure_dir(out)?;
    let graph_path = out.join("graph.json");
    write_json(&graph_path, &annotate(&g, &w))?;
    let mut manifest = RunManifest::start("extract", argv, &cfg);
    manifest.artifact("checkpoint", checkpoint);
    manifest.artifact("graph", &graph_path);
    manifest.finish(out)?;
    Ok(())
}

fn cmd_sweep(argv: Vec<String>, data_args: &DataArgs, cfg: RunConfig, grid: Option<Vec<f64>>, out: &Path) -> GatewayResult<()> {
    let (data, source) = load_dataset(data_args)?;
    let spec = cfg.network.spec(data.features(), data.task(), cfg.train.seed);
    let report = threshold_sweep(&data, &spec, &cfg.train, grid.as_deref(), &cfg.sweep)?;
    for row in &report.rows {
        log::info!(
            "tau {:.5}: {:.1} edges, {} {:.5} ({:.5})",
            row.tau,
            row.mean_edges,
            report.metric.as_str(),
            row.metric.mean,
            row.metric.std
        );
    }
    log::info!(
        "selected tau = {} ({} edges)",
        report.selected_tau,
        report.selected_graph.edges.len()
    );
    ensure_dir(out)?;
    let path = out.join("sweep.json");
    write_json(&path, &report)?;
    let graph_path = out.join("selected_graph.json");
    write_json(&graph_path, &report.selected_graph)?;
    let mut manifest = RunManifest::start("sweep", argv, &cfg);
    manifest.data = Some(source);
    manifest.artifact("sweep", &path);
    manifest.artifact("selected_graph", &graph_path);
    manifest.finish(out)?;
    Ok(())
}

fn cmd_synth(argv: Vec<String>, spec: SyntheticSpec, out: &Path) -> GatewayResult<()> {
    let syn = generate_synthetic(&spec)?;
    ensure_dir(out)?;
    let data_path = out.join("data.csv");
    syn.data.write_csv(&data_path)?;
    let graph_path = out.join("true_graph.json");
    Knowledge::Full(syn.graph.clone()).write(&graph_path)?;
    let spec_path = out.join("spec.json");
    write_json(&spec_path, &spec)?;
    log::info!(
        "synthetic bundle: {} rows, {} columns, {} true edges",
        syn.data.rows(),
        syn.data.cols(),
        syn.graph.edge_count()
    );
    let cfg = RunConfig {
        train: contestable::injector::TrainConfig {
            seed: spec.seed,
            ..Default::default()
        },
        ..RunConfig::default()
    };
    let mut manifest = RunManifest::start("synth", argv, &cfg);
    manifest
        .extra
        .insert("spec".into(), serde_json::to_value(spec).map_err(contestable::Error::Json)?);
    manifest.artifact("data", &data_path);
    manifest.artifact("true_graph", &graph_path);
    manifest.artifact("spec", &spec_path);
    manifest.finish(out)?;
    Ok(())
}

fn cmd_grid(argv: Vec<String>, grid: GridSpec, cfg: RunConfig, test_fraction: f64, out: &Path) -> GatewayResult<()> {
    let settings = TrialSettings {
        network: cfg.network.clone(),
        train: cfg.train.clone(),
        test_fraction,
        repair_cycles: cfg.extraction.repair_cycles,
    };
    let rows = run_grid(&grid, &settings, |done, total| log::info!("grid trial {done}/{total}"))?;
    ensure_dir(out)?;
    let report_path = out.join("report.csv");
    write_report(&report_path, &rows)?;
    let summary_path = out.join("summary.json");
    write_json(&summary_path, &summarize(&rows))?;
    let mut manifest = RunManifest::start("grid", argv, &cfg);
    manifest.extra.insert("test_fraction".into(), test_fraction.into());
    manifest.artifact("report", &report_path);
    manifest.artifact("summary", &summary_path);
    manifest.finish(out)?;
    Ok(())
}

#[derive(serde::Serialize)]
struct EvalOutput {
    metric: MetricName,
    value: f64,
    rows: usize,
}

fn cmd_eval_checkpoint(argv: Vec<String>, checkpoint: &Path, data_args: &DataArgs, out: &Path) -> GatewayResult<()> {
    let net = JointNetwork::<f64>::load_checkpoint(checkpoint)?;
    let (data, source) = load_dataset(data_args)?;
    let value = evaluate_fold(&net, &data)?;
    let output = EvalOutput {
        metric: MetricName::for_task(net.task()),
        value,
        rows: data.rows(),
    };
    log::info!("{} = {value:.6} on {} rows", output.metric.as_str(), output.rows);
    ensure_dir(out)?;
    let path = out.join("eval.json");
    write_json(&path, &output)?;
    let mut manifest = RunManifest::start("eval", argv, &RunConfig::default());
    manifest.data = Some(source);
    manifest.artifact("checkpoint", checkpoint);
    manifest.artifact("eval", &path);
    manifest.finish(out)?;
    Ok(())
}

fn cmd_eval_report(argv: Vec<String>, report: &Path, out: &Path) -> GatewayResult<()> {
    let rows = read_report(report)?;
    let summary = summarize(&rows);
    for c in &summary.comparisons {
        log::info!(
            "|V|={} e={} s={} noise={} inject={}: {} baseline {:.4} injected {:.4}",
            c.nodes,
            c.e,
            c.s,
            c.noise,
            c.fraction_injected,
            c.metric,
            c.baseline.mean,
            c.injected.mean
        );
    }
    ensure_dir(out)?;
    let path = out.join("summary.json");
    write_json(&path, &summary)?;
    let mut manifest = RunManifest::start("eval", argv, &RunConfig::default());
    manifest.artifact("report", report);
    manifest.artifact("summary", &path);
    manifest.finish(out)?;
    Ok(())
}

fn cmd_contest(
    argv: Vec<String>,
    data_args: &DataArgs,
    train: &TrainArgs,
    checkpoint: &Path,
    revisions: &Path,
    tau: Option<f64>,
    out: &Path,
) -> GatewayResult<()> {
    let mut cfg = train.resolve()?;
    set_opt(&mut cfg.extraction.tau, tau);
    let (data, source) = load_dataset(data_args)?;
    let net = JointNetwork::<f64>::load_checkpoint(checkpoint)?;
    let text = std::fs::read_to_string(revisions).map_err(|e| GatewayError::file(revisions, e))?;
    let script: Vec<Revision> = serde_json::from_str(&text).map_err(contestable::Error::Json)?;
    let mut session = ContestSession::new("cli", Arc::new(data), net, cfg.train.clone(), cfg.extraction)?;
    let outcome = run_contest(&mut session, &mut ScriptedReviser::new(script));

    ensure_dir(out)?;
    let history_path = out.join("history.json");
    write_json(&history_path, &session.history())?;
    let mut manifest = RunManifest::start("contest", argv, &cfg);
    manifest.data = Some(source);
    manifest.artifact("initial_checkpoint", checkpoint);
    manifest.artifact("revisions", revisions);
    manifest.artifact("history", &history_path);
    if outcome.is_ok() {
        let graph_path = out.join("graph.json");
        write_json(&graph_path, &session.view().graph)?;
        let ckpt: PathBuf = out.join("checkpoint.json");
        session.network().save_checkpoint(&ckpt)?;
        manifest.artifact("graph", &graph_path);
        manifest.artifact("checkpoint", &ckpt);
        log::info!(
            "accepted graph with {} edges after {} revisions",
            session.graph().edge_count(),
            session.history().len() - 1
        );
    }
    manifest.extra.insert(
        "status".into(),
        serde_json::to_value(session.status()).map_err(contestable::Error::Json)?,
    );
    manifest.finish(out)?;
    outcome.map_err(Into::into)
}
