use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use contestable::injector::PatienceUnit;
use contestable::jointnet::Task;

use crate::commands;
use crate::config::RunConfig;
use crate::error::{exit, GatewayResult};
use crate::grid::GridMetric;

#[derive(Debug, Parser)]
#[command(
    name = "contestnn",
    version,
    about = "Train, inject, extract and contest causal graphs in joint networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network without structural constraints.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
    },
    /// Train a network whose input layer is masked by a causal graph.
    Inject {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Graph JSON file, or `complete` for the unconstrained graph.
        #[arg(long)]
        graph: String,
        /// Start from this checkpoint instead of a fresh network.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value = "runs/inject")]
        out: PathBuf,
    },
    /// Extract a causal graph from a checkpoint.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        /// Fail on cycles instead of dropping their weakest edges.
        #[arg(long)]
        no_repair: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs/extract")]
        out: PathBuf,
    },
    /// Cross-validated threshold optimisation.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Explicit ascending thresholds; defaults to a log-spaced grid.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        grid_points: Option<usize>,
        #[arg(long)]
        tie_tolerance: Option<f64>,
        /// Standard errors of the best row added to the tie band.
        #[arg(long)]
        tie_standard_errors: Option<f64>,
        #[arg(long)]
        no_repair: bool,
        #[arg(long, default_value = "runs/sweep")]
        out: PathBuf,
    },
    /// Generate a synthetic dataset bundle.
    Synth {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        edge_mult: usize,
        #[arg(long)]
        sample_mult: usize,
        #[arg(long, default_value_t = 0.0)]
        noise_fraction: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs/synth")]
        out: PathBuf,
    },
    /// Run the synthetic experiment grid.
    Grid {
        #[arg(long, value_delimiter = ',', required = true)]
        nodes: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        edge_mult: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        sample_mult: Vec<usize>,
        /// Fractions of true edges to inject.
        #[arg(long, value_delimiter = ',', default_value = "0.2")]
        inject: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        noise: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, value_delimiter = ',', value_enum, default_values_t = [GridMetric::ReconstructionAccuracy, GridMetric::Mse])]
        metrics: Vec<GridMetric>,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value = "runs/grid")]
        out: PathBuf,
    },
    /// Score a checkpoint on data, or summarise a grid report.
    Eval {
        #[arg(long, requires = "data", conflicts_with = "report")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "Y")]
        target: String,
        #[arg(long, value_enum, default_value_t = TaskArg::Regression)]
        task: TaskArg,
        #[arg(long)]
        categories: Option<PathBuf>,
        #[arg(long)]
        no_standardize: bool,
        /// Grid report CSV to summarise.
        #[arg(long, required_unless_present = "checkpoint")]
        report: Option<PathBuf>,
        #[arg(long, default_value = "runs/eval")]
        out: PathBuf,
    },
    /// Replay scripted revisions against a checkpoint.
    Contest {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON array of revisions.
        #[arg(long)]
        revisions: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value = "runs/contest")]
        out: PathBuf,
    },
    /// Serve contest sessions over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory for accepted checkpoints and session histories.
        #[arg(long, default_value = "runs/sessions")]
        sessions_dir: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Inject { .. } => "inject",
            Command::Extract { .. } => "extract",
            Command::Sweep { .. } => "sweep",
            Command::Synth { .. } => "synth",
            Command::Grid { .. } => "grid",
            Command::Eval { .. } => "eval",
            Command::Contest { .. } => "contest",
            Command::Serve { .. } => "serve",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Regression,
    Classification,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Regression => Task::Regression,
            TaskArg::Classification => Task::Classification,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PatienceUnitArg {
    Epoch,
    Step,
}

#[derive(Clone, Debug, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "Y")]
    pub target: String,
    #[arg(long, value_enum, default_value_t = TaskArg::Regression)]
    pub task: TaskArg,
    /// JSON map from column to label → code.
    #[arg(long)]
    pub categories: Option<PathBuf>,
    /// Use the values as they are instead of standardizing every column.
    #[arg(long)]
    pub no_standardize: bool,
}

/// Training flags; each overrides the config file, which overrides defaults.
#[derive(Clone, Debug, Default, Args)]
pub struct TrainArgs {
    /// TOML or JSON configuration (a run manifest also works).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_enum)]
    pub patience_unit: Option<PatienceUnitArg>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub input_scale: Option<f64>,
}

impl TrainArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> GatewayResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let t = &mut cfg.train;
        if let Some(v) = self.seed {
            t.seed = v;
        } else {
            log::info!("seed = {} (not given on the command line)", t.seed);
        }
        macro_rules! set {
            ($($flag:ident => $slot:expr),* $(,)?) => {$(if let Some(v) = self.$flag { $slot = v; })*};
        }
        set!(
            max_steps => t.max_steps,
            patience => t.patience,
            batch_size => t.batch_size,
            learning_rate => t.learning_rate,
            eta => t.loss.eta,
            beta => t.loss.beta,
            lambda1 => t.loss.lambda1,
            validation_fraction => t.validation_fraction,
            input_scale => cfg.network.input_scale,
        );
        if let Some(u) = self.patience_unit {
            cfg.train.patience_unit = match u {
                PatienceUnitArg::Epoch => PatienceUnit::Epoch,
                PatienceUnitArg::Step => PatienceUnit::Step,
            };
        }
        if let Some(h) = &self.hidden {
            cfg.network.hidden = Some(h.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `argv`, runs the command and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::dispatch(cli.command, argv) {
        Ok(()) => exit::OK,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_defaults() {
        let cli = Cli::try_parse_from([
            "contestnn",
            "train",
            "--data",
            "d.csv",
            "--seed",
            "9",
            "--max-steps",
            "12",
            "--patience",
            "3",
            "--hidden",
            "4,2",
        ])
        .unwrap();
        let Command::Train { train, .. } = cli.command else { panic!() };
        let cfg = train.resolve().unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.max_steps, 12);
        assert_eq!(cfg.network.hidden, Some(vec![4, 2]));
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(run(["contestnn", "train", "--bogus"]), exit::USAGE);
        assert_eq!(run(["contestnn", "frobnicate"]), exit::USAGE);
    }
}
