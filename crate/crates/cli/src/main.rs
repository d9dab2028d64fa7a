mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use aggclass::aggregate::TaskKind;
use aggclass::eval::BagRule;
use aggclass::train::Method;
use aggclass::verify::Suite;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{DataSource, ExperimentConfig, FitOn, ModelKind};

/// A usage or configuration problem; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "aggclass", version, about = "Train instance classifiers from aggregate labels")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON); flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, global = true)]
    dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    task: Option<TaskArg>,
    /// Group size.
    #[arg(short, long, global = true)]
    m: Option<usize>,
    /// Number of classes.
    #[arg(short, long, global = true)]
    k: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Pairwise,
    Triplet,
    Llp,
    Mil,
    Rank,
    OrdinalTriplet,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Pairwise => TaskKind::Pairwise,
            TaskArg::Triplet => TaskKind::Triplet,
            TaskArg::Llp => TaskKind::Llp,
            TaskArg::Mil => TaskKind::Mil,
            TaskArg::Rank => TaskKind::Rank,
            TaskArg::OrdinalTriplet => TaskKind::OrdinalTriplet,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Uum,
    Loglik,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Linear,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum BagRuleArg {
    Probability,
    AnyPositive,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a labeled Gaussian mixture into train/val/test CSVs.
    Synth {
        /// Total number of points.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Group labeled CSVs into aggregate observations.
    Aggregate {
        /// Labeled CSV to group instead of the train split.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Where to write the training observations.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        n_groups: Option<usize>,
        #[arg(long)]
        positive_class: Option<String>,
    },
    /// Fit a classifier to aggregate observations.
    Train(TrainArgs),
    /// Score a trained model on labeled test data.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Labeled data the class permutation is fitted on.
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long, value_enum)]
        fit_on: Option<FitOn>,
        /// Test bags for group accuracy.
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long, value_enum)]
        bag_rule: Option<BagRuleArg>,
    },
    /// Run numerical self-checks.
    Verify {
        /// One of oracle, unbiased, em, grad, all.
        suite: String,
    },
    /// Time posterior computations and a training epoch.
    Bench {
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    observations: Option<PathBuf>,
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long, overrides_with = "no_warmup")]
    warmup: bool,
    #[arg(long)]
    no_warmup: bool,
    #[arg(long, overrides_with = "no_confidence")]
    confidence: bool,
    #[arg(long)]
    no_confidence: bool,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
}

fn flag(on: bool, off: bool) -> Option<bool> {
    match (on, off) {
        (true, _) => Some(true),
        (_, true) => Some(false),
        _ => None,
    }
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| UsageError(format!("{e:#}")))?,
        None => ExperimentConfig::default(),
    };
    if let Some(t) = common.task {
        cfg.task = t.into();
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if common.m.is_some() {
        cfg.m = common.m;
    }
    if common.k.is_some() {
        cfg.k = common.k;
    }
    if common.dir.is_some() {
        cfg.output_dir = common.dir.clone();
    }
    Ok(cfg)
}

fn apply_train_args(cfg: &mut ExperimentConfig, a: &TrainArgs) {
    let t = &mut cfg.train;
    if let Some(m) = a.method {
        t.method = Some(match m {
            MethodArg::Uum => Method::Uum,
            MethodArg::Loglik => Method::LogLikelihood,
        });
    }
    if let Some(m) = a.model {
        cfg.model.kind = match m {
            ModelArg::Linear => ModelKind::Linear,
            ModelArg::Mlp => ModelKind::Mlp,
        };
    }
    if let Some(h) = a.hidden {
        cfg.model.hidden = h;
    }
    let t = &mut cfg.train;
    t.epochs = a.epochs.or(t.epochs);
    t.warmup_epochs = a.warmup_epochs.or(t.warmup_epochs);
    t.warmup = flag(a.warmup, a.no_warmup).or(t.warmup);
    t.use_confidence = flag(a.confidence, a.no_confidence).or(t.use_confidence);
    t.batch_size = a.batch_size.or(t.batch_size);
    t.lr = a.lr.or(t.lr);
    t.val_fraction = a.val_fraction.or(t.val_fraction);
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Exit status for a failed command.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<aggclass::Error>() {
        Some(
            aggclass::Error::InvalidConfig(_)
            | aggclass::Error::InvalidTask(_)
            | aggclass::Error::UnknownTask(_)
            | aggclass::Error::InvalidSpec(_),
        ) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Synth { n } => {
            if let (Some(n), DataSource::Synthetic { n: target, .. }) = (n, &mut cfg.data) {
                *target = n;
            }
            if let DataSource::Synthetic { n: 0, .. } = cfg.data {
                return Err(UsageError("empty dataset requested (n = 0)".into()).into());
            }
            commands::synth(&cfg)?;
        }
        Command::Aggregate { input, output, n_groups, positive_class } => {
            if let Some(n) = n_groups {
                cfg.n_groups = n;
            }
            if positive_class.is_some() {
                cfg.positive_class = positive_class;
            }
            commands::aggregate(&cfg, input.as_deref(), output.as_deref())?;
        }
        Command::Train(args) => {
            apply_train_args(&mut cfg, &args);
            commands::train(&cfg, args.observations.as_deref(), args.validation.as_deref())?;
        }
        Command::Eval { checkpoint, test, fit, fit_on, groups, bag_rule } => {
            if let Some(f) = fit_on {
                cfg.fit_permutation_on = f;
            }
            if let Some(r) = bag_rule {
                cfg.bag_rule = match r {
                    BagRuleArg::Probability => BagRule::Probability,
                    BagRuleArg::AnyPositive => BagRule::AnyPositive,
                };
            }
            let args = commands::EvalArgs {
                checkpoint: checkpoint.as_deref(),
                test: test.as_deref(),
                fit: fit.as_deref(),
                groups: groups.as_deref(),
            };
            print_json(&commands::eval(&cfg, args)?)?;
        }
        Command::Verify { suite } => {
            let suite: Suite = suite.parse().map_err(|_| {
                UsageError(format!("unknown suite {suite:?}, expected one of {}", Suite::NAMES.join(", ")))
            })?;
            let reports = commands::verify(suite, cfg.seed)?;
            print_json(&reports)?;
            if !reports.iter().all(|r| r.passed) {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Bench { iterations } => {
            print_json(&commands::bench(&cfg, iterations.max(1))?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
