use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use kgrec_cli::{
    cmd_ablate, cmd_build_graph, cmd_evaluate, cmd_recommend, cmd_train, CliError, RunConfig,
};

/// Knowledge-graph embeddings for top-N product recommendation.
#[derive(Parser, Debug)]
#[command(name = "kgrec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split interactions, build the knowledge graph and write it with the held-out pairs.
    BuildGraph,
    /// Train embeddings on a graph file.
    Train,
    /// Print top-N items per user.
    Recommend {
        /// Only these users (repeatable); all users when omitted.
        #[arg(long = "user")]
        users: Vec<String>,
    },
    /// Score a trained model on the held-out pairs.
    Evaluate,
    /// Train and evaluate one model per relation subset.
    Ablate,
    /// Print the resolved configuration as `key = value` lines.
    Config,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    /// Entity normalization and type-constrained sampling on.
    Default,
    /// Uniform corruption over all entities, no normalization.
    LiteralPaper,
}

#[derive(Args, Debug)]
struct Shared {
    /// Flat `key = value` config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Embedding dimension [default: 300].
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Learning rate [default: 0.01].
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// Hinge margin [default: 1.0].
    #[arg(long, global = true)]
    margin: Option<f64>,
    /// Negatives per side for each triplet [default: 5].
    #[arg(long, global = true)]
    negatives: Option<usize>,
    /// Training epochs (required for train and ablate).
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Recommendation and evaluation cutoff [default: 10].
    #[arg(long, global = true)]
    top_n: Option<usize>,
    /// Worker threads; above 1 training is not bit-reproducible [default: 1].
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Relation subset for build-graph, e.g. `buy+category` or `all`.
    #[arg(long, global = true)]
    relations: Option<String>,
    /// Comma-separated relation subsets for ablate.
    #[arg(long, global = true)]
    ablation: Option<String>,
    #[arg(long, global = true)]
    interactions: Option<PathBuf>,
    #[arg(long, global = true)]
    metadata: Option<PathBuf>,
    #[arg(long, global = true)]
    graph: Option<PathBuf>,
    #[arg(long, global = true)]
    test_pairs: Option<PathBuf>,
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[arg(long, global = true)]
    loss_csv: Option<PathBuf>,
    /// Plain-text metrics table.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Tab-separated metrics record.
    #[arg(long, global = true)]
    record: Option<PathBuf>,
    /// Recommendations file; stdout when omitted.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

impl Shared {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let hp = &mut c.hyperparams;
        if let Some(mode) = self.mode {
            match mode {
                Mode::Default => {
                    hp.normalize_entities = true;
                    hp.type_constrained_sampling = true;
                }
                Mode::LiteralPaper => *hp = hp.clone().literal(),
            }
        }
        macro_rules! apply {
            ($($flag:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = &self.$flag {
                    $target = v.clone();
                })*
            };
        }
        apply!(
            seed => hp.seed,
            dim => hp.dim,
            lr => hp.learning_rate,
            margin => hp.margin,
            negatives => hp.negatives,
            epochs => hp.epochs,
            threads => hp.threads,
        );
        apply!(top_n => c.top_n);
        let paths = [
            (&self.interactions, &mut c.interactions),
            (&self.metadata, &mut c.metadata),
            (&self.graph, &mut c.graph),
            (&self.test_pairs, &mut c.test_pairs),
            (&self.model, &mut c.model),
            (&self.loss_csv, &mut c.loss_csv),
            (&self.report, &mut c.report),
            (&self.record, &mut c.record),
            (&self.output, &mut c.output),
        ];
        for (flag, target) in paths {
            if flag.is_some() {
                target.clone_from(flag);
            }
        }
        for (key, value) in [("relations", &self.relations), ("ablation", &self.ablation)] {
            if let Some(v) = value {
                c.set(key, v)?;
            }
        }
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli.shared.resolve()?;
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::BuildGraph => cmd_build_graph(&config, &mut stdout).map(drop),
        Command::Train => cmd_train(&config).map(drop),
        Command::Recommend { users } => cmd_recommend(&config, &users, &mut stdout).map(drop),
        Command::Evaluate => cmd_evaluate(&config, &mut stdout).map(drop),
        Command::Ablate => cmd_ablate(&config, &mut stdout).map(drop),
        Command::Config => {
            print!("{}", config.to_config_string());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let msg = text
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ")
                .to_string();
            eprintln!(
                "{}",
                CliError::Config(format!("usage: {msg}; see --help")).error_line()
            );
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.error_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
