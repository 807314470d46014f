use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use flest_cli::commands::{self, CliError};
use flest_cli::config::{ExperimentConfig, OUTPUT_DIR_ENV};
use flest_core::data::Split;
use flest_core::eval::Filtering;
use flest_core::federation::RoundRecord;
use flest_core::gradcheck::GradcheckConfig;

/// Federated knowledge-graph completion experiments.
#[derive(Debug, Parser)]
#[command(name = "flest", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a dataset over clients and write the manifests.
    Partition(ConfigArgs),
    /// Train, logging one metrics record per round.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

/// Flags override the config file, which overrides the defaults.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Triple file, directory with train.txt, or synthetic:E:R:T:RANK[:SEED].
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    num_clients: Option<String>,
    #[arg(long)]
    rank: Option<String>,
    /// Sparsity factor s in (0, 1].
    #[arg(long)]
    sparsity: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    local_epochs: Option<String>,
    #[arg(long)]
    rounds_max: Option<String>,
    /// Rounds without a better mean validation MRR before stopping; 0 disables.
    #[arg(long)]
    patience: Option<String>,
    /// Validate every N rounds; 0 disables.
    #[arg(long)]
    eval_every: Option<String>,
    #[arg(long)]
    partition_seed: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    valid_ratio: Option<String>,
    #[arg(long)]
    test_ratio: Option<String>,
    /// federated or local_only.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    output_dir: Option<String>,
}

impl ConfigArgs {
    fn flags(&self) -> [(&'static str, &Option<String>); 19] {
        [
            ("dataset", &self.dataset),
            ("num_clients", &self.num_clients),
            ("rank", &self.rank),
            ("s", &self.sparsity),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("lr", &self.lr),
            ("dropout", &self.dropout),
            ("batch_size", &self.batch_size),
            ("local_epochs", &self.local_epochs),
            ("rounds_max", &self.rounds_max),
            ("patience", &self.patience),
            ("eval_every", &self.eval_every),
            ("partition_seed", &self.partition_seed),
            ("seed", &self.seed),
            ("valid_ratio", &self.valid_ratio),
            ("test_ratio", &self.test_ratio),
            ("mode", &self.mode),
            ("output_dir", &self.output_dir),
        ]
    }

    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut config = ExperimentConfig::default();
        if let Some(path) = &self.config {
            config.apply_file(path)?;
        }
        config.apply_env(std::env::var(OUTPUT_DIR_ENV).ok());
        for (key, value) in self.flags() {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// train, valid or test.
    #[arg(long, default_value = "test")]
    split: Split,
    /// Rank against every entity instead of filtering known triples.
    #[arg(long)]
    raw: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = GradcheckConfig::default().instances)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = GradcheckConfig::default().tolerance)]
    tolerance: f64,
    #[arg(long, hide = true)]
    corrupt: bool,
}

fn print_config(config: &ExperimentConfig) {
    println!("# configuration");
    print!("{}", config.render());
}

fn print_round(r: &RoundRecord) {
    match &r.valid {
        Some(v) => eprintln!(
            "round {:>4}  loss {:.6}  valid mrr {:.4}  hits@10 {:.4}",
            r.round,
            r.train_loss,
            v.aggregate.mrr,
            v.aggregate.hits_at(10)
        ),
        None => eprintln!("round {:>4}  loss {:.6}", r.round, r.train_loss),
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Partition(args) => {
            let config = args.resolve()?;
            print_config(&config);
            let summary = commands::partition(&config)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serialises"));
        }
        Command::Train(args) => {
            let config = args.resolve()?;
            print_config(&config);
            let out = commands::train(&config, print_round)?;
            println!(
                "trained {} rounds{}; best validation round {}; final checkpoint {}",
                out.run.server.round,
                if out.run.stopped_early { " (stopped early)" } else { "" },
                out.best_round.map_or("-".to_string(), |r| r.to_string()),
                out.checkpoint_path().display()
            );
        }
        Command::Eval(args) => {
            let filtering = if args.raw { Filtering::Raw } else { Filtering::Filtered };
            let out = commands::eval(&args.checkpoint, args.split, filtering)?;
            let json = out.to_json();
            if let Some(path) = &args.json_out {
                std::fs::write(path, &json).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
            }
            println!("{json}");
            print!("{}", out.to_table());
        }
        Command::Gradcheck(args) => {
            let config = GradcheckConfig {
                instances: args.instances,
                seed: args.seed,
                tolerance: args.tolerance,
                ..GradcheckConfig::default()
            };
            let report = commands::gradcheck(&config, args.corrupt)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serialises"));
            for p in &report.per_param {
                println!("{:<10} max rel error {:.3e}", p.param, p.max_rel_error);
            }
            println!("stationary max |grad| {:.3e}", report.stationary_max_grad);
            println!("{}", if report.passed { "gradcheck passed" } else { "gradcheck FAILED" });
            if !report.passed {
                return Err(CliError::GradcheckFailed { worst: report.worst() });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
