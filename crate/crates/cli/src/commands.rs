//! The four subcommands as library functions.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use flest_core::data::{load_triples, partition as split_clients, ClientShard, RawTriple, Split};
use flest_core::eval::{aggregate_reports, evaluate_shard, Filtering};
use flest_core::federation::{run_training, ClientState, RoundRecord, ServerState, TrainingRun};
use flest_core::gradcheck::{corrupt_w2, run_gradcheck, GradcheckConfig, GradcheckReport};
use flest_core::synthetic::generate;
use serde::Serialize;
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError, ClientSnapshot};
use crate::config::{ConfigError, DatasetSource, ExperimentConfig};
use crate::report::EvalOutput;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const BEST_CHECKPOINT_FILE: &str = "checkpoint_best.bin";
pub const PARTITION_DIR: &str = "partition";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("gradient check failed (worst relative error {worst:e})")]
    GradcheckFailed { worst: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Runtime(_) | CliError::Checkpoint(_) => 2,
            CliError::GradcheckFailed { .. } => 3,
        }
    }
}

fn runtime<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

/// Makes a path dataset absolute so a checkpoint can be evaluated from any
/// working directory.
pub fn resolve_dataset(config: &mut ExperimentConfig) -> Result<(), CliError> {
    if let Some(DatasetSource::Path(p)) = &config.dataset {
        let abs = fs::canonicalize(p).map_err(runtime(&format!("dataset {}", p.display())))?;
        config.dataset = Some(DatasetSource::Path(abs));
    }
    Ok(())
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<Vec<RawTriple>, CliError> {
    match config.require_dataset()? {
        DatasetSource::Synthetic(spec) => generate(spec).map_err(runtime("synthetic dataset")),
        src @ DatasetSource::Path(_) => {
            let path = src.triple_file().expect("path source");
            let file = File::open(&path).map_err(runtime(&format!("opening {}", path.display())))?;
            load_triples(BufReader::new(file)).map_err(runtime(&format!("reading {}", path.display())))
        }
    }
}

pub fn build_shards(config: &ExperimentConfig) -> Result<Vec<ClientShard>, CliError> {
    config.validate()?;
    let triples = load_dataset(config)?;
    split_clients(&triples, config.num_clients, config.partition_seed, config.ratios()).map_err(runtime("partition"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShardSummary {
    pub client: usize,
    pub triples: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub entities: usize,
    pub relations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionSummary {
    pub num_clients: usize,
    pub partition_seed: u64,
    pub total_triples: usize,
    pub clients: Vec<ShardSummary>,
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(runtime(&format!("creating {}", dir.display())))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(runtime(&format!("writing {}", path.display())))
}

/// Writes `client_<i>.txt` manifests (`index<TAB>split` per line, index
/// into the dataset file) and `summary.json` under `dir`.
pub fn write_partition(dir: &Path, config: &ExperimentConfig, shards: &[ClientShard]) -> Result<PartitionSummary, CliError> {
    create_dir(dir)?;
    let mut clients = Vec::with_capacity(shards.len());
    for shard in shards {
        let mut text = String::new();
        for (index, split) in shard.manifest() {
            text.push_str(&format!("{index}\t{}\n", split.as_str()));
        }
        write_file(&dir.join(format!("client_{}.txt", shard.client_id)), text.as_bytes())?;
        let count = |s| shard.split(s).len();
        clients.push(ShardSummary {
            client: shard.client_id,
            triples: shard.len(),
            train: count(Split::Train),
            valid: count(Split::Valid),
            test: count(Split::Test),
            entities: shard.num_entities(),
            relations: shard.num_relations(),
        });
    }
    let summary = PartitionSummary {
        num_clients: shards.len(),
        partition_seed: config.partition_seed,
        total_triples: clients.iter().map(|c| c.triples).sum(),
        clients,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serialises");
    write_file(&dir.join("summary.json"), json.as_bytes())?;
    Ok(summary)
}

pub fn partition(config: &ExperimentConfig) -> Result<PartitionSummary, CliError> {
    let shards = build_shards(config)?;
    write_partition(&config.output_dir.join(PARTITION_DIR), config, &shards)
}

pub fn snapshot(config: &ExperimentConfig, clients: &[ClientState], server: &ServerState) -> Checkpoint {
    Checkpoint {
        config_hash: config.hash(),
        config_text: config.identity_text(),
        round: server.round,
        global: server.global.clone(),
        clients: clients
            .iter()
            .map(|c| ClientSnapshot {
                client_id: c.shard.client_id,
                seed: c.seed,
                epochs_done: c.epochs_done,
                params: c.params.clone(),
                opt: c.opt.clone(),
            })
            .collect(),
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub run: TrainingRun,
    pub output_dir: PathBuf,
    pub best_round: Option<usize>,
}

impl TrainOutcome {
    pub fn metrics_path(&self) -> PathBuf {
        self.output_dir.join(METRICS_FILE)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.output_dir.join(CHECKPOINT_FILE)
    }
}

/// Trains and writes `config.txt`, the partition, one `metrics.jsonl` line
/// per round, the best-validation checkpoint and the final checkpoint.
/// `progress` sees every round record as it is logged.
pub fn train(config: &ExperimentConfig, mut progress: impl FnMut(&RoundRecord)) -> Result<TrainOutcome, CliError> {
    let mut config = config.clone();
    resolve_dataset(&mut config)?;
    let shards = build_shards(&config)?;
    let dir = config.output_dir.clone();
    create_dir(&dir)?;
    write_file(&dir.join(CONFIG_FILE), config.render().as_bytes())?;
    write_partition(&dir.join(PARTITION_DIR), &config, &shards)?;

    let metrics_path = dir.join(METRICS_FILE);
    let file = File::create(&metrics_path).map_err(runtime(&format!("creating {}", metrics_path.display())))?;
    let mut metrics = BufWriter::new(file);
    let mut best: Option<(f64, usize)> = None;
    let run = run_training(&config.run_config(), shards, |record, clients, server| {
        let line = serde_json::to_string(record).map_err(|e| e.to_string())?;
        writeln!(metrics, "{line}").and_then(|_| metrics.flush()).map_err(|e| e.to_string())?;
        if let Some(v) = &record.valid {
            if best.is_none_or(|(b, _)| v.aggregate.mrr > b) {
                best = Some((v.aggregate.mrr, record.round));
                snapshot(&config, clients, server)
                    .save(&dir.join(BEST_CHECKPOINT_FILE))
                    .map_err(|e| e.to_string())?;
            }
        }
        progress(record);
        Ok(())
    })
    .map_err(runtime("training"))?;
    drop(metrics);
    snapshot(&config, &run.clients, &run.server).save(&dir.join(CHECKPOINT_FILE))?;
    Ok(TrainOutcome {
        run,
        output_dir: dir,
        best_round: best.map(|(_, r)| r),
    })
}

/// Reads the configuration stored in a checkpoint and checks it against the
/// stored hash.
pub fn checkpoint_config(ckpt: &Checkpoint) -> Result<ExperimentConfig, CliError> {
    let mut config = ExperimentConfig::default();
    config.apply_text(&ckpt.config_text)?;
    if config.hash() != ckpt.config_hash {
        return Err(CheckpointError::HashMismatch.into());
    }
    Ok(config)
}

/// Rebuilds the clients of a checkpoint, re-deriving their shards from the
/// stored configuration.
pub fn restore_clients(ckpt: &Checkpoint) -> Result<Vec<ClientState>, CliError> {
    let config = checkpoint_config(ckpt)?;
    let shards = build_shards(&config)?;
    if shards.len() != ckpt.clients.len() {
        return Err(CliError::Runtime(format!(
            "checkpoint has {} clients but the configuration yields {}",
            ckpt.clients.len(),
            shards.len()
        )));
    }
    shards
        .into_iter()
        .zip(&ckpt.clients)
        .map(|(shard, snap)| {
            if snap.client_id != shard.client_id
                || snap.params.num_entities() != shard.num_entities()
                || snap.params.num_relations() != shard.num_relations()
            {
                return Err(CliError::Runtime(format!(
                    "checkpoint client {} does not match its data shard",
                    snap.client_id
                )));
            }
            Ok(ClientState {
                shard,
                params: snap.params.clone(),
                opt: snap.opt.clone(),
                seed: snap.seed,
                epochs_done: snap.epochs_done,
            })
        })
        .collect()
}

pub fn eval(checkpoint: &Path, split: Split, filtering: Filtering) -> Result<EvalOutput, CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let clients = restore_clients(&ckpt)?;
    let per_client = clients
        .iter()
        .map(|c| evaluate_shard(&c.params, &c.shard, split, filtering).map(|e| e.report))
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime("evaluation"))?;
    let aggregate = aggregate_reports(&per_client).map_err(runtime("evaluation"))?;
    Ok(EvalOutput {
        split: split.as_str().to_string(),
        filtering,
        round: ckpt.round,
        per_client,
        aggregate,
    })
}

/// Runs the finite-difference check. `corrupt` perturbs the analytic
/// gradients first, which must make it fail.
pub fn gradcheck(config: &GradcheckConfig, corrupt: bool) -> Result<GradcheckReport, CliError> {
    run_gradcheck(config, corrupt.then_some(corrupt_w2 as fn(&mut _))).map_err(runtime("gradient check"))
}
