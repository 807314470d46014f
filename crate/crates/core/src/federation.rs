//! Client/server rounds: local training, upload of the shared matrices,
//! averaging and redistribution.
//!
//! Loading matrices live only inside [`ClientState`]. Everything that crosses
//! the client boundary is a [`SharedParams`], which holds the five `r x r`
//! matrices and nothing else.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ClientShard, Split};
use crate::eval::{aggregate_reports, evaluate_client, EvalError, EvalReport};
use crate::model::{init_client_params, train_epoch, AdamState, Hyper, ModelError, ModelParams};
use crate::rng::derive;
use crate::tensor::Matrix;

pub const MESSAGE_MAGIC: &[u8; 9] = b"FLESTMSG1";

/// Stream tag for the shared-parameter initialisation seed.
const SHARED_INIT_TAG: u64 = 0x5348_4152_4544;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("rank mismatch: expected {expected}, found {found}")]
    RankMismatch { expected: usize, found: usize },
    #[error("round mismatch: expected {expected}, found {found}")]
    RoundMismatch { expected: usize, found: usize },
    #[error("nothing to aggregate")]
    NoUploads,
    #[error("malformed round message: {0}")]
    Message(String),
    #[error("expected {expected} shards, got {found}")]
    ShardCount { expected: usize, found: usize },
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("round observer failed: {0}")]
    Observer(String),
}

/// The parameters a client uploads and the server broadcasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedParams {
    pub e_dic: Matrix,
    pub r_dic: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
    pub w3: Matrix,
    pub round: usize,
}

impl SharedParams {
    pub fn from_params(params: &ModelParams, round: usize) -> Self {
        Self {
            e_dic: params.e_dic.clone(),
            r_dic: params.r_dic.clone(),
            w1: params.w1.clone(),
            w2: params.w2.clone(),
            w3: params.w3.clone(),
            round,
        }
    }

    pub fn rank(&self) -> usize {
        self.e_dic.rows()
    }

    /// The five matrices in wire order.
    pub fn matrices(&self) -> [&Matrix; 5] {
        [&self.e_dic, &self.r_dic, &self.w1, &self.w2, &self.w3]
    }

    fn matrices_mut(&mut self) -> [&mut Matrix; 5] {
        [&mut self.e_dic, &mut self.r_dic, &mut self.w1, &mut self.w2, &mut self.w3]
    }

    pub fn num_values(&self) -> usize {
        self.matrices().iter().map(|m| m.data().len()).sum()
    }

    fn check_rank(&self, rank: usize) -> Result<(), ProtocolError> {
        for m in self.matrices() {
            if m.shape() != (rank, rank) {
                let found = if m.rows() == rank { m.cols() } else { m.rows() };
                return Err(ProtocolError::RankMismatch { expected: rank, found });
            }
        }
        Ok(())
    }

    /// Overwrites the shared subset of `params`.
    pub fn install(&self, params: &mut ModelParams) -> Result<(), ProtocolError> {
        self.check_rank(params.rank)?;
        params.e_dic.clone_from(&self.e_dic);
        params.r_dic.clone_from(&self.r_dic);
        params.w1.clone_from(&self.w1);
        params.w2.clone_from(&self.w2);
        params.w3.clone_from(&self.w3);
        Ok(())
    }

    /// Wire form: magic, little-endian `u32` round and rank, then the five
    /// matrices row-major as little-endian `f64`.
    pub fn encode(&self) -> Vec<u8> {
        let r = self.rank();
        let mut out = Vec::with_capacity(MESSAGE_MAGIC.len() + 8 + 8 * 5 * r * r);
        out.extend_from_slice(MESSAGE_MAGIC);
        out.extend_from_slice(&u32::try_from(self.round).expect("round fits in u32").to_le_bytes());
        out.extend_from_slice(&u32::try_from(r).expect("rank fits in u32").to_le_bytes());
        for m in self.matrices() {
            for x in m.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let header = MESSAGE_MAGIC.len() + 8;
        if bytes.len() < header || &bytes[..MESSAGE_MAGIC.len()] != MESSAGE_MAGIC {
            return Err(ProtocolError::Message("bad magic".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let round = word(MESSAGE_MAGIC.len());
        let r = word(MESSAGE_MAGIC.len() + 4);
        let want = header + 8 * 5 * r * r;
        if bytes.len() != want {
            return Err(ProtocolError::Message(format!("expected {want} bytes for rank {r}, got {}", bytes.len())));
        }
        let mut floats = bytes[header..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut block = || Matrix::from_vec(r, r, floats.by_ref().take(r * r).collect()).unwrap();
        Ok(Self {
            e_dic: block(),
            r_dic: block(),
            w1: block(),
            w2: block(),
            w3: block(),
            round,
        })
    }
}

/// Entrywise mean of the uploads, summed in the given (client-id) order.
/// The result carries the next round number.
pub fn aggregate(uploads: &[SharedParams]) -> Result<SharedParams, ProtocolError> {
    let first = uploads.first().ok_or(ProtocolError::NoUploads)?;
    let rank = first.rank();
    for u in uploads {
        u.check_rank(rank)?;
        if u.round != first.round {
            return Err(ProtocolError::RoundMismatch {
                expected: first.round,
                found: u.round,
            });
        }
    }
    let mut acc = first.clone();
    for u in &uploads[1..] {
        for (a, m) in acc.matrices_mut().into_iter().zip(u.matrices()) {
            for (x, y) in a.data_mut().iter_mut().zip(m.data()) {
                *x += y;
            }
        }
    }
    let c = uploads.len() as f64;
    for a in acc.matrices_mut() {
        for x in a.data_mut() {
            *x /= c;
        }
    }
    acc.round = first.round + 1;
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Federated,
    /// Clients train independently; nothing is uploaded or broadcast.
    LocalOnly,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Federated => "federated",
            Mode::LocalOnly => "local_only",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "federated" => Ok(Mode::Federated),
            "local_only" | "local-only" | "local" => Ok(Mode::LocalOnly),
            other => Err(format!("unknown mode `{other}` (expected federated or local_only)")),
        }
    }
}

/// One client: its data, full parameters and optimiser state.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub shard: ClientShard,
    pub params: ModelParams,
    pub opt: AdamState,
    /// Seed for this client's loadings, batch order and dropout.
    pub seed: u64,
    pub epochs_done: u64,
}

impl ClientState {
    /// Shared matrices come from `shared_seed` so all clients (and the
    /// server) start from the same ones; loadings come from `seed`.
    pub fn new(shard: ClientShard, rank: usize, s: f64, shared_seed: u64, seed: u64) -> Self {
        let params = init_client_params(shared_seed, seed, rank, shard.num_entities(), shard.num_relations(), s);
        let opt = AdamState::new(&params);
        Self {
            shard,
            params,
            opt,
            seed,
            epochs_done: 0,
        }
    }

    /// Runs `epochs` local epochs continuing this client's epoch counter and
    /// returns the mean batch loss over all of them (0 when nothing ran).
    pub fn train_epochs(&mut self, hyper: &Hyper, epochs: usize) -> Result<f64, ModelError> {
        let (mut sum, mut batches) = (0.0, 0usize);
        for _ in 0..epochs {
            let stats = train_epoch(&mut self.params, &mut self.opt, &self.shard, hyper, self.seed, self.epochs_done)?;
            self.epochs_done += 1;
            sum += stats.mean_loss * stats.batches as f64;
            batches += stats.batches;
        }
        Ok(if batches > 0 { sum / batches as f64 } else { 0.0 })
    }

    pub fn shared(&self, round: usize) -> SharedParams {
        SharedParams::from_params(&self.params, round)
    }
}

/// What a client hands back after a local update.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub upload: SharedParams,
    pub mean_loss: f64,
}

/// Installs `incoming`, trains `hyper.local_epochs` epochs on every
/// parameter and returns the new shared subset.
pub fn client_local_update(
    client: &mut ClientState,
    incoming: &SharedParams,
    hyper: &Hyper,
) -> Result<LocalUpdate, ProtocolError> {
    incoming.install(&mut client.params)?;
    let mean_loss = client.train_epochs(hyper, hyper.local_epochs)?;
    Ok(LocalUpdate {
        upload: client.shared(incoming.round),
        mean_loss,
    })
}

/// Validation results of one evaluation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundEval {
    pub per_client: Vec<EvalReport>,
    pub aggregate: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    /// Mean over clients of each client's mean batch loss this round.
    pub train_loss: f64,
    pub valid: Option<RoundEval>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub global: SharedParams,
    /// Rounds completed.
    pub round: usize,
    pub history: Vec<RoundRecord>,
}

impl ServerState {
    pub fn new(global: SharedParams) -> Self {
        Self {
            global,
            round: 0,
            history: Vec::new(),
        }
    }
}

/// One synchronous round over every client. In federated mode the global
/// parameters are broadcast, each client trains and uploads, and the mean is
/// broadcast back; in local-only mode clients just train. Returns the mean
/// client loss.
pub fn run_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    hyper: &Hyper,
    mode: Mode,
) -> Result<f64, ProtocolError> {
    if clients.is_empty() {
        return Err(ProtocolError::NoUploads);
    }
    let losses = match mode {
        Mode::Federated => {
            let global = &server.global;
            let updates: Vec<LocalUpdate> = clients
                .par_iter_mut()
                .map(|c| client_local_update(c, global, hyper))
                .collect::<Result<_, _>>()?;
            let uploads: Vec<SharedParams> = updates.iter().map(|u| u.upload.clone()).collect();
            server.global = aggregate(&uploads)?;
            for c in clients.iter_mut() {
                server.global.install(&mut c.params)?;
            }
            updates.iter().map(|u| u.mean_loss).collect::<Vec<_>>()
        }
        Mode::LocalOnly => clients
            .par_iter_mut()
            .map(|c| c.train_epochs(hyper, hyper.local_epochs))
            .collect::<Result<Vec<_>, _>>()?,
    };
    server.round += 1;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub num_clients: usize,
    pub rounds_max: usize,
    pub hyper: Hyper,
    pub rank: usize,
    pub s: f64,
    /// Base seed for initialisation, batch order and dropout.
    pub seed: u64,
    pub mode: Mode,
    /// Validate every this many rounds (and at the last round); 0 disables.
    pub eval_every: usize,
    /// Stop when mean validation MRR has not improved for this many rounds.
    pub patience: Option<usize>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.num_clients == 0 {
            return Err(ProtocolError::InvalidConfig("num_clients must be at least 1".into()));
        }
        if self.rounds_max == 0 {
            return Err(ProtocolError::InvalidConfig("rounds_max must be at least 1".into()));
        }
        if self.rank == 0 {
            return Err(ProtocolError::InvalidConfig("rank must be at least 1".into()));
        }
        if !(self.s > 0.0 && self.s <= 1.0) {
            return Err(ProtocolError::InvalidConfig(format!("sparsity factor {} not in (0, 1]", self.s)));
        }
        self.hyper.validate()?;
        Ok(())
    }

    fn is_eval_round(&self, round: usize) -> bool {
        self.eval_every > 0 && (round.is_multiple_of(self.eval_every) || round == self.rounds_max)
    }
}

/// Initial clients and server for a run: every client and the server share
/// one initial shared subset; loadings and shuffles use per-client seeds.
pub fn init_run(config: &RunConfig, shards: Vec<ClientShard>) -> Result<(ServerState, Vec<ClientState>), ProtocolError> {
    config.validate()?;
    if shards.len() != config.num_clients {
        return Err(ProtocolError::ShardCount {
            expected: config.num_clients,
            found: shards.len(),
        });
    }
    let shared_seed = derive(&[config.seed, SHARED_INIT_TAG]);
    let clients: Vec<ClientState> = shards
        .into_iter()
        .map(|shard| {
            let seed = derive(&[config.seed, shard.client_id as u64]);
            ClientState::new(shard, config.rank, config.s, shared_seed, seed)
        })
        .collect();
    let server = ServerState::new(clients[0].shared(0));
    Ok((server, clients))
}

/// Mean validation report over clients.
pub fn validate_clients(clients: &[ClientState]) -> Result<RoundEval, ProtocolError> {
    evaluate_clients(clients, Split::Valid)
}

pub fn evaluate_clients(clients: &[ClientState], split: Split) -> Result<RoundEval, ProtocolError> {
    let per_client = clients
        .par_iter()
        .map(|c| evaluate_client(c, split))
        .collect::<Result<Vec<_>, _>>()?;
    let aggregate = aggregate_reports(&per_client)?;
    Ok(RoundEval { per_client, aggregate })
}

/// Final state of a run.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub stopped_early: bool,
}

/// Runs up to `rounds_max` rounds. After every round `observer` sees the new
/// record together with the current clients and server.
pub fn run_training<F>(config: &RunConfig, shards: Vec<ClientShard>, mut observer: F) -> Result<TrainingRun, ProtocolError>
where
    F: FnMut(&RoundRecord, &[ClientState], &ServerState) -> Result<(), String>,
{
    let (mut server, mut clients) = init_run(config, shards)?;
    let mut best: Option<(f64, usize)> = None;
    let mut stopped_early = false;
    for round in 1..=config.rounds_max {
        let train_loss = run_round(&mut server, &mut clients, &config.hyper, config.mode)?;
        let valid = if config.is_eval_round(round) {
            Some(validate_clients(&clients)?)
        } else {
            None
        };
        let record = RoundRecord {
            round,
            train_loss,
            valid,
        };
        server.history.push(record);
        let record = server.history.last().unwrap();
        observer(record, &clients, &server).map_err(ProtocolError::Observer)?;
        if let Some(v) = &record.valid {
            let mrr = v.aggregate.mrr;
            match best {
                Some((b, _)) if mrr <= b => {}
                _ => best = Some((mrr, round)),
            }
            if let (Some(p), Some((_, at))) = (config.patience, best) {
                if round - at >= p && round < config.rounds_max {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(TrainingRun {
        server,
        clients,
        stopped_early,
    })
}
