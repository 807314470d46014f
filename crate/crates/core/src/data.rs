//! Triple files, vocabularies, client partitioning and 1-N batches.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::seeded;
use crate::tensor::Matrix;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: expected 3 tab-separated fields, found {found}")]
    Malformed { line: usize, found: usize },
    #[error("line {line}: invalid UTF-8")]
    Encoding { line: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot split {triples} triples across {clients} clients")]
    TooManyClients { clients: usize, triples: usize },
    #[error("number of clients must be at least 1")]
    NoClients,
    #[error("invalid split ratios: valid {valid}, test {test}")]
    InvalidRatios { valid: f64, test: f64 },
}

/// A triple as it appears in a dataset file.
pub type RawTriple = (String, String, String);

/// Reads `head<TAB>relation<TAB>tail` lines. Blank lines are skipped; a
/// trailing `\r` is tolerated.
pub fn load_triples<R: BufRead>(mut source: R) -> Result<Vec<RawTriple>, DataError> {
    let mut out = Vec::new();
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if source.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let line = std::str::from_utf8(&buf).map_err(|_| DataError::Encoding { line: line_no })?;
        let line = line.trim_end_matches('\n').trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(DataError::Malformed {
                line: line_no,
                found: fields.len(),
            });
        }
        out.push((
            fields[0].to_string(),
            fields[1].to_string(),
            fields[2].to_string(),
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub rel: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, rel: usize, tail: usize) -> Self {
        Self { head, rel, tail }
    }
}

/// Dense id assignment for entities and relations in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_ids: HashMap<String, usize>,
    relation_ids: HashMap<String, usize>,
}

fn intern(names: &mut Vec<String>, ids: &mut HashMap<String, usize>, name: &str) -> usize {
    if let Some(&id) = ids.get(name) {
        return id;
    }
    let id = names.len();
    names.push(name.to_string());
    ids.insert(name.to_string(), id);
    id
}

impl Vocab {
    fn add(&mut self, (h, r, t): &RawTriple) -> Triple {
        let head = intern(&mut self.entities, &mut self.entity_ids, h);
        let rel = intern(&mut self.relations, &mut self.relation_ids, r);
        let tail = intern(&mut self.entities, &mut self.entity_ids, t);
        Triple { head, rel, tail }
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_ids.get(name).copied()
    }

    pub fn entity_name(&self, id: usize) -> Option<&str> {
        self.entities.get(id).map(String::as_str)
    }

    pub fn relation_name(&self, id: usize) -> Option<&str> {
        self.relations.get(id).map(String::as_str)
    }

    pub fn encode(&self, (h, r, t): &RawTriple) -> Option<Triple> {
        Some(Triple {
            head: self.entity_id(h)?,
            rel: self.relation_id(r)?,
            tail: self.entity_id(t)?,
        })
    }
}

pub fn build_vocab(triples: &[RawTriple]) -> Vocab {
    let mut vocab = Vocab::default();
    for t in triples {
        vocab.add(t);
    }
    vocab
}

/// Fractions of each shard held out for validation and test; the rest trains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            valid: 0.05,
            test: 0.05,
        }
    }
}

impl SplitRatios {
    /// Everything trains; used for memorisation runs.
    pub const TRAIN_ONLY: SplitRatios = SplitRatios {
        valid: 0.0,
        test: 0.0,
    };

    fn validate(&self) -> Result<(), DataError> {
        let ok = |x: f64| x.is_finite() && (0.0..1.0).contains(&x);
        if ok(self.valid) && ok(self.test) && self.valid + self.test < 1.0 {
            Ok(())
        } else {
            Err(DataError::InvalidRatios {
                valid: self.valid,
                test: self.test,
            })
        }
    }

    fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let valid = (n as f64 * self.valid).round() as usize;
        let test = ((n as f64 * self.test).round() as usize).min(n - valid);
        (n - valid - test, valid, test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// One client's private slice of the knowledge graph, in local ids.
#[derive(Debug, Clone)]
pub struct ClientShard {
    pub client_id: usize,
    vocab: Vocab,
    triples: Vec<Triple>,
    sources: Vec<usize>,
    splits: Vec<Split>,
}

impl ClientShard {
    /// Builds a shard from raw triples already assigned to a split. The local
    /// vocabulary is derived from these triples in the given order. `sources`
    /// records each triple's index in the original dataset.
    pub fn from_parts(
        client_id: usize,
        raw: &[RawTriple],
        sources: Vec<usize>,
        splits: Vec<Split>,
    ) -> Self {
        assert_eq!(raw.len(), sources.len());
        assert_eq!(raw.len(), splits.len());
        let mut vocab = Vocab::default();
        let triples = raw.iter().map(|t| vocab.add(t)).collect();
        Self {
            client_id,
            vocab,
            triples,
            sources,
            splits,
        }
    }

    /// Shard holding `raw` entirely as training data.
    pub fn train_only(client_id: usize, raw: &[RawTriple]) -> Self {
        Self::from_parts(
            client_id,
            raw,
            (0..raw.len()).collect(),
            vec![Split::Train; raw.len()],
        )
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.num_relations()
    }

    /// Every triple the client knows, across all splits.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn split_of(&self, i: usize) -> Split {
        self.splits[i]
    }

    pub fn split(&self, split: Split) -> Vec<Triple> {
        self.triples
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| s == split)
            .map(|(t, _)| *t)
            .collect()
    }

    /// Dataset indices of this shard's triples in a given split.
    pub fn source_indices(&self, split: Split) -> Vec<usize> {
        self.sources
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| *i)
            .collect()
    }

    /// `(dataset index, split)` for every triple, in shard order.
    pub fn manifest(&self) -> impl Iterator<Item = (usize, Split)> + '_ {
        self.sources.iter().copied().zip(self.splits.iter().copied())
    }
}

/// Shuffles all triples with `seed`, deals them round-robin to clients and
/// then splits each shard into train/valid/test with a per-client stream of
/// the same seed.
pub fn partition(
    triples: &[RawTriple],
    num_clients: usize,
    seed: u64,
    ratios: SplitRatios,
) -> Result<Vec<ClientShard>, DataError> {
    if num_clients == 0 {
        return Err(DataError::NoClients);
    }
    if num_clients > triples.len() {
        return Err(DataError::TooManyClients {
            clients: num_clients,
            triples: triples.len(),
        });
    }
    ratios.validate()?;

    let mut order: Vec<usize> = (0..triples.len()).collect();
    order.shuffle(&mut seeded(seed, 0));

    let mut shards = Vec::with_capacity(num_clients);
    for c in 0..num_clients {
        let mut mine: Vec<usize> = order.iter().copied().skip(c).step_by(num_clients).collect();
        mine.shuffle(&mut seeded(seed, 1 + c as u64));
        let (n_train, n_valid, _) = ratios.sizes(mine.len());
        let splits = (0..mine.len())
            .map(|i| {
                if i < n_train {
                    Split::Train
                } else if i < n_train + n_valid {
                    Split::Valid
                } else {
                    Split::Test
                }
            })
            .collect();
        let raw: Vec<RawTriple> = mine.iter().map(|&i| triples[i].clone()).collect();
        shards.push(ClientShard::from_parts(c, &raw, std::mem::take(&mut mine), splits));
    }
    Ok(shards)
}

/// A mini-batch of `(head, relation)` queries, each labelled against every
/// local entity.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub pairs: Vec<(usize, usize)>,
    /// `pairs.len() x num_entities`; row `b` holds the labels of pair `b`.
    pub targets: Matrix,
}

impl Batch {
    pub fn new(pairs: Vec<(usize, usize)>, targets: Matrix) -> Self {
        assert_eq!(pairs.len(), targets.rows());
        Self { pairs, targets }
    }

    pub fn empty(num_entities: usize) -> Self {
        Self {
            pairs: Vec::new(),
            targets: Matrix::zeros(0, num_entities),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn num_entities(&self) -> usize {
        self.targets.cols()
    }
}

/// One epoch of 1-N batches. Each distinct `(head, relation)` pair in the
/// training split appears exactly once, in an order determined by
/// `(seed, epoch)`.
pub fn make_batches(shard: &ClientShard, batch_size: usize, seed: u64, epoch: u64) -> Batches {
    let batch_size = batch_size.max(1);
    let mut tails: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for t in shard.split(Split::Train) {
        tails.entry((t.head, t.rel)).or_default().push(t.tail);
    }
    let mut pairs: Vec<((usize, usize), Vec<usize>)> = tails.into_iter().collect();
    pairs.shuffle(&mut seeded(seed, epoch));
    Batches {
        pairs,
        batch_size,
        num_entities: shard.num_entities(),
        next: 0,
    }
}

pub struct Batches {
    pairs: Vec<((usize, usize), Vec<usize>)>,
    batch_size: usize,
    num_entities: usize,
    next: usize,
}

impl Batches {
    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }
}

impl Iterator for Batches {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.next >= self.pairs.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.pairs.len());
        let chunk = &self.pairs[self.next..end];
        self.next = end;
        let mut targets = Matrix::zeros(chunk.len(), self.num_entities);
        for (b, (_, tails)) in chunk.iter().enumerate() {
            for &t in tails {
                targets.set(b, t, 1.0);
            }
        }
        Some(Batch {
            pairs: chunk.iter().map(|(p, _)| *p).collect(),
            targets,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.pairs.len() - self.next).div_ceil(self.batch_size);
        (n, Some(n))
    }
}

impl ExactSizeIterator for Batches {}
