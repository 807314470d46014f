//! Filtered link-prediction ranking and MRR / Hit@k.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ClientShard, Split, Triple};
use crate::federation::ClientState;
use crate::model::{ModelParams, Scorer};

pub const HIT_KS: [usize; 3] = [1, 3, 10];

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("target {target} out of range for {len} candidates")]
    InvalidTarget { target: usize, len: usize },
    #[error("filter set contains the target {0}")]
    TargetFiltered(usize),
    #[error("split `{0}` has no triples to evaluate")]
    EmptySplit(&'static str),
    #[error("no reports to aggregate")]
    NoReports,
}

/// Ranking metrics over a set of queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_queries: usize,
    pub mrr: f64,
    /// Fraction of queries with rank `<= k`, keyed by `k`.
    pub hits: BTreeMap<usize, f64>,
}

impl EvalReport {
    /// Builds a report from per-query ranks. A fractional tie rank counts as
    /// a hit at `k` when its ceiling is at most `k`.
    pub fn from_ranks(ranks: &[f64]) -> Self {
        let n = ranks.len();
        let denom = n.max(1) as f64;
        let mrr = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / denom;
        let hits = HIT_KS
            .iter()
            .map(|&k| {
                let c = ranks.iter().filter(|r| r.ceil() <= k as f64).count();
                (k, c as f64 / denom)
            })
            .collect();
        Self {
            num_queries: n,
            mrr,
            hits,
        }
    }

    pub fn hits_at(&self, k: usize) -> f64 {
        self.hits.get(&k).copied().unwrap_or(f64::NAN)
    }
}

/// Rank of `target` among the candidates not in `filter`:
/// `1 + #(strictly better) + #(ties) / 2`, i.e. the mean position of the
/// target's tie group. `filter` may contain duplicates but not the target.
pub fn rank_of(scores: &[f64], target: usize, filter: &[usize]) -> Result<f64, EvalError> {
    if target >= scores.len() {
        return Err(EvalError::InvalidTarget {
            target,
            len: scores.len(),
        });
    }
    if filter.contains(&target) {
        return Err(EvalError::TargetFiltered(target));
    }
    let st = scores[target];
    let (mut better, mut ties) = (0usize, 0usize);
    for (j, &x) in scores.iter().enumerate() {
        if j == target {
            continue;
        }
        if x > st {
            better += 1;
        } else if x == st {
            ties += 1;
        }
    }
    let mut seen = filter.to_vec();
    seen.sort_unstable();
    seen.dedup();
    for j in seen {
        let Some(&x) = scores.get(j) else { continue };
        if x > st {
            better -= 1;
        } else if x == st {
            ties -= 1;
        }
    }
    Ok(1.0 + better as f64 + ties as f64 / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Tail,
    Head,
}

/// One ranking query: the true answer of `triple` in `direction` competes
/// against all candidates except those in `filter`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankQuery {
    pub direction: Direction,
    pub triple: Triple,
    pub scores: Vec<f64>,
    pub filter: Vec<usize>,
}

impl RankQuery {
    pub fn target(&self) -> usize {
        match self.direction {
            Direction::Tail => self.triple.tail,
            Direction::Head => self.triple.head,
        }
    }

    pub fn rank(&self) -> Result<f64, EvalError> {
        rank_of(&self.scores, self.target(), &self.filter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Filtering {
    #[default]
    Filtered,
    Raw,
}

/// Every answer the client knows for `(h, r, ?)` and `(?, r, t)`.
#[derive(Debug, Clone, Default)]
pub struct KnownAnswers {
    tails: HashMap<(usize, usize), Vec<usize>>,
    heads: HashMap<(usize, usize), Vec<usize>>,
}

impl KnownAnswers {
    pub fn new(triples: &[Triple]) -> Self {
        let mut k = Self::default();
        for t in triples {
            k.tails.entry((t.head, t.rel)).or_default().push(t.tail);
            k.heads.entry((t.rel, t.tail)).or_default().push(t.head);
        }
        k
    }

    fn others(list: Option<&Vec<usize>>, target: usize) -> Vec<usize> {
        list.map(|v| v.iter().copied().filter(|&x| x != target).collect())
            .unwrap_or_default()
    }

    pub fn tail_filter(&self, t: &Triple) -> Vec<usize> {
        Self::others(self.tails.get(&(t.head, t.rel)), t.tail)
    }

    pub fn head_filter(&self, t: &Triple) -> Vec<usize> {
        Self::others(self.heads.get(&(t.rel, t.tail)), t.head)
    }
}

/// A report together with the per-query ranks it was computed from, tail
/// query then head query for each triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub ranks: Vec<f64>,
}

/// Ranks every triple of `split` in both directions against the shard's
/// local entities, with dropout off.
pub fn evaluate_shard(
    params: &ModelParams,
    shard: &ClientShard,
    split: Split,
    filtering: Filtering,
) -> Result<Evaluation, EvalError> {
    let triples = shard.split(split);
    if triples.is_empty() {
        return Err(EvalError::EmptySplit(split.as_str()));
    }
    let known = match filtering {
        Filtering::Filtered => KnownAnswers::new(shard.triples()),
        Filtering::Raw => KnownAnswers::default(),
    };
    let scorer = Scorer::new(params);
    let mut ranks = Vec::with_capacity(2 * triples.len());
    for t in &triples {
        let tails = scorer.tails(t.head, t.rel);
        ranks.push(rank_of(&tails, t.tail, &known.tail_filter(t))?);
        let heads = scorer.heads(t.rel, t.tail);
        ranks.push(rank_of(&heads, t.head, &known.head_filter(t))?);
    }
    Ok(Evaluation {
        report: EvalReport::from_ranks(&ranks),
        ranks,
    })
}

/// Filtered evaluation of one client's current parameters.
pub fn evaluate_client(client: &ClientState, split: Split) -> Result<EvalReport, EvalError> {
    Ok(evaluate_shard(&client.params, &client.shard, split, Filtering::Filtered)?.report)
}

/// Query-count-weighted mean of several reports.
pub fn aggregate_reports(reports: &[EvalReport]) -> Result<EvalReport, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    if reports.len() == 1 {
        return Ok(reports[0].clone());
    }
    let total: usize = reports.iter().map(|r| r.num_queries).sum();
    let denom = total.max(1) as f64;
    let weighted = |f: &dyn Fn(&EvalReport) -> f64| {
        reports.iter().map(|r| r.num_queries as f64 * f(r)).sum::<f64>() / denom
    };
    let hits = HIT_KS.iter().map(|&k| (k, weighted(&|r| r.hits_at(k)))).collect();
    Ok(EvalReport {
        num_queries: total,
        mrr: weighted(&|r| r.mrr),
        hits,
    })
}
