//! Seeded synthetic knowledge graphs with planted low-rank structure.
//!
//! Every entity gets a unit vector `x_e` in `R^k`, every relation a Gaussian
//! diagonal `d_r`, and one Gaussian `k x k` map `P` links the head and tail
//! roles. The planted score of `(h, r, t)` is `sum_i x_h[i] d_r[i] (P x_t)[i]`,
//! a member of the model's own trilinear family. Each relation's triples are
//! spread evenly over heads (visited in a seeded order), and each head takes
//! its best-scoring tails, never itself.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::data::RawTriple;
use crate::rng::seeded;

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("need at least 2 entities, 1 relation and planted rank 1")]
    TooSmall,
    #[error("{requested} triples requested but only {available} distinct non-loop cells exist")]
    TooManyTriples { requested: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub planted_rank: usize,
    pub seed: u64,
}

/// Generates the triples, named `e{i}` and `r{j}`, sorted by relation, then
/// head, then tail.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<RawTriple>, SyntheticError> {
    let SyntheticSpec {
        entities: n,
        relations: nr,
        triples,
        planted_rank: k,
        seed,
    } = *spec;
    if n < 2 || nr == 0 || k == 0 {
        return Err(SyntheticError::TooSmall);
    }
    let per_head_max = n - 1;
    let available = nr * n * per_head_max;
    if triples > available {
        return Err(SyntheticError::TooManyTriples {
            requested: triples,
            available,
        });
    }

    let mut rng = seeded(seed, 0);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..k).map(|_| normal()).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.into_iter().map(|a| a / norm).collect()
        })
        .collect();
    let diag: Vec<Vec<f64>> = (0..nr).map(|_| (0..k).map(|_| normal()).collect()).collect();
    let mix: Vec<f64> = (0..k * k).map(|_| normal() / (k as f64).sqrt()).collect();
    let tails_side: Vec<Vec<f64>> = x
        .iter()
        .map(|v| (0..k).map(|i| (0..k).map(|j| mix[i * k + j] * v[j]).sum()).collect())
        .collect();

    let mut out = Vec::with_capacity(triples);
    let mut order_rng = seeded(seed, 1);
    for (r, d) in diag.iter().enumerate() {
        let quota = triples / nr + usize::from(r < triples % nr);
        let mut heads: Vec<usize> = (0..n).collect();
        heads.shuffle(&mut order_rng);
        let mut picked: Vec<(usize, usize)> = Vec::with_capacity(quota);
        for (pos, &h) in heads.iter().enumerate() {
            let degree = quota / n + usize::from(pos < quota % n);
            if degree == 0 {
                continue;
            }
            let a: Vec<f64> = x[h].iter().zip(d).map(|(p, q)| p * q).collect();
            let mut tails: Vec<(f64, usize)> = (0..n)
                .filter(|&t| t != h)
                .map(|t| (a.iter().zip(&tails_side[t]).map(|(p, q)| p * q).sum(), t))
                .collect();
            tails.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)));
            picked.extend(tails[..degree].iter().map(|&(_, t)| (h, t)));
        }
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|(h, t)| (format!("e{h}"), format!("r{r}"), format!("e{t}"))));
    }
    Ok(out)
}
