use super::{ModelError, ModelParams};
use crate::tensor::{matmul, matmul_into, Matrix};

/// Column `col` of `a * b`, accumulated in the same order as the full
/// matrix product so that single scores and 1-N scores agree bit for bit.
pub(crate) fn project_column(a: &Matrix, b: &Matrix, col: usize) -> Vec<f64> {
    let bc = b.cols();
    let bd = b.data();
    (0..a.rows())
        .map(|i| {
            let mut acc = 0.0;
            for (k, &aik) in a.row(i).iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                acc += aik * bd[k * bc + col];
            }
            acc
        })
        .collect()
}

/// The three `r x r` projections `W1 E_dic`, `W2 R_dic`, `W3 E_dic`.
#[derive(Debug, Clone)]
pub(crate) struct Projections {
    pub head: Matrix,
    pub rel: Matrix,
    pub tail: Matrix,
}

impl Projections {
    pub fn new(params: &ModelParams) -> Self {
        // shapes are square r x r by ModelParams invariant
        Self {
            head: matmul(&params.w1, &params.e_dic).expect("square dictionaries"),
            rel: matmul(&params.w2, &params.r_dic).expect("square dictionaries"),
            tail: matmul(&params.w3, &params.e_dic).expect("square dictionaries"),
        }
    }
}

/// Head-side composite embedding `W1 * E_dic * E_loading[:, id]`.
pub fn composite_entity(params: &ModelParams, id: usize) -> Result<Vec<f64>, ModelError> {
    params.check_entity(id)?;
    let a = matmul(&params.w1, &params.e_dic)?;
    Ok(project_column(&a, &params.e_loading, id))
}

/// Tail-side composite embedding `W3 * E_dic * E_loading[:, id]`.
pub fn composite_tail(params: &ModelParams, id: usize) -> Result<Vec<f64>, ModelError> {
    params.check_entity(id)?;
    let a = matmul(&params.w3, &params.e_dic)?;
    Ok(project_column(&a, &params.e_loading, id))
}

/// Relation composite `W2 * R_dic * R_loading[:, id]`.
pub fn composite_relation(params: &ModelParams, id: usize) -> Result<Vec<f64>, ModelError> {
    params.check_relation(id)?;
    let a = matmul(&params.w2, &params.r_dic)?;
    Ok(project_column(&a, &params.r_loading, id))
}

pub fn score_triple(params: &ModelParams, h: usize, rel: usize, t: usize) -> Result<f64, ModelError> {
    let u = composite_entity(params, h)?;
    let v = composite_relation(params, rel)?;
    let w = composite_tail(params, t)?;
    Ok(trilinear(&u, &v, &w))
}

pub(crate) fn trilinear(u: &[f64], v: &[f64], w: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..u.len() {
        acc += (u[k] * v[k]) * w[k];
    }
    acc
}

pub fn score_all_tails(params: &ModelParams, h: usize, rel: usize) -> Result<Vec<f64>, ModelError> {
    params.check_entity(h)?;
    params.check_relation(rel)?;
    Ok(Scorer::new(params).tails(h, rel))
}

pub fn score_all_heads(params: &ModelParams, rel: usize, t: usize) -> Result<Vec<f64>, ModelError> {
    params.check_entity(t)?;
    params.check_relation(rel)?;
    Ok(Scorer::new(params).heads(rel, t))
}

/// Frozen-parameter scorer holding the composite embeddings of every local
/// entity and relation, for repeated 1-N queries.
#[derive(Debug, Clone)]
pub struct Scorer {
    rank: usize,
    num_entities: usize,
    /// `W1 E_dic E_loading`, column per entity.
    heads: Matrix,
    /// `W2 R_dic R_loading`.
    rels: Matrix,
    /// `W3 E_dic E_loading`.
    tails: Matrix,
}

impl Scorer {
    pub fn new(params: &ModelParams) -> Self {
        let proj = Projections::new(params);
        let (r, n) = (params.rank, params.num_entities());
        let mut heads = Matrix::zeros(r, n);
        let mut tails = Matrix::zeros(r, n);
        let mut rels = Matrix::zeros(r, params.num_relations());
        matmul_into(&proj.head, &params.e_loading, &mut heads);
        matmul_into(&proj.tail, &params.e_loading, &mut tails);
        matmul_into(&proj.rel, &params.r_loading, &mut rels);
        Self {
            rank: r,
            num_entities: n,
            heads,
            rels,
            tails,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    /// Scores of `(h, rel, j)` for every entity `j`.
    pub fn tails(&self, h: usize, rel: usize) -> Vec<f64> {
        let q: Vec<f64> = (0..self.rank)
            .map(|k| self.heads.get(k, h) * self.rels.get(k, rel))
            .collect();
        weighted_rows(&self.tails, &q)
    }

    /// Scores of `(i, rel, t)` for every entity `i`.
    pub fn heads(&self, rel: usize, t: usize) -> Vec<f64> {
        // keeps the (u * v) * w association of `triple`
        let mut out = vec![0.0; self.num_entities];
        for k in 0..self.rank {
            let (v, w) = (self.rels.get(k, rel), self.tails.get(k, t));
            for (o, &u) in out.iter_mut().zip(self.heads.row(k)) {
                *o += (u * v) * w;
            }
        }
        out
    }

    pub fn triple(&self, h: usize, rel: usize, t: usize) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.rank {
            acc += (self.heads.get(k, h) * self.rels.get(k, rel)) * self.tails.get(k, t);
        }
        acc
    }
}

/// `out[j] = sum_k q[k] * m[k, j]`, accumulated in ascending `k`.
pub(crate) fn weighted_rows(m: &Matrix, q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for (k, &qk) in q.iter().enumerate() {
        for (o, &x) in out.iter_mut().zip(m.row(k)) {
            *o += qk * x;
        }
    }
    out
}
