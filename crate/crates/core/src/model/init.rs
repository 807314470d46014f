use rand_distr::{Distribution, StandardNormal};

use super::ModelParams;
use crate::rng::{seeded, Rng};
use crate::tensor::Matrix;

fn gaussian(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// Orthogonalises a seeded Gaussian `n x n` matrix by modified Gram-Schmidt
/// on its columns, run twice for numerical orthogonality.
pub fn random_orthogonal(rng: &mut Rng, n: usize) -> Matrix {
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for _ in 0..2 {
        for j in 0..n {
            for i in 0..j {
                let (done, rest) = cols.split_at_mut(j);
                let qi = &done[i];
                let c = &mut rest[0];
                let dot: f64 = qi.iter().zip(c.iter()).map(|(a, b)| a * b).sum();
                for (x, q) in c.iter_mut().zip(qi) {
                    *x -= dot * q;
                }
            }
            let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut cols[j] {
                *x /= norm;
            }
        }
    }
    Matrix::from_fn(n, n, |i, j| cols[j][i])
}

/// Seeded initial parameters: orthogonal dictionaries, fusion weights near
/// the identity, and loadings with entry variance `1 / rank`.
pub fn init_params(seed: u64, rank: usize, num_entities: usize, num_relations: usize, s: f64) -> ModelParams {
    init_client_params(seed, seed, rank, num_entities, num_relations, s)
}

/// Like [`init_params`] but with the shared matrices and the loadings drawn
/// from different seeds, so that many clients can start from one common
/// shared subset while keeping their own loadings.
pub fn init_client_params(
    shared_seed: u64,
    private_seed: u64,
    rank: usize,
    num_entities: usize,
    num_relations: usize,
    s: f64,
) -> ModelParams {
    assert!(rank >= 1, "rank must be at least 1");
    let mut rng = seeded(shared_seed, 0);
    let e_dic = random_orthogonal(&mut rng, rank);
    let r_dic = random_orthogonal(&mut rng, rank);
    let near_identity = |rng: &mut Rng| {
        let mut w = gaussian(rng, rank, rank, 0.01);
        for i in 0..rank {
            w.set(i, i, w.get(i, i) + 1.0);
        }
        w
    };
    let w1 = near_identity(&mut rng);
    let w2 = near_identity(&mut rng);
    let w3 = near_identity(&mut rng);
    let mut rng = seeded(private_seed, 1);
    let scale = 1.0 / (rank as f64).sqrt();
    let e_loading = gaussian(&mut rng, rank, num_entities, scale);
    let r_loading = gaussian(&mut rng, rank, num_relations, scale);
    ModelParams {
        rank,
        s,
        e_dic,
        r_dic,
        w1,
        w2,
        w3,
        e_loading,
        r_loading,
    }
}
