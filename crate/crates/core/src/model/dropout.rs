use rand::Rng;

use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Inverted-dropout multipliers: `0` with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

pub fn apply_dropout<R: Rng + ?Sized>(v: &[f64], rate: f64, rng: &mut R, mode: DropoutMode) -> Vec<f64> {
    if mode == DropoutMode::Eval || rate <= 0.0 {
        return v.to_vec();
    }
    dropout_mask(v.len(), rate, rng)
        .iter()
        .zip(v)
        .map(|(m, x)| m * x)
        .collect()
}

/// Fixed masks for one training batch.
///
/// Head and relation composites get an independent mask per pair. The tail
/// composites of all entities form one `r x N` matrix that is masked once per
/// batch, since every pair is scored against all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    /// `batch x r`.
    pub head: Matrix,
    /// `batch x r`.
    pub rel: Matrix,
    /// `r x N`.
    pub tail: Matrix,
}

impl DropoutMasks {
    pub fn sample<R: Rng + ?Sized>(batch: usize, rank: usize, num_entities: usize, rate: f64, rng: &mut R) -> Self {
        let head = Matrix::from_vec(batch, rank, dropout_mask(batch * rank, rate, rng)).unwrap();
        let rel = Matrix::from_vec(batch, rank, dropout_mask(batch * rank, rate, rng)).unwrap();
        let tail = Matrix::from_vec(rank, num_entities, dropout_mask(rank * num_entities, rate, rng)).unwrap();
        Self { head, rel, tail }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_rate_is_identity() {
        let v = vec![1.0, -2.0, 3.5];
        assert_eq!(apply_dropout(&v, 0.0, &mut seeded(1, 0), DropoutMode::Train), v);
    }

    #[test]
    fn eval_mode_is_identity() {
        let v = vec![1.0, -2.0, 3.5];
        assert_eq!(apply_dropout(&v, 0.9, &mut seeded(1, 0), DropoutMode::Eval), v);
    }

    #[test]
    fn preserves_mean() {
        let v = vec![1.0; 10_000];
        let out = apply_dropout(&v, 0.5, &mut seeded(3, 0), DropoutMode::Train);
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
        assert!(out.iter().all(|&x| x == 0.0 || x == 2.0));
    }
}
