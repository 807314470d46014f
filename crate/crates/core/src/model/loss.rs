//! Bernoulli likelihood under `p = s * sigmoid(theta)` and the two penalties.
//!
//! All logarithms are evaluated in log space, so the loss stays finite for
//! any finite score.

use super::dropout::DropoutMasks;
use super::grad::forward_scores;
use super::{ModelError, ModelParams, Hyper};
use crate::data::Batch;
use crate::tensor::{frobenius_norm_sq, matmul_tn, Matrix, ShapeError};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log(e^a + e^b)`, tolerating `a = -inf`.
fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let m = a.max(b);
    m + (-(a - b).abs()).exp().ln_1p()
}

/// Triple probability `s * sigmoid(theta)`.
pub fn prob_from_score(theta: f64, s: f64) -> f64 {
    s * sigmoid(theta)
}

/// `log p`.
fn log_prob(theta: f64, s: f64) -> f64 {
    s.ln() - softplus(-theta)
}

/// `log(1 - p)`, using `1 - s sigmoid(theta) = ((1 - s) + e^-theta) / (1 + e^-theta)`.
fn log_one_minus_prob(theta: f64, s: f64) -> f64 {
    log_add_exp((1.0 - s).ln(), -theta) - softplus(-theta)
}

/// Negative log-likelihood of a single cell with label `a`.
pub fn cell_nll(theta: f64, a: f64, s: f64) -> f64 {
    let mut out = 0.0;
    if a != 0.0 {
        out -= a * log_prob(theta, s);
    }
    if a != 1.0 {
        out -= (1.0 - a) * log_one_minus_prob(theta, s);
    }
    out
}

/// `d cell_nll / d theta`.
///
/// The label term is `-a * sigmoid(-theta)`. The complement term simplifies
/// to `s / ((2 - s) + e^-theta + (1 - s) e^theta)`, which has no cancellation
/// and underflows gracefully at both tails.
pub fn nll_grad(theta: f64, a: f64, s: f64) -> f64 {
    let mut g = 0.0;
    if a != 0.0 {
        g -= a * sigmoid(-theta);
    }
    if a != 1.0 {
        let mut denom = (2.0 - s) + (-theta).exp();
        if s < 1.0 {
            denom += (1.0 - s) * theta.exp();
        }
        g += (1.0 - a) * s / denom;
    }
    g
}

/// `(cell_nll, nll_grad)` from a single exponential, using
/// `1 - s sigmoid(theta) = (1 - s) sigmoid(theta) + sigmoid(-theta)`, a sum
/// of two non-negative terms.
pub(crate) fn cell_nll_and_grad(theta: f64, a: f64, s: f64) -> (f64, f64) {
    let m = (-theta.abs()).exp();
    let (sp, sn) = if theta >= 0.0 {
        (1.0 / (1.0 + m), m / (1.0 + m))
    } else {
        (m / (1.0 + m), 1.0 / (1.0 + m))
    };
    let (mut nll, mut g) = (0.0, 0.0);
    if a != 0.0 {
        // -log p = -log s + softplus(-theta)
        nll += a * ((-theta).max(0.0) + m.ln_1p() - s.ln());
        g -= a * sn;
    }
    if a != 1.0 {
        let (neg_log_q, dq) = if s == 1.0 {
            (theta.max(0.0) + m.ln_1p(), sp)
        } else {
            let q = (1.0 - s) * sp + sn;
            (-q.ln(), s * sp * sn / q)
        };
        nll += (1.0 - a) * neg_log_q;
        g += (1.0 - a) * dq;
    }
    (nll, g)
}

/// Summed negative log-likelihood of one score vector against its labels.
pub fn nll_loss(scores: &[f64], labels: &[f64], s: f64) -> Result<f64, ModelError> {
    if scores.len() != labels.len() {
        return Err(ModelError::LengthMismatch {
            what: "scores vs labels",
            left: scores.len(),
            right: labels.len(),
        });
    }
    Ok(scores.iter().zip(labels).map(|(&t, &a)| cell_nll(t, a, s)).sum())
}

/// `||E^T E - I||_F^2 + ||R^T R - I||_F^2`.
pub fn dictionary_penalty(e_dic: &Matrix, r_dic: &Matrix) -> Result<f64, ModelError> {
    let r = e_dic.rows();
    if e_dic.cols() != r {
        return Err(ShapeError::new("dictionary_penalty", e_dic, "square").into());
    }
    if r_dic.shape() != (r, r) {
        return Err(ShapeError::new("dictionary_penalty", e_dic, r_dic).into());
    }
    let id = Matrix::identity(r);
    let e = matmul_tn(e_dic, e_dic)?.sub(&id)?;
    let rr = matmul_tn(r_dic, r_dic)?.sub(&id)?;
    Ok(frobenius_norm_sq(&e) + frobenius_norm_sq(&rr))
}

/// `||vec(E_loading)||_1 + ||vec(R_loading)||_1`.
pub fn loading_penalty(e_loading: &Matrix, r_loading: &Matrix) -> f64 {
    e_loading.abs_sum() + r_loading.abs_sum()
}

/// The three parts of the objective for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    /// Likelihood term: per-pair summed NLL, averaged over the batch pairs.
    pub nll: f64,
    pub dictionary: f64,
    pub loading: f64,
    pub total: f64,
}

impl LossParts {
    pub(crate) fn combine(nll: f64, dictionary: f64, loading: f64, hyper: &Hyper) -> Self {
        Self {
            nll,
            dictionary,
            loading,
            total: nll + hyper.alpha * dictionary + hyper.beta * loading,
        }
    }
}

/// `L_nll + alpha * L_dic + beta * L_loading` on one batch, no dropout.
pub fn total_loss(params: &ModelParams, batch: &Batch, hyper: &Hyper) -> Result<LossParts, ModelError> {
    total_loss_masked(params, batch, hyper, None)
}

/// Same as [`total_loss`] with fixed dropout masks applied to the composite
/// embeddings.
pub fn total_loss_masked(
    params: &ModelParams,
    batch: &Batch,
    hyper: &Hyper,
    masks: Option<&DropoutMasks>,
) -> Result<LossParts, ModelError> {
    let scores = forward_scores(params, batch, masks)?;
    let mut nll = 0.0;
    for b in 0..batch.len() {
        nll += nll_loss(scores.row(b), batch.targets.row(b), params.s)?;
    }
    if !batch.is_empty() {
        nll /= batch.len() as f64;
    }
    let dic = dictionary_penalty(&params.e_dic, &params.r_dic)?;
    let load = loading_penalty(&params.e_loading, &params.r_loading);
    Ok(LossParts::combine(nll, dic, load, hyper))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn probabilities() {
        assert_eq!(prob_from_score(0.0, 0.5), 0.25);
        assert!((prob_from_score(50.0, 0.5) - 0.5).abs() < 1e-9);
        assert!((prob_from_score(3f64.ln(), 0.5) - 0.375).abs() < 1e-15);
        for &t in &[-1e3, -50.0, 0.0, 50.0, 1e3] {
            let p = prob_from_score(t, 0.5);
            assert!(p.is_finite() && (0.0..=0.5).contains(&p));
        }
    }

    #[test]
    fn prob_strictly_increasing_and_bounded() {
        let s = 0.7;
        let mut prev = 0.0;
        for i in -300..=300 {
            let p = prob_from_score(i as f64 * 0.1, s);
            assert!(p > prev && p < s);
            prev = p;
        }
    }

    #[test]
    fn nll_cells() {
        assert!((cell_nll(0.0, 1.0, 0.5) - 1.3862943611198906).abs() < 1e-12);
        assert!(cell_nll(-50.0, 0.0, 0.5) < 1e-9);
        for &t in &[-1e3, 1e3] {
            for &a in &[0.0, 1.0] {
                for &s in &[0.5, 1.0] {
                    let v = cell_nll(t, a, s);
                    assert!(v.is_finite() && v >= 0.0, "theta {t} a {a} s {s} -> {v}");
                    assert!(nll_grad(t, a, s).is_finite());
                }
            }
        }
    }

    fn naive_nll(theta: f64, a: f64, s: f64) -> f64 {
        let p = s / (1.0 + (-theta).exp());
        -(a * p.ln() + (1.0 - a) * (1.0 - p).ln())
    }

    #[test]
    fn nll_vector_sums_scalar_contributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let scores: Vec<f64> = (0..8).map(|_| rng.random_range(-4.0..4.0)).collect();
        let labels: Vec<f64> = (0..8).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let want: f64 = scores.iter().zip(&labels).map(|(&t, &a)| naive_nll(t, a, 0.5)).sum();
        assert!((nll_loss(&scores, &labels, 0.5).unwrap() - want).abs() < 1e-12);
        assert!(nll_loss(&scores, &labels[..7], 0.5).is_err());
    }

    #[test]
    fn nll_grad_matches_finite_differences() {
        for &s in &[0.3, 0.5, 1.0] {
            for &a in &[0.0, 1.0, 0.2] {
                for i in -20..=20 {
                    let t = i as f64 * 0.37;
                    let h = 1e-6;
                    let fd = (cell_nll(t + h, a, s) - cell_nll(t - h, a, s)) / (2.0 * h);
                    let g = nll_grad(t, a, s);
                    assert!((fd - g).abs() < 1e-7 * (1.0 + g.abs()), "s {s} a {a} t {t}: {fd} vs {g}");
                }
            }
        }
    }

    #[test]
    fn fused_cell_matches_separate_forms() {
        for &s in &[0.3, 0.5, 0.9, 1.0] {
            for &a in &[0.0, 1.0, 0.25] {
                for i in -60..=60 {
                    let t = i as f64 * 0.77;
                    let (l, g) = cell_nll_and_grad(t, a, s);
                    let (lw, gw) = (cell_nll(t, a, s), nll_grad(t, a, s));
                    assert!((l - lw).abs() <= 1e-12 * (1.0 + lw.abs()), "s {s} a {a} t {t}: {l} vs {lw}");
                    assert!((g - gw).abs() <= 1e-12 * (1.0 + gw.abs()), "s {s} a {a} t {t}: {g} vs {gw}");
                }
                for &t in &[-1e3, 1e3] {
                    let (l, g) = cell_nll_and_grad(t, a, s);
                    assert!(l.is_finite() && g.is_finite());
                }
            }
        }
    }

    #[test]
    fn nll_grad_zero_when_label_equals_probability() {
        for &s in &[0.5, 0.9] {
            for i in -10..=10 {
                let t = i as f64 * 0.5;
                assert!(nll_grad(t, prob_from_score(t, s), s).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dictionary_penalty_cases() {
        let i2 = Matrix::identity(2);
        assert_eq!(dictionary_penalty(&i2, &i2).unwrap(), 0.0);
        assert_eq!(dictionary_penalty(&i2.scale(2.0), &i2).unwrap(), 18.0);
        assert!(dictionary_penalty(&Matrix::zeros(2, 3), &i2).is_err());
        assert!(dictionary_penalty(&i2, &Matrix::identity(3)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let r = Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let direct = |m: &Matrix| {
            let g = crate::tensor::matmul(&m.transpose(), m).unwrap();
            frobenius_norm_sq(&g.sub(&Matrix::identity(3)).unwrap())
        };
        assert!((dictionary_penalty(&e, &r).unwrap() - direct(&e) - direct(&r)).abs() < 1e-12);
    }

    #[test]
    fn loading_penalty_cases() {
        assert_eq!(loading_penalty(&Matrix::zeros(2, 2), &Matrix::zeros(2, 1)), 0.0);
        let e = Matrix::from_rows(&[&[1.0, -2.0], &[0.0, 3.0]]);
        assert_eq!(loading_penalty(&e, &Matrix::zeros(2, 1)), 6.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = Matrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
        let r = Matrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let mut want = 0.0;
        for m in [&e, &r] {
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    want += m.get(i, j).abs();
                }
            }
        }
        assert!((loading_penalty(&e, &r) - want).abs() < 1e-12);
    }
}
