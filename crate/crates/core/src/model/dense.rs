//! Dense reference forms of the model, for small instances only.
//!
//! The full score tensor is rebuilt with mode-n products of the identity
//! core, and the likelihood gradients are obtained by two-mode contractions
//! of a dense gradient tensor. Both are independent of the batched code path
//! in `grad.rs` and exist to cross-check it.

use super::loss::nll_grad;
use super::{GradSet, ModelError, ModelParams};
use crate::data::Batch;
use crate::tensor::{contract_two, matmul, matmul_nt, matmul_tn, mode_n_product, Matrix, Tensor3};

/// The three composite factor matrices `W1 E_dic E_loading`,
/// `W2 R_dic R_loading` and `W3 E_dic E_loading`, each `r x (vocab size)`.
pub fn factor_matrices(params: &ModelParams) -> Result<[Matrix; 3], ModelError> {
    let b1 = matmul(&matmul(&params.w1, &params.e_dic)?, &params.e_loading)?;
    let b2 = matmul(&matmul(&params.w2, &params.r_dic)?, &params.r_loading)?;
    let b3 = matmul(&matmul(&params.w3, &params.e_dic)?, &params.e_loading)?;
    Ok([b1, b2, b3])
}

/// `I x_1 B1^T x_2 B2^T x_3 B3^T`, dims `(|E|, |R|, |E|)`.
pub fn reconstruct(params: &ModelParams) -> Result<Tensor3, ModelError> {
    let [b1, b2, b3] = factor_matrices(params)?;
    let core = Tensor3::identity(params.rank);
    let t = mode_n_product(&core, &b1.transpose(), 1)?;
    let t = mode_n_product(&t, &b2.transpose(), 2)?;
    Ok(mode_n_product(&t, &b3.transpose(), 3)?)
}

/// Dense likelihood-gradient tensor: `d L_nll / d theta` on the batch cells,
/// zero elsewhere, with the same per-pair mean reduction as the loss.
pub fn gradient_tensor(params: &ModelParams, batch: &Batch) -> Result<Tensor3, ModelError> {
    let theta = reconstruct(params)?;
    let n = params.num_entities();
    let mut t = Tensor3::zeros([n, params.num_relations(), n]);
    let scale = 1.0 / batch.len().max(1) as f64;
    for (b, &(h, rel)) in batch.pairs.iter().enumerate() {
        for j in 0..n {
            let prev = t.get([h, rel, j]);
            let g = nll_grad(theta.get([h, rel, j]), batch.targets.get(b, j), params.s);
            t.set([h, rel, j], prev + g * scale);
        }
    }
    Ok(t)
}

/// Likelihood gradients of every parameter from a dense gradient tensor,
/// via contractions against the partially reconstructed model.
pub fn likelihood_grads(params: &ModelParams, grad_tensor: &Tensor3) -> Result<GradSet, ModelError> {
    let [b1, b2, b3] = factor_matrices(params)?;
    let core = Tensor3::identity(params.rank);

    // d/dB1: T x_{2,3} (I x_2 B2^T x_3 B3^T)
    let g1 = mode_n_product(&mode_n_product(&core, &b2.transpose(), 2)?, &b3.transpose(), 3)?;
    let d_b1 = contract_two(grad_tensor, &g1, (2, 3), (2, 3))?.transpose();
    // d/dB2: T x_{1,3} (I x_1 B1^T x_3 B3^T)
    let g2 = mode_n_product(&mode_n_product(&core, &b1.transpose(), 1)?, &b3.transpose(), 3)?;
    let d_b2 = contract_two(grad_tensor, &g2, (1, 3), (1, 3))?.transpose();
    // d/dB3: T x_{1,2} (I x_1 B1^T x_2 B2^T)
    let g3 = mode_n_product(&mode_n_product(&core, &b1.transpose(), 1)?, &b2.transpose(), 2)?;
    let d_b3 = contract_two(grad_tensor, &g3, (1, 2), (1, 2))?.transpose();

    let e_code = matmul(&params.e_dic, &params.e_loading)?;
    let r_code = matmul(&params.r_dic, &params.r_loading)?;
    let mut e_dic = matmul_nt(&matmul_tn(&params.w1, &d_b1)?, &params.e_loading)?;
    e_dic.axpy(1.0, &matmul_nt(&matmul_tn(&params.w3, &d_b3)?, &params.e_loading)?)?;
    let mut e_loading = matmul_tn(&matmul(&params.w1, &params.e_dic)?, &d_b1)?;
    e_loading.axpy(1.0, &matmul_tn(&matmul(&params.w3, &params.e_dic)?, &d_b3)?)?;
    Ok(GradSet {
        w1: matmul_nt(&d_b1, &e_code)?,
        w2: matmul_nt(&d_b2, &r_code)?,
        w3: matmul_nt(&d_b3, &e_code)?,
        e_dic,
        r_dic: matmul_nt(&matmul_tn(&params.w2, &d_b2)?, &params.r_loading)?,
        e_loading,
        r_loading: matmul_tn(&matmul(&params.w2, &params.r_dic)?, &d_b2)?,
    })
}
