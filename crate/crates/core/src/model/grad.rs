//! Analytic gradients of the batch objective.
//!
//! The likelihood gradient tensor is only ever formed on the batch cells:
//! `T[b, j] = d L_nll / d theta(h_b, r_b, j)`. Back-propagating it through
//! the trilinear score gives the same contractions as the dense
//! `T x_{2,3} (I x_2 .. x_3 ..)` expressions, restricted to the rows the
//! batch touches; [`super::dense`] keeps the dense form for cross-checking.

use super::dropout::DropoutMasks;
use super::loss::{cell_nll_and_grad, dictionary_penalty, loading_penalty, LossParts};
use super::score::{project_column, weighted_rows, Projections};
use super::{GradSet, Hyper, ModelError, ModelParams};
use crate::data::Batch;
use crate::tensor::{matmul, matmul_into, matmul_nt, matmul_tn, Matrix, ShapeError};

struct Forward {
    proj: Projections,
    /// Tail composites of every entity, already masked.
    tails: Matrix,
    /// Masked head composites, `batch x r`.
    heads: Matrix,
    /// Masked relation composites, `batch x r`.
    rels: Matrix,
    /// `batch x N`.
    scores: Matrix,
}

fn check_batch(params: &ModelParams, batch: &Batch, masks: Option<&DropoutMasks>) -> Result<(), ModelError> {
    let n = params.num_entities();
    if batch.targets.cols() != n {
        return Err(ModelError::LengthMismatch {
            what: "label width vs entities",
            left: batch.targets.cols(),
            right: n,
        });
    }
    for &(h, rel) in &batch.pairs {
        params.check_entity(h)?;
        params.check_relation(rel)?;
    }
    if let Some(m) = masks {
        let r = params.rank;
        let b = batch.len();
        if m.head.shape() != (b, r) || m.rel.shape() != (b, r) {
            return Err(ShapeError::new("dropout masks", &m.head, format!("{b}x{r}")).into());
        }
        if m.tail.shape() != (r, n) {
            return Err(ShapeError::new("dropout masks", &m.tail, format!("{r}x{n}")).into());
        }
    }
    Ok(())
}

fn forward(params: &ModelParams, batch: &Batch, masks: Option<&DropoutMasks>) -> Result<Forward, ModelError> {
    check_batch(params, batch, masks)?;
    let (r, n, bsz) = (params.rank, params.num_entities(), batch.len());
    let proj = Projections::new(params);
    let mut tails = Matrix::zeros(r, n);
    matmul_into(&proj.tail, &params.e_loading, &mut tails);
    if let Some(m) = masks {
        for (x, k) in tails.data_mut().iter_mut().zip(m.tail.data()) {
            *x *= k;
        }
    }
    let mut heads = Matrix::zeros(bsz, r);
    let mut rels = Matrix::zeros(bsz, r);
    let mut scores = Matrix::zeros(bsz, n);
    for (b, &(h, rel)) in batch.pairs.iter().enumerate() {
        let u = project_column(&proj.head, &params.e_loading, h);
        let v = project_column(&proj.rel, &params.r_loading, rel);
        let mut q = vec![0.0; r];
        for k in 0..r {
            let (mu, mv) = masks.map_or((1.0, 1.0), |m| (m.head.get(b, k), m.rel.get(b, k)));
            let (uk, vk) = (u[k] * mu, v[k] * mv);
            heads.set(b, k, uk);
            rels.set(b, k, vk);
            q[k] = uk * vk;
        }
        let row = weighted_rows(&tails, &q);
        scores.data_mut()[b * n..(b + 1) * n].copy_from_slice(&row);
    }
    Ok(Forward {
        proj,
        tails,
        heads,
        rels,
        scores,
    })
}

/// Batch scores `theta[b, j]` with optional dropout.
pub(crate) fn forward_scores(
    params: &ModelParams,
    batch: &Batch,
    masks: Option<&DropoutMasks>,
) -> Result<Matrix, ModelError> {
    Ok(forward(params, batch, masks)?.scores)
}

/// Loss and gradient in one pass.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &Batch,
    hyper: &Hyper,
    masks: Option<&DropoutMasks>,
) -> Result<(LossParts, GradSet), ModelError> {
    let fwd = forward(params, batch, masks)?;
    let (r, n, bsz) = (params.rank, params.num_entities(), batch.len());
    let s = params.s;
    let scale = if bsz == 0 { 0.0 } else { 1.0 / bsz as f64 };

    let mut grads = GradSet::zeros_like(params);
    let mut d_head_proj = Matrix::zeros(r, r);
    let mut d_rel_proj = Matrix::zeros(r, r);
    let mut d_tails = Matrix::zeros(r, n);
    let mut nll = 0.0;

    let mut t_row = vec![0.0; n];
    for (b, &(h, rel)) in batch.pairs.iter().enumerate() {
        let theta = fwd.scores.row(b);
        let labels = batch.targets.row(b);
        let mut pair_nll = 0.0;
        for j in 0..n {
            let (l, g) = cell_nll_and_grad(theta[j], labels[j], s);
            pair_nll += l;
            t_row[j] = g * scale;
        }
        nll += pair_nll;

        let u = fwd.heads.row(b);
        let v = fwd.rels.row(b);
        // dq[k] = sum_j tails[k, j] T[b, j]; d_tails[k, :] += q[k] T[b, :]
        let mut du = vec![0.0; r];
        let mut dv = vec![0.0; r];
        for k in 0..r {
            let tail_row = fwd.tails.row(k);
            let dq = dot(tail_row, &t_row);
            let qk = u[k] * v[k];
            let off = k * n;
            for (d, &t) in d_tails.data_mut()[off..off + n].iter_mut().zip(&t_row) {
                *d += qk * t;
            }
            let (mu, mv) = masks.map_or((1.0, 1.0), |m| (m.head.get(b, k), m.rel.get(b, k)));
            du[k] = dq * v[k] * mu;
            dv[k] = dq * u[k] * mv;
        }
        accumulate_column_grad(&mut d_head_proj, &mut grads.e_loading, &fwd.proj.head, &params.e_loading, h, &du);
        accumulate_column_grad(&mut d_rel_proj, &mut grads.r_loading, &fwd.proj.rel, &params.r_loading, rel, &dv);
    }
    nll *= scale;

    if let Some(m) = masks {
        for (d, k) in d_tails.data_mut().iter_mut().zip(m.tail.data()) {
            *d *= k;
        }
    }
    // tails = (W3 E_dic) E_loading
    let d_tail_proj = matmul_nt(&d_tails, &params.e_loading)?;
    grads.e_loading.axpy(1.0, &matmul_tn(&fwd.proj.tail, &d_tails)?)?;

    // head = W1 E_dic, rel = W2 R_dic, tail = W3 E_dic
    grads.w1 = matmul_nt(&d_head_proj, &params.e_dic)?;
    grads.w2 = matmul_nt(&d_rel_proj, &params.r_dic)?;
    grads.w3 = matmul_nt(&d_tail_proj, &params.e_dic)?;
    grads.e_dic = matmul_tn(&params.w1, &d_head_proj)?;
    grads.e_dic.axpy(1.0, &matmul_tn(&params.w3, &d_tail_proj)?)?;
    grads.r_dic = matmul_tn(&params.w2, &d_rel_proj)?;

    add_penalty_grads(params, hyper, &mut grads)?;

    let dic = dictionary_penalty(&params.e_dic, &params.r_dic)?;
    let load = loading_penalty(&params.e_loading, &params.r_loading);
    Ok((LossParts::combine(nll, dic, load, hyper), grads))
}

/// Dot product with four independent accumulators, so the compiler can keep
/// them in vector lanes. The summation order is fixed.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// For `x = A * L[:, col]`: `dA += dx L[:, col]^T` and `dL[:, col] += A^T dx`.
fn accumulate_column_grad(d_proj: &mut Matrix, d_loading: &mut Matrix, proj: &Matrix, loading: &Matrix, col: usize, dx: &[f64]) {
    let r = dx.len();
    let lc = loading.cols();
    let ld = loading.data();
    for (i, &d) in dx.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &mut d_proj.data_mut()[i * r..(i + 1) * r];
        for (k, x) in row.iter_mut().enumerate() {
            *x += d * ld[k * lc + col];
        }
    }
    for k in 0..r {
        let mut acc = 0.0;
        for (i, &d) in dx.iter().enumerate() {
            acc += proj.get(i, k) * d;
        }
        let idx = k * lc + col;
        d_loading.data_mut()[idx] += acc;
    }
}

/// `sgn` with `sgn(0) = 0`.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Adds `4 alpha (D D^T D - D)` for both dictionaries and `beta sgn(L)` for
/// both loadings.
pub(crate) fn add_penalty_grads(params: &ModelParams, hyper: &Hyper, grads: &mut GradSet) -> Result<(), ModelError> {
    if hyper.alpha != 0.0 {
        for (d, g) in [(&params.e_dic, &mut grads.e_dic), (&params.r_dic, &mut grads.r_dic)] {
            let ddt_d = matmul(&matmul_nt(d, d)?, d)?;
            g.axpy(4.0 * hyper.alpha, &ddt_d.sub(d)?)?;
        }
    }
    if hyper.beta != 0.0 {
        for (l, g) in [(&params.e_loading, &mut grads.e_loading), (&params.r_loading, &mut grads.r_loading)] {
            for (gx, &x) in g.data_mut().iter_mut().zip(l.data()) {
                *gx += hyper.beta * sign(x);
            }
        }
    }
    Ok(())
}

pub fn grad_all(params: &ModelParams, batch: &Batch, hyper: &Hyper) -> Result<GradSet, ModelError> {
    Ok(loss_and_grad(params, batch, hyper, None)?.1)
}

pub fn grad_all_masked(
    params: &ModelParams,
    batch: &Batch,
    hyper: &Hyper,
    masks: &DropoutMasks,
) -> Result<GradSet, ModelError> {
    Ok(loss_and_grad(params, batch, hyper, Some(masks))?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, prob_from_score, total_loss, total_loss_masked, Param};
    use crate::rng::seeded;
    use rand::Rng;

    fn random_batch(params: &ModelParams, pairs: usize, seed: u64) -> Batch {
        let mut rng = seeded(seed, 99);
        let n = params.num_entities();
        let pairs: Vec<(usize, usize)> = (0..pairs)
            .map(|_| (rng.random_range(0..n), rng.random_range(0..params.num_relations())))
            .collect();
        let targets = Matrix::from_fn(pairs.len(), n, |_, _| (rng.random::<f64>() < 0.3) as u8 as f64);
        Batch::new(pairs, targets)
    }

    fn perturb(params: &ModelParams, seed: u64) -> ModelParams {
        // move away from the near-orthogonal init so penalty gradients are non-trivial
        let mut p = params.clone();
        let mut rng = seeded(seed, 5);
        for param in Param::ALL {
            for x in p.get_mut(param).data_mut() {
                *x += rng.random_range(-0.3..0.3);
            }
        }
        p
    }

    fn fd_check(params: &ModelParams, batch: &Batch, hyper: &Hyper, masks: Option<&DropoutMasks>) -> f64 {
        let analytic = loss_and_grad(params, batch, hyper, masks).unwrap().1;
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for param in Param::ALL {
            for i in 0..params.get(param).data().len() {
                let mut plus = params.clone();
                plus.get_mut(param).data_mut()[i] += h;
                let mut minus = params.clone();
                minus.get_mut(param).data_mut()[i] -= h;
                let fp = total_loss_masked(&plus, batch, hyper, masks).unwrap().total;
                let fm = total_loss_masked(&minus, batch, hyper, masks).unwrap().total;
                let fd = (fp - fm) / (2.0 * h);
                let a = analytic.get(param).data()[i];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn matches_finite_differences() {
        for (seed, alpha, beta) in [(1, 0.0, 0.0), (2, 0.1, 0.0), (3, 0.0, 0.1), (4, 0.1, 0.1)] {
            let params = perturb(&init_params(seed, 4, 8, 3, 0.5), seed);
            let batch = random_batch(&params, 5, seed);
            let hyper = Hyper { alpha, beta, ..Hyper::default() };
            let err = fd_check(&params, &batch, &hyper, None);
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn matches_finite_differences_with_dropout_masks() {
        let params = perturb(&init_params(9, 3, 6, 2, 0.5), 9);
        let batch = random_batch(&params, 4, 9);
        let masks = DropoutMasks::sample(4, 3, 6, 0.3, &mut seeded(9, 1));
        let hyper = Hyper { alpha: 0.1, beta: 0.1, ..Hyper::default() };
        let err = fd_check(&params, &batch, &hyper, Some(&masks));
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn stationary_when_labels_equal_probabilities() {
        let params = init_params(5, 4, 8, 3, 0.5);
        let mut batch = random_batch(&params, 5, 5);
        let scores = forward_scores(&params, &batch, None).unwrap();
        for (a, &t) in batch.targets.data_mut().iter_mut().zip(scores.data()) {
            *a = prob_from_score(t, params.s);
        }
        let hyper = Hyper { alpha: 0.0, beta: 0.0, ..Hyper::default() };
        let g = grad_all(&params, &batch, &hyper).unwrap();
        assert!(g.max_abs() < 1e-8, "max |grad| = {}", g.max_abs());
    }

    #[test]
    fn orthogonal_dictionary_has_no_penalty_gradient() {
        let mut params = init_params(6, 3, 4, 2, 0.5);
        params.e_dic = Matrix::identity(3);
        params.r_dic = Matrix::identity(3);
        let batch = Batch::empty(4);
        let hyper = Hyper { alpha: 0.7, beta: 0.0, ..Hyper::default() };
        let g = grad_all(&params, &batch, &hyper).unwrap();
        assert_eq!(g.e_dic.max_abs(), 0.0);
        assert_eq!(g.r_dic.max_abs(), 0.0);
    }

    #[test]
    fn loss_from_grad_pass_equals_total_loss() {
        let params = perturb(&init_params(7, 4, 8, 3, 0.5), 7);
        let batch = random_batch(&params, 6, 7);
        let hyper = Hyper { alpha: 0.1, beta: 0.05, ..Hyper::default() };
        let (parts, _) = loss_and_grad(&params, &batch, &hyper, None).unwrap();
        let direct = total_loss(&params, &batch, &hyper).unwrap();
        assert!((parts.total - direct.total).abs() < 1e-12);
        assert!((direct.total - (direct.nll + 0.1 * direct.dictionary + 0.05 * direct.loading)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_batches() {
        let params = init_params(1, 2, 3, 1, 0.5);
        let hyper = Hyper::default();
        let wide = Batch::new(vec![(0, 0)], Matrix::zeros(1, 4));
        assert!(grad_all(&params, &wide, &hyper).is_err());
        let out_of_range = Batch::new(vec![(0, 1)], Matrix::zeros(1, 3));
        assert!(matches!(
            grad_all(&params, &out_of_range, &hyper),
            Err(ModelError::IdOutOfRange { kind: "relation", .. })
        ));
    }
}
