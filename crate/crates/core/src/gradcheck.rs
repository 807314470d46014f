//! Finite-difference verification of the analytic gradients on a seeded grid
//! of small instances.

use rand::Rng;
use serde::Serialize;

use crate::data::Batch;
use crate::model::{
    init_params, loss_and_grad, prob_from_score, score_triple, total_loss_masked, DropoutMasks, GradSet, Hyper,
    ModelError, ModelParams, Param,
};
use crate::rng::{derive, seeded};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Bound on the largest gradient entry at the stationary instance.
    pub stationary_tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 24,
            seed: 0,
            step: 1e-5,
            tolerance: 1e-4,
            stationary_tolerance: 1e-8,
        }
    }
}

/// Shape and penalty weights of one grid instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Instance {
    pub rank: usize,
    pub entities: usize,
    pub relations: usize,
    pub pairs: usize,
    pub alpha: f64,
    pub beta: f64,
    pub dropout: bool,
}

/// The `i`-th instance of the grid: ranks 1..=4, up to 8 entities and 3
/// relations, every `(alpha, beta)` in `{0, 0.1}^2`, dropout masks on every
/// other instance.
pub fn grid_instance(i: usize) -> Instance {
    let penalties = [(0.0, 0.0), (0.1, 0.0), (0.0, 0.1), (0.1, 0.1)];
    let (alpha, beta) = penalties[i % 4];
    Instance {
        rank: 1 + (i / 4) % 4,
        entities: 3 + (i * 5) % 6,
        relations: 1 + (i / 2) % 3,
        pairs: 2 + i % 4,
        alpha,
        beta,
        dropout: (i / 4) % 2 == 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamResult {
    pub param: &'static str,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub instances: usize,
    pub tolerance: f64,
    pub per_param: Vec<ParamResult>,
    /// Largest analytic gradient entry when every label equals its model
    /// probability and both penalties are off.
    pub stationary_max_grad: f64,
    pub stationary_tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.per_param.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

fn build(inst: &Instance, seed: u64) -> (ModelParams, Batch, Option<DropoutMasks>) {
    let mut params = init_params(seed, inst.rank, inst.entities, inst.relations, 0.5);
    // move off the orthogonal init so the penalty gradients are not ~0
    let mut rng = seeded(seed, 7);
    for p in Param::ALL {
        for x in params.get_mut(p).data_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    let pairs: Vec<(usize, usize)> = (0..inst.pairs)
        .map(|_| (rng.random_range(0..inst.entities), rng.random_range(0..inst.relations)))
        .collect();
    let targets = Matrix::from_fn(pairs.len(), inst.entities, |_, _| f64::from(rng.random::<f64>() < 0.3));
    let batch = Batch::new(pairs, targets);
    let masks = inst
        .dropout
        .then(|| DropoutMasks::sample(batch.len(), inst.rank, inst.entities, 0.3, &mut rng));
    (params, batch, masks)
}

fn relative_error(a: f64, fd: f64) -> f64 {
    (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6)
}

/// Max relative error per parameter, in [`Param::ALL`] order.
fn check_instance(
    params: &ModelParams,
    batch: &Batch,
    hyper: &Hyper,
    masks: Option<&DropoutMasks>,
    step: f64,
    corrupt: Option<fn(&mut GradSet)>,
) -> Result<[f64; 7], ModelError> {
    let (_, mut analytic) = loss_and_grad(params, batch, hyper, masks)?;
    if let Some(f) = corrupt {
        f(&mut analytic);
    }
    let mut out = [0.0; 7];
    for (slot, p) in out.iter_mut().zip(Param::ALL) {
        for i in 0..params.get(p).data().len() {
            let mut plus = params.clone();
            plus.get_mut(p).data_mut()[i] += step;
            let mut minus = params.clone();
            minus.get_mut(p).data_mut()[i] -= step;
            let fp = total_loss_masked(&plus, batch, hyper, masks)?.total;
            let fm = total_loss_masked(&minus, batch, hyper, masks)?.total;
            let fd = (fp - fm) / (2.0 * step);
            *slot = f64::max(*slot, relative_error(analytic.get(p).data()[i], fd));
        }
    }
    Ok(out)
}

/// Largest gradient entry with labels set to the model's own probabilities.
fn stationary(seed: u64, corrupt: Option<fn(&mut GradSet)>) -> Result<f64, ModelError> {
    let inst = grid_instance(0);
    let (params, batch, _) = build(&inst, seed);
    let targets = Matrix::from_fn(batch.len(), inst.entities, |b, j| {
        let (h, rel) = batch.pairs[b];
        prob_from_score(score_triple(&params, h, rel, j).unwrap(), params.s)
    });
    let batch = Batch::new(batch.pairs, targets);
    let hyper = Hyper {
        alpha: 0.0,
        beta: 0.0,
        ..Hyper::default()
    };
    let (_, mut g) = loss_and_grad(&params, &batch, &hyper, None)?;
    if let Some(f) = corrupt {
        f(&mut g);
    }
    Ok(g.max_abs())
}

/// Runs the whole grid. `corrupt`, when given, is applied to every analytic
/// gradient before comparison and must make the check fail.
pub fn run_gradcheck(config: &GradcheckConfig, corrupt: Option<fn(&mut GradSet)>) -> Result<GradcheckReport, ModelError> {
    let mut worst = [0.0f64; 7];
    for i in 0..config.instances {
        let inst = grid_instance(i);
        let seed = derive(&[config.seed, i as u64]);
        let (params, batch, masks) = build(&inst, seed);
        let hyper = Hyper {
            alpha: inst.alpha,
            beta: inst.beta,
            ..Hyper::default()
        };
        let errs = check_instance(&params, &batch, &hyper, masks.as_ref(), config.step, corrupt)?;
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
    }
    let stationary_max_grad = stationary(derive(&[config.seed, u64::MAX]), corrupt)?;
    let per_param: Vec<ParamResult> = Param::ALL
        .iter()
        .zip(worst)
        .map(|(p, e)| ParamResult {
            param: p.name(),
            max_rel_error: e,
        })
        .collect();
    let passed = config.instances > 0
        && per_param.iter().all(|p| p.max_rel_error < config.tolerance)
        && stationary_max_grad < config.stationary_tolerance;
    Ok(GradcheckReport {
        instances: config.instances,
        tolerance: config.tolerance,
        per_param,
        stationary_max_grad,
        stationary_tolerance: config.stationary_tolerance,
        passed,
    })
}

/// Negative-control corruption: nudges one fusion-weight gradient entry.
pub fn corrupt_w2(g: &mut GradSet) {
    let x = g.w2.get(0, 0);
    g.w2.set(0, 0, x * 1.01 + 1e-3);
}
