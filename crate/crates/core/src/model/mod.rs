//! The dictionary/loading factorised embedding model.
//!
//! Each client scores a triple `(h, r, t)` with the trilinear form
//!
//! ```text
//! theta(h, r, t) = sum_k u_k * v_k * w_k
//! u = W1 * E_dic * E_loading[:, h]
//! v = W2 * R_dic * R_loading[:, r]
//! w = W3 * E_dic * E_loading[:, t]
//! ```
//!
//! which is the CP-factored Tucker model with an identity core. The `r x r`
//! matrices (`E_dic`, `R_dic`, `W1..W3`) are the shareable part; the loading
//! matrices are sized by the client's own vocabulary and never leave it.
//! Triple probabilities are `s * sigmoid(theta)` for a sparsity factor `s`.

mod adam;
pub mod dense;
mod dropout;
mod grad;
mod init;
mod loss;
mod score;
mod trainer;

pub use adam::{adam_step, AdamState};
pub use dropout::{apply_dropout, dropout_mask, DropoutMasks, DropoutMode};
pub use grad::{grad_all, grad_all_masked, loss_and_grad};
pub use init::{init_client_params, init_params, random_orthogonal};
pub use loss::{
    cell_nll, dictionary_penalty, loading_penalty, nll_grad, nll_loss, prob_from_score, sigmoid,
    total_loss, total_loss_masked, LossParts,
};
pub use score::{
    composite_entity, composite_relation, composite_tail, score_all_heads, score_all_tails,
    score_triple, Scorer,
};
pub use trainer::{train_epoch, EpochStats};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Matrix, ShapeError};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("{kind} id {id} out of range (have {len})")]
    IdOutOfRange { kind: &'static str, id: usize, len: usize },
    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
}

/// Identifies one of the seven parameter matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Param {
    EDic,
    RDic,
    W1,
    W2,
    W3,
    ELoading,
    RLoading,
}

impl Param {
    pub const ALL: [Param; 7] = [
        Param::W1,
        Param::W2,
        Param::W3,
        Param::EDic,
        Param::RDic,
        Param::ELoading,
        Param::RLoading,
    ];

    /// The five matrices exchanged with the server, in wire order.
    pub const SHARED: [Param; 5] = [Param::EDic, Param::RDic, Param::W1, Param::W2, Param::W3];

    pub fn name(self) -> &'static str {
        match self {
            Param::EDic => "E_dic",
            Param::RDic => "R_dic",
            Param::W1 => "W1",
            Param::W2 => "W2",
            Param::W3 => "W3",
            Param::ELoading => "E_loading",
            Param::RLoading => "R_loading",
        }
    }

    pub fn is_shared(self) -> bool {
        !matches!(self, Param::ELoading | Param::RLoading)
    }
}

/// One client's full parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub rank: usize,
    /// Sparsity factor, the ceiling of every triple probability.
    pub s: f64,
    pub e_dic: Matrix,
    pub r_dic: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
    pub w3: Matrix,
    /// `rank x |E_c|`, column `i` loads entity `i`.
    pub e_loading: Matrix,
    /// `rank x |R_c|`.
    pub r_loading: Matrix,
}

impl ModelParams {
    pub fn num_entities(&self) -> usize {
        self.e_loading.cols()
    }

    pub fn num_relations(&self) -> usize {
        self.r_loading.cols()
    }

    pub fn get(&self, p: Param) -> &Matrix {
        match p {
            Param::EDic => &self.e_dic,
            Param::RDic => &self.r_dic,
            Param::W1 => &self.w1,
            Param::W2 => &self.w2,
            Param::W3 => &self.w3,
            Param::ELoading => &self.e_loading,
            Param::RLoading => &self.r_loading,
        }
    }

    pub fn get_mut(&mut self, p: Param) -> &mut Matrix {
        match p {
            Param::EDic => &mut self.e_dic,
            Param::RDic => &mut self.r_dic,
            Param::W1 => &mut self.w1,
            Param::W2 => &mut self.w2,
            Param::W3 => &mut self.w3,
            Param::ELoading => &mut self.e_loading,
            Param::RLoading => &mut self.r_loading,
        }
    }

    /// Checks every matrix against `rank` and that all entries are finite.
    pub fn validate(&self) -> Result<(), ModelError> {
        let r = self.rank;
        for p in Param::SHARED {
            let m = self.get(p);
            if m.shape() != (r, r) {
                return Err(ShapeError::new("ModelParams", format!("{} {m}", p.name()), format!("{r}x{r}")).into());
            }
        }
        for p in [Param::ELoading, Param::RLoading] {
            let m = self.get(p);
            if m.rows() != r {
                return Err(ShapeError::new("ModelParams", format!("{} {m}", p.name()), format!("{r} rows")).into());
            }
        }
        if !(self.s > 0.0 && self.s <= 1.0) {
            return Err(ModelError::InvalidHyper(format!("sparsity factor {} not in (0, 1]", self.s)));
        }
        if Param::ALL.iter().any(|&p| !self.get(p).is_finite()) {
            return Err(ModelError::InvalidHyper("non-finite parameter".into()));
        }
        Ok(())
    }

    fn check_entity(&self, id: usize) -> Result<(), ModelError> {
        if id < self.num_entities() {
            Ok(())
        } else {
            Err(ModelError::IdOutOfRange {
                kind: "entity",
                id,
                len: self.num_entities(),
            })
        }
    }

    fn check_relation(&self, id: usize) -> Result<(), ModelError> {
        if id < self.num_relations() {
            Ok(())
        } else {
            Err(ModelError::IdOutOfRange {
                kind: "relation",
                id,
                len: self.num_relations(),
            })
        }
    }
}

/// Gradients of the total loss, one matrix per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet {
    pub e_dic: Matrix,
    pub r_dic: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
    pub w3: Matrix,
    pub e_loading: Matrix,
    pub r_loading: Matrix,
}

impl GradSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let z = |p: Param| {
            let m = params.get(p);
            Matrix::zeros(m.rows(), m.cols())
        };
        Self {
            e_dic: z(Param::EDic),
            r_dic: z(Param::RDic),
            w1: z(Param::W1),
            w2: z(Param::W2),
            w3: z(Param::W3),
            e_loading: z(Param::ELoading),
            r_loading: z(Param::RLoading),
        }
    }

    pub fn get(&self, p: Param) -> &Matrix {
        match p {
            Param::EDic => &self.e_dic,
            Param::RDic => &self.r_dic,
            Param::W1 => &self.w1,
            Param::W2 => &self.w2,
            Param::W3 => &self.w3,
            Param::ELoading => &self.e_loading,
            Param::RLoading => &self.r_loading,
        }
    }

    pub fn get_mut(&mut self, p: Param) -> &mut Matrix {
        match p {
            Param::EDic => &mut self.e_dic,
            Param::RDic => &mut self.r_dic,
            Param::W1 => &mut self.w1,
            Param::W2 => &mut self.w2,
            Param::W3 => &mut self.w3,
            Param::ELoading => &mut self.e_loading,
            Param::RLoading => &mut self.r_loading,
        }
    }

    pub fn max_abs(&self) -> f64 {
        Param::ALL.iter().map(|&p| self.get(p).max_abs()).fold(0.0, f64::max)
    }

    pub(crate) fn matches(&self, params: &ModelParams) -> Result<(), ShapeError> {
        for p in Param::ALL {
            if self.get(p).shape() != params.get(p).shape() {
                return Err(ShapeError::new("GradSet", self.get(p), params.get(p)));
            }
        }
        Ok(())
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    /// Weight of the dictionary orthogonality penalty.
    pub alpha: f64,
    /// Weight of the loading L1 penalty.
    pub beta: f64,
    pub lr: f64,
    pub dropout_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 1e-5,
            lr: 0.0005,
            dropout_rate: 0.3,
            local_epochs: 3,
            batch_size: 128,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidHyper(msg));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha = {} must be >= 0", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta = {} must be >= 0", self.beta));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr = {} must be > 0", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout = {} must be in [0, 1)", self.dropout_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        Ok(())
    }
}
