//! Binary checkpoints of a whole run.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "FLESTCKPT1"
//! [u8; 32]            SHA-256 of the configuration
//! u32 len, bytes      configuration text
//! u32                 rounds completed
//! u32 len, bytes      global shared parameters as a wire message
//! u32                 number of clients, then per client:
//!   u32 client_id, u64 seed, u64 epochs_done
//!   u32 rank, f64 s
//!   7 matrices        parameters in Param::ALL order
//!   f64 beta1, f64 beta2, f64 eps, u64 step
//!   14 matrices       first then second moments
//! ```
//!
//! Every matrix is `u32 rows, u32 cols` followed by `rows * cols` f64 values
//! in row-major order.

use std::path::Path;

use flest_core::federation::SharedParams;
use flest_core::model::{AdamState, ModelParams, Param};
use flest_core::tensor::Matrix;
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 10] = b"FLESTCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("checkpoint has {0} unexpected trailing bytes")]
    Trailing(usize),
    #[error("bad checkpoint shape: {0}")]
    Shape(String),
    #[error("checkpoint config text does not match its hash")]
    HashMismatch,
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSnapshot {
    pub client_id: usize,
    pub seed: u64,
    pub epochs_done: u64,
    pub params: ModelParams,
    pub opt: AdamState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub config_text: String,
    pub round: usize,
    pub global: SharedParams,
    pub clients: Vec<ClientSnapshot>,
}

fn put_u32(out: &mut Vec<u8>, x: usize) {
    out.extend_from_slice(&(x as u32).to_le_bytes());
}

fn put_matrix(out: &mut Vec<u8>, m: &Matrix) {
    put_u32(out, m.rows());
    put_u32(out, m.cols());
    for x in m.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Matrix, CheckpointError> {
        let (r, c) = (self.u32()?, self.u32()?);
        if (r, c) != (rows, cols) {
            return Err(CheckpointError::Shape(format!("{what} is {r}x{c}, expected {rows}x{cols}")));
        }
        let raw = self.take(r * c * 8)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        Ok(Matrix::from_vec(r, c, data).expect("length checked"))
    }

    /// A matrix whose shape is only read, not checked.
    fn any_matrix(&mut self) -> Result<Matrix, CheckpointError> {
        let save = self.pos;
        let (r, c) = (self.u32()?, self.u32()?);
        self.pos = save;
        self.matrix(r, c, "matrix")
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        out.extend_from_slice(&self.config_hash);
        put_u32(&mut out, self.config_text.len());
        out.extend_from_slice(self.config_text.as_bytes());
        put_u32(&mut out, self.round);
        let msg = self.global.encode();
        put_u32(&mut out, msg.len());
        out.extend_from_slice(&msg);
        put_u32(&mut out, self.clients.len());
        for c in &self.clients {
            put_u32(&mut out, c.client_id);
            out.extend_from_slice(&c.seed.to_le_bytes());
            out.extend_from_slice(&c.epochs_done.to_le_bytes());
            put_u32(&mut out, c.params.rank);
            out.extend_from_slice(&c.params.s.to_le_bytes());
            for p in Param::ALL {
                put_matrix(&mut out, c.params.get(p));
            }
            for x in [c.opt.beta1, c.opt.beta2, c.opt.eps] {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out.extend_from_slice(&c.opt.step.to_le_bytes());
            for m in c.opt.m.iter().chain(&c.opt.v) {
                put_matrix(&mut out, m);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut rd = Reader { bytes, pos: 0 };
        if rd.take(CHECKPOINT_MAGIC.len()).ok() != Some(&CHECKPOINT_MAGIC[..]) {
            return Err(CheckpointError::BadMagic);
        }
        let config_hash: [u8; 32] = rd.array()?;
        let n = rd.u32()?;
        let config_text = String::from_utf8(rd.take(n)?.to_vec())
            .map_err(|_| CheckpointError::Shape("config text is not UTF-8".into()))?;
        let round = rd.u32()?;
        let n = rd.u32()?;
        let global = SharedParams::decode(rd.take(n)?).map_err(|e| CheckpointError::Shape(e.to_string()))?;
        let rank = global.rank();
        let num_clients = rd.u32()?;
        let mut clients = Vec::with_capacity(num_clients.min(1 << 16));
        for _ in 0..num_clients {
            let client_id = rd.u32()?;
            let seed = rd.u64()?;
            let epochs_done = rd.u64()?;
            let r = rd.u32()?;
            if r != rank {
                return Err(CheckpointError::Shape(format!("client {client_id} rank {r}, global rank {rank}")));
            }
            let s = rd.f64()?;
            let w1 = rd.matrix(r, r, "W1")?;
            let w2 = rd.matrix(r, r, "W2")?;
            let w3 = rd.matrix(r, r, "W3")?;
            let e_dic = rd.matrix(r, r, "E_dic")?;
            let r_dic = rd.matrix(r, r, "R_dic")?;
            let e_loading = rd.any_matrix()?;
            let r_loading = rd.any_matrix()?;
            if e_loading.rows() != r || r_loading.rows() != r {
                return Err(CheckpointError::Shape(format!("client {client_id} loadings must have {r} rows")));
            }
            let params = ModelParams {
                rank: r,
                s,
                e_dic,
                r_dic,
                w1,
                w2,
                w3,
                e_loading,
                r_loading,
            };
            let (beta1, beta2, eps, step) = (rd.f64()?, rd.f64()?, rd.f64()?, rd.u64()?);
            let mut moments = Vec::with_capacity(14);
            for _ in 0..2 {
                for p in Param::ALL {
                    let (rows, cols) = params.get(p).shape();
                    moments.push(rd.matrix(rows, cols, p.name())?);
                }
            }
            let v = moments.split_off(7);
            clients.push(ClientSnapshot {
                client_id,
                seed,
                epochs_done,
                params,
                opt: AdamState {
                    beta1,
                    beta2,
                    eps,
                    step,
                    m: moments,
                    v,
                },
            });
        }
        if rd.pos != bytes.len() {
            return Err(CheckpointError::Trailing(bytes.len() - rd.pos));
        }
        Ok(Self {
            config_hash,
            config_text,
            round,
            global,
            clients,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.encode())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::decode(&std::fs::read(path)?)
    }
}
