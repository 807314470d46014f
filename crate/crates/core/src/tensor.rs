//! Dense row-major matrices and order-3 tensors.
//!
//! Only the handful of operations the model needs are provided: matrix
//! products, the mode-n product of an order-3 tensor with a matrix, and the
//! two-mode contraction of a pair of order-3 tensors. Modes are numbered
//! 1, 2, 3 throughout, matching the usual tensor-algebra convention.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Raised whenever operand shapes are incompatible. Nothing is broadcast.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("shape mismatch in {op}: {left} vs {right}")]
pub struct ShapeError {
    pub op: &'static str,
    pub left: String,
    pub right: String,
}

impl ShapeError {
    pub(crate) fn new(op: &'static str, left: impl fmt::Display, right: impl fmt::Display) -> Self {
        Self {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }
}

/// Dense `rows x cols` matrix of `f64`, stored row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}) ", self.rows, self.cols)?;
        f.debug_list()
            .entries(self.data.chunks(self.cols.max(1)))
            .finish()
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ShapeError> {
        if data.len() != rows * cols {
            return Err(ShapeError::new(
                "Matrix::from_vec",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices. Panics on ragged input; intended for
    /// literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scale(&self, a: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| a * x).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, ShapeError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, ShapeError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(
        &self,
        other: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix, ShapeError> {
        if self.shape() != other.shape() {
            return Err(ShapeError::new(op, self, other));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Matrix) -> Result<(), ShapeError> {
        if self.shape() != other.shape() {
            return Err(ShapeError::new("axpy", &*self, other));
        }
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
        Ok(())
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>, ShapeError> {
        if v.len() != self.cols {
            return Err(ShapeError::new("mul_vec", self, format!("vector({})", v.len())));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn abs_sum(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

/// Standard matrix product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, ShapeError> {
    if a.cols != b.rows {
        return Err(ShapeError::new("matmul", a, b));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    matmul_into(a, b, &mut out);
    Ok(out)
}

/// `out = a * b` without shape checks beyond debug assertions. `out` is
/// overwritten.
pub(crate) fn matmul_into(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!(out.shape(), (a.rows, b.cols));
    let n = b.cols;
    out.data.fill(0.0);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * n..(k + 1) * n];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
}

/// `a * b^T`, used for the outer-product accumulations in the gradients.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix, ShapeError> {
    if a.cols != b.cols {
        return Err(ShapeError::new("matmul_nt", a, b));
    }
    Ok(Matrix::from_fn(a.rows, b.rows, |i, j| {
        a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum()
    }))
}

/// `a^T * b`.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix, ShapeError> {
    if a.rows != b.rows {
        return Err(ShapeError::new("matmul_tn", a, b));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    let n = b.cols;
    for k in 0..a.rows {
        let b_row = b.row(k);
        for i in 0..a.cols {
            let aki = a.data[k * a.cols + i];
            if aki == 0.0 {
                continue;
            }
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aki * bkj;
            }
        }
    }
    Ok(out)
}

/// Sum of squared entries.
pub fn frobenius_norm_sq(m: &Matrix) -> f64 {
    m.data.iter().map(|x| x * x).sum()
}

/// Dense order-3 tensor, row-major with the last index fastest.
#[derive(Clone, PartialEq, Debug)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<f64>) -> Result<Self, ShapeError> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(ShapeError::new(
                "Tensor3::from_vec",
                format!("{dims:?}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { dims, data }
    }

    /// The order-3 identity (superdiagonal) tensor of side `n`.
    pub fn identity(n: usize) -> Self {
        Self::from_fn([n, n, n], |i, j, k| if i == j && j == k { 1.0 } else { 0.0 })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, idx: [usize; 3]) -> usize {
        debug_assert!(idx.iter().zip(&self.dims).all(|(i, d)| i < d));
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }

    #[inline]
    pub fn get(&self, idx: [usize; 3]) -> f64 {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 3], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    fn strides(&self) -> [usize; 3] {
        [self.dims[1] * self.dims[2], self.dims[2], 1]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

fn check_mode(op: &'static str, n: usize) -> Result<usize, ShapeError> {
    if (1..=3).contains(&n) {
        Ok(n - 1)
    } else {
        Err(ShapeError::new(op, format!("mode {n}"), "modes 1..=3"))
    }
}

/// Mode-n product `t x_n m`: the mode-`n` fibres of `t` are multiplied by
/// `m`, so `m.cols()` must equal `t.dims()[n-1]` and that dimension becomes
/// `m.rows()` in the result.
pub fn mode_n_product(t: &Tensor3, m: &Matrix, n: usize) -> Result<Tensor3, ShapeError> {
    let mode = check_mode("mode_n_product", n)?;
    if m.cols() != t.dims[mode] {
        return Err(ShapeError::new(
            "mode_n_product",
            format!("tensor {:?} (mode {n})", t.dims),
            m,
        ));
    }
    let mut dims = t.dims;
    dims[mode] = m.rows();
    let mut out = Tensor3::zeros(dims);
    let in_strides = t.strides();
    let out_strides = out.strides();
    let others: Vec<usize> = (0..3).filter(|&d| d != mode).collect();
    let (a, b) = (others[0], others[1]);
    for ia in 0..t.dims[a] {
        for ib in 0..t.dims[b] {
            let in_base = ia * in_strides[a] + ib * in_strides[b];
            let out_base = ia * out_strides[a] + ib * out_strides[b];
            for j in 0..m.rows() {
                let m_row = m.row(j);
                let mut acc = 0.0;
                for (i, &mji) in m_row.iter().enumerate() {
                    acc += t.data[in_base + i * in_strides[mode]] * mji;
                }
                out.data[out_base + j * out_strides[mode]] = acc;
            }
        }
    }
    Ok(out)
}

/// Contracts two modes of `t` against two modes of `u`. The result is the
/// matrix indexed by (free mode of `t`, free mode of `u`):
///
/// `C[a, b] = sum_{x, y} t[.. a .., x at t_modes.0, y at t_modes.1] * u[.. b .., x at u_modes.0, y at u_modes.1]`
pub fn contract_two(
    t: &Tensor3,
    u: &Tensor3,
    t_modes: (usize, usize),
    u_modes: (usize, usize),
) -> Result<Matrix, ShapeError> {
    let (ti, tj) = (
        check_mode("contract_two", t_modes.0)?,
        check_mode("contract_two", t_modes.1)?,
    );
    let (uk, ul) = (
        check_mode("contract_two", u_modes.0)?,
        check_mode("contract_two", u_modes.1)?,
    );
    if ti == tj || uk == ul {
        return Err(ShapeError::new(
            "contract_two",
            format!("modes {t_modes:?}"),
            format!("modes {u_modes:?}"),
        ));
    }
    if t.dims[ti] != u.dims[uk] || t.dims[tj] != u.dims[ul] {
        return Err(ShapeError::new(
            "contract_two",
            format!("tensor {:?} modes {t_modes:?}", t.dims),
            format!("tensor {:?} modes {u_modes:?}", u.dims),
        ));
    }
    let t_free = 3 - ti - tj;
    let u_free = 3 - uk - ul;
    let (ts, us) = (t.strides(), u.strides());
    let mut out = Matrix::zeros(t.dims[t_free], u.dims[u_free]);
    for a in 0..t.dims[t_free] {
        for b in 0..u.dims[u_free] {
            let mut acc = 0.0;
            for x in 0..t.dims[ti] {
                for y in 0..t.dims[tj] {
                    acc += t.data[a * ts[t_free] + x * ts[ti] + y * ts[tj]]
                        * u.data[b * us[u_free] + x * us[uk] + y * us[ul]];
                }
            }
            out.set(a, b, acc);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Tensor3 {
        Tensor3::from_fn(dims, |_, _, _| rng.random_range(-1.0..1.0))
    }

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn loop_mode_n(t: &Tensor3, m: &Matrix, n: usize) -> Tensor3 {
        let mut dims = t.dims();
        dims[n - 1] = m.rows();
        Tensor3::from_fn(dims, |i, j, k| {
            let idx = [i, j, k];
            let mut acc = 0.0;
            for x in 0..t.dims()[n - 1] {
                let mut src = idx;
                src[n - 1] = x;
                acc += t.get(src) * m.get(idx[n - 1], x);
            }
            acc
        })
    }

    #[test]
    fn mode_n_identity_leaves_tensor_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = rand_tensor(&mut rng, [2, 2, 2]);
        for n in 1..=3 {
            assert_eq!(mode_n_product(&t, &Matrix::identity(2), n).unwrap(), t);
        }
    }

    #[test]
    fn mode_n_scalar() {
        let t = Tensor3::from_vec([1, 1, 1], vec![2.0]).unwrap();
        let m = Matrix::from_vec(1, 1, vec![3.0]).unwrap();
        let out = mode_n_product(&t, &m, 3).unwrap();
        assert_eq!(out.data(), &[6.0]);
    }

    #[test]
    fn mode_n_matches_four_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = rand_tensor(&mut rng, [3, 4, 5]);
        let m = rand_matrix(&mut rng, 2, 4);
        let got = mode_n_product(&t, &m, 2).unwrap();
        assert_eq!(got.dims(), [3, 2, 5]);
        let mut want = Tensor3::zeros([3, 2, 5]);
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..5 {
                    let mut acc = 0.0;
                    for x in 0..4 {
                        acc += t.get([i, x, k]) * m.get(j, x);
                    }
                    want.set([i, j, k], acc);
                }
            }
        }
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_n_rejects_mismatch() {
        let t = Tensor3::zeros([2, 3, 4]);
        let err = mode_n_product(&t, &Matrix::zeros(2, 2), 2).unwrap_err();
        assert!(err.to_string().contains("[2, 3, 4]"));
        assert!(err.to_string().contains("2x2"));
        assert!(mode_n_product(&t, &Matrix::zeros(2, 2), 4).is_err());
    }

    #[test]
    fn contract_scalar() {
        let t = Tensor3::from_vec([1, 1, 1], vec![2.0]).unwrap();
        let c = contract_two(&t, &t, (2, 3), (2, 3)).unwrap();
        assert_eq!(c.shape(), (1, 1));
        assert_eq!(c.data(), &[4.0]);
    }

    #[test]
    fn contract_single_nonzero_propagates_to_one_row() {
        let mut t = Tensor3::zeros([3, 2, 2]);
        t.set([1, 0, 1], 5.0);
        let u = Tensor3::from_fn([4, 2, 2], |_, _, _| 1.0);
        let c = contract_two(&t, &u, (2, 3), (2, 3)).unwrap();
        for a in 0..3 {
            for b in 0..4 {
                let want = if a == 1 { 5.0 } else { 0.0 };
                assert_eq!(c.get(a, b), want);
            }
        }
    }

    #[test]
    fn contract_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = rand_tensor(&mut rng, [2, 3, 4]);
        let u = rand_tensor(&mut rng, [5, 3, 4]);
        let c = contract_two(&t, &u, (2, 3), (2, 3)).unwrap();
        for a in 0..2 {
            for b in 0..5 {
                let mut acc = 0.0;
                for x in 0..3 {
                    for y in 0..4 {
                        acc += t.get([a, x, y]) * u.get([b, x, y]);
                    }
                }
                assert!((c.get(a, b) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn contract_rejects_mismatch() {
        let t = Tensor3::zeros([2, 3, 4]);
        let u = Tensor3::zeros([2, 4, 3]);
        assert!(contract_two(&t, &u, (2, 3), (2, 3)).is_err());
        assert!(contract_two(&t, &u, (2, 2), (3, 2)).is_err());
        assert!(contract_two(&t, &u, (2, 3), (3, 2)).is_ok());
    }

    #[test]
    fn matmul_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = rand_matrix(&mut rng, 3, 2);
        assert_eq!(matmul(&Matrix::identity(3), &b).unwrap(), b);
        let z = matmul(&Matrix::zeros(2, 2), &rand_matrix(&mut rng, 2, 2)).unwrap();
        assert!(z.data().iter().all(|&x| x == 0.0));

        let a = rand_matrix(&mut rng, 4, 3);
        let b = rand_matrix(&mut rng, 3, 5);
        let c = matmul(&a, &b).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - acc).abs() < 1e-12);
            }
        }
        assert!(matmul(&a, &a).is_err());
        let nt = matmul_nt(&a, &a).unwrap();
        let tn = matmul_tn(&b, &b).unwrap();
        let want_nt = matmul(&a, &a.transpose()).unwrap();
        let want_tn = matmul(&b.transpose(), &b).unwrap();
        for (x, y) in nt.data().iter().zip(want_nt.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in tn.data().iter().zip(want_tn.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn frobenius_cases() {
        assert_eq!(frobenius_norm_sq(&Matrix::zeros(3, 3)), 0.0);
        assert_eq!(frobenius_norm_sq(&Matrix::identity(2)), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = rand_matrix(&mut rng, 3, 3);
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                acc += m.get(i, j) * m.get(i, j);
            }
        }
        assert!((frobenius_norm_sq(&m) - acc).abs() < 1e-12);
    }

    fn dims_strategy() -> impl Strategy<Value = [usize; 3]> {
        [1usize..=5, 1usize..=5, 1usize..=5]
    }

    proptest! {
        #[test]
        fn mode_n_agrees_with_loops(dims in dims_strategy(), rows in 1usize..=5, n in 1usize..=3, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = rand_tensor(&mut rng, dims);
            let m = rand_matrix(&mut rng, rows, dims[n - 1]);
            let got = mode_n_product(&t, &m, n).unwrap();
            let want = loop_mode_n(&t, &m, n);
            prop_assert_eq!(got.dims(), want.dims());
            for (a, b) in got.data().iter().zip(want.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn mode_n_is_linear(dims in dims_strategy(), n in 1usize..=3, a in -2.0f64..2.0, b in -2.0f64..2.0, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = rand_tensor(&mut rng, dims);
            let m1 = rand_matrix(&mut rng, 3, dims[n - 1]);
            let m2 = rand_matrix(&mut rng, 3, dims[n - 1]);
            let combo = m1.scale(a).add(&m2.scale(b)).unwrap();
            let lhs = mode_n_product(&t, &combo, n).unwrap();
            let f1 = mode_n_product(&t, &m1, n).unwrap();
            let f2 = mode_n_product(&t, &m2, n).unwrap();
            for i in 0..lhs.data().len() {
                let rhs = a * f1.data()[i] + b * f2.data()[i];
                prop_assert!((lhs.data()[i] - rhs).abs() < 1e-10);
            }
            // linear in the tensor argument too
            let t2 = rand_tensor(&mut rng, dims);
            let mix = Tensor3::from_fn(dims, |i, j, k| a * t.get([i, j, k]) + b * t2.get([i, j, k]));
            let lhs = mode_n_product(&mix, &m1, n).unwrap();
            let g2 = mode_n_product(&t2, &m1, n).unwrap();
            for i in 0..lhs.data().len() {
                let rhs = a * f1.data()[i] + b * g2.data()[i];
                prop_assert!((lhs.data()[i] - rhs).abs() < 1e-10);
            }
        }

        #[test]
        fn contract_agrees_with_loops(free_t in 1usize..=5, free_u in 1usize..=5, x in 1usize..=5, y in 1usize..=5, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // contracted modes on t are (1, 3); on u they are (3, 2)
            let t = rand_tensor(&mut rng, [x, free_t, y]);
            let u = rand_tensor(&mut rng, [free_u, y, x]);
            let c = contract_two(&t, &u, (1, 3), (3, 2)).unwrap();
            prop_assert_eq!(c.shape(), (free_t, free_u));
            for a in 0..free_t {
                for b in 0..free_u {
                    let mut acc = 0.0;
                    for i in 0..x {
                        for j in 0..y {
                            acc += t.get([i, a, j]) * u.get([b, j, i]);
                        }
                    }
                    prop_assert!((c.get(a, b) - acc).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn set_get_round_trip(dims in dims_strategy(), v in -1e6f64..1e6, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = rand_tensor(&mut rng, dims);
            let idx = [rng.random_range(0..dims[0]), rng.random_range(0..dims[1]), rng.random_range(0..dims[2])];
            t.set(idx, v);
            prop_assert_eq!(t.get(idx), v);
        }
    }
}
