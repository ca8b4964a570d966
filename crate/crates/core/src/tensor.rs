//! Dense tensor algebra: storage, mode-n unfolding, Khatri-Rao products,
//! Kruskal (CP) reconstruction and MTTKRP.
//!
//! Tensors are stored row-major (last index fastest). Modes are 0-based at
//! the API. The unfolding column index follows the classical convention
//! where, among the remaining modes, the *first* index varies fastest:
//!
//! ```text
//! col = sum_{k != n} i_k * prod_{m < k, m != n} I_m
//! ```
//!
//! so that `unfold(T, n) = A_n * H_n^T` with
//! `H_n = A_{N-1} ⊙ ... ⊙ A_{n+1} ⊙ A_{n-1} ⊙ ... ⊙ A_0`.

use std::ops::{Index, IndexMut};

use crate::error::{shape_err, Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return shape_err(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
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

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return shape_err("ragged rows");
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, c)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return shape_err(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * other` without forming the transpose.
    pub fn tmatmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return shape_err(format!(
                "tmatmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Gram matrix `self^T * self`.
    pub fn gram(&self) -> Matrix {
        self.tmatmul(self).expect("gram shapes always agree")
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self + alpha * other`
    pub fn add_scaled(&self, alpha: f64, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + alpha * b)
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        self.map(|v| alpha * v)
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return shape_err(format!(
                "elementwise op on {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
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

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// N-dimensional dense array, row-major with the last index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let len: usize = shape.iter().product();
        if data.len() != len {
            return shape_err(format!(
                "tensor of shape {shape:?} needs {len} values, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        })
    }

    /// Fills a tensor by evaluating `f` at every multi-index in storage order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        check_shape(shape)?;
        let mut data = Vec::with_capacity(shape.iter().product());
        for_each_index(shape, |_, idx| data.push(f(idx)));
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &dim)| acc * dim + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.shape != other.shape {
            return shape_err(format!("{:?} vs {:?}", self.shape, other.shape));
        }
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scale(&self, alpha: f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    /// `‖self − other‖_F²`
    pub fn distance_sq(&self, other: &DenseTensor) -> Result<f64> {
        if self.shape != other.shape {
            return shape_err(format!("{:?} vs {:?}", self.shape, other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidArgument("tensor order must be at least 1".into()));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "tensor dimensions must be positive, got {shape:?}"
        )));
    }
    Ok(())
}

/// Visits every multi-index of `shape` in row-major order.
pub(crate) fn for_each_index(shape: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let total: usize = shape.iter().product();
    if total == 0 {
        return;
    }
    let mut idx = vec![0usize; shape.len()];
    for lin in 0..total {
        f(lin, &idx);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Ordered set of CP factor matrices sharing a common column count (the rank).
#[derive(Clone, Debug, PartialEq)]
pub struct KruskalFactors {
    factors: Vec<Matrix>,
    rank: usize,
}

impl KruskalFactors {
    pub fn new(factors: Vec<Matrix>) -> Result<Self> {
        let Some(first) = factors.first() else {
            return Err(Error::InvalidArgument("at least one factor is required".into()));
        };
        let rank = first.cols();
        if let Some((n, m)) = factors.iter().enumerate().find(|(_, m)| m.cols() != rank) {
            return shape_err(format!(
                "factor {n} has {} columns, expected rank {rank}",
                m.cols()
            ));
        }
        Ok(Self { factors, rank })
    }

    pub fn zeros(shape: &[usize], rank: usize) -> Self {
        Self {
            factors: shape.iter().map(|&d| Matrix::zeros(d, rank)).collect(),
            rank,
        }
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.rank
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn factor(&self, n: usize) -> &Matrix {
        &self.factors[n]
    }

    /// Replaces factor `n`; the new matrix must keep the same shape.
    pub fn set_factor(&mut self, n: usize, m: Matrix) -> Result<()> {
        let old = &self.factors[n];
        if old.rows() != m.rows() || old.cols() != m.cols() {
            return shape_err(format!(
                "factor {n} is {}x{}, replacement is {}x{}",
                old.rows(),
                old.cols(),
                m.rows(),
                m.cols()
            ));
        }
        self.factors[n] = m;
        Ok(())
    }

    pub fn into_factors(self) -> Vec<Matrix> {
        self.factors
    }

    /// Row counts of the factors, i.e. the shape of the reconstructed tensor.
    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    /// Squared Frobenius distance summed over all factors.
    pub fn distance_sq(&self, other: &KruskalFactors) -> Result<f64> {
        if self.order() != other.order() {
            return shape_err("factor sets differ in order");
        }
        self.factors
            .iter()
            .zip(&other.factors)
            .map(|(a, b)| a.sub(b).map(|d| d.frobenius_norm_sq()))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.factors.iter().all(Matrix::is_finite)
    }

    /// Factors in the order `A_{N-1}, ..., A_{n+1}, A_{n-1}, ..., A_0`, i.e. the
    /// operands of `H_n`.
    pub fn others_reversed(&self, mode: usize) -> Vec<&Matrix> {
        self.factors
            .iter()
            .enumerate()
            .rev()
            .filter(|&(k, _)| k != mode)
            .map(|(_, m)| m)
            .collect()
    }

    /// `H_n^T H_n`, computed as the Hadamard product of the Grams `A_k^T A_k`
    /// over `k != mode`.
    pub fn hadamard_gram(&self, mode: usize) -> Matrix {
        let mut out = Matrix::from_fn(self.rank, self.rank, |_, _| 1.0);
        for (k, a) in self.factors.iter().enumerate() {
            if k != mode {
                out = out.hadamard(&a.gram()).expect("grams are rank x rank");
            }
        }
        out
    }
}

/// Mode-`mode` unfolding: an `I_mode x prod_{k != mode} I_k` matrix.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<Matrix> {
    let order = t.order();
    if mode >= order {
        return Err(Error::ModeOutOfRange { mode, order });
    }
    let shape = t.shape();
    let strides = unfold_strides(shape, mode);
    let rows = shape[mode];
    let cols = t.len() / rows;
    let mut out = Matrix::zeros(rows, cols);
    for_each_index(shape, |lin, idx| {
        let col: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out[(idx[mode], col)] = t.data[lin];
    });
    Ok(out)
}

/// Inverse of [`unfold`].
pub fn fold(m: &Matrix, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
    check_shape(shape)?;
    let order = shape.len();
    if mode >= order {
        return Err(Error::ModeOutOfRange { mode, order });
    }
    let total: usize = shape.iter().product();
    if m.rows() != shape[mode] || m.cols() * m.rows() != total {
        return shape_err(format!(
            "cannot fold {}x{} into {shape:?} at mode {mode}",
            m.rows(),
            m.cols()
        ));
    }
    let strides = unfold_strides(shape, mode);
    let mut data = vec![0.0; total];
    for_each_index(shape, |lin, idx| {
        let col: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        data[lin] = m[(idx[mode], col)];
    });
    DenseTensor::new(shape.to_vec(), data)
}

/// Column strides of the unfolding: `prod_{m < k, m != mode} I_m` for `k != mode`
/// and 0 for `k == mode`.
fn unfold_strides(shape: &[usize], mode: usize) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (k, &dim) in shape.iter().enumerate() {
        if k == mode {
            continue;
        }
        strides[k] = acc;
        acc *= dim;
    }
    strides
}

/// Columnwise Kronecker product of `ms` in list order (the last matrix's row
/// index varies fastest).
pub fn khatri_rao(ms: &[&Matrix]) -> Result<Matrix> {
    let Some(first) = ms.first() else {
        return Err(Error::InvalidArgument("khatri_rao of an empty list".into()));
    };
    let r = first.cols();
    if let Some(m) = ms.iter().find(|m| m.cols() != r) {
        return shape_err(format!(
            "khatri_rao column counts differ: {r} vs {}",
            m.cols()
        ));
    }
    let mut out = (*first).clone();
    for m in &ms[1..] {
        let rows = out.rows() * m.rows();
        let mut next = Matrix::zeros(rows, r);
        for i in 0..out.rows() {
            for j in 0..m.rows() {
                let row = i * m.rows() + j;
                for c in 0..r {
                    next[(row, c)] = out[(i, c)] * m[(j, c)];
                }
            }
        }
        out = next;
    }
    Ok(out)
}

/// `T(i_1..i_N) = sum_c prod_n A_n(i_n, c)`.
pub fn kruskal_reconstruct(f: &KruskalFactors) -> DenseTensor {
    let shape = f.shape();
    let r = f.rank();
    let last = f.factors.last().expect("at least one factor");
    if r == 0 {
        let len = shape.iter().product();
        return DenseTensor { shape, data: vec![0.0; len] };
    }
    let w = leading_products(f, None);
    let mut data = Vec::with_capacity(shape.iter().product());
    for wp in w.chunks_exact(r) {
        for j in 0..last.rows() {
            data.push(wp.iter().zip(last.row(j)).map(|(x, y)| x * y).sum());
        }
    }
    DenseTensor { shape, data }
}

/// Row-wise products of the factors of all modes but the last, skipping
/// `skip`. Row `p` (length `rank`) corresponds to the row-major prefix index
/// `p` over those modes, so tensor entry `p * I_last + j` pairs with it.
fn leading_products(f: &KruskalFactors, skip: Option<usize>) -> Vec<f64> {
    let r = f.rank;
    let mut w = vec![1.0; r];
    for (k, a) in f.factors[..f.factors.len() - 1].iter().enumerate() {
        let mut next = Vec::with_capacity(w.len() * a.rows());
        for wp in w.chunks_exact(r) {
            for i in 0..a.rows() {
                if Some(k) == skip {
                    next.extend_from_slice(wp);
                } else {
                    next.extend(wp.iter().zip(a.row(i)).map(|(x, y)| x * y));
                }
            }
        }
        w = next;
    }
    w
}

/// `unfold(t, mode) * H_mode`, computed without forming the Khatri-Rao product.
pub fn mttkrp(t: &DenseTensor, f: &KruskalFactors, mode: usize) -> Result<Matrix> {
    let order = t.order();
    if mode >= order {
        return Err(Error::ModeOutOfRange { mode, order });
    }
    if f.shape() != t.shape() {
        return shape_err(format!(
            "factors of shape {:?} against tensor {:?}",
            f.shape(),
            t.shape()
        ));
    }
    let r = f.rank();
    let n_last = t.shape()[order - 1];
    let mut out = Matrix::zeros(t.shape()[mode], r);
    if r == 0 {
        return Ok(out);
    }
    if mode == order - 1 {
        let w = leading_products(f, None);
        for (wp, xs) in w.chunks_exact(r).zip(t.data.chunks_exact(n_last)) {
            for (j, &x) in xs.iter().enumerate() {
                let row = &mut out.data[j * r..(j + 1) * r];
                for (o, &v) in row.iter_mut().zip(wp) {
                    *o += x * v;
                }
            }
        }
        return Ok(out);
    }
    let last = &f.factors[order - 1];
    let stride: usize = t.shape()[mode + 1..order - 1].iter().product();
    let dim = t.shape()[mode];
    let w = leading_products(f, Some(mode));
    let mut z = vec![0.0; r];
    for (p, (wp, xs)) in w.chunks_exact(r).zip(t.data.chunks_exact(n_last)).enumerate() {
        z.fill(0.0);
        for (j, &x) in xs.iter().enumerate() {
            for (zc, &a) in z.iter_mut().zip(last.row(j)) {
                *zc += x * a;
            }
        }
        let i = (p / stride) % dim;
        let row = &mut out.data[i * r..(i + 1) * r];
        for ((o, &v), &zc) in row.iter_mut().zip(wp).zip(&z) {
            *o += v * zc;
        }
    }
    Ok(out)
}

/// Mode-`mode` product `t ×_mode m`: dimension `mode` becomes `m.rows()`.
pub fn mode_product(t: &DenseTensor, m: &Matrix, mode: usize) -> Result<DenseTensor> {
    let unfolded = unfold(t, mode)?;
    if m.cols() != unfolded.rows() {
        return shape_err(format!(
            "mode-{mode} product of {}x{} with dimension {}",
            m.rows(),
            m.cols(),
            unfolded.rows()
        ));
    }
    let mut shape = t.shape().to_vec();
    shape[mode] = m.rows();
    fold(&m.matmul(&unfolded)?, mode, &shape)
}
