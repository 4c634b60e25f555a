//! Dense row-major matrices, fixed binary masks and the masked products the
//! recurrent cells are built on.
//!
//! Indexing is 0-based and row-major throughout. The group mask pairs row `i`
//! with column `j` when `i mod p == j mod p`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
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

    /// Entries drawn uniformly from `[-limit, limit)`.
    pub fn random_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Elementwise product with a mask, materialised densely.
    pub fn hadamard(&self, mask: &BinaryMask) -> Result<Matrix> {
        if self.shape() != mask.shape() {
            return Err(Error::dim(
                "Matrix::hadamard",
                format!("{:?}", self.shape()),
                format!("{:?}", mask.shape()),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&mask.bits)
            .map(|(w, &m)| w * f64::from(m))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// `y = A x`, summing each row left to right.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::dim("Matrix::matvec", self.cols, x.len()));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `y += A x` without shape checks beyond debug assertions.
    #[inline]
    pub(crate) fn matvec_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += dot(self.row(i), x);
        }
    }

    /// `y += Aᵀ x`.
    #[inline]
    pub(crate) fn matvec_t_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (yj, &a) in y.iter_mut().zip(self.row(i)) {
                *yj += a * xi;
            }
        }
    }

    /// `self += a bᵀ` (outer product accumulate).
    #[inline]
    pub(crate) fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            for (dst, &bj) in self.row_mut(i).iter_mut().zip(b) {
                *dst += ai * bj;
            }
        }
    }

    /// General product `self · other` through `matrixmultiply`'s dgemm.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim("Matrix::matmul", self.cols, other.rows));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm_into(self, false, other, false, &mut out, 0.0);
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::dim("Matrix::matmul_t", self.cols, other.cols));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm_into(self, false, other, true, &mut out, 0.0);
        Ok(out)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// `out = a·b (+ beta·out)` with optional transposes, row-major strides.
pub fn gemm_into(a: &Matrix, a_t: bool, b: &Matrix, b_t: bool, out: &mut Matrix, beta: f64) {
    let (m, k) = if a_t { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if b_t { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, kb, "gemm inner dimension");
    assert_eq!(out.shape(), (m, n), "gemm output shape");
    let (rsa, csa) = if a_t { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if b_t { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: strides and extents describe the exact buffers owned by `a`, `b`
    // and `out`, which do not alias.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            out.cols as isize,
            1,
        );
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// A fixed 0/1 matrix constraining a weight matrix of the same shape.
///
/// Alongside the dense bits the mask keeps the column support of each row, so
/// products can skip masked-out entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MaskRepr", into = "MaskRepr")]
pub struct BinaryMask {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
    row_offsets: Vec<usize>,
    support: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct MaskRepr {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
}

impl TryFrom<MaskRepr> for BinaryMask {
    type Error = Error;

    fn try_from(repr: MaskRepr) -> Result<Self> {
        BinaryMask::from_bits(repr.rows, repr.cols, repr.bits)
    }
}

impl From<BinaryMask> for MaskRepr {
    fn from(mask: BinaryMask) -> Self {
        MaskRepr {
            rows: mask.rows,
            cols: mask.cols,
            bits: mask.bits,
        }
    }
}

impl BinaryMask {
    pub fn from_bits(rows: usize, cols: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::dim("BinaryMask::from_bits", rows * cols, bits.len()));
        }
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::InvalidArgument(format!("mask entry {bad} is not 0 or 1")));
        }
        let mut row_offsets = Vec::with_capacity(rows + 1);
        let mut support = Vec::new();
        row_offsets.push(0);
        for i in 0..rows {
            support.extend((0..cols).filter(|&j| bits[i * cols + j] == 1));
            row_offsets.push(support.len());
        }
        Ok(Self {
            rows,
            cols,
            bits,
            row_offsets,
            support,
        })
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::from_bits(rows, cols, vec![1; rows * cols]).expect("shape is consistent")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_bits(rows, cols, vec![0; rows * cols]).expect("shape is consistent")
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j] == 1
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Columns `j` with `M[i, j] = 1`, ascending.
    #[inline]
    pub fn row_support(&self, i: usize) -> &[usize] {
        &self.support[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    pub fn count_ones(&self) -> usize {
        self.support.len()
    }

    /// `y += (W∘M) x`, touching only the mask support.
    #[inline]
    pub(crate) fn support_matvec_acc(&self, w: &Matrix, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(w.shape(), self.shape());
        for (i, yi) in y.iter_mut().enumerate() {
            let row = w.row(i);
            let mut acc = 0.0;
            for &j in self.row_support(i) {
                acc += row[j] * x[j];
            }
            *yi += acc;
        }
    }

    /// `y += (W∘M)ᵀ x`.
    #[inline]
    pub(crate) fn support_matvec_t_acc(&self, w: &Matrix, x: &[f64], y: &mut [f64]) {
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = w.row(i);
            for &j in self.row_support(i) {
                y[j] += row[j] * xi;
            }
        }
    }

    /// `G += (a bᵀ)∘M`; entries off the support are never written.
    #[inline]
    pub(crate) fn support_add_outer(&self, g: &mut Matrix, a: &[f64], b: &[f64]) {
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            let offsets = self.row_offsets[i]..self.row_offsets[i + 1];
            let row = g.row_mut(i);
            for &j in &self.support[offsets] {
                row[j] += ai * b[j];
            }
        }
    }
}

/// Reference masked product: `y_i = Σ_j (W_ij·M_ij)·x_j`, evaluated over every
/// column exactly as `hadamard(W, M)` followed by `matvec` would.
pub fn masked_matmul(w: &Matrix, mask: &BinaryMask, x: &[f64]) -> Result<Vec<f64>> {
    if w.shape() != mask.shape() {
        return Err(Error::dim(
            "masked_matmul",
            format!("mask {:?}", w.shape()),
            format!("{:?}", mask.shape()),
        ));
    }
    if x.len() != w.cols() {
        return Err(Error::dim("masked_matmul", w.cols(), x.len()));
    }
    Ok((0..w.rows())
        .map(|i| {
            let bits = &mask.bits[i * mask.cols..(i + 1) * mask.cols];
            w.row(i)
                .iter()
                .zip(bits)
                .zip(x)
                .fold(0.0, |acc, ((wij, &m), xj)| acc + (wij * f64::from(m)) * xj)
        })
        .collect())
}

/// Group mask with `bits[i][j] = 1` iff `i mod p == j mod p`.
pub fn build_group_mask(p: usize, rows: usize, cols: usize) -> Result<BinaryMask> {
    if p == 0 {
        return Err(Error::InvalidArgument("feature count p must be at least 1".into()));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "mask shape must be non-empty, got {rows}x{cols}"
        )));
    }
    let bits = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| u8::from(i % p == j % p)))
        .collect();
    BinaryMask::from_bits(rows, cols, bits)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    x.tanh()
}

pub fn sigmoid_vec(xs: &[f64]) -> Vec<f64> {
    xs.iter().copied().map(sigmoid).collect()
}

pub fn tanh_vec(xs: &[f64]) -> Vec<f64> {
    xs.iter().copied().map(tanh).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn all_ones_mask_is_plain_matmul() {
        let mut rng = SeedTree::new(7).stream("t");
        let w = Matrix::random_uniform(5, 4, 1.0, &mut rng);
        let x = [0.3, -1.2, 2.0, 0.7];
        let masked = masked_matmul(&w, &BinaryMask::ones(5, 4), &x).unwrap();
        assert_eq!(masked, w.matvec(&x).unwrap());
    }

    #[test]
    fn all_zero_mask_gives_zero_vector() {
        let w = Matrix::from_fn(3, 2, |i, j| (i + j) as f64 + 1.0);
        let y = masked_matmul(&w, &BinaryMask::zeros(3, 2), &[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![0.0; 3]);
    }

    #[test]
    fn group_mask_on_ones_matrix() {
        // Dense oracle: form W∘M by hand, then multiply.
        let w = Matrix::from_fn(4, 4, |_, _| 1.0);
        let m = build_group_mask(2, 4, 4).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0];
        let mut expected = vec![0.0; 4];
        for (i, e) in expected.iter_mut().enumerate() {
            for (j, xj) in x.iter().enumerate() {
                if i % 2 == j % 2 {
                    *e += xj;
                }
            }
        }
        assert_eq!(expected, vec![4.0, 6.0, 4.0, 6.0]);
        assert_eq!(masked_matmul(&w, &m, &x).unwrap(), expected);
    }

    #[test]
    fn shape_errors() {
        let w = Matrix::zeros(3, 2);
        assert!(masked_matmul(&w, &BinaryMask::ones(2, 3), &[1.0, 1.0]).is_err());
        assert!(masked_matmul(&w, &BinaryMask::ones(3, 2), &[1.0]).is_err());
        assert!(Matrix::from_vec(2, 2, vec![1.0]).is_err());
        assert!(BinaryMask::from_bits(1, 2, vec![0, 2]).is_err());
    }

    #[test]
    fn group_mask_examples() {
        assert!(matches!(build_group_mask(0, 2, 2), Err(Error::InvalidArgument(_))));
        let single = build_group_mask(1, 3, 5).unwrap();
        assert_eq!(single.count_ones(), 15);
        let ident = build_group_mask(4, 4, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(ident.get(i, j), i == j);
            }
        }
        let parity = build_group_mask(2, 4, 4).unwrap();
        assert_eq!(parity.count_ones(), 8);
        assert!(parity.get(0, 2) && parity.get(1, 3) && !parity.get(0, 1));
    }

    #[test]
    fn activations() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(tanh(0.0), 0.0);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!(sigmoid(-800.0).is_finite());
    }

    #[test]
    fn gemm_matches_matvec() {
        let mut rng = SeedTree::new(3).stream("gemm");
        let a = Matrix::random_uniform(4, 6, 1.0, &mut rng);
        let b = Matrix::random_uniform(3, 6, 1.0, &mut rng);
        let c = a.matmul_t(&b).unwrap();
        let c2 = a.matmul(&b.transpose()).unwrap();
        for i in 0..4 {
            let col = a.matvec(b.row(0)).unwrap();
            assert!((c.get(i, 0) - col[i]).abs() < 1e-12);
            for j in 0..3 {
                assert!((c.get(i, j) - c2.get(i, j)).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn masked_matmul_equals_dense_hadamard(
            rows in 1usize..9, cols in 1usize..9, p in 1usize..5, seed in any::<u64>()
        ) {
            let mut rng = SeedTree::new(seed).stream("prop");
            let w = Matrix::random_uniform(rows, cols, 2.0, &mut rng);
            let x: Vec<f64> = (0..cols).map(|_| rng.random_range(-3.0..3.0)).collect();
            let m = build_group_mask(p, rows, cols).unwrap();
            let reference = w.hadamard(&m).unwrap().matvec(&x).unwrap();
            let masked = masked_matmul(&w, &m, &x).unwrap();
            prop_assert_eq!(
                masked.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                reference.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            // The support path skips zero terms, so it only differs in the sign of zero.
            let mut fast = vec![0.0; rows];
            m.support_matvec_acc(&w, &x, &mut fast);
            prop_assert_eq!(fast, reference);
        }

        #[test]
        fn group_mask_row_counts(rows in 1usize..20, cols in 1usize..20, p in 1usize..7) {
            let m = build_group_mask(p, rows, cols).unwrap();
            let mut total = 0;
            for i in 0..rows {
                let r = i % p;
                let expected = if cols > r { (cols - r).div_ceil(p) } else { 0 };
                prop_assert_eq!(m.row_support(i).len(), expected);
                total += expected;
            }
            let per_group: usize = (0..p)
                .map(|g| (0..rows).filter(|i| i % p == g).count() * (0..cols).filter(|j| j % p == g).count())
                .sum();
            prop_assert_eq!(total, per_group);
            prop_assert_eq!(m.count_ones(), total);
        }

        #[test]
        fn sigmoid_symmetry(x in -50.0f64..50.0) {
            prop_assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() < 1e-15);
            prop_assert!(sigmoid(x) > 0.0 && sigmoid(x) < 1.0 || x.abs() > 36.0);
            prop_assert!(tanh(x).abs() <= 1.0);
        }
    }
}
