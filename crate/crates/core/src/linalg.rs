//! Small dense complex matrices and the sparse superoperator used by the
//! master-equation right-hand side.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use num_traits::{One, Zero};

use crate::scalar::{cr, Real, C};

/// Dense row-major complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T: Real> {
    rows: usize,
    cols: usize,
    data: Vec<C<T>>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C::zero(); rows * cols] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = C::one();
        }
        m
    }

    /// `|row⟩⟨col|` in a space of dimension `dim`.
    pub fn outer(dim: usize, row: usize, col: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        m[(row, col)] = C::one();
        m
    }

    pub fn from_diagonal(diag: &[C<T>]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C<T>>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C<T>] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C<T>] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C<T>> {
        self.data
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> C<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).fold(C::zero(), |a, b| a + b)
    }

    pub fn scale(&self, s: C<T>) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn scale_real(&self, s: T) -> Self {
        self.scale(cr(s))
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let (r, c) = (self.rows * other.rows, self.cols * other.cols);
        let mut out = Self::zeros(r, c);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self[(i, j)];
                if a.is_zero() {
                    continue;
                }
                for k in 0..other.rows {
                    for l in 0..other.cols {
                        out[(i * other.rows + k, j * other.cols + l)] = a * other[(k, l)];
                    }
                }
            }
        }
        out
    }

    /// `tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &Self) -> C<T> {
        assert_eq!(self.cols, other.rows);
        assert_eq!(self.rows, other.cols);
        let mut acc = C::zero();
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if !a.is_zero() {
                    acc = acc + a * other[(k, i)];
                }
            }
        }
        acc
    }

    /// Largest absolute entry of `self − self†`.
    pub fn hermiticity_violation(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..self.cols {
                let d = (self[(i, j)] - self[(j, i)].conj()).norm();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().map(|z| z.norm()).fold(T::zero(), T::max)
    }

    /// Eigenvalues of the Hermitian part, ascending, computed in `f64`.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        assert!(self.is_square());
        let n = self.rows;
        let m = nalgebra::DMatrix::<Complex64>::from_fn(n, n, |i, j| {
            let a = self[(i, j)];
            let b = self[(j, i)].conj();
            Complex64::new(
                0.5 * (a.re + b.re).to_f64_lossy(),
                0.5 * (a.im + b.im).to_f64_lossy(),
            )
        });
        let mut ev: Vec<f64> = nalgebra::SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

impl<T: Real> Index<(usize, usize)> for Matrix<T> {
    type Output = C<T>;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C<T> {
        &self.data[i * self.cols + j]
    }
}

impl<T: Real> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C<T> {
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Real> Add for &Matrix<T> {
    type Output = Matrix<T>;
    fn add(self, rhs: &Matrix<T>) -> Matrix<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }
}

impl<T: Real> Sub for &Matrix<T> {
    type Output = Matrix<T>;
    fn sub(self, rhs: &Matrix<T>) -> Matrix<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }
}

impl<T: Real> AddAssign<&Matrix<T>> for Matrix<T> {
    fn add_assign(&mut self, rhs: &Matrix<T>) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a = *a + b;
        }
    }
}

impl<T: Real> Mul for &Matrix<T> {
    type Output = Matrix<T>;
    fn mul(self, rhs: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, rhs.rows, "matrix product shape");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] = out.data[i * rhs.cols + j] + a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

/// Compressed sparse row matrix acting on vectorized (row-major) density
/// matrices.
#[derive(Clone, Debug)]
pub struct SparseOp<T: Real> {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<C<T>>,
}

impl<T: Real> SparseOp<T> {
    /// Assembles from unsorted triplets; duplicates are summed and exact
    /// zeros dropped.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, C<T>)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<C<T>> = Vec::with_capacity(triplets.len());
        let mut rows_of = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if let (Some(&lr), Some(&lc)) = (rows_of.last(), col_idx.last()) {
                if lr == r && lc == c {
                    let last = values.last_mut().expect("nonempty");
                    *last = *last + v;
                    continue;
                }
            }
            rows_of.push(r);
            col_idx.push(c);
            values.push(v);
        }
        let keep: Vec<bool> = values.iter().map(|v| !v.is_zero()).collect();
        let mut ci = Vec::new();
        let mut vs = Vec::new();
        for (idx, k) in keep.iter().enumerate() {
            if *k {
                row_ptr[rows_of[idx] + 1] += 1;
                ci.push(col_idx[idx]);
                vs.push(values[idx]);
            }
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { dim, row_ptr, col_idx: ci, values: vs }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `out += scale · A x`.
    #[inline]
    pub fn apply_add(&self, scale: C<T>, x: &[C<T>], out: &mut [C<T>]) {
        for r in 0..self.dim {
            let mut acc = C::zero();
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc = acc + self.values[k] * x[self.col_idx[k]];
            }
            out[r] = out[r] + scale * acc;
        }
    }

    /// `out = A x`.
    #[inline]
    pub fn apply(&self, x: &[C<T>], out: &mut [C<T>]) {
        for r in 0..self.dim {
            let mut acc = C::zero();
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc = acc + self.values[k] * x[self.col_idx[k]];
            }
            out[r] = acc;
        }
    }
}

/// Triplets of `−i[H, ·]` on a row-major vectorized `d×d` matrix.
pub(crate) fn commutator_triplets<T: Real>(h: &Matrix<T>) -> Vec<(usize, usize, C<T>)> {
    let d = h.rows();
    let mi = C::new(T::zero(), -T::one());
    let mut out = Vec::new();
    for a in 0..d {
        for b in 0..d {
            let hab = h[(a, b)];
            if hab.is_zero() {
                continue;
            }
            // (Hρ)_{aj} gets H_ab ρ_bj
            for j in 0..d {
                out.push((a * d + j, b * d + j, mi * hab));
            }
            // (ρH)_{ib} gets ρ_ia H_ab
            for i in 0..d {
                out.push((i * d + b, i * d + a, -mi * hab));
            }
        }
    }
    out
}

/// Triplets of `(rate/2)(2cρc† − c†cρ − ρc†c)`.
pub(crate) fn dissipator_triplets<T: Real>(c: &Matrix<T>, rate: T) -> Vec<(usize, usize, C<T>)> {
    let d = c.rows();
    let half = cr(rate * T::lit(0.5));
    let nz: Vec<(usize, usize, C<T>)> = (0..d)
        .flat_map(|i| (0..d).map(move |k| (i, k)))
        .filter_map(|(i, k)| {
            let v = c[(i, k)];
            (!v.is_zero()).then_some((i, k, v))
        })
        .collect();
    let mut out = Vec::new();
    for &(i, k, cik) in &nz {
        for &(j, l, cjl) in &nz {
            out.push((i * d + j, k * d + l, half * cr(T::lit(2.0)) * cik * cjl.conj()));
        }
    }
    let cdc = &c.adjoint() * c;
    for a in 0..d {
        for b in 0..d {
            let v = cdc[(a, b)];
            if v.is_zero() {
                continue;
            }
            for j in 0..d {
                out.push((a * d + j, b * d + j, -half * v));
            }
            for i in 0..d {
                out.push((i * d + b, i * d + a, -half * v));
            }
        }
    }
    out
}
