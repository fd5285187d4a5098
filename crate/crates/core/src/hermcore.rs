//! Small dense complex matrix kernel.
//!
//! Every statistic in the crate reduces to a handful of operations on
//! `r×r` Hermitian matrices with `r` in the single digits: a
//! positive-definiteness check, a Cholesky-based log-determinant and
//! inverse, and the spectrum of `B^{-1/2} A B^{-1/2}` (the relative
//! eigenvalues of a pair). The kernel is written directly against
//! row-major `Vec<Complex64>` storage; there is no blocking and no
//! attempt at scaling past a few dozen rows.
//!
//! Eigenvalues come from a cyclic complex Jacobi sweep, which is
//! unconditionally convergent for Hermitian input and accurate to a few
//! ulps of the matrix norm at these sizes.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative tolerance for [`is_positive_definite`].
pub const PD_TOL: f64 = 1e-12;

const HERMITIAN_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 64;

/// General square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![Complex64::new(0.0, 0.0); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Matrix with a single unit entry at `(row, col)`.
    pub fn unit(dim: usize, row: usize, col: usize) -> Self {
        let mut m = Self::zeros(dim);
        m[(row, col)] = Complex64::new(1.0, 0.0);
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self { dim, data }
    }

    pub fn from_vec(dim: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn conj_transpose(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)].conj())
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn mul(&self, rhs: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix product dimension mismatch");
        let n = self.dim;
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn add(&self, rhs: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix sum dimension mismatch");
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, rhs: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix difference dimension mismatch");
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for SquareMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.dim + j]
    }
}

/// Complex Hermitian matrix. Stored exactly Hermitian: the constructor
/// replaces the input by `(A + A^H)/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SquareMatrix", into = "SquareMatrix")]
pub struct HermitianMatrix {
    inner: SquareMatrix,
}

impl HermitianMatrix {
    /// Validates Hermitian symmetry to a relative tolerance of `1e-12`
    /// of the largest entry, then symmetrizes.
    pub fn new(m: SquareMatrix) -> Result<Self> {
        let n = m.dim;
        let scale = m.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in i..n {
                let dev = (m[(i, j)] - m[(j, i)].conj()).norm();
                if !(dev <= HERMITIAN_TOL * scale) {
                    return Err(Error::NotHermitian { row: i, col: j, deviation: dev });
                }
            }
        }
        Ok(Self::symmetrize(m))
    }

    /// `(A + A^H)/2` without validation.
    pub fn symmetrize(mut m: SquareMatrix) -> Self {
        let n = m.dim;
        for i in 0..n {
            m[(i, i)] = Complex64::new(m[(i, i)].re, 0.0);
            for j in (i + 1)..n {
                let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
                m[(i, j)] = v;
                m[(j, i)] = v.conj();
            }
        }
        Self { inner: m }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { inner: SquareMatrix::zeros(dim) }
    }

    pub fn identity(dim: usize) -> Self {
        Self { inner: SquareMatrix::identity(dim) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            inner: SquareMatrix::from_fn(n, |i, j| {
                if i == j {
                    Complex64::new(diag[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }),
        }
    }

    /// Real symmetric input given row-major.
    pub fn from_real(dim: usize, values: &[f64]) -> Result<Self> {
        let data = values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Self::new(SquareMatrix::from_vec(dim, data)?)
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("rows of unequal length".into()));
        }
        Self::new(SquareMatrix::from_vec(n, rows.concat())?)
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn as_square(&self) -> &SquareMatrix {
        &self.inner
    }

    pub fn into_square(self) -> SquareMatrix {
        self.inner
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.inner[(i, i)].re).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.inner[(i, i)].re).collect()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { inner: self.inner.scale(Complex64::new(s, 0.0)) }
    }

    /// `C A C^H`.
    pub fn congruence(&self, c: &SquareMatrix) -> Self {
        Self::symmetrize(c.mul(&self.inner).mul(&c.conj_transpose()))
    }

    pub fn max_abs(&self) -> f64 {
        self.inner.max_abs()
    }

    /// Entrywise distance in max norm.
    pub fn max_abs_diff(&self, other: &HermitianMatrix) -> f64 {
        self.inner.sub(&other.inner).max_abs()
    }
}

impl Index<(usize, usize)> for HermitianMatrix {
    type Output = Complex64;
    fn index(&self, idx: (usize, usize)) -> &Complex64 {
        &self.inner[idx]
    }
}

impl TryFrom<SquareMatrix> for HermitianMatrix {
    type Error = Error;
    fn try_from(m: SquareMatrix) -> Result<Self> {
        Self::new(m)
    }
}

impl From<HermitianMatrix> for SquareMatrix {
    fn from(h: HermitianMatrix) -> SquareMatrix {
        h.inner
    }
}

/// Lower Cholesky factor `A = L L^H` of a positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: SquareMatrix,
}

impl Cholesky {
    pub fn new(a: &HermitianMatrix) -> Result<Self> {
        let n = a.dim();
        let mut l = SquareMatrix::zeros(n);
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            let djj = d.sqrt();
            l[(j, j)] = Complex64::new(djj, 0.0);
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn factor(&self) -> &SquareMatrix {
        &self.l
    }

    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.l.dim).map(|i| self.l[(i, i)].re.ln()).sum::<f64>()
    }

    /// `L^{-1} X` by forward substitution, column by column.
    pub fn solve_lower(&self, x: &SquareMatrix) -> SquareMatrix {
        let n = self.l.dim;
        let mut out = x.clone();
        for col in 0..n {
            for i in 0..n {
                let mut s = out[(i, col)];
                for k in 0..i {
                    s -= self.l[(i, k)] * out[(k, col)];
                }
                out[(i, col)] = s / self.l[(i, i)].re;
            }
        }
        out
    }

    pub fn solve_lower_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.l.dim;
        let mut out = v.to_vec();
        for i in 0..n {
            let mut s = out[i];
            for k in 0..i {
                s -= self.l[(i, k)] * out[k];
            }
            out[i] = s / self.l[(i, i)].re;
        }
        out
    }

    pub fn inverse(&self) -> HermitianMatrix {
        let n = self.l.dim;
        let linv = self.solve_lower(&SquareMatrix::identity(n));
        HermitianMatrix::symmetrize(linv.conj_transpose().mul(&linv))
    }

    /// `L^{-1} A L^{-H}`.
    pub fn whiten(&self, a: &HermitianMatrix) -> HermitianMatrix {
        let x = self.solve_lower(a.as_square());
        let y = self.solve_lower(&x.conj_transpose());
        HermitianMatrix::symmetrize(y.conj_transpose())
    }
}

/// Positive definiteness via diagonally pivoted Cholesky: every pivot
/// must exceed `tol · trace(A)/r`. A matrix with non-positive trace is
/// never positive definite.
pub fn is_positive_definite(a: &HermitianMatrix, tol: f64) -> bool {
    let n = a.dim();
    if n == 0 {
        return false;
    }
    let trace = a.trace();
    if !(trace > 0.0) || !trace.is_finite() {
        return false;
    }
    let threshold = tol.max(0.0) * trace / n as f64;
    let mut w = a.as_square().clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| w[(perm[i], perm[i])].re.total_cmp(&w[(perm[j], perm[j])].re))
            .expect("non-empty pivot range");
        perm.swap(k, p);
        let pk = perm[k];
        let d = w[(pk, pk)].re;
        if !(d > threshold) || !(d > 0.0) {
            return false;
        }
        for ii in (k + 1)..n {
            let i = perm[ii];
            let lik = w[(i, pk)] / d;
            for jj in (k + 1)..n {
                let j = perm[jj];
                let upd = lik * w[(pk, j)];
                w[(i, j)] -= upd;
            }
        }
    }
    true
}

pub fn logdet_pd(a: &HermitianMatrix) -> Result<f64> {
    Ok(Cholesky::new(a)?.logdet())
}

pub fn inverse_pd(a: &HermitianMatrix) -> Result<HermitianMatrix> {
    Ok(Cholesky::new(a)?.inverse())
}

/// Ascending eigenvalues of `B^{-1/2} A B^{-1/2}`, i.e. the spectrum of
/// `A B^{-1}`. Values are clamped at zero.
pub fn relative_eigenvalues(a: &HermitianMatrix, b: &HermitianMatrix) -> Result<Vec<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "relative eigenvalues of {}x{} against {}x{}",
            a.dim(),
            a.dim(),
            b.dim(),
            b.dim()
        )));
    }
    let chol = Cholesky::new(b)?;
    let mut eigs = hermitian_eigenvalues(&chol.whiten(a));
    for e in eigs.iter_mut() {
        *e = e.max(0.0);
    }
    Ok(eigs)
}

/// Ascending eigenvalues of a Hermitian matrix (cyclic Jacobi).
pub fn hermitian_eigenvalues(a: &HermitianMatrix) -> Vec<f64> {
    let n = a.dim();
    let mut w = a.as_square().clone();
    let total: f64 = w.as_slice().iter().map(|z| z.norm_sqr()).sum();
    let eps = f64::EPSILON * f64::EPSILON * total;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| w[(i, j)].norm_sqr())
            .sum();
        if off <= eps || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                jacobi_rotate(&mut w, p, q);
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| w[(i, i)].re).collect();
    eigs.sort_by(f64::total_cmp);
    eigs
}

/// Annihilates `w[(p, q)]` with `w ← J^H w J`, `J` a unitary plane rotation.
fn jacobi_rotate(w: &mut SquareMatrix, p: usize, q: usize) {
    let apq = w[(p, q)];
    let mag = apq.norm();
    if mag == 0.0 {
        return;
    }
    let n = w.dim();
    let phase = apq / mag;
    let app = w[(p, p)].re;
    let aqq = w[(q, q)].re;
    let theta = (aqq - app) / (2.0 * mag);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    // J = diag(1, conj(phase)) · [[c, s], [-s, c]] on the (p, q) plane.
    let jpp = Complex64::new(c, 0.0);
    let jpq = Complex64::new(s, 0.0);
    let jqp = phase.conj() * (-s);
    let jqq = phase.conj() * c;
    for k in 0..n {
        let wkp = w[(k, p)];
        let wkq = w[(k, q)];
        w[(k, p)] = wkp * jpp + wkq * jqp;
        w[(k, q)] = wkp * jpq + wkq * jqq;
    }
    for k in 0..n {
        let wpk = w[(p, k)];
        let wqk = w[(q, k)];
        w[(p, k)] = jpp.conj() * wpk + jqp.conj() * wqk;
        w[(q, k)] = jpq.conj() * wpk + jqq.conj() * wqk;
    }
    w[(p, q)] = Complex64::new(0.0, 0.0);
    w[(q, p)] = Complex64::new(0.0, 0.0);
    w[(p, p)] = Complex64::new(w[(p, p)].re, 0.0);
    w[(q, q)] = Complex64::new(w[(q, q)].re, 0.0);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn two_by_two() -> HermitianMatrix {
        HermitianMatrix::from_rows(&[vec![c(2.0, 0.0), c(0.0, 1.0)], vec![c(0.0, -1.0), c(2.0, 0.0)]])
            .unwrap()
    }

    #[test]
    fn pd_examples() {
        assert!(is_positive_definite(&HermitianMatrix::identity(3), 1e-12));
        assert!(!is_positive_definite(&HermitianMatrix::from_diagonal(&[1.0, -1.0]), 1e-12));
        assert!(is_positive_definite(&two_by_two(), 1e-12));
        assert!(!is_positive_definite(&HermitianMatrix::zeros(2), 1e-12));
    }

    #[test]
    fn logdet_examples() {
        assert_eq!(logdet_pd(&HermitianMatrix::identity(4)).unwrap(), 0.0);
        let d = logdet_pd(&HermitianMatrix::from_diagonal(&[2.0, 2.0])).unwrap();
        assert!((d - 2.0 * 2f64.ln()).abs() < 1e-14);
        assert!((logdet_pd(&two_by_two()).unwrap() - 3f64.ln()).abs() < 1e-14);
        assert_eq!(
            logdet_pd(&HermitianMatrix::from_diagonal(&[1.0, -1.0])),
            Err(Error::NotPositiveDefinite)
        );
    }

    #[test]
    fn inverse_examples() {
        let inv = inverse_pd(&HermitianMatrix::from_diagonal(&[2.0, 4.0])).unwrap();
        assert!(inv.max_abs_diff(&HermitianMatrix::from_diagonal(&[0.5, 0.25])) < 1e-15);
        let inv = inverse_pd(&two_by_two()).unwrap();
        let expected = HermitianMatrix::from_rows(&[
            vec![c(2.0 / 3.0, 0.0), c(0.0, -1.0 / 3.0)],
            vec![c(0.0, 1.0 / 3.0), c(2.0 / 3.0, 0.0)],
        ])
        .unwrap();
        assert!(inv.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn relative_eigen_examples() {
        let a = two_by_two();
        let ones = relative_eigenvalues(&a, &a).unwrap();
        assert!(ones.iter().all(|e| (e - 1.0).abs() < 1e-14));
        let e = relative_eigenvalues(
            &HermitianMatrix::from_diagonal(&[2.0, 8.0]),
            &HermitianMatrix::from_diagonal(&[1.0, 4.0]),
        )
        .unwrap();
        assert!((e[0] - 2.0).abs() < 1e-14 && (e[1] - 2.0).abs() < 1e-14);
        let e = relative_eigenvalues(&a, &HermitianMatrix::identity(2)).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-14 && (e[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn construction_rejects_non_hermitian() {
        let m = SquareMatrix::from_vec(2, vec![c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)])
            .unwrap();
        assert!(matches!(HermitianMatrix::new(m), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn construction_drops_imaginary_diagonal_noise() {
        let m = SquareMatrix::from_vec(
            2,
            vec![c(1.0, 1e-15), c(0.5, 0.5), c(0.5, -0.5), c(1.0, 0.0)],
        )
        .unwrap();
        let h = HermitianMatrix::new(m).unwrap();
        assert_eq!(h[(0, 0)].im, 0.0);
    }
}
