//! Small dense real linear algebra.
//!
//! Everything here is sized for the per-agent dimension `n` (at most a few
//! hundred), so storage is dense and row-major. [`SymMat`] keeps both
//! triangles and writes them from a single computed value, which makes
//! `M[i][j] == M[j][i]` hold bit-for-bit after every update.

use std::ops::{Add, AddAssign, Deref, DerefMut, Index, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense real vector of fixed length.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(n: usize) -> Self {
        Vector(vec![0.0; n])
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize) -> f64) -> Self {
        Vector((0..n).map(f).collect())
    }

    pub fn unit(n: usize, i: usize) -> Self {
        let mut v = Self::zeros(n);
        v.0[i] = 1.0;
        v
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.iter().zip(other.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Vector) {
        debug_assert_eq!(self.len(), x.len());
        for (a, b) in self.0.iter_mut().zip(x.iter()) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Vector {
        Vector(self.iter().map(|v| alpha * v).collect())
    }

    /// Sum of vectors in slice order.
    pub fn sum<'a>(n: usize, items: impl IntoIterator<Item = &'a Vector>) -> Vector {
        let mut acc = Vector::zeros(n);
        for v in items {
            acc += v;
        }
        acc
    }

    /// Arithmetic mean, accumulated in slice order.
    pub fn mean<'a>(n: usize, items: impl IntoIterator<Item = &'a Vector>) -> Vector {
        let mut count = 0usize;
        let mut acc = Vector::zeros(n);
        for v in items {
            acc += v;
            count += 1;
        }
        assert!(count > 0, "mean of an empty set");
        acc.scaled(1.0 / count as f64)
    }

    pub fn max_abs_diff(&self, other: &Vector) -> f64 {
        self.iter()
            .zip(other.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Vector(v.to_vec())
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl AddAssign<&Vector> for Vector {
    fn add_assign(&mut self, rhs: &Vector) {
        debug_assert_eq!(self.len(), rhs.len());
        for (a, b) in self.0.iter_mut().zip(rhs.iter()) {
            *a += b;
        }
    }
}

impl SubAssign<&Vector> for Vector {
    fn sub_assign(&mut self, rhs: &Vector) {
        debug_assert_eq!(self.len(), rhs.len());
        for (a, b) in self.0.iter_mut().zip(rhs.iter()) {
            *a -= b;
        }
    }
}

impl Add for &Vector {
    type Output = Vector;
    fn add(self, rhs: &Vector) -> Vector {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &Vector {
    type Output = Vector;
    fn sub(self, rhs: &Vector) -> Vector {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Mul<f64> for &Vector {
    type Output = Vector;
    fn mul(self, rhs: f64) -> Vector {
        self.scaled(rhs)
    }
}

impl Neg for &Vector {
    type Output = Vector;
    fn neg(self) -> Vector {
        self.scaled(-1.0)
    }
}

/// Dense symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat {
    n: usize,
    data: Vec<f64>,
}

impl SymMat {
    pub fn zeros(n: usize) -> Self {
        SymMat {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, alpha: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = alpha;
        }
        m
    }

    /// Builds the matrix from its lower triangle; `f(i, j)` is called for
    /// `j <= i` only.
    pub fn from_lower(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Symmetrizes a general square matrix as `(A + Aᵀ)/2`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: bad.len(),
            });
        }
        Ok(Self::from_lower(n, |i, j| 0.5 * (rows[i][j] + rows[j][i])))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Writes `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn mul_vec(&self, x: &Vector) -> Vector {
        debug_assert_eq!(self.n, x.len());
        Vector::from_fn(self.n, |i| {
            self.data[i * self.n..(i + 1) * self.n]
                .iter()
                .zip(x.iter())
                .map(|(a, b)| a * b)
                .sum()
        })
    }

    pub fn quad_form(&self, x: &Vector) -> f64 {
        x.dot(&self.mul_vec(x))
    }

    pub fn add_diag(&mut self, alpha: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += alpha;
        }
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &SymMat) {
        debug_assert_eq!(self.n, other.n);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * b;
        }
    }

    /// `self + (a·uuᵀ + b·vvᵀ)`, evaluated on the lower triangle and mirrored.
    /// The correction is summed before it touches `self`, so a cancelling
    /// pair leaves the matrix bit-identical.
    pub fn rank_two_update(&self, a: f64, u: &Vector, b: f64, v: &Vector) -> SymMat {
        SymMat::from_lower(self.n, |i, j| {
            self.get(i, j) + (a * u[i] * u[j] + b * v[i] * v[j])
        })
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for SymMat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &SymMat) -> Result<Self> {
        let n = a.dim();
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Cholesky { n, l })
    }

    pub fn solve(&self, b: &Vector) -> Vector {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }
}

/// Solves `A x = b` for SPD `A`.
pub fn cholesky_solve(a: &SymMat, b: &Vector) -> Result<Vector> {
    if a.dim() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.len(),
        });
    }
    Ok(Cholesky::factor(a)?.solve(b))
}

pub fn is_spd(a: &SymMat) -> bool {
    Cholesky::factor(a).is_ok()
}

/// General dense square matrix, used only to assemble indefinite systems
/// such as the full consensus KKT matrix.
#[derive(Debug, Clone)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn mul_slice(&self, x: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Gaussian elimination with partial pivoting.
    pub fn lu_solve(mut self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let mut rhs = b.to_vec();
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for col in 0..n {
            let (piv, pmax) = (col..n)
                .map(|r| (r, self.data[r * n + col].abs()))
                .fold((col, -1.0), |best, c| if c.1 > best.1 { c } else { best });
            if pmax <= f64::EPSILON * scale * 1e-3 {
                return Err(Error::SingularKkt { column: col });
            }
            if piv != col {
                for k in 0..n {
                    self.data.swap(piv * n + k, col * n + k);
                }
                rhs.swap(piv, col);
            }
            let d = self.data[col * n + col];
            for r in (col + 1)..n {
                let f = self.data[r * n + col] / d;
                if f == 0.0 {
                    continue;
                }
                for k in col..n {
                    self.data[r * n + k] -= f * self.data[col * n + k];
                }
                rhs[r] -= f * rhs[col];
            }
        }
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for k in (i + 1)..n {
                s -= self.data[i * n + k] * rhs[k];
            }
            rhs[i] = s / self.data[i * n + i];
        }
        Ok(rhs)
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &SymMat) -> Vec<f64> {
    let n = a.dim();
    let mut m = a.to_rows();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn residual_inf(a: &SymMat, x: &Vector, b: &Vector) -> f64 {
        a.mul_vec(x).max_abs_diff(b)
    }

    #[test]
    fn identity_solve() {
        let x = cholesky_solve(&SymMat::identity(3), &vec![1.0, 2.0, 3.0].into()).unwrap();
        assert_eq!(&*x, &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn diagonal_scaling_solve() {
        let x = cholesky_solve(&SymMat::scaled_identity(2, 2.0), &vec![4.0, 6.0].into()).unwrap();
        // √2·√2 rounding leaves at most a few ulps
        assert!(x.max_abs_diff(&vec![2.0, 3.0].into()) <= 4.0 * f64::EPSILON * 3.0);
    }

    #[test]
    fn two_by_two_residual() {
        let a = SymMat::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let b: Vector = vec![1.0, 2.0].into();
        let x = cholesky_solve(&a, &b).unwrap();
        assert!(residual_inf(&a, &x, &b) <= 1e-10 * (1.0 + b.norm_inf()));
        // Cramer's rule: x = (1/11, 7/11)
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-15);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn spd_checks() {
        assert!(is_spd(&SymMat::identity(2)));
        // eigenvalues 3 and -1
        assert!(!is_spd(
            &SymMat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap()
        ));
        assert!(!is_spd(&SymMat::zeros(2)));
    }

    #[test]
    fn not_positive_definite_error() {
        let err = cholesky_solve(&SymMat::zeros(2), &Vector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { pivot: 0, .. }));
    }

    #[test]
    fn dimension_mismatch() {
        let err = cholesky_solve(&SymMat::identity(2), &Vector::zeros(3)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn lu_solves_indefinite_system() {
        // [[0,1],[1,0]] needs a pivot swap
        let mut m = DenseMatrix::zeros(2);
        m.set(0, 1, 1.0);
        m.set(1, 0, 1.0);
        let x = m.lu_solve(&[2.0, 3.0]).unwrap();
        assert_eq!(x, vec![3.0, 2.0]);
        assert!(DenseMatrix::zeros(2).lu_solve(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn jacobi_eigenvalues_of_known_matrix() {
        let a = SymMat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let ev = symmetric_eigenvalues(&a);
        assert!((ev[0] + 1.0).abs() < 1e-12);
        assert!((ev[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rank_two_update_stays_symmetric() {
        let b = SymMat::from_lower(4, |i, j| 1.0 / (1.0 + i as f64 + j as f64) + if i == j { 1.0 } else { 0.0 });
        let u = Vector::from(vec![0.1, -0.3, 0.7, 1.3]);
        let v = Vector::from(vec![2.1, 0.3, -0.77, 0.013]);
        let up = b.rank_two_update(-0.37, &u, 1.0 / 3.0, &v);
        assert!(up.is_symmetric());
    }

    fn spd_strategy() -> impl Strategy<Value = (SymMat, Vector)> {
        (1usize..9).prop_flat_map(|n| {
            (
                proptest::collection::vec(-1.0f64..1.0, n * n),
                proptest::collection::vec(-10.0f64..10.0, n),
                0.1f64..1.0,
            )
                .prop_map(move |(l, b, eps)| {
                    let a = SymMat::from_lower(n, |i, j| {
                        let mut s: f64 = (0..n).map(|k| l[i * n + k] * l[j * n + k]).sum();
                        if i == j {
                            s += eps;
                        }
                        s
                    });
                    (a, Vector::from(b))
                })
        })
    }

    proptest! {
        #[test]
        fn cholesky_residual_bound((a, b) in spd_strategy()) {
            let x = cholesky_solve(&a, &b).unwrap();
            prop_assert!(x.is_finite());
            prop_assert!(residual_inf(&a, &x, &b) <= 1e-10 * (1.0 + b.norm_inf()));
        }

        #[test]
        fn spd_matches_eigenvalues((a, _b) in spd_strategy()) {
            let ev = symmetric_eigenvalues(&a);
            prop_assert!(is_spd(&a));
            prop_assert!(ev[0] > 0.0);
        }
    }
}
