//! Small dense kernels for symmetric positive definite systems.
//!
//! Everything here is O(d³) or better and fully deterministic: solves go
//! through Cholesky, spectra through cyclic Jacobi. Latent dimensions are in
//! the tens, so nothing is blocked or vectorized.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest tolerated |a_ij - a_ji|, relative to max(1, max |a_ij|).
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Cholesky pivots below this fraction of the largest diagonal entry are singular.
pub const PIVOT_TOL: f64 = 1e-12;
/// |1 + w·vᵀA⁻¹v| below this makes a rank-one update degenerate.
pub const UPDATE_TOL: f64 = 1e-12;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &x) in diag.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    /// Builds a matrix from row-major storage.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 {
            return Err(Error::invalid("matrix needs at least one row"));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("matrix entries must be finite"));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Self::from_row_major(rows.len(), cols, rows.concat())
    }

    /// Stacks equal-length vectors as the columns of a `dim × columns.len()` matrix.
    pub fn from_columns(dim: usize, columns: &[&[f64]]) -> Result<Self> {
        let mut m = Self::zeros(dim, columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: col.len(),
                });
            }
            for (i, &x) in col.iter().enumerate() {
                m[(i, j)] = x;
            }
        }
        if m.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("matrix entries must be finite"));
        }
        Ok(m)
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `A Aᵀ`.
    pub fn gram(&self) -> Self {
        let mut g = Self::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in 0..=i {
                let x = dot(self.row(i), self.row(j));
                g[(i, j)] = x;
                g[(j, i)] = x;
            }
        }
        g
    }

    /// In place `self += weight · v vᵀ`.
    pub fn add_outer(&mut self, v: &[f64], weight: f64) {
        debug_assert!(self.is_square() && v.len() == self.rows);
        for i in 0..self.rows {
            let wi = weight * v[i];
            if wi == 0.0 {
                continue;
            }
            for j in 0..self.cols {
                self[(i, j)] += wi * v[j];
            }
        }
    }

    pub fn add_diagonal(&mut self, x: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += x;
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn check_symmetric(&self) -> Result<()> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                actual: self.cols,
            });
        }
        let asymmetry = self.max_asymmetry();
        if asymmetry > SYMMETRY_TOL * self.max_abs().max(1.0) {
            return Err(Error::NotSymmetric { asymmetry });
        }
        Ok(())
    }

    pub fn frobenius_distance(&self, other: &DenseMatrix) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor `L` with `m = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    factor: DenseMatrix,
}

impl Cholesky {
    pub fn new(m: &DenseMatrix) -> Result<Self> {
        m.check_symmetric()?;
        let n = m.rows();
        let max_diag = (0..n).fold(0.0_f64, |acc, i| acc.max(m[(i, i)].abs()));
        let tolerance = PIVOT_TOL * max_diag;
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut pivot = m[(j, j)];
            for k in 0..j {
                pivot -= l[(j, k)] * l[(j, k)];
            }
            if !(pivot > tolerance) {
                return Err(Error::Singular {
                    index: j,
                    pivot,
                    tolerance,
                });
            }
            let ljj = pivot.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Cholesky { factor: l })
    }

    pub fn factor(&self) -> &DenseMatrix {
        &self.factor
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let l = &self.factor;
        let n = l.rows();
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= l[(i, k)] * y[k];
            }
            y[i] /= l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] -= l[(k, i)] * y[k];
            }
            y[i] /= l[(i, i)];
        }
        y
    }

    /// `L⁻¹`, lower triangular.
    fn lower_inverse(&self) -> DenseMatrix {
        let l = &self.factor;
        let n = l.rows();
        let mut inv = DenseMatrix::zeros(n, n);
        for c in 0..n {
            inv[(c, c)] = 1.0 / l[(c, c)];
            for i in (c + 1)..n {
                let mut s = 0.0;
                for k in c..i {
                    s -= l[(i, k)] * inv[(k, c)];
                }
                inv[(i, c)] = s / l[(i, i)];
            }
        }
        inv
    }

    pub fn inverse(&self) -> DenseMatrix {
        // m⁻¹ = L⁻ᵀ L⁻¹
        let li = self.lower_inverse();
        let n = li.rows();
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = 0.0;
                for k in i..n {
                    s += li[(k, i)] * li[(k, j)];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    /// tr(m⁻¹) = ‖L⁻¹‖²_F
    pub fn trace_of_inverse(&self) -> f64 {
        self.lower_inverse().as_slice().iter().map(|x| x * x).sum()
    }
}

/// tr(m⁻¹) for a symmetric positive definite `m`.
pub fn trace_of_inverse(m: &DenseMatrix) -> Result<f64> {
    Ok(Cholesky::new(m)?.trace_of_inverse())
}

/// Assembles `γI + Σ_j σ_j⁻² v_j v_jᵀ` from the columns of `v_b`.
pub fn weighted_gram(v_b: &DenseMatrix, sigmas: &[f64], gamma: f64) -> Result<DenseMatrix> {
    if sigmas.len() != v_b.cols() {
        return Err(Error::DimensionMismatch {
            expected: v_b.cols(),
            actual: sigmas.len(),
        });
    }
    if gamma < 0.0 || !gamma.is_finite() {
        return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::invalid(format!("sigma must be positive, got {s}")));
    }
    let d = v_b.rows();
    let mut g = DenseMatrix::zeros(d, d);
    for (j, &s) in sigmas.iter().enumerate() {
        g.add_outer(&v_b.column(j), 1.0 / (s * s));
    }
    g.add_diagonal(gamma);
    Ok(g)
}

/// The interview objective `tr((γI + V_B C_B⁻² V_Bᵀ)⁻¹)`.
pub fn objective_f(v_b: &DenseMatrix, sigmas: &[f64], gamma: f64) -> Result<f64> {
    if v_b.cols() == 0 && gamma == 0.0 {
        return Err(Error::invalid("empty selection with gamma = 0"));
    }
    trace_of_inverse(&weighted_gram(v_b, sigmas, gamma)?)
}

/// A maintained inverse of `γI + Σ w_j v_j v_jᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramInverse {
    inverse: DenseMatrix,
    gamma: f64,
}

impl GramInverse {
    /// `(γI)⁻¹`.
    pub fn scaled_identity(gamma: f64, dim: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be > 0, got {gamma}")));
        }
        if dim == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        let mut inverse = DenseMatrix::identity(dim);
        for i in 0..dim {
            inverse[(i, i)] = 1.0 / gamma;
        }
        Ok(GramInverse { inverse, gamma })
    }

    /// Inverts an assembled SPD Gram matrix whose ridge part is `gamma`.
    pub fn from_gram(gram: &DenseMatrix, gamma: f64) -> Result<Self> {
        Ok(GramInverse {
            inverse: Cholesky::new(gram)?.inverse(),
            gamma,
        })
    }

    pub fn dim(&self) -> usize {
        self.inverse.rows()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn inverse(&self) -> &DenseMatrix {
        &self.inverse
    }

    pub fn trace(&self) -> f64 {
        self.inverse.trace()
    }

    /// `A⁻¹v` and the Sherman–Morrison denominator `1 + w·vᵀA⁻¹v`, validated.
    fn prepare(&self, v: &[f64], weight: f64) -> Result<(Vec<f64>, f64)> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: v.len(),
            });
        }
        if weight == 0.0 || !weight.is_finite() {
            return Err(Error::invalid(format!("update weight must be nonzero, got {weight}")));
        }
        let av = self.inverse.mul_vec(v);
        let denominator = 1.0 + weight * dot(v, &av);
        if denominator.abs() < UPDATE_TOL {
            return Err(Error::DegenerateUpdate { denominator });
        }
        if weight < 0.0 && denominator <= 0.0 {
            return Err(Error::NotPositiveDefinite { denominator });
        }
        Ok((av, denominator))
    }

    /// `1 + w·vᵀA⁻¹v` without validation.
    pub fn update_denominator(&self, v: &[f64], weight: f64) -> Result<f64> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: v.len(),
            });
        }
        Ok(1.0 + weight * dot(v, &self.inverse.mul_vec(v)))
    }

    /// Inverse of `M + w·v vᵀ` by Sherman–Morrison.
    pub fn rank_one_update(&self, v: &[f64], weight: f64) -> Result<GramInverse> {
        let (av, denominator) = self.prepare(v, weight)?;
        let mut next = self.inverse.clone();
        next.add_outer(&av, -weight / denominator);
        Ok(GramInverse {
            inverse: next,
            gamma: self.gamma,
        })
    }

    /// Change in trace that `rank_one_update(v, weight)` would cause, in O(d²)
    /// without materializing the updated inverse.
    pub fn trace_delta(&self, v: &[f64], weight: f64) -> Result<f64> {
        let (av, denominator) = self.prepare(v, weight)?;
        Ok(-weight * dot(&av, &av) / denominator)
    }
}

/// Eigenvalues of a symmetric matrix, descending, by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(m: &DenseMatrix) -> Result<Vec<f64>> {
    m.check_symmetric()?;
    let n = m.rows();
    let mut a = m.clone();
    // symmetrize exactly so rotations stay consistent
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let scale = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    Ok(eig)
}
