//! Small dense linear algebra and signed-power primitives.
//!
//! Everything here works on plain `f64` slices and a row-major [`Mat`].
//! Sizes are expected to stay in the tens to low hundreds, so the
//! algorithms favour determinism and simplicity over speed: cyclic Jacobi
//! for symmetric eigenproblems and Cholesky for SPD solves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Tolerances used by the linear algebra routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Maximum absolute asymmetry `|a_ij - a_ji|` accepted by symmetric routines.
    pub symmetry: f64,
    /// Jacobi stops once the off-diagonal Frobenius norm drops below
    /// `eigen_rel * ||M||_F`.
    pub eigen_rel: f64,
    pub max_sweeps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            symmetry: 1e-12,
            eigen_rel: 1e-12,
            max_sweeps: 100,
        }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// Builds a matrix from row slices. All rows must have the same length
    /// and every entry must be finite.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n_cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {n_cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(n_rows, n_cols, data)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {:?} by {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
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

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Shape(format!(
                "vector of length {} against {:?} matrix",
                v.len(),
                self.shape()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest `|a_ij - a_ji|`; infinite for non-square matrices.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    fn ensure_symmetric(&self, tol: f64) -> Result<()> {
        if !self.is_square() {
            return Err(Error::Shape(format!(
                "expected a square matrix, got {:?}",
                self.shape()
            )));
        }
        let asym = self.asymmetry();
        if asym > tol {
            return Err(Error::Shape(format!(
                "matrix is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// `sign(x)` with `sign(0) = 0`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn signed_power_unchecked(x: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        sign(x)
    } else if alpha == 1.0 {
        x
    } else {
        sign(x) * x.abs().powf(alpha)
    }
}

/// `|x|^alpha * sign(x)`. For `alpha == 0` this is `sign(x)`, with `sign(0) = 0`.
pub fn signed_power(x: f64, alpha: f64) -> Result<f64> {
    check_exponent(alpha)?;
    Ok(signed_power_unchecked(x, alpha))
}

/// Element-wise [`signed_power`].
pub fn vec_signed_power(v: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_exponent(alpha)?;
    Ok(v.iter().map(|x| signed_power_unchecked(*x, alpha)).collect())
}

/// `sum_i |v_i|^alpha`.
pub fn power_sum(v: &[f64], alpha: f64) -> Result<f64> {
    check_exponent(alpha)?;
    Ok(v.iter().map(|x| x.abs().powf(alpha)).sum())
}

fn check_exponent(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Parameter(format!(
            "signed power exponent must be finite and >= 0, got {alpha}"
        )));
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: Mat,
    pub sweeps: usize,
}

impl SymmetricEigen {
    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(f64::NAN)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NAN)
    }
}

pub fn symmetric_eigen(m: &Mat) -> Result<SymmetricEigen> {
    symmetric_eigen_with(m, &Tolerances::default())
}

/// Cyclic Jacobi with a threshold sweep.
pub fn symmetric_eigen_with(m: &Mat, tol: &Tolerances) -> Result<SymmetricEigen> {
    m.ensure_symmetric(tol.symmetry)?;
    let n = m.rows();
    // Work on the symmetrized copy so tiny asymmetries cannot bias rotations.
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)]);
        }
    }
    let mut v = Mat::identity(n);
    let scale = a.frobenius_norm();
    let target = tol.eigen_rel * scale;

    let off_norm = |a: &Mat| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while sweeps < tol.max_sweeps {
        let off = off_norm(&a);
        if off <= target || off == 0.0 {
            break;
        }
        sweeps += 1;
        // Skip rotations on entries already negligible for this sweep.
        let threshold = if sweeps < 4 { 0.2 * off / (n * n) as f64 } else { 0.0 };
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= threshold || apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = sign_nonzero(theta) / (theta.abs() + (theta * theta + 1.0).sqrt());
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
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if off_norm(&a) > target && off_norm(&a) > 0.0 {
        return Err(Error::NoConvergence(format!(
            "Jacobi did not converge in {} sweeps",
            tol.max_sweeps
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymmetricEigen {
        values,
        vectors,
        sweeps,
    })
}

fn sign_nonzero(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// `sqrt(lambda_max(M^T M))`.
pub fn largest_singular_value(m: &Mat) -> Result<f64> {
    if m.rows() == 0 || m.cols() == 0 {
        return Ok(0.0);
    }
    let gram = m.transpose().matmul(m)?;
    let eig = symmetric_eigen(&gram)?;
    Ok(eig.max().max(0.0).sqrt())
}

/// Lower-triangular Cholesky factor `M = G G^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    factor: Mat,
}

impl Cholesky {
    pub fn new(m: &Mat) -> Result<Self> {
        Self::with_tolerance(m, Tolerances::default().symmetry)
    }

    pub fn with_tolerance(m: &Mat, symmetry_tol: f64) -> Result<Self> {
        m.ensure_symmetric(symmetry_tol)?;
        let n = m.rows();
        let mut g = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = m[(j, j)];
            for k in 0..j {
                d -= g[(j, k)] * g[(j, k)];
            }
            if !(d > 0.0) {
                return Err(Error::NotSpd { pivot: j, value: d });
            }
            let d = d.sqrt();
            g[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= g[(i, k)] * g[(j, k)];
                }
                g[(i, j)] = s / d;
            }
        }
        Ok(Self { factor: g })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let g = &self.factor;
        let n = g.rows();
        if b.len() != n {
            return Err(Error::Shape(format!(
                "right-hand side of length {} for a {n}x{n} system",
                b.len()
            )));
        }
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= g[(i, k)] * y[k];
            }
            y[i] = s / g[(i, i)];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= g[(k, i)] * x[k];
            }
            x[i] = s / g[(i, i)];
        }
        Ok(x)
    }

    /// Full inverse, column by column.
    pub fn inverse(&self) -> Result<Mat> {
        let n = self.factor.rows();
        let mut inv = Mat::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e)?;
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        // Symmetrize away round-off.
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = avg;
                inv[(j, i)] = avg;
            }
        }
        Ok(inv)
    }
}

/// Solves `M x = b` for symmetric positive definite `M`.
pub fn spd_solve(m: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    Cholesky::new(m)?.solve(b)
}

/// Deterministic point set on the unit sphere in `R^dim`.
///
/// The first `2 * dim` points are the signed axis vectors; the rest are
/// normalized Gaussian draws (Box-Muller on a ChaCha8 stream keyed by
/// `seed`). `count` is raised to `2 * dim` when smaller, so the axis
/// vectors are always present.
pub fn unit_sphere_grid(dim: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if dim == 0 || count == 0 {
        return Err(Error::Parameter(
            "unit_sphere_grid needs dim >= 1 and count >= 1".into(),
        ));
    }
    let count = count.max(2 * dim);
    let mut points = Vec::with_capacity(count);
    for axis in 0..dim {
        for s in [1.0, -1.0] {
            let mut p = vec![0.0; dim];
            p[axis] = s;
            points.push(p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while points.len() < count {
        let mut p: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
        let r = norm(&p);
        if r < 1e-8 {
            continue;
        }
        p.iter_mut().for_each(|v| *v /= r);
        points.push(p);
    }
    Ok(points)
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; u1 in (0, 1] keeps the log finite.
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Normalizes `v` in place to unit Euclidean norm. Returns `false` for a zero vector.
pub fn normalize(v: &mut [f64]) -> bool {
    let r = norm(v);
    if r == 0.0 || !r.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= r);
    true
}
