//! Dense complex Hermitian matrices and a Cholesky-based solver.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Residual bound for accepted solutions, relative to the right-hand side.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;
const MAX_REFINEMENT_STEPS: usize = 3;

/// Square complex matrix stored row-major in full.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl HermitianMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Wraps row-major data. The caller is responsible for Hermitian symmetry.
    pub fn from_row_major(dim: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::InvalidInput(format!(
                "{} entries do not form a {dim}x{dim} matrix",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.dim + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[row * self.dim + col] = value;
    }

    pub(crate) fn row_mut(&mut self, row: usize) -> &mut [Complex64] {
        &mut self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    /// Copies the upper triangle onto the lower one by conjugation.
    pub fn mirror_upper(&mut self) {
        let d = self.dim;
        for i in 0..d {
            self.data[i * d + i].im = 0.0;
            for j in i + 1..d {
                self.data[j * d + i] = self.data[i * d + j].conj();
            }
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i).re).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|z| *z *= factor);
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let scale = self.data.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
        (0..self.dim).all(|i| {
            (i..self.dim).all(|j| (self.get(i, j) - self.get(j, i).conj()).norm() <= tol * scale)
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `(self + ridge * I) * x`
    pub fn mul_vec_ridged(&self, x: &[Complex64], ridge: f64) -> Vec<Complex64> {
        (0..self.dim)
            .map(|i| {
                let row = &self.data[i * self.dim..(i + 1) * self.dim];
                let mut acc = x[i] * ridge;
                for (a, b) in row.iter().zip(x.iter()) {
                    acc += a * b;
                }
                acc
            })
            .collect()
    }
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Lower-triangular Cholesky factor of `A + ridge * I`.
struct Cholesky {
    dim: usize,
    lower: Vec<Complex64>,
}

impl Cholesky {
    fn factor(a: &HermitianMatrix, ridge: f64) -> Result<Self> {
        let d = a.dim();
        let mut l = vec![Complex64::new(0.0, 0.0); d * d];
        let max_diag = (0..d).map(|i| a.get(i, i).re + ridge).fold(0.0, f64::max);
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0f64;
        for j in 0..d {
            let mut diag = a.get(j, j).re + ridge;
            for k in 0..j {
                diag -= l[j * d + k].norm_sqr();
            }
            if !(diag > max_diag * 1e-15) || !diag.is_finite() {
                let condition = if diag > 0.0 {
                    max_pivot.max(diag) / diag
                } else {
                    f64::INFINITY
                };
                return Err(Error::Solver {
                    context: format!("pivot {j} of {d}"),
                    reason: format!("matrix is not numerically positive definite (pivot {diag:.3e})"),
                    condition,
                });
            }
            min_pivot = min_pivot.min(diag);
            max_pivot = max_pivot.max(diag);
            let pivot = diag.sqrt();
            l[j * d + j] = Complex64::new(pivot, 0.0);
            for i in j + 1..d {
                let mut acc = a.get(i, j);
                for k in 0..j {
                    acc -= l[i * d + k] * l[j * d + k].conj();
                }
                l[i * d + j] = acc / pivot;
            }
        }
        Ok(Self { dim: d, lower: l })
    }

    fn solve(&self, rhs: &[Complex64]) -> Vec<Complex64> {
        let d = self.dim;
        let l = &self.lower;
        let mut y = vec![Complex64::new(0.0, 0.0); d];
        for i in 0..d {
            let mut acc = rhs[i];
            for k in 0..i {
                acc -= l[i * d + k] * y[k];
            }
            y[i] = acc / l[i * d + i].re;
        }
        let mut x = vec![Complex64::new(0.0, 0.0); d];
        for i in (0..d).rev() {
            let mut acc = y[i];
            for k in i + 1..d {
                acc -= l[k * d + i].conj() * x[k];
            }
            x[i] = acc / l[i * d + i].re;
        }
        x
    }

    fn pivot_ratio(&self) -> f64 {
        let d = self.dim;
        let pivots = (0..d).map(|i| self.lower[i * d + i].re.powi(2));
        let (lo, hi) = pivots.fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(p), hi.max(p)));
        hi / lo
    }
}

/// Solves `(z + ridge * I) w = q` for Hermitian positive (semi)definite `z`.
///
/// The solution is refined until the residual is below
/// [`RESIDUAL_TOLERANCE`] relative to `q`.
pub fn solve_weights(z: &HermitianMatrix, q: &[Complex64], ridge: f64) -> Result<Vec<Complex64>> {
    let d = z.dim();
    if q.len() != d {
        return Err(Error::InvalidInput(format!(
            "right-hand side of length {} for a {d}x{d} system",
            q.len()
        )));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidInput(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    if !z.is_finite() || q.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Numerical("non-finite entries in the normal equations".into()));
    }
    let q_norm = norm(q);
    if q_norm == 0.0 {
        return Ok(vec![Complex64::new(0.0, 0.0); d]);
    }
    let chol = Cholesky::factor(z, ridge)?;
    let mut w = chol.solve(q);
    for _ in 0..=MAX_REFINEMENT_STEPS {
        let r: Vec<Complex64> = z
            .mul_vec_ridged(&w, ridge)
            .iter()
            .zip(q.iter())
            .map(|(a, b)| b - a)
            .collect();
        if norm(&r) <= RESIDUAL_TOLERANCE * q_norm {
            return Ok(w);
        }
        let dw = chol.solve(&r);
        w.iter_mut().zip(dw.iter()).for_each(|(a, b)| *a += b);
    }
    Err(Error::Solver {
        context: format!("{d}x{d} system"),
        reason: "residual did not reach tolerance after refinement".into(),
        condition: chol.pivot_ratio(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identity_returns_rhs() {
        let q = vec![c(1.0, -2.0), c(0.5, 0.25), c(-3.0, 0.0)];
        let w = solve_weights(&HermitianMatrix::identity(3), &q, 0.0).unwrap();
        for (a, b) in w.iter().zip(q.iter()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn scalar_system() {
        let z = HermitianMatrix::from_row_major(1, vec![c(2.0, 0.0)]).unwrap();
        let w = solve_weights(&z, &[c(4.0, 0.0)], 0.0).unwrap();
        assert!((w[0] - c(2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn ridge_shifts_the_diagonal() {
        let z = HermitianMatrix::from_row_major(1, vec![c(1.0, 0.0)]).unwrap();
        let w = solve_weights(&z, &[c(3.0, 0.0)], 2.0).unwrap();
        assert!((w[0] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn singular_without_ridge_is_an_error() {
        let z = HermitianMatrix::zeros(2);
        let err = solve_weights(&z, &[c(1.0, 0.0), c(0.0, 0.0)], 0.0).unwrap_err();
        assert!(matches!(err, Error::Solver { .. }), "{err}");
    }

    #[test]
    fn zero_block_is_repaired_by_ridge() {
        let mut z = HermitianMatrix::zeros(2);
        z.set(0, 0, c(4.0, 0.0));
        let w = solve_weights(&z, &[c(8.0, 0.0), c(0.0, 0.0)], 1e-8).unwrap();
        assert!((w[0] - c(2.0, 0.0)).norm() < 1e-8);
        assert_eq!(w[1], c(0.0, 0.0));
    }

    #[test]
    fn dimension_mismatch() {
        let z = HermitianMatrix::identity(2);
        assert!(matches!(
            solve_weights(&z, &[c(1.0, 0.0)], 0.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn mirror_makes_hermitian() {
        let mut z = HermitianMatrix::zeros(3);
        z.set(0, 0, c(2.0, 0.0));
        z.set(0, 2, c(1.0, 1.0));
        z.set(1, 1, c(3.0, 0.0));
        z.set(1, 2, c(0.0, -0.5));
        z.set(2, 2, c(5.0, 0.0));
        z.mirror_upper();
        assert!(z.is_hermitian(0.0));
        assert_eq!(z.get(2, 0), c(1.0, -1.0));
    }
}
