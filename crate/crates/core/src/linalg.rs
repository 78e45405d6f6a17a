//! Dense numerical kernels shared by the rest of the crate.
//!
//! All routines work on [`Mat`] (a dynamically sized `nalgebra` matrix) and
//! take a [`Tolerance`] wherever a rank decision is made. The same cutoff is
//! used for rank, kernel and pseudoinverse so that the existence test in
//! [`crate::uio`] stays self-consistent.

use nalgebra::{Complex, DMatrix, Schur};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

const SCHUR_MAX_ITER: usize = 10_000;

/// Cutoffs used for rank decisions and stability checks.
///
/// The singular value cutoff for an `r x c` matrix is
/// `max(rank_rel * max(r, c) * sigma_max, abs_floor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub rank_rel: f64,
    pub abs_floor: f64,
    pub schur_margin: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rank_rel: 1e-10,
            abs_floor: 1e-12,
            schur_margin: 1e-9,
        }
    }
}

impl Tolerance {
    pub fn new(rank_rel: f64, abs_floor: f64, schur_margin: f64) -> Result<Self> {
        let tol = Self {
            rank_rel,
            abs_floor,
            schur_margin,
        };
        tol.validate()?;
        Ok(tol)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.rank_rel) || self.rank_rel >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "rank_rel must lie in (0, 1), got {}",
                self.rank_rel
            )));
        }
        if !positive(self.abs_floor) {
            return Err(Error::InvalidParameter(format!(
                "abs_floor must be positive, got {}",
                self.abs_floor
            )));
        }
        if !positive(self.schur_margin) {
            return Err(Error::InvalidParameter(format!(
                "schur_margin must be positive, got {}",
                self.schur_margin
            )));
        }
        Ok(())
    }

    pub fn singular_cutoff(&self, rows: usize, cols: usize, sigma_max: f64) -> f64 {
        (self.rank_rel * rows.max(cols) as f64 * sigma_max).max(self.abs_floor)
    }
}

pub fn ensure_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidData(format!("{what} contains NaN or Inf")))
    }
}

fn ensure_square(m: &Mat, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

struct Svd {
    sigma: Vec<f64>,
    /// Full left singular vectors, `r x r`.
    u: Mat,
    /// Full right singular vectors, `c x c`.
    v: Mat,
}

fn svd(m: &Mat) -> Result<Svd> {
    let (r, c) = m.shape();
    let fm = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    let dec = fm
        .svd()
        .map_err(|_| Error::Numerical(format!("SVD of {r}x{c} matrix did not converge")))?;
    let s = dec.S().column_vector();
    let sigma: Vec<f64> = (0..r.min(c)).map(|k| s[k]).collect();
    let (fu, fv) = (dec.U(), dec.V());
    Ok(Svd {
        sigma,
        u: Mat::from_fn(r, r, |i, j| fu[(i, j)]),
        v: Mat::from_fn(c, c, |i, j| fv[(i, j)]),
    })
}

/// Singular values of `m` in non-increasing order.
pub fn singular_values(m: &Mat) -> Result<Vec<f64>> {
    ensure_finite(m, "matrix")?;
    if m.is_empty() {
        return Ok(Vec::new());
    }
    Ok(svd(m)?.sigma)
}

fn cutoff_for(m: &Mat, sigma: &[f64], tol: &Tolerance) -> f64 {
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    tol.singular_cutoff(m.nrows(), m.ncols(), sigma_max)
}

/// Moore-Penrose pseudoinverse via SVD, discarding singular values at or
/// below the tolerance cutoff.
pub fn pinv(m: &Mat, tol: &Tolerance) -> Result<Mat> {
    ensure_finite(m, "matrix")?;
    let (r, c) = m.shape();
    if m.is_empty() {
        return Ok(Mat::zeros(c, r));
    }
    let dec = svd(m)?;
    let cutoff = cutoff_for(m, &dec.sigma, tol);

    let mut out = Mat::zeros(c, r);
    for (k, &s) in dec.sigma.iter().enumerate() {
        if s > cutoff {
            // out += v_k u_k^T / s
            out.ger(1.0 / s, &dec.v.column(k), &dec.u.column(k), 1.0);
        }
    }
    Ok(out)
}

pub fn numerical_rank(m: &Mat, tol: &Tolerance) -> Result<usize> {
    let sigma = singular_values(m)?;
    let cutoff = cutoff_for(m, &sigma, tol);
    Ok(sigma.iter().filter(|&&s| s > cutoff).count())
}

/// Orthonormal basis of the numerical kernel of `m`, one vector per column.
/// A matrix with zero columns is returned when the kernel is trivial.
pub fn null_space_basis(m: &Mat, tol: &Tolerance) -> Result<Mat> {
    ensure_finite(m, "matrix")?;
    let (r, c) = m.shape();
    if c == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    if r == 0 {
        return Ok(Mat::identity(c, c));
    }
    let dec = svd(m)?;
    let cutoff = cutoff_for(m, &dec.sigma, tol);
    // Right singular vectors beyond min(r, c) belong to the kernel outright.
    let kernel: Vec<usize> = (0..c)
        .filter(|&k| dec.sigma.get(k).is_none_or(|&s| s <= cutoff))
        .collect();
    let mut basis = Mat::zeros(c, kernel.len());
    for (j, &k) in kernel.iter().enumerate() {
        basis.set_column(j, &dec.v.column(k));
    }
    Ok(basis)
}

/// Ratio of the largest to the smallest retained singular value.
pub fn condition_number(m: &Mat, tol: &Tolerance) -> Result<f64> {
    let sigma = singular_values(m)?;
    let cutoff = cutoff_for(m, &sigma, tol);
    let kept: Vec<f64> = sigma.into_iter().filter(|&s| s > cutoff).collect();
    if kept.is_empty() {
        return Ok(f64::INFINITY);
    }
    let max = kept.iter().copied().fold(0.0, f64::max);
    let min = kept.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max / min)
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex<f64>>> {
    ensure_square(a, "matrix")?;
    ensure_finite(a, "matrix")?;
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or_else(|| Error::Numerical("eigenvalue iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &Mat) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Strict Schur stability with margin: `spectral_radius(a) < 1 - schur_margin`.
pub fn is_schur(a: &Mat, tol: &Tolerance) -> Result<bool> {
    Ok(spectral_radius(a)? < 1.0 - tol.schur_margin)
}

/// Matrix exponential (scaling and squaring with a Padé approximant).
pub fn expm(a: &Mat) -> Result<Mat> {
    ensure_square(a, "matrix")?;
    ensure_finite(a, "matrix")?;
    if a.is_empty() {
        return Ok(a.clone());
    }
    let out = a.exp();
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::Numerical(format!(
            "matrix exponential overflowed (|A|_1 = {:e})",
            a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
        )))
    }
}

/// Zero-order-hold discretization `(e^{A_c T_s}, (int_0^{T_s} e^{A_c s} ds) E_c)`
/// taken from the exponential of the augmented matrix `[[A_c, E_c], [0, 0]] T_s`.
pub fn discretize_exact(a_c: &Mat, e_c: &Mat, ts: f64) -> Result<(Mat, Mat)> {
    ensure_square(a_c, "A_c")?;
    let n = a_c.nrows();
    if e_c.nrows() != n {
        return Err(Error::Dimension(format!(
            "E_c has {} rows, A_c is {n}x{n}",
            e_c.nrows()
        )));
    }
    if !(ts.is_finite() && ts > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sampling period must be positive, got {ts}"
        )));
    }
    let md = e_c.ncols();
    let mut aug = Mat::zeros(n + md, n + md);
    aug.view_mut((0, 0), (n, n)).copy_from(a_c);
    aug.view_mut((0, n), (n, md)).copy_from(e_c);
    aug *= ts;
    let phi = expm(&aug)?;
    let a = phi.view((0, 0), (n, n)).into_owned();
    let e = phi.view((0, n), (n, md)).into_owned();
    Ok((a, e))
}

/// Stack matrices vertically. All blocks must share the column count.
pub fn vstack(blocks: &[&Mat]) -> Result<Mat> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    if let Some(bad) = blocks.iter().find(|b| b.ncols() != cols) {
        return Err(Error::Dimension(format!(
            "vstack: expected {cols} columns, found block with {}",
            bad.ncols()
        )));
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    Ok(out)
}

/// Largest absolute entry; zero for empty matrices.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}
