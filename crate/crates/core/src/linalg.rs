//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Relative jitter floor: the smallest eigenvalue of a covariance is kept at or
/// above `JITTER_SCALE * trace / dim`.
pub const JITTER_SCALE: f64 = 1e-8;

/// Inverse and log-determinant of a symmetric positive-definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let chol = Cholesky::new(m.clone())
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{}x{} matrix", m.nrows(), m.ncols())))?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok((inv, log_det))
}

/// Solves `m x = b` for symmetric positive-definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = Cholesky::new(m.clone())
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{}x{} matrix", m.nrows(), m.ncols())))?;
    Ok(chol.solve(b))
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// The jitter floor for a covariance matrix.
pub fn jitter_floor(m: &DMatrix<f64>, scale: f64) -> f64 {
    let n = m.nrows().max(1) as f64;
    scale * m.trace().abs() / n
}

/// Raises the spectrum of `m` so that its smallest eigenvalue is at least the
/// jitter floor. Returns the amount added to the diagonal (0 when untouched).
pub fn apply_jitter(m: &mut DMatrix<f64>, scale: f64) -> f64 {
    let floor = jitter_floor(m, scale).max(f64::MIN_POSITIVE);
    let lo = min_eigenvalue(m);
    if lo >= floor {
        return 0.0;
    }
    // the floor grows with the trace, hence the (1 - scale) correction
    let add = (floor - lo) / (1.0 - scale) * (1.0 + 1e-9);
    for i in 0..m.nrows() {
        m[(i, i)] += add;
    }
    add
}

/// Projects a symmetric matrix onto the positive-definite cone by clipping
/// its eigenvalues from below at `eps`.
pub fn clip_eigenvalues(m: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let clipped = eig.eigenvalues.map(|l| l.max(eps));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

/// Rescales a covariance to unit diagonal.
pub fn to_correlation(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let mut sd = Vec::with_capacity(n);
    for i in 0..n {
        let d = m[(i, i)];
        if !(d > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "diagonal entry {i} is {d}, expected a positive variance"
            )));
        }
        sd.push(d.sqrt());
    }
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = if i == j { 1.0 } else { m[(i, j)] / (sd[i] * sd[j]) };
        }
    }
    Ok(out)
}

pub fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}
