//! Small dense linear-algebra helpers shared by the model modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub(crate) const SYMMETRY_TOL: f64 = 1e-10;

pub(crate) fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("expected a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix".into()));
    }
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite)
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    let scale = m.amax().max(1.0);
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Inverse of an SPD matrix, symmetrized.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut inv = cholesky(m)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

pub(crate) fn log_det_from_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// `m += scale * v v^T`
pub(crate) fn add_outer(m: &mut DMatrix<f64>, v: &DVector<f64>, scale: f64) {
    m.ger(scale, v, v, 1.0);
}

pub(crate) fn check_finite_vec(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub(crate) fn row_vector(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}

/// Numerically stable logistic function.
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
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub(crate) struct ThinSvd {
    pub u: DMatrix<f64>,
    /// Nonincreasing.
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// Thin SVD `z = U diag(s) V^T`. Backed by faer: nalgebra's bidiagonal SVD
/// returns wrong factors on some rank-deficient inputs.
pub(crate) fn thin_svd(z: &DMatrix<f64>) -> Result<ThinSvd> {
    let (n, k) = z.shape();
    let m = faer::Mat::<f64>::from_fn(n, k, |i, j| z[(i, j)]);
    let svd = m.thin_svd().map_err(|e| Error::NonFinite(format!("SVD did not converge: {e:?}")))?;
    let (fu, fs, fv) = (svd.U(), svd.S().column_vector(), svd.V());
    let p = n.min(k);
    Ok(ThinSvd {
        u: DMatrix::from_fn(n, p, |i, c| fu[(i, c)]),
        singular_values: DVector::from_fn(p, |c, _| fs[c]),
        v: DMatrix::from_fn(k, p, |j, c| fv[(j, c)]),
    })
}
