//! Dense symmetric eigen-solvers and small helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenpairs sorted by
/// descending eigenvalue. Columns of the returned matrix are the eigenvectors.
pub fn sym_eigen_desc(m: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::InvalidInput("eigen-decomposition needs a square matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigensolverFailure("matrix has non-finite entries".into()));
    }
    let max_iter = 1000 + 100 * n;
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, max_iter).ok_or_else(|| {
        Error::EigensolverFailure(format!("QR iteration did not converge within {max_iter} sweeps"))
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the solver order for exactly repeated eigenvalues.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}

/// Same as [`sym_eigen_desc`] but ascending.
pub fn sym_eigen_asc(m: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (mut values, vectors) = sym_eigen_desc(m)?;
    let n = values.len();
    values.reverse();
    let vectors = DMatrix::from_fn(vectors.nrows(), n, |i, j| vectors[(i, n - 1 - j)]);
    Ok((values, vectors))
}

/// Flips the sign of `v` so that its entry of largest magnitude is positive
/// (the first such entry on ties).
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (k, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = k;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
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

/// Solves the symmetric-definite problem `A c = eta B c` by Cholesky reduction.
///
/// Returns eigenvalues in ascending order and `B`-orthonormal eigenvectors as
/// columns. When `B` is not numerically positive definite it is shifted by
/// `1e-12 * trace(B)` before factoring again.
pub fn generalized_sym_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let chol = match b.clone().cholesky() {
        Some(c) => c,
        None => {
            let shift = 1e-12 * b.trace().abs().max(f64::MIN_POSITIVE);
            let shifted = b + DMatrix::identity(n, n) * shift;
            shifted.cholesky().ok_or_else(|| {
                Error::EigensolverFailure("Gram matrix is not positive definite after shift".into())
            })?
        }
    };
    let l = chol.l();
    // M = L^{-1} A L^{-T}
    let linv_a = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::EigensolverFailure("triangular solve failed".into()))?;
    let m_t = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or_else(|| Error::EigensolverFailure("triangular solve failed".into()))?;
    let mut m = m_t.transpose();
    symmetrize(&mut m);
    let (values, y) = sym_eigen_asc(m)?;
    let lt = l.transpose();
    let c = lt
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::EigensolverFailure("triangular solve failed".into()))?;
    Ok((values, c))
}

/// Left singular vectors of `m` whose singular values exceed `rel_tol` times
/// the largest one, ordered by descending singular value.
pub fn range_basis(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::EigensolverFailure("SVD did not return left vectors".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let smax = order.first().map(|&k| sv[k]).unwrap_or(0.0);
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&k| smax > 0.0 && sv[k] > rel_tol * smax)
        .collect();
    let mut out = DMatrix::zeros(m.nrows(), keep.len());
    for (c, &k) in keep.iter().enumerate() {
        let mut col: Vec<f64> = u.column(k).iter().copied().collect();
        fix_sign(&mut col);
        out.set_column(c, &DVector::from_vec(col));
    }
    Ok(out)
}
