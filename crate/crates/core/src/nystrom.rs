//! Nystrom extension of eigenfunctions, truncated function regression and the
//! Nystrom projection `x -> X_hat Phi(x)` onto the learned manifold.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::cidm::{CidmModel, QueryKernel, ScaleMode, Shape};
use crate::cloud::{dist, PointCloud};
use crate::error::{invalid, Error, Result};

/// Kernel eigenvalues below this magnitude are not extended.
pub const SMALL_EIGENVALUE: f64 = 1e-10;
/// Relative gap between the k-th and (k+1)-th neighbour distances below which
/// the query is treated as sitting on a kNN-set boundary.
pub const KNN_BOUNDARY_TOL: f64 = 1e-9;

fn checked_lambda(model: &CidmModel, l: usize) -> Result<f64> {
    if l >= model.n_eigs() {
        return Err(invalid(format!(
            "mode {l} requested but the model holds {} eigenpairs",
            model.n_eigs()
        )));
    }
    let lambda = model.lambda(l);
    if lambda.abs() < SMALL_EIGENVALUE {
        return Err(Error::SmallEigenvalue { mode: l, lambda });
    }
    Ok(lambda)
}

fn modes_from_kernel(model: &CidmModel, q: &QueryKernel, count: usize) -> Result<Vec<f64>> {
    let phi = model.eig_phi();
    (0..count)
        .map(|l| {
            let lambda = checked_lambda(model, l)?;
            let col = phi.column(l);
            let s: f64 = q.weights.iter().zip(col.iter()).map(|(p, v)| p * v).sum();
            Ok(s / lambda)
        })
        .collect()
}

/// Nystrom extension of eigenvector `ell` evaluated at `x`:
/// `(1 / lambda) sum_j k_hat(x, x_j) phi(x_j)`.
pub fn extend_eigenfunction(model: &CidmModel, ell: usize, x: &[f64]) -> Result<f64> {
    let lambda = checked_lambda(model, ell)?;
    let q = model.query_kernel(x)?;
    let col = model.eig_phi().column(ell);
    Ok(q.weights.iter().zip(col.iter()).map(|(p, v)| p * v).sum::<f64>() / lambda)
}

/// Values `phi_0(x), ..., phi_{count-1}(x)` from a single kernel evaluation.
pub fn eigenfunctions_at(model: &CidmModel, count: usize, x: &[f64]) -> Result<Vec<f64>> {
    let q = model.query_kernel(x)?;
    modes_from_kernel(model, &q, count)
}

/// Diffusion coordinates `(phi_1(x), ..., phi_L(x))`; the constant mode is skipped.
pub fn diffusion_map(model: &CidmModel, l_trunc: usize, x: &[f64]) -> Result<Vec<f64>> {
    if l_trunc + 1 > model.n_eigs() {
        return Err(invalid(format!(
            "diffusion map of {l_trunc} coordinates needs {} eigenpairs, model holds {}",
            l_trunc + 1,
            model.n_eigs()
        )));
    }
    let mut all = eigenfunctions_at(model, l_trunc + 1, x)?;
    all.remove(0);
    Ok(all)
}

/// Generalized Fourier coefficients `<values[:, s], phi_l>` for `l < l_trunc`.
pub fn fourier_coefficients(model: &CidmModel, values: &DMatrix<f64>, l_trunc: usize) -> Result<DMatrix<f64>> {
    let n = model.n_points();
    if values.nrows() != n {
        return Err(invalid(format!(
            "values have {} rows, model has {n} training points",
            values.nrows()
        )));
    }
    if l_trunc == 0 || l_trunc > model.n_eigs() {
        return Err(invalid(format!(
            "l_trunc = {l_trunc} must lie in 1..={}",
            model.n_eigs()
        )));
    }
    let phi = model.eig_phi();
    let w = model.weights();
    Ok(DMatrix::from_fn(l_trunc, values.ncols(), |l, s| {
        (0..n).map(|i| w[i] * values[(i, s)] * phi[(i, l)]).sum()
    }))
}

/// Evaluates `sum_l coeffs[l, :] phi_l(x)`.
pub fn extend_function(model: &CidmModel, coeffs: &DMatrix<f64>, x: &[f64]) -> Result<Vec<f64>> {
    let phis = eigenfunctions_at(model, coeffs.nrows(), x)?;
    Ok(combine(coeffs, &phis))
}

fn combine(coeffs: &DMatrix<f64>, phis: &[f64]) -> Vec<f64> {
    (0..coeffs.ncols())
        .map(|s| phis.iter().enumerate().map(|(l, p)| coeffs[(l, s)] * p).sum())
        .collect()
}

/// Values and Jacobian of `(phi_0, ..., phi_{count-1})` at `x`.
///
/// The kNN scale of `x` is differentiated along with the distances; the result
/// is the exact gradient of the extension wherever the neighbour set is locally
/// fixed.
pub fn eigenfunction_jacobian(model: &CidmModel, count: usize, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let cfg = model.config();
    if cfg.shape != Shape::Exponential {
        return Err(invalid("gradients need the exponential shape function"));
    }
    let q = model.query_kernel(x)?;
    if q.coincident.is_some() {
        return Err(Error::KnnBoundary { gap: 0.0 });
    }
    let training = model.training();
    let k = cfg.k_nn;
    let dim = x.len();

    // Gradient of the query scale, divided by the scale.
    let mut grad_log_scale = vec![0.0; dim];
    if cfg.scale_mode != ScaleMode::Fixed {
        let far = q.neighbors.last().map(|&j| dist(x, training.row(j))).unwrap_or(0.0);
        if q.boundary_gap <= KNN_BOUNDARY_TOL * far.max(f64::MIN_POSITIVE) {
            return Err(Error::KnnBoundary { gap: q.boundary_gap });
        }
        let members: &[usize] = match cfg.scale_mode {
            ScaleMode::MeanKnn => &q.neighbors,
            ScaleMode::KthNeighbor => &q.neighbors[k - 1..k],
            ScaleMode::Fixed => unreachable!(),
        };
        let denom = members.len() as f64 * q.scale;
        for &m in members {
            let xm = training.row(m);
            let d = dist(x, xm);
            for c in 0..dim {
                grad_log_scale[c] += (x[c] - xm[c]) / (d * denom);
            }
        }
    }

    let values = modes_from_kernel(model, &q, count)?;
    let phi = model.eig_phi();
    let eps2 = cfg.epsilon * cfg.epsilon;
    let scales = model.knn_scale();
    let mut jac = DMatrix::zeros(count, dim);
    let mut acc = vec![0.0; dim];
    for l in 1..count {
        let lambda = model.lambda(l);
        let col = phi.column(l);
        let mean: f64 = q.weights.iter().zip(col.iter()).map(|(p, v)| p * v).sum();
        acc.iter_mut().for_each(|a| *a = 0.0);
        let mut along_scale = 0.0;
        for (j, xj) in training.rows().enumerate() {
            let u = q.weights[j] * (col[j] - mean);
            if u == 0.0 {
                continue;
            }
            let a = 2.0 / (eps2 * q.scale * scales[j]);
            for c in 0..dim {
                acc[c] += u * a * (x[c] - xj[c]);
            }
            along_scale += u * q.args[j];
        }
        for c in 0..dim {
            jac[(l, c)] = -(acc[c] - along_scale * grad_log_scale[c]) / lambda;
        }
    }
    Ok((values, jac))
}

/// Gradient of the Nystrom extension of eigenvector `ell` at `x`.
pub fn grad_eigenfunction(model: &CidmModel, ell: usize, x: &[f64]) -> Result<Vec<f64>> {
    checked_lambda(model, ell)?;
    let (_, jac) = eigenfunction_jacobian(model, ell + 1, x)?;
    Ok(jac.row(ell).iter().copied().collect())
}

/// The Nystrom projection `x -> sum_l x_hat_l phi_l(x)` built from the
/// coordinate functions of the training set.
#[derive(Debug, Clone)]
pub struct NystromProjector {
    model: Arc<CidmModel>,
    xhat: DMatrix<f64>,
}

impl NystromProjector {
    /// Coefficients of the training coordinates on modes `0..l_trunc` (the
    /// constant mode included, so the data mean is representable).
    pub fn build(model: Arc<CidmModel>, l_trunc: usize) -> Result<Self> {
        let xhat = fourier_coefficients(&model, &coordinates(model.training()), l_trunc)?;
        Ok(Self { model, xhat })
    }

    /// Rebuilds a projector from stored coefficients.
    pub fn from_parts(model: Arc<CidmModel>, xhat: DMatrix<f64>) -> Result<Self> {
        if xhat.ncols() != model.dim() || xhat.nrows() == 0 || xhat.nrows() > model.n_eigs() {
            return Err(invalid("projector coefficients do not match the model"));
        }
        Ok(Self { model, xhat })
    }

    pub fn model(&self) -> &CidmModel {
        &self.model
    }

    pub fn model_arc(&self) -> &Arc<CidmModel> {
        &self.model
    }

    pub fn l_trunc(&self) -> usize {
        self.xhat.nrows()
    }

    /// `l_trunc x n` coefficient matrix.
    pub fn xhat(&self) -> &DMatrix<f64> {
        &self.xhat
    }

    /// One application of the projection.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        extend_function(&self.model, &self.xhat, x)
    }

    /// Applies the projection `iterations` times.
    pub fn project(&self, x: &[f64], iterations: usize) -> Result<Vec<f64>> {
        if iterations == 0 {
            return Err(invalid("projection needs at least one iteration"));
        }
        let mut y = x.to_vec();
        for _ in 0..iterations {
            y = self.apply(&y)?;
        }
        Ok(y)
    }

    pub fn project_all(&self, points: &PointCloud, iterations: usize) -> Result<Vec<Vec<f64>>> {
        (0..points.len())
            .into_par_iter()
            .map(|i| self.project(points.row(i), iterations))
            .collect()
    }

    /// Jacobian of one projection step, `x_hat^T D Phi(x)` (`n x n`).
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let (_, dphi) = eigenfunction_jacobian(&self.model, self.l_trunc(), x)?;
        Ok(self.xhat.transpose() * dphi)
    }

    /// Gradient of `L(project(x, 1))` given the gradient of `L` in input space:
    /// `D Phi(x)^T x_hat grad L(iota(x))`.
    pub fn restricted_loss_gradient<F>(&self, loss_grad_at: F, x: &[f64]) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let (phis, dphi) = eigenfunction_jacobian(&self.model, self.l_trunc(), x)?;
        let y = combine(&self.xhat, &phis);
        let g = loss_grad_at(&y);
        if g.len() != x.len() {
            return Err(invalid("loss gradient has the wrong dimension"));
        }
        let g = nalgebra::DVector::from_vec(g);
        let out = dphi.transpose() * (&self.xhat * g);
        Ok(out.iter().copied().collect())
    }
}

/// Training coordinates as an `N x n` matrix.
pub fn coordinates(points: &PointCloud) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), points.dim(), |i, c| points.row(i)[c])
}

/// Builds the projector for `model` keeping `l_trunc` modes.
pub fn build_projector(model: Arc<CidmModel>, l_trunc: usize) -> Result<NystromProjector> {
    NystromProjector::build(model, l_trunc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cidm::CidmConfig;

    fn scatter(n: usize, dim: usize, seed: u64) -> PointCloud {
        let mut state = seed.wrapping_add(0x9e3779b97f4a7c15);
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64)
        };
        let data = (0..n * dim).map(|_| next() * 2.0 - 1.0).collect();
        PointCloud::new(data, n, dim).unwrap()
    }

    fn model(n: usize, n_eigs: usize) -> Arc<CidmModel> {
        let mut cfg = CidmConfig::new(6, n_eigs);
        cfg.epsilon = 0.5;
        Arc::new(CidmModel::fit(&scatter(n, 2, 42), cfg).unwrap())
    }

    #[test]
    fn constant_mode_extends_to_one() {
        let m = model(40, 5);
        for x in [[0.1, 0.2], [5.0, -3.0], [1e3, 1e3]] {
            assert!((extend_eigenfunction(&m, 0, &x).unwrap() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn extension_interpolates_eigenvectors() {
        let m = model(40, 10);
        for i in [0, 7, 39] {
            for l in 0..10 {
                let v = extend_eigenfunction(&m, l, m.training().row(i)).unwrap();
                let expect = m.eig_phi()[(i, l)];
                assert!((v - expect).abs() <= 1e-8 * expect.abs().max(1.0));
            }
        }
    }

    #[test]
    fn fourier_coefficients_of_modes_and_constants() {
        let m = model(40, 40);
        let phi2 = DMatrix::from_fn(40, 1, |i, _| m.eig_phi()[(i, 2)]);
        let c = fourier_coefficients(&m, &phi2, 40).unwrap();
        for l in 0..40 {
            let expect = if l == 2 { 1.0 } else { 0.0 };
            assert!((c[(l, 0)] - expect).abs() < 1e-10);
        }
        let consts = DMatrix::from_element(40, 1, 3.5);
        let c = fourier_coefficients(&m, &consts, 10).unwrap();
        assert!((c[(0, 0)] - 3.5).abs() < 1e-12);
        assert!(c.iter().skip(1).all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let m = model(20, 5);
        assert!(fourier_coefficients(&m, &DMatrix::zeros(19, 1), 3).is_err());
        assert!(fourier_coefficients(&m, &DMatrix::zeros(20, 1), 6).is_err());
        assert!(extend_eigenfunction(&m, 5, &[0.0, 0.0]).is_err());
        assert!(extend_eigenfunction(&m, 0, &[0.0]).is_err());
        let p = NystromProjector::build(m, 3).unwrap();
        assert!(p.project(&[0.0, 0.0], 0).is_err());
    }

    #[test]
    fn small_eigenvalue_is_refused() {
        let mut m = (*model(20, 5)).clone();
        m.eig_xi[3] = 1.0 - 1e-12;
        assert!(matches!(
            extend_eigenfunction(&m, 3, &[0.0, 0.0]),
            Err(Error::SmallEigenvalue { mode: 3, .. })
        ));
    }

    #[test]
    fn single_mode_projector_maps_to_mean() {
        let m = model(30, 5);
        let p = NystromProjector::build(m.clone(), 1).unwrap();
        let mean: Vec<f64> = (0..2)
            .map(|c| {
                let col: Vec<f64> = m.training().rows().map(|r| r[c]).collect();
                m.inner(&col, &vec![1.0; 30])
            })
            .collect();
        for x in [[0.0, 0.0], [3.0, 1.0]] {
            let y = p.project(&x, 1).unwrap();
            assert!((y[0] - mean[0]).abs() < 1e-12 && (y[1] - mean[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_mode_has_zero_gradient() {
        let m = model(30, 5);
        let g = grad_eigenfunction(&m, 0, &[0.123, -0.31]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_on_training_point_is_refused() {
        let m = model(30, 5);
        let x = m.training().row(4).to_vec();
        assert!(matches!(grad_eigenfunction(&m, 1, &x), Err(Error::KnnBoundary { .. })));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let m = model(50, 8);
        let h = 1e-5 * m.diameter();
        for x in [[0.05, 0.11], [-0.4, 0.63], [0.9, -0.2]] {
            for l in 1..8 {
                let g = grad_eigenfunction(&m, l, &x).unwrap();
                let mut fd = [0.0; 2];
                for c in 0..2 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[c] += h;
                    xm[c] -= h;
                    fd[c] = (extend_eigenfunction(&m, l, &xp).unwrap()
                        - extend_eigenfunction(&m, l, &xm).unwrap())
                        / (2.0 * h);
                }
                let err = ((g[0] - fd[0]).powi(2) + (g[1] - fd[1]).powi(2)).sqrt();
                let scale = (fd[0].powi(2) + fd[1].powi(2)).sqrt().max(1e-8);
                assert!(err / scale < 1e-4, "mode {l} at {x:?}: {g:?} vs {fd:?}");
            }
        }
    }
}
