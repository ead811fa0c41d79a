//! Conformally invariant diffusion map.
//!
//! Distances are rescaled by the kNN distances of both endpoints,
//!
//! ```text
//! delta(x, y)^2 = d(x, y)^2 / (s(x) s(y)),      K_ij = h(delta(x_i, x_j)^2 / eps^2)
//! ```
//!
//! where `s` is the mean distance to the `k_nn` nearest training points (or the
//! distance to the `k_nn`-th one). The Markov matrix `D^-1 K` is diagonalised
//! through its symmetric conjugate `D^-1/2 K D^-1/2`. Eigenvectors are
//! normalised in the degree-weighted inner product
//! `<f, g> = sum_i w_i f_i g_i` with `w_i = D_ii / sum_j D_jj`, in which they are
//! exactly orthonormal and `phi_0 = 1`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{sq_dist, PointCloud};
use crate::error::{invalid, Error, Result};
use crate::linalg::{fix_sign, sym_eigen_desc};

/// Eigenvalues of the Laplacian this close to zero count as harmonic modes.
const ZERO_MODE_TOL: f64 = 1e-8;
/// A kNN scale at or below this fraction of the data diameter means coincident points.
const DUPLICATE_TOL: f64 = 1e-12;
/// A query within this fraction of a training point's scale is treated as that point.
const COINCIDENT_TOL: f64 = 1e-12;

/// Shape function `h` applied to `delta^2 / eps^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// `h(z) = exp(-z)`
    #[default]
    Exponential,
    /// `h(z) = 1` for `z <= 1`, else 0
    Indicator,
}

impl Shape {
    #[inline]
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Shape::Exponential => (-z).exp(),
            Shape::Indicator => {
                if z <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    #[default]
    Cidm,
    /// Applies `K <- D^-1 K D^-1` before the Markov normalisation.
    CidmWithDiffusionMapsNormalization,
}

/// How the per-point distance scale `s(x)` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Mean distance to the `k_nn` nearest neighbours.
    #[default]
    MeanKnn,
    /// Distance to the `k_nn`-th nearest neighbour.
    KthNeighbor,
    /// `s = 1` everywhere: an ordinary fixed-bandwidth kernel.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CidmConfig {
    pub k_nn: usize,
    pub epsilon: f64,
    pub shape: Shape,
    pub n_eigs: usize,
    pub kernel_variant: KernelVariant,
    pub scale_mode: ScaleMode,
}

impl Default for CidmConfig {
    fn default() -> Self {
        Self {
            k_nn: 8,
            epsilon: 1.0,
            shape: Shape::Exponential,
            n_eigs: 40,
            kernel_variant: KernelVariant::Cidm,
            scale_mode: ScaleMode::MeanKnn,
        }
    }
}

impl CidmConfig {
    pub fn new(k_nn: usize, n_eigs: usize) -> Self {
        Self {
            k_nn,
            n_eigs,
            ..Self::default()
        }
    }

    pub fn validate(&self, n_points: usize) -> Result<()> {
        if self.k_nn == 0 || self.k_nn + 1 > n_points {
            return Err(invalid(format!(
                "k_nn = {} must lie in 1..={}",
                self.k_nn,
                n_points.saturating_sub(1)
            )));
        }
        if self.n_eigs == 0 || self.n_eigs > n_points {
            return Err(invalid(format!(
                "n_eigs = {} must lie in 1..={n_points}",
                self.n_eigs
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(invalid(format!("epsilon = {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

/// Squared CIDM dissimilarity `d(x, y)^2 / (scale_x * scale_y)`.
pub fn cidm_dissimilarity_sq(x: &[f64], y: &[f64], scale_x: f64, scale_y: f64) -> f64 {
    sq_dist(x, y) / (scale_x * scale_y)
}

// Shared by the training kernel and out-of-sample queries so that a query that
// coincides with a training point reproduces the kernel row bit for bit.
#[inline]
fn kernel_arg(d2: f64, sa: f64, sb: f64, eps: f64) -> f64 {
    d2 / (sa * sb) / (eps * eps)
}

/// Neighbours of `i` in ascending (distance, index) order, excluding `i`.
fn sorted_neighbors(dists: &[f64], exclude: Option<usize>, take: usize) -> Vec<(f64, usize)> {
    let mut cand: Vec<(f64, usize)> = dists
        .iter()
        .copied()
        .enumerate()
        .filter(|&(j, _)| Some(j) != exclude)
        .map(|(j, d)| (d, j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let take = take.min(cand.len());
    if take < cand.len() {
        cand.select_nth_unstable_by(take, cmp);
        cand.truncate(take + 1);
    }
    cand.sort_by(cmp);
    cand.truncate(take);
    cand
}

fn scale_from_neighbors(neighbors: &[(f64, usize)], k: usize, mode: ScaleMode) -> f64 {
    match mode {
        ScaleMode::MeanKnn => neighbors[..k].iter().map(|n| n.0).sum::<f64>() / k as f64,
        ScaleMode::KthNeighbor => neighbors[k - 1].0,
        ScaleMode::Fixed => 1.0,
    }
}

fn point_scales(points: &PointCloud, k_nn: usize, mode: ScaleMode) -> Result<Vec<f64>> {
    let n = points.len();
    if k_nn == 0 || k_nn >= n {
        return Err(invalid(format!("k_nn = {k_nn} must lie in 1..={}", n - 1)));
    }
    let scales: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = points.row(i);
            let dists: Vec<f64> = points.rows().map(|xj| sq_dist(xi, xj).sqrt()).collect();
            let nb = sorted_neighbors(&dists, Some(i), k_nn);
            scale_from_neighbors(&nb, k_nn, mode)
        })
        .collect();
    if mode != ScaleMode::Fixed {
        let threshold = DUPLICATE_TOL * points.diameter();
        if let Some((index, &scale)) = scales.iter().enumerate().find(|(_, &s)| s <= threshold) {
            return Err(Error::DuplicatePoint { index, scale });
        }
    }
    Ok(scales)
}

/// Mean Euclidean distance from every point to its `k_nn` nearest other points.
///
/// Ties in distance are broken by ascending index.
pub fn knn_scales(points: &PointCloud, k_nn: usize) -> Result<Vec<f64>> {
    point_scales(points, k_nn, ScaleMode::MeanKnn)
}

/// A fitted kernel with its Laplacian eigenbasis. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct CidmModel {
    pub(crate) training: PointCloud,
    pub(crate) config: CidmConfig,
    pub(crate) knn_scale: Vec<f64>,
    /// Row sums of the kernel the eigenproblem is built from.
    pub(crate) degree: Vec<f64>,
    /// Row sums of the raw kernel; differs from `degree` only with the
    /// diffusion-maps normalisation.
    pub(crate) base_degree: Vec<f64>,
    pub(crate) eig_xi: Vec<f64>,
    pub(crate) eig_phi: DMatrix<f64>,
    pub(crate) weights: Vec<f64>,
    pub(crate) diameter: f64,
}

/// Normalised kernel weights of one query against the training set.
#[derive(Debug, Clone)]
pub struct QueryKernel {
    /// `k_hat(x, x_j)`, summing to one.
    pub weights: Vec<f64>,
    /// Kernel arguments `delta(x, x_j)^2 / eps^2`.
    pub args: Vec<f64>,
    pub scale: f64,
    /// Training point the query coincides with, if any.
    pub coincident: Option<usize>,
    /// Indices of the neighbours that define `scale`, nearest first.
    pub neighbors: Vec<usize>,
    /// Distance gap between the last neighbour in the scale set and the next one.
    pub boundary_gap: f64,
}

impl CidmModel {
    /// Fits the kernel, degrees and leading eigenpairs to `points`.
    pub fn fit(points: &PointCloud, config: CidmConfig) -> Result<Self> {
        config.validate(points.len())?;
        let n = points.len();
        let scales = point_scales(points, config.k_nn, config.scale_mode)?;
        let diameter = points.diameter();
        let eps = config.epsilon;
        let shape = config.shape;

        // Each entry is evaluated from the (min, max) index pair so K is exactly symmetric.
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let (a, b) = if i <= j { (i, j) } else { (j, i) };
                        let d2 = sq_dist(points.row(a), points.row(b));
                        shape.eval(kernel_arg(d2, scales[a], scales[b], eps))
                    })
                    .collect()
            })
            .collect();
        let mut kernel = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        drop(rows);

        let base_degree = row_sums(&kernel);
        let degree = match config.kernel_variant {
            KernelVariant::Cidm => base_degree.clone(),
            KernelVariant::CidmWithDiffusionMapsNormalization => {
                for j in 0..n {
                    for i in 0..n {
                        let (a, b) = if i <= j { (i, j) } else { (j, i) };
                        kernel[(i, j)] /= base_degree[a] * base_degree[b];
                    }
                }
                row_sums(&kernel)
            }
        };
        if let Some(i) = degree.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::DisconnectedGraph { near_zero: i + 1 });
        }

        let root_inv: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
        let ksym = DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            kernel[(i, j)] * (root_inv[a] * root_inv[b])
        });
        drop(kernel);

        let (lambda, vecs) = sym_eigen_desc(ksym)?;

        let near_zero = lambda.iter().filter(|&&l| (1.0 - l).abs() <= ZERO_MODE_TOL).count();
        if near_zero > 1 {
            return Err(Error::DisconnectedGraph { near_zero });
        }

        let total: f64 = degree.iter().sum();
        let weights: Vec<f64> = degree.iter().map(|d| d / total).collect();
        let norm = total.sqrt();
        let m = config.n_eigs;
        let mut eig_phi = DMatrix::zeros(n, m);
        let mut eig_xi = Vec::with_capacity(m);
        for l in 0..m {
            let mut col: Vec<f64> = (0..n).map(|i| vecs[(i, l)] * root_inv[i] * norm).collect();
            fix_sign(&mut col);
            for (i, v) in col.into_iter().enumerate() {
                eig_phi[(i, l)] = v;
            }
            eig_xi.push((1.0 - lambda[l]).clamp(0.0, 2.0));
        }

        // The top mode is the constant function; pin it exactly.
        let drift = eig_phi.column(0).iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        if drift > 1e-6 {
            return Err(Error::EigensolverFailure(format!(
                "leading eigenvector deviates from a constant by {drift:e}"
            )));
        }
        eig_phi.column_mut(0).fill(1.0);
        eig_xi[0] = 0.0;

        Ok(Self {
            training: points.clone(),
            config,
            knn_scale: scales,
            degree,
            base_degree,
            eig_xi,
            eig_phi,
            weights,
            diameter,
        })
    }

    /// Reassembles a model from stored arrays without refitting.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        training: PointCloud,
        config: CidmConfig,
        knn_scale: Vec<f64>,
        degree: Vec<f64>,
        base_degree: Vec<f64>,
        eig_xi: Vec<f64>,
        eig_phi: DMatrix<f64>,
    ) -> Result<Self> {
        let n = training.len();
        config.validate(n)?;
        if knn_scale.len() != n
            || degree.len() != n
            || base_degree.len() != n
            || eig_xi.len() != config.n_eigs
            || eig_phi.shape() != (n, config.n_eigs)
        {
            return Err(invalid("stored model arrays have inconsistent shapes"));
        }
        let total: f64 = degree.iter().sum();
        let weights = degree.iter().map(|d| d / total).collect();
        let diameter = training.diameter();
        Ok(Self {
            training,
            config,
            knn_scale,
            degree,
            base_degree,
            eig_xi,
            eig_phi,
            weights,
            diameter,
        })
    }

    pub fn training(&self) -> &PointCloud {
        &self.training
    }

    pub fn config(&self) -> &CidmConfig {
        &self.config
    }

    pub fn knn_scale(&self) -> &[f64] {
        &self.knn_scale
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn base_degree(&self) -> &[f64] {
        &self.base_degree
    }

    /// Laplacian eigenvalues `xi = 1 - lambda`, nondecreasing.
    pub fn eig_xi(&self) -> &[f64] {
        &self.eig_xi
    }

    /// Kernel eigenvalue `lambda_l = 1 - xi_l`.
    pub fn lambda(&self, l: usize) -> f64 {
        1.0 - self.eig_xi[l]
    }

    /// `N x n_eigs` matrix of eigenvector values on the training points.
    pub fn eig_phi(&self) -> &DMatrix<f64> {
        &self.eig_phi
    }

    pub fn n_eigs(&self) -> usize {
        self.eig_xi.len()
    }

    pub fn n_points(&self) -> usize {
        self.training.len()
    }

    pub fn dim(&self) -> usize {
        self.training.dim()
    }

    /// Quadrature weights of the inner product, summing to one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Discrete inner product `sum_i w_i f_i g_i`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights.iter().zip(f).zip(g).map(|((w, a), b)| w * a * b).sum()
    }

    /// Kernel weights of an arbitrary query point against the training set.
    ///
    /// The query's own scale is measured against training points only. A query
    /// that coincides with training point `i` uses `i`'s stored scale and
    /// excludes `i` from its neighbour set, so the weights equal row `i` of
    /// `D^-1 K`.
    pub fn query_kernel(&self, x: &[f64]) -> Result<QueryKernel> {
        if x.len() != self.dim() {
            return Err(invalid(format!(
                "query has dimension {}, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("query has non-finite coordinates"));
        }
        let cfg = &self.config;
        let k = cfg.k_nn;
        let d2: Vec<f64> = self.training.rows().map(|xj| sq_dist(x, xj)).collect();
        let dists: Vec<f64> = d2.iter().map(|v| v.sqrt()).collect();

        let coincident = dists
            .iter()
            .enumerate()
            .filter(|&(j, &d)| d <= COINCIDENT_TOL * self.knn_scale[j])
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
            .map(|(j, _)| j);

        let nb = sorted_neighbors(&dists, coincident, k + 1);
        let boundary_gap = if nb.len() > k { nb[k].0 - nb[k - 1].0 } else { f64::INFINITY };
        let scale = match coincident {
            Some(j) => self.knn_scale[j],
            None => scale_from_neighbors(&nb, k, cfg.scale_mode),
        };
        let neighbors: Vec<usize> = nb.iter().take(k).map(|n| n.1).collect();

        let args: Vec<f64> = d2
            .iter()
            .zip(&self.knn_scale)
            .map(|(&d2, &sj)| kernel_arg(d2, scale, sj, cfg.epsilon))
            .collect();
        let mut weights: Vec<f64> = match cfg.shape {
            Shape::Exponential => {
                // Shifting by the smallest argument leaves the normalised weights
                // unchanged and avoids underflow far from the data.
                let zmin = args.iter().copied().fold(f64::INFINITY, f64::min);
                args.iter().map(|z| (-(z - zmin)).exp()).collect()
            }
            Shape::Indicator => args.iter().map(|&z| Shape::Indicator.eval(z)).collect(),
        };
        if cfg.kernel_variant == KernelVariant::CidmWithDiffusionMapsNormalization {
            weights.iter_mut().zip(&self.base_degree).for_each(|(w, q)| *w /= q);
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::EmptyKernelSupport);
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(QueryKernel {
            weights,
            args,
            scale,
            coincident,
            neighbors,
            boundary_gap,
        })
    }
}

fn row_sums(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn circle(n: usize) -> PointCloud {
        let rows: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / n as f64;
                [t.cos(), t.sin()]
            })
            .collect();
        PointCloud::from_rows(&rows).unwrap()
    }

    /// Deterministic, asymmetric scatter for equivariance tests.
    fn scatter(n: usize, dim: usize, seed: u64) -> PointCloud {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64)
        };
        let data = (0..n * dim).map(|_| next() * 2.0 - 1.0).collect();
        PointCloud::new(data, n, dim).unwrap()
    }

    #[test]
    fn triangle_scales() {
        let h = 3f64.sqrt() / 2.0;
        let tri = PointCloud::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.5, h]]).unwrap();
        for s in knn_scales(&tri, 2).unwrap() {
            assert!((s - 1.0).abs() < 1e-15);
        }
        let pair = PointCloud::from_rows(&[[0.0], [3.0]]).unwrap();
        assert_eq!(knn_scales(&pair, 1).unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn circle_scales_match_brute_force_sort() {
        let cloud = circle(16);
        let scales = knn_scales(&cloud, 2).unwrap();
        let expected = 2.0 * (PI / 16.0).sin();
        for (i, s) in scales.iter().enumerate() {
            let mut all: Vec<f64> = (0..16)
                .filter(|&j| j != i)
                .map(|j| crate::cloud::dist(cloud.row(i), cloud.row(j)))
                .collect();
            all.sort_by(f64::total_cmp);
            let brute = (all[0] + all[1]) / 2.0;
            assert!((s - brute).abs() < 1e-14);
            assert!((s - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_points_are_rejected() {
        let cloud = PointCloud::from_rows(&[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(knn_scales(&cloud, 1), Err(Error::DuplicatePoint { .. })));
        assert!(matches!(
            CidmModel::fit(&cloud, CidmConfig::new(1, 2)),
            Err(Error::DuplicatePoint { .. })
        ));
    }

    #[test]
    fn dissimilarity_examples() {
        assert_eq!(cidm_dissimilarity_sq(&[1.0, 2.0], &[1.0, 2.0], 0.3, 0.7), 0.0);
        assert!((cidm_dissimilarity_sq(&[0.0, 0.0], &[2.0, 0.0], 1.0, 4.0) - 1.0).abs() < 1e-15);
        let a = [0.3, -1.2, 4.0];
        let b = [2.0, 0.5, -1.0];
        assert_eq!(
            cidm_dissimilarity_sq(&a, &b, 0.4, 1.9),
            cidm_dissimilarity_sq(&b, &a, 1.9, 0.4)
        );
    }

    #[test]
    fn config_validation() {
        assert!(CidmConfig::new(0, 2).validate(10).is_err());
        assert!(CidmConfig::new(10, 2).validate(10).is_err());
        assert!(CidmConfig::new(9, 11).validate(10).is_err());
        let mut c = CidmConfig::new(3, 3);
        c.epsilon = 0.0;
        assert!(c.validate(10).is_err());
    }

    #[test]
    fn constant_mode_and_orthonormality() {
        let model = CidmModel::fit(&scatter(60, 3, 1), CidmConfig::new(6, 60)).unwrap();
        assert_eq!(model.eig_xi()[0], 0.0);
        assert!(model.eig_phi().column(0).iter().all(|&v| v == 1.0));
        let phi = model.eig_phi();
        for a in 0..60 {
            for b in 0..60 {
                let fa: Vec<f64> = phi.column(a).iter().copied().collect();
                let fb: Vec<f64> = phi.column(b).iter().copied().collect();
                let g = model.inner(&fa, &fb);
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((g - expect).abs() < 1e-10, "<phi_{a}, phi_{b}> = {g}");
            }
        }
        for w in model.eig_xi().windows(2) {
            assert!(w[0] <= w[1]);
        }
        assert!(model.eig_xi().iter().all(|&x| (0.0..=2.0).contains(&x)));
        assert!(model.degree().iter().all(|&d| d >= 1.0));
    }

    #[test]
    fn eigenvector_sign_convention() {
        let model = CidmModel::fit(&scatter(40, 2, 9), CidmConfig::new(5, 10)).unwrap();
        for l in 0..10 {
            let col = model.eig_phi().column(l);
            let imax = col.iamax();
            assert!(col[imax] > 0.0);
        }
    }

    #[test]
    fn row_kernel_of_training_point_matches_markov_row() {
        let cloud = scatter(30, 2, 3);
        let model = CidmModel::fit(&cloud, CidmConfig::new(4, 5)).unwrap();
        let q = model.query_kernel(cloud.row(7)).unwrap();
        assert_eq!(q.coincident, Some(7));
        assert_eq!(q.scale, model.knn_scale()[7]);
        let s = model.knn_scale();
        let raw: Vec<f64> = (0..30)
            .map(|j| Shape::Exponential.eval(cidm_dissimilarity_sq(cloud.row(7), cloud.row(j), s[7], s[j])))
            .collect();
        let total: f64 = raw.iter().sum();
        for j in 0..30 {
            assert!((q.weights[j] - raw[j] / total).abs() < 1e-15);
        }
    }

    #[test]
    fn scale_invariance_of_spectrum() {
        let cloud = scatter(40, 2, 5);
        let scaled = PointCloud::new(cloud.as_slice().iter().map(|v| v * 7.5).collect(), 40, 2).unwrap();
        let a = CidmModel::fit(&cloud, CidmConfig::new(5, 8)).unwrap();
        let b = CidmModel::fit(&scaled, CidmConfig::new(5, 8)).unwrap();
        for (x, y) in a.eig_xi().iter().zip(b.eig_xi()) {
            assert!((x - y).abs() < 1e-10);
        }
        for (x, y) in a.eig_phi().iter().zip(b.eig_phi().iter()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn fixed_bandwidth_disconnects_where_cidm_does_not() {
        use crate::synth::{generate, DensityProfile, NoiseProfile, SynthKind, SynthSpec};
        let spec = SynthSpec {
            kind: SynthKind::Circle,
            n_points: 300,
            noise_sigma: 0.05,
            density_profile: DensityProfile::AngleSkewed,
            noise_profile: NoiseProfile::AngleVarying,
            seed: 4,
        };
        let (cloud, _) = generate(&spec).unwrap();
        let mut fixed = CidmConfig::new(8, 6);
        fixed.scale_mode = ScaleMode::Fixed;
        fixed.epsilon = 0.02;
        assert!(matches!(
            CidmModel::fit(&cloud, fixed),
            Err(Error::DisconnectedGraph { .. })
        ));
        assert!(CidmModel::fit(&cloud, CidmConfig::new(8, 6)).is_ok());
    }

    #[test]
    fn diffusion_maps_variant_is_consistent() {
        let cloud = scatter(50, 2, 11);
        let mut cfg = CidmConfig::new(6, 10);
        cfg.kernel_variant = KernelVariant::CidmWithDiffusionMapsNormalization;
        let model = CidmModel::fit(&cloud, cfg).unwrap();
        assert_ne!(model.degree(), model.base_degree());
        assert_eq!(model.eig_xi()[0], 0.0);
        let q = model.query_kernel(cloud.row(3)).unwrap();
        assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn indicator_shape_fits() {
        let mut cfg = CidmConfig::new(6, 6);
        cfg.shape = Shape::Indicator;
        cfg.epsilon = 1.5;
        let model = CidmModel::fit(&circle(40), cfg).unwrap();
        assert!(model.eig_xi()[1] > 0.0);
    }
}
