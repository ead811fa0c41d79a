//! Vector fields from the spectral exterior calculus.
//!
//! A field is written in the frame `v = sum v^{ij} phi_i grad phi_j` with
//! `i, j < m_basis`. Using the structure constants `c_ijs = <phi_i phi_j, phi_s>`
//! the Riemannian Gram tensor and the Dirichlet energy on this frame reduce to
//! sums over `s < m_inner`:
//!
//! ```text
//! G[(i,j),(l,k)] = 1/2 sum_s (l_j + l_k - l_s) c_jks c_lsi
//! E[(i,j),(k,l)] = 1/4 sum_s [ (l_i + l_k - l_s)(l_j + l_l - l_s) c_iks c_jls
//!                            - (l_i + l_l - l_s)(l_j + l_k - l_s) c_ils c_jks
//!                            + (l_i - l_j - l_s)(l_k - l_l - l_s) c_ijs c_kls ]
//! ```
//!
//! with `l` the Laplacian eigenvalues `xi` of the model. Matrices are indexed by
//! `i * m_basis + j`. Frame elements with `j = 0` are the zero field; they are
//! kept in the stored matrices (as zero rows) but excluded from the eigenproblem.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cidm::CidmModel;
use crate::cloud::{sq_dist, PointCloud};
use crate::error::{invalid, Error, Result};
use crate::linalg::{fix_sign, generalized_sym_eigen, range_basis, sym_eigen_asc, sym_eigen_desc, symmetrize};
use crate::nystrom::{coordinates, eigenfunctions_at, fourier_coefficients};

/// Gram eigenvalue ratio below which the reduced problem is refused.
pub const SINGULAR_GRAM_RATIO: f64 = 1e-12;
/// Relative singular value cut used when orthonormalising arrows.
pub const FRAME_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecBasisConfig {
    pub m_basis: usize,
    pub m_inner: usize,
    pub tau_frac: f64,
    /// Modes kept on each side of the operator `v_ij` when drawing arrows.
    pub m_op: usize,
}

impl SecBasisConfig {
    /// `m_inner` defaults to `min(2 m_basis^2, n_eigs)` and `m_op` to
    /// `min(3 m_basis, m_inner)`.
    pub fn new(m_basis: usize, n_eigs: usize) -> Self {
        let m_inner = (2 * m_basis * m_basis).min(n_eigs);
        Self {
            m_basis,
            m_inner,
            tau_frac: 1e-3,
            m_op: (3 * m_basis).min(m_inner).max(m_basis),
        }
    }

    pub fn validate(&self, n_eigs: usize) -> Result<()> {
        if !(2 <= self.m_basis && self.m_basis <= self.m_inner && self.m_inner <= n_eigs) {
            return Err(invalid(format!(
                "need 2 <= m_basis ({}) <= m_inner ({}) <= n_eigs ({n_eigs})",
                self.m_basis, self.m_inner
            )));
        }
        if !(self.m_basis <= self.m_op && self.m_op <= self.m_inner) {
            return Err(invalid(format!(
                "need m_basis ({}) <= m_op ({}) <= m_inner ({})",
                self.m_basis, self.m_op, self.m_inner
            )));
        }
        if !(self.tau_frac.is_finite() && self.tau_frac >= 0.0) {
            return Err(invalid(format!("tau_frac = {} must be nonnegative", self.tau_frac)));
        }
        Ok(())
    }
}

/// `c_ijs` for `i, j < rows` and `s < m_inner` (`rows = m_inner` gives the
/// full tensor). Fully symmetric where all three indices are in range.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureConstants {
    rows: usize,
    m_inner: usize,
    data: Vec<f64>,
}

impl StructureConstants {
    #[inline]
    pub fn get(&self, i: usize, j: usize, s: usize) -> f64 {
        self.data[(i * self.rows + j) * self.m_inner + s]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn m_inner(&self) -> usize {
        self.m_inner
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn from_parts(rows: usize, m_inner: usize, data: Vec<f64>) -> Result<Self> {
        if rows > m_inner || data.len() != rows * rows * m_inner {
            return Err(invalid("structure constant array has the wrong size"));
        }
        Ok(Self { rows, m_inner, data })
    }
}

/// Full tensor `c_ijs = <phi_i phi_j, phi_s>` for all indices below `m_inner`.
pub fn structure_constants(model: &CidmModel, m_inner: usize) -> Result<StructureConstants> {
    structure_constants_block(model, m_inner, m_inner)
}

/// The block of `c_ijs` with `i, j < rows`, which is all the tensors need.
pub fn structure_constants_block(model: &CidmModel, rows: usize, m_inner: usize) -> Result<StructureConstants> {
    if rows == 0 || rows > m_inner || m_inner > model.n_eigs() {
        return Err(invalid(format!(
            "structure constants need 1 <= rows ({rows}) <= m_inner ({m_inner}) <= n_eigs ({})",
            model.n_eigs()
        )));
    }
    let phi = model.eig_phi();
    let w = model.weights();
    let n = model.n_points();
    let pairs: Vec<(usize, usize)> = (0..rows).flat_map(|i| (i..rows).map(move |j| (i, j))).collect();
    // Each sorted triple a <= b <= c is evaluated once so that every
    // permutation receives the identical value.
    let sorted: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let u: Vec<f64> = (0..n).map(|t| w[t] * phi[(t, a)] * phi[(t, b)]).collect();
            (b..m_inner)
                .map(|c| {
                    let col = phi.column(c);
                    u.iter().zip(col.iter()).map(|(x, y)| x * y).sum()
                })
                .collect()
        })
        .collect();
    let pair_index = |a: usize, b: usize| a * rows - a * (a + 1) / 2 + b;
    let lookup = |i: usize, j: usize, s: usize| {
        let mut t = [i, j, s];
        t.sort_unstable();
        sorted[pair_index(t[0], t[1])][t[2] - t[1]]
    };
    let mut data = vec![0.0; rows * rows * m_inner];
    for i in 0..rows {
        for j in 0..rows {
            for s in 0..m_inner {
                data[(i * rows + j) * m_inner + s] = lookup(i, j, s);
            }
        }
    }
    Ok(StructureConstants { rows, m_inner, data })
}

fn check_tensor_inputs(c: &StructureConstants, xi: &[f64], m: usize) -> Result<()> {
    if m < 1 || m > c.rows || xi.len() < c.m_inner {
        return Err(invalid(format!(
            "m_basis = {m} needs structure constants with at least {m} rows and {} eigenvalues",
            c.m_inner
        )));
    }
    Ok(())
}

/// `A[(a,b),s] = (l_a + sign l_b - l_s) c_abs` for `a, b < m`.
fn weighted_constants(c: &StructureConstants, xi: &[f64], m: usize, sign: f64) -> DMatrix<f64> {
    let mi = c.m_inner;
    DMatrix::from_fn(m * m, mi, |r, s| {
        let (a, b) = (r / m, r % m);
        (xi[a] + sign * xi[b] - xi[s]) * c.get(a, b, s)
    })
}

/// Riemannian Gram matrix of the frame `phi_i grad phi_j`, `m^2 x m^2`.
pub fn metric_tensor(c: &StructureConstants, xi: &[f64], m: usize) -> Result<DMatrix<f64>> {
    check_tensor_inputs(c, xi, m)?;
    let a = weighted_constants(c, xi, m, 1.0);
    let plain = DMatrix::from_fn(m * m, c.m_inner, |r, s| c.get(r / m, r % m, s));
    // prod[(q,t),(r,p)] = sum_s A[(q,t),s] c_rps
    let prod = &a * plain.transpose();
    let mut g = DMatrix::from_fn(m * m, m * m, |row, col| {
        let (p, q) = (row / m, row % m);
        let (r, t) = (col / m, col % m);
        0.5 * prod[(q * m + t, r * m + p)]
    });
    symmetrize(&mut g);
    Ok(g)
}

/// Dirichlet energy matrix of the frame, `m^2 x m^2`.
pub fn dirichlet_energy_tensor(c: &StructureConstants, xi: &[f64], m: usize) -> Result<DMatrix<f64>> {
    check_tensor_inputs(c, xi, m)?;
    let a = weighted_constants(c, xi, m, 1.0);
    let b = weighted_constants(c, xi, m, -1.0);
    let q = &a * a.transpose();
    let bb = &b * b.transpose();
    let mut e = DMatrix::from_fn(m * m, m * m, |row, col| {
        let (i, j) = (row / m, row % m);
        let (k, l) = (col / m, col % m);
        0.25 * (q[(i * m + k, j * m + l)] - q[(i * m + l, j * m + k)] + bb[(row, col)])
    });
    symmetrize(&mut e);
    Ok(e)
}

/// Frame positions `i * m + j` with `j >= 1`.
pub fn active_frame_indices(m: usize) -> Vec<usize> {
    (0..m * m).filter(|r| r % m != 0).collect()
}

fn restrict(mat: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| mat[(idx[a], idx[b])])
}

/// Orthonormal eigenvectors of `E + G` whose eigenvalues exceed `tau_frac`
/// times the largest, in descending eigenvalue order.
pub fn sobolev_basis(e: &DMatrix<f64>, g: &DMatrix<f64>, tau_frac: f64) -> Result<DMatrix<f64>> {
    if e.shape() != g.shape() || e.nrows() != e.ncols() {
        return Err(invalid("E and G must be square matrices of the same size"));
    }
    let mut s = e + g;
    symmetrize(&mut s);
    let (vals, vecs) = sym_eigen_desc(s)?;
    let smax = vals.first().copied().unwrap_or(0.0);
    let keep: Vec<usize> = (0..vals.len()).filter(|&k| smax > 0.0 && vals[k] > tau_frac * smax).collect();
    if keep.is_empty() {
        return Err(Error::DegenerateFrame);
    }
    Ok(DMatrix::from_fn(e.nrows(), keep.len(), |r, c| vecs[(r, keep[c])]))
}

/// A minimal-energy field: `coeffs` are frame coefficients `v^{ij}` with
/// `coeffs^T G coeffs = 1` and `eta = coeffs^T E coeffs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenfield {
    pub eta: f64,
    pub coeffs: Vec<f64>,
}

/// Solves `E c = eta G c` on the span of `u_tilde` and returns up to `n_fields`
/// fields in ascending energy.
pub fn eigenfields(e: &DMatrix<f64>, g: &DMatrix<f64>, u_tilde: &DMatrix<f64>, n_fields: usize) -> Result<Vec<Eigenfield>> {
    let mut et = u_tilde.transpose() * e * u_tilde;
    let mut gt = u_tilde.transpose() * g * u_tilde;
    symmetrize(&mut et);
    symmetrize(&mut gt);
    let (gvals, _) = sym_eigen_asc(gt.clone())?;
    let gmax = gvals.last().copied().unwrap_or(0.0);
    let gmin = gvals.first().copied().unwrap_or(0.0);
    let ratio = if gmax > 0.0 { gmin / gmax } else { 0.0 };
    if !(ratio >= SINGULAR_GRAM_RATIO) {
        return Err(Error::SingularGram { ratio });
    }
    let (eta, ct) = generalized_sym_eigen(&et, &gt)?;
    let full = u_tilde * ct;
    let mut out: Vec<Eigenfield> = (0..eta.len().min(n_fields))
        .map(|k| {
            let mut coeffs: Vec<f64> = full.column(k).iter().copied().collect();
            fix_sign(&mut coeffs);
            Eigenfield { eta: eta[k], coeffs }
        })
        .collect();
    out.sort_by(|a, b| a.eta.total_cmp(&b.eta));
    Ok(out)
}

/// Operator coefficients `v_ij` of a field acting on functions:
/// `v(f) = sum_ij v_ij f_hat_j phi_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorRep {
    pub v_op: DMatrix<f64>,
}

/// `v_ij = sum_{lk} G[(i,j),(l,k)] v^{lk}`.
pub fn frame_to_operator(coeffs: &[f64], g: &DMatrix<f64>) -> Result<OperatorRep> {
    let mm = g.nrows();
    let m = (mm as f64).sqrt().round() as usize;
    if m * m != mm || coeffs.len() != mm {
        return Err(invalid("frame coefficients do not match the Gram matrix"));
    }
    let v = g * DVector::from_column_slice(coeffs);
    Ok(OperatorRep {
        v_op: DMatrix::from_fn(m, m, |i, j| v[i * m + j]),
    })
}

/// Operator coefficients on the larger index range `i, j < size`:
/// `v_ij = sum_{l,k < m} v^{lk} 1/2 sum_s (l_j + l_k - l_s) c_jks c_lis`.
///
/// This is `frame_to_operator` with the Gram tensor evaluated on more output
/// and input modes than the frame itself uses.
pub fn frame_to_operator_sized(coeffs: &[f64], c: &StructureConstants, xi: &[f64], m: usize, size: usize) -> Result<OperatorRep> {
    if coeffs.len() != m * m || size < m || size > c.rows || xi.len() < c.m_inner {
        return Err(invalid(format!(
            "operator of size {size} needs frame size {m}, structure constants with {size} rows"
        )));
    }
    let mi = c.m_inner;
    let mut v = DMatrix::zeros(size, size);
    for l in 0..m {
        for k in 1..m {
            let w = coeffs[l * m + k];
            if w == 0.0 {
                continue;
            }
            let t = DMatrix::from_fn(size, mi, |j, s| (xi[j] + xi[k] - xi[s]) * c.get(j, k, s));
            let u = DMatrix::from_fn(size, mi, |i, s| c.get(l, i, s));
            v += (&u * t.transpose()) * (0.5 * w);
        }
    }
    Ok(OperatorRep { v_op: v })
}

/// Arrow `DF(x) v_x` in input space: `(sum_ij v_ij fhat[j, k] phi_i(x))_k`.
pub fn pushforward(model: &CidmModel, op: &OperatorRep, fhat: &DMatrix<f64>, x: &[f64]) -> Result<Vec<f64>> {
    ArrowMap::new(op, fhat)?.arrow(model, x)
}

/// Precomputed `v_op * fhat`, so an arrow is one contraction with `phi(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrowMap {
    map: DMatrix<f64>,
}

impl ArrowMap {
    pub fn new(op: &OperatorRep, fhat: &DMatrix<f64>) -> Result<Self> {
        let m = op.v_op.nrows();
        if fhat.nrows() < m {
            return Err(invalid(format!(
                "embedding coefficients have {} rows, the operator needs {m}",
                fhat.nrows()
            )));
        }
        Ok(Self {
            map: &op.v_op * fhat.rows(0, m),
        })
    }

    pub fn size(&self) -> usize {
        self.map.nrows()
    }

    /// Arrow from precomputed eigenfunction values `phi_0(x), ...` (at least `size` of them).
    pub fn arrow_from_phis(&self, phis: &[f64]) -> Vec<f64> {
        (0..self.map.ncols())
            .map(|k| (0..self.map.nrows()).map(|i| self.map[(i, k)] * phis[i]).sum())
            .collect()
    }

    pub fn arrow(&self, model: &CidmModel, x: &[f64]) -> Result<Vec<f64>> {
        let phis = eigenfunctions_at(model, self.size(), x)?;
        Ok(self.arrow_from_phis(&phis))
    }
}

/// Everything computed from a model for a given basis configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SecFrame {
    pub config: SecBasisConfig,
    /// `c_ijs` for `i, j < m_op`, `s < m_inner`.
    pub c: StructureConstants,
    /// Laplacian eigenvalues `xi_s`, `s < m_inner`.
    pub xi: Vec<f64>,
    pub g: DMatrix<f64>,
    pub e: DMatrix<f64>,
    /// Sobolev basis in full `m_basis^2` coordinates (rows with `j = 0` are zero).
    pub u_tilde: DMatrix<f64>,
    pub fields: Vec<Eigenfield>,
}

impl SecFrame {
    pub fn build(model: &CidmModel, config: SecBasisConfig) -> Result<Self> {
        config.validate(model.n_eigs())?;
        let m = config.m_basis;
        let c = structure_constants_block(model, config.m_op, config.m_inner)?;
        let xi = model.eig_xi()[..config.m_inner].to_vec();
        let g = metric_tensor(&c, &xi, m)?;
        let e = dirichlet_energy_tensor(&c, &xi, m)?;
        Self::from_tensors(config, c, xi, g, e)
    }

    /// Solves for the basis and fields given assembled tensors.
    pub fn from_tensors(
        config: SecBasisConfig,
        c: StructureConstants,
        xi: Vec<f64>,
        g: DMatrix<f64>,
        e: DMatrix<f64>,
    ) -> Result<Self> {
        let m = config.m_basis;
        if c.rows < config.m_op || c.m_inner != config.m_inner || xi.len() != config.m_inner {
            return Err(invalid("structure constants do not match the basis configuration"));
        }
        if g.shape() != (m * m, m * m) || e.shape() != (m * m, m * m) {
            return Err(invalid(format!("G and E must be {0}x{0}", m * m)));
        }
        let idx = active_frame_indices(m);
        let (er, gr) = (restrict(&e, &idx), restrict(&g, &idx));
        let ur = sobolev_basis(&er, &gr, config.tau_frac)?;
        let fields_r = eigenfields(&er, &gr, &ur, ur.ncols())?;
        let mut u_tilde = DMatrix::zeros(m * m, ur.ncols());
        for (a, &r) in idx.iter().enumerate() {
            for col in 0..ur.ncols() {
                u_tilde[(r, col)] = ur[(a, col)];
            }
        }
        let fields = fields_r
            .into_iter()
            .map(|f| {
                let mut coeffs = vec![0.0; m * m];
                for (a, &r) in idx.iter().enumerate() {
                    coeffs[r] = f.coeffs[a];
                }
                Eigenfield { eta: f.eta, coeffs }
            })
            .collect();
        Ok(Self {
            config,
            c,
            xi,
            g,
            e,
            u_tilde,
            fields,
        })
    }

    pub fn operator(&self, field: usize) -> Result<OperatorRep> {
        let f = self
            .fields
            .get(field)
            .ok_or_else(|| invalid(format!("field {field} requested, frame has {}", self.fields.len())))?;
        frame_to_operator_sized(&f.coeffs, &self.c, &self.xi, self.config.m_basis, self.config.m_op)
    }

    /// Arrow maps of the first `count` fields for the embedding `fhat`.
    pub fn arrow_maps(&self, fhat: &DMatrix<f64>, count: usize) -> Result<Vec<ArrowMap>> {
        (0..count.min(self.fields.len()))
            .map(|k| ArrowMap::new(&self.operator(k)?, fhat))
            .collect()
    }
}

/// Fourier coefficients of the training coordinates on the first `rows` modes.
pub fn embedding_coefficients(model: &CidmModel, rows: usize) -> Result<DMatrix<f64>> {
    fourier_coefficients(model, &coordinates(model.training()), rows)
}

/// Orthonormal `n x dim` basis from the arrows of the first `2 dim` fields
/// (fewer if fewer are supplied) at `x`: the leading left singular vectors.
pub fn tangent_frame_at(model: &CidmModel, arrows: &[ArrowMap], x: &[f64], dim: usize) -> Result<DMatrix<f64>> {
    let n = model.dim();
    if dim == 0 || dim > n {
        return Err(invalid(format!("tangent dimension {dim} must lie in 1..={n}")));
    }
    if arrows.len() < dim {
        return Err(invalid(format!("{} fields supplied, need at least {dim}", arrows.len())));
    }
    let used = &arrows[..arrows.len().min(2 * dim)];
    let size = used.iter().map(ArrowMap::size).max().unwrap_or(0);
    let phis = eigenfunctions_at(model, size, x)?;
    let cols: Vec<Vec<f64>> = used.iter().map(|a| a.arrow_from_phis(&phis)).collect();
    let m = DMatrix::from_fn(n, cols.len(), |r, c| cols[c][r]);
    let basis = range_basis(&m, FRAME_RANK_TOL)?;
    if basis.ncols() < dim {
        return Err(Error::RankDeficiency { rank: basis.ncols(), dim });
    }
    Ok(basis.columns(0, dim).into_owned())
}

/// Top `dim` principal directions of the `k` training points nearest to `x`.
pub fn local_pca_tangent(points: &PointCloud, x: &[f64], k: usize, dim: usize) -> Result<DMatrix<f64>> {
    let n = points.dim();
    if x.len() != n {
        return Err(invalid("query dimension does not match the cloud"));
    }
    if k == 0 || k > points.len() || dim == 0 || dim > k.min(n) {
        return Err(invalid(format!(
            "local PCA needs 1 <= dim ({dim}) <= min(k ({k}), n ({n})) and k <= N"
        )));
    }
    let mut order: Vec<(f64, usize)> = points.rows().enumerate().map(|(j, r)| (sq_dist(x, r), j)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let idx: Vec<usize> = order[..k].iter().map(|e| e.1).collect();
    let mut mean = vec![0.0; n];
    for &j in &idx {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += points.row(j)[c] / k as f64;
        }
    }
    let mut cov = DMatrix::zeros(n, n);
    for &j in &idx {
        let r = points.row(j);
        for a in 0..n {
            for b in 0..n {
                cov[(a, b)] += (r[a] - mean[a]) * (r[b] - mean[b]) / k as f64;
            }
        }
    }
    let (_, vecs) = sym_eigen_desc(cov)?;
    let mut out = DMatrix::zeros(n, dim);
    for c in 0..dim {
        let mut col: Vec<f64> = vecs.column(c).iter().copied().collect();
        fix_sign(&mut col);
        out.set_column(c, &DVector::from_vec(col));
    }
    Ok(out)
}
