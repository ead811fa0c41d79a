//! Synthetic manifolds with known intrinsic parameters.
//!
//! Angles are returned in degrees. Sampling is driven by a seeded ChaCha8
//! stream, so a spec always reproduces the same points.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{invalid, Result};

pub const TORUS_MAJOR: f64 = 2.0;
pub const TORUS_MINOR: f64 = 0.7;
pub const GRID_HALF_WIDTH: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Unit circle in the plane, radial noise.
    #[default]
    Circle,
    /// `(cos t, sin t, cos t, sin t) / sqrt 2` in R^4, isotropic noise.
    Circle4d,
    /// Torus in R^3 with radii 2 and 0.7, isotropic noise.
    Torus,
    /// Square lattice over `[-2, 2]^2`.
    Grid2d,
}

impl SynthKind {
    pub fn ambient_dim(self) -> usize {
        match self {
            SynthKind::Circle | SynthKind::Grid2d => 2,
            SynthKind::Circle4d => 4,
            SynthKind::Torus => 3,
        }
    }

    /// Which intrinsic parameters are angles.
    pub fn periodic(self) -> Vec<bool> {
        match self {
            SynthKind::Circle | SynthKind::Circle4d => vec![true],
            SynthKind::Torus => vec![true, true],
            SynthKind::Grid2d => vec![false, false],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DensityProfile {
    #[default]
    Uniform,
    /// Angle density proportional to `1 + 0.8 cos t`.
    AngleSkewed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseProfile {
    #[default]
    Constant,
    /// `sigma(t) = sigma (1 + cos^2(t / 2))`: noisiest at `t = 0`, cleanest at `t = 180`.
    AngleVarying,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n_points: usize,
    pub noise_sigma: f64,
    pub density_profile: DensityProfile,
    pub noise_profile: NoiseProfile,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            kind: SynthKind::Circle,
            n_points: 200,
            noise_sigma: 0.0,
            density_profile: DensityProfile::Uniform,
            noise_profile: NoiseProfile::Constant,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn new(kind: SynthKind, n_points: usize, seed: u64) -> Self {
        Self {
            kind,
            n_points,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points < 8 {
            return Err(invalid(format!("n_points = {} must be at least 8", self.n_points)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(invalid(format!("noise_sigma = {} must be nonnegative", self.noise_sigma)));
        }
        Ok(())
    }

    fn sigma_at(&self, theta: f64) -> f64 {
        match self.noise_profile {
            NoiseProfile::Constant => self.noise_sigma,
            NoiseProfile::AngleVarying => {
                let c = (0.5 * theta).cos();
                self.noise_sigma * (1.0 + c * c)
            }
        }
    }
}

// Uniform angles are jittered strata: sample `i` of `n` falls in `[i, i + 1) * 2 pi / n`.
fn draw_angle(rng: &mut ChaCha8Rng, profile: DensityProfile, i: usize, n: usize) -> f64 {
    match profile {
        DensityProfile::Uniform => (i as f64 + rng.random::<f64>()) * 2.0 * PI / n as f64,
        DensityProfile::AngleSkewed => loop {
            let t = rng.random::<f64>() * 2.0 * PI;
            if rng.random::<f64>() * 1.8 <= 1.0 + 0.8 * t.cos() {
                break t;
            }
        },
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Samples `spec` and returns the points with their intrinsic parameters
/// (one row per point).
///
/// `Grid2d` ignores the density profile and returns `side^2` points with
/// `side = ceil(sqrt(n_points))`; its parameters are the lattice coordinates.
pub fn generate(spec: &SynthSpec) -> Result<(PointCloud, DMatrix<f64>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.kind.ambient_dim();
    let mut data = Vec::new();
    let mut params = Vec::new();
    match spec.kind {
        SynthKind::Circle => {
            for i in 0..spec.n_points {
                let t = draw_angle(&mut rng, spec.density_profile, i, spec.n_points);
                let r = 1.0 + spec.sigma_at(t) * gauss(&mut rng);
                data.extend_from_slice(&[r * t.cos(), r * t.sin()]);
                params.push(t.to_degrees());
            }
        }
        SynthKind::Circle4d => {
            for i in 0..spec.n_points {
                let t = draw_angle(&mut rng, spec.density_profile, i, spec.n_points);
                let s = spec.sigma_at(t);
                let (c, si) = (t.cos() * FRAC_1_SQRT_2, t.sin() * FRAC_1_SQRT_2);
                for v in [c, si, c, si] {
                    data.push(v + s * gauss(&mut rng));
                }
                params.push(t.to_degrees());
            }
        }
        SynthKind::Torus => {
            for i in 0..spec.n_points {
                let u = draw_angle(&mut rng, spec.density_profile, i, spec.n_points);
                let v = rng.random::<f64>() * 2.0 * PI;
                let s = spec.sigma_at(u);
                let ring = TORUS_MAJOR + TORUS_MINOR * v.cos();
                for x in [ring * u.cos(), ring * u.sin(), TORUS_MINOR * v.sin()] {
                    data.push(x + s * gauss(&mut rng));
                }
                params.push(u.to_degrees());
                params.push(v.to_degrees());
            }
        }
        SynthKind::Grid2d => {
            let side = (spec.n_points as f64).sqrt().ceil() as usize;
            let step = 2.0 * GRID_HALF_WIDTH / (side - 1) as f64;
            for a in 0..side {
                for b in 0..side {
                    let x = -GRID_HALF_WIDTH + step * b as f64;
                    let y = -GRID_HALF_WIDTH + step * a as f64;
                    params.push(x);
                    params.push(y);
                    data.push(x + spec.noise_sigma * gauss(&mut rng));
                    data.push(y + spec.noise_sigma * gauss(&mut rng));
                }
            }
        }
    }
    let n = data.len() / dim;
    let n_params = params.len() / n;
    let cloud = PointCloud::new(data, n, dim)?;
    Ok((cloud, DMatrix::from_row_slice(n, n_params, &params)))
}

/// Smooth target used by the function-extension figure, `sin 2t + 0.5 cos t`.
pub fn fig1_target_function(theta_deg: f64) -> f64 {
    let t = theta_deg.to_radians();
    (2.0 * t).sin() + 0.5 * t.cos()
}

/// Unit tangent of the planar unit circle at angle `theta_deg`.
pub fn circle_tangent(theta_deg: f64) -> [f64; 2] {
    let t = theta_deg.to_radians();
    [-t.sin(), t.cos()]
}

/// Orthonormal tangent pair of the torus at parameters `(u, v)` in degrees.
pub fn torus_tangent(u_deg: f64, v_deg: f64) -> [[f64; 3]; 2] {
    let (u, v) = (u_deg.to_radians(), v_deg.to_radians());
    [
        [-u.sin(), u.cos(), 0.0],
        [-v.sin() * u.cos(), -v.sin() * u.sin(), v.cos()],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_circle_has_unit_radius() {
        let (pts, params) = generate(&SynthSpec::new(SynthKind::Circle, 500, 3)).unwrap();
        for (i, r) in pts.rows().enumerate() {
            assert!(((r[0] * r[0] + r[1] * r[1]).sqrt() - 1.0).abs() < 1e-12);
            let t = params[(i, 0)].to_radians();
            assert!((r[0] - t.cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_angles_fill_bins_evenly() {
        let (_, params) = generate(&SynthSpec::new(SynthKind::Circle, 3600, 1)).unwrap();
        let mut bins = [0usize; 36];
        for t in params.column(0).iter() {
            bins[((t / 10.0) as usize).min(35)] += 1;
        }
        let max = *bins.iter().max().unwrap() as f64;
        let min = *bins.iter().min().unwrap() as f64;
        assert!(max / min < 1.3, "{bins:?}");
    }

    #[test]
    fn skewed_density_prefers_zero_angle() {
        let mut spec = SynthSpec::new(SynthKind::Circle, 4000, 2);
        spec.density_profile = DensityProfile::AngleSkewed;
        let (_, params) = generate(&spec).unwrap();
        let near = params.column(0).iter().filter(|t| **t < 45.0 || **t > 315.0).count();
        let far = params.column(0).iter().filter(|t| (135.0..225.0).contains(*t)).count();
        // Expected ratio (pi/2 + 0.8 sqrt 2) / (pi/2 - 0.8 sqrt 2), about 5.3.
        assert!(near as f64 > 4.0 * far as f64);
    }

    #[test]
    fn circle4d_is_isometric() {
        let (pts, params) = generate(&SynthSpec::new(SynthKind::Circle4d, 100, 5)).unwrap();
        for r in pts.rows() {
            assert!((r.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for k in 0..50 {
            let (a, b) = (k, 99 - k);
            let chord = crate::cloud::dist(pts.row(a), pts.row(b));
            let dt = (params[(a, 0)] - params[(b, 0)]).to_radians().abs();
            let arc = dt.min(2.0 * PI - dt);
            assert!((chord - 2.0 * (arc / 2.0).sin()).abs() < 1e-10);
        }
    }

    #[test]
    fn radial_noise_statistics() {
        let mut spec = SynthSpec::new(SynthKind::Circle, 4000, 11);
        spec.noise_sigma = 0.1;
        let (pts, _) = generate(&spec).unwrap();
        let radii: Vec<f64> = pts.rows().map(|r| (r[0] * r[0] + r[1] * r[1]).sqrt()).collect();
        let mean = radii.iter().sum::<f64>() / radii.len() as f64;
        let sd = (radii.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / radii.len() as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.01, "sd = {sd}");
    }

    #[test]
    fn torus_points_lie_on_torus() {
        let (pts, params) = generate(&SynthSpec::new(SynthKind::Torus, 200, 4)).unwrap();
        assert_eq!(params.ncols(), 2);
        for r in pts.rows() {
            let ring = (r[0] * r[0] + r[1] * r[1]).sqrt() - TORUS_MAJOR;
            assert!(((ring * ring + r[2] * r[2]).sqrt() - TORUS_MINOR).abs() < 1e-12);
        }
        let [a, b] = torus_tangent(30.0, 70.0);
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!(dot.abs() < 1e-15);
    }

    #[test]
    fn grid_covers_square() {
        let (pts, params) = generate(&SynthSpec::new(SynthKind::Grid2d, 400, 0)).unwrap();
        assert_eq!(pts.len(), 400);
        assert_eq!(pts.row(0), &[-2.0, -2.0]);
        assert_eq!(pts.row(399), &[2.0, 2.0]);
        assert_eq!(params[(399, 1)], 2.0);
    }

    #[test]
    fn seeded_runs_repeat() {
        let mut spec = SynthSpec::new(SynthKind::Torus, 64, 9);
        spec.noise_sigma = 0.05;
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SynthSpec { seed: 10, ..spec };
        assert_ne!(generate(&spec).unwrap().0, generate(&other).unwrap().0);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&SynthSpec::new(SynthKind::Circle, 7, 0)).is_err());
        let spec = SynthSpec {
            noise_sigma: -1.0,
            ..SynthSpec::default()
        };
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn target_function_values() {
        assert!((fig1_target_function(0.0) - 0.5).abs() < 1e-15);
        assert!(fig1_target_function(90.0).abs() < 1e-15);
        let mean = (0..360).map(|k| fig1_target_function(k as f64)).sum::<f64>() / 360.0;
        assert!(mean.abs() < 1e-10);
    }
}
