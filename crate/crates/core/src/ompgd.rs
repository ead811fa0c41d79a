//! On-manifold projected gradient ascent.
//!
//! Each step takes the loss gradient of the true class, keeps its component in
//! the SEC tangent frame at the current iterate, steps, and Nystrom-projects the
//! result back onto the learned manifold. Runs stop at the first iterate the
//! oracle labels differently.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::cidm::CidmModel;
use crate::error::{invalid, Error, Result};
use crate::nystrom::{extend_function, fourier_coefficients, NystromProjector};
use crate::sec::{tangent_frame_at, ArrowMap};

/// Relative size below which a tangent-projected gradient counts as zero.
pub const ZERO_TANGENT_TOL: f64 = 1e-12;
/// Displacement below `STALL_TOL * diameter` stops a run.
pub const STALL_TOL: f64 = 1e-9;
/// Residual bound, as a fraction of the data diameter, for iterates to count
/// as on the manifold.
pub const ON_MANIFOLD_TOL: f64 = 0.02;

/// A classifier seen only through its predictions and input gradients.
pub trait ClassifierOracle {
    fn predict(&self, x: &[f64]) -> usize;
    /// Gradient with respect to `x` of the loss for class `label`.
    fn loss_grad(&self, x: &[f64], label: usize) -> Vec<f64>;
}

/// Angular-sector classifier on the plane of the first two coordinates.
///
/// Sector `c` covers angles `[b + c w, b + (c + 1) w)` with `w = 360 / n` and
/// `b` the boundary offset. Logits are `kappa cos(theta - center_c)` and the
/// loss is softmax cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorClassifier {
    pub n_classes: usize,
    pub boundary_offset: f64,
    pub kappa: f64,
}

pub fn sector_classifier(n_classes: usize, boundary_offset: f64) -> Result<SectorClassifier> {
    SectorClassifier::new(n_classes, boundary_offset, 4.0)
}

impl SectorClassifier {
    pub fn new(n_classes: usize, boundary_offset: f64, kappa: f64) -> Result<Self> {
        if n_classes < 2 {
            return Err(invalid("a sector classifier needs at least 2 classes"));
        }
        if !(boundary_offset.is_finite() && kappa.is_finite() && kappa > 0.0) {
            return Err(invalid("boundary offset and kappa must be finite, kappa positive"));
        }
        Ok(Self {
            n_classes,
            boundary_offset,
            kappa,
        })
    }

    pub fn width(&self) -> f64 {
        360.0 / self.n_classes as f64
    }

    pub fn center(&self, class: usize) -> f64 {
        (self.boundary_offset + (class as f64 + 0.5) * self.width()).rem_euclid(360.0)
    }

    /// Angle in degrees of the boundary between `class` and `class + 1`.
    pub fn upper_boundary(&self, class: usize) -> f64 {
        (self.boundary_offset + (class as f64 + 1.0) * self.width()).rem_euclid(360.0)
    }

    fn probabilities(&self, theta: f64) -> Vec<f64> {
        let z: Vec<f64> = (0..self.n_classes)
            .map(|c| self.kappa * (theta - self.center(c).to_radians()).cos())
            .collect();
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
        let total: f64 = e.iter().sum();
        e.into_iter().map(|v| v / total).collect()
    }

    pub fn loss(&self, x: &[f64], label: usize) -> f64 {
        -self.probabilities(x[1].atan2(x[0]))[label].ln()
    }
}

impl ClassifierOracle for SectorClassifier {
    fn predict(&self, x: &[f64]) -> usize {
        let theta = x[1].atan2(x[0]).to_degrees();
        let k = ((theta - self.boundary_offset).rem_euclid(360.0) / self.width()).floor() as usize;
        k.min(self.n_classes - 1)
    }

    fn loss_grad(&self, x: &[f64], label: usize) -> Vec<f64> {
        let theta = x[1].atan2(x[0]);
        let p = self.probabilities(theta);
        // dL/dtheta = sum_c (p_c - [c = label]) dz_c/dtheta
        let dl: f64 = (0..self.n_classes)
            .map(|c| {
                let t = if c == label { 1.0 } else { 0.0 };
                (p[c] - t) * -self.kappa * (theta - self.center(c).to_radians()).sin()
            })
            .sum();
        let r2 = x[0] * x[0] + x[1] * x[1];
        let mut g = vec![0.0; x.len()];
        if r2 > 0.0 {
            g[0] = -dl * x[1] / r2;
            g[1] = dl * x[0] / r2;
        }
        g
    }
}

/// Constant loss and label; every step stalls.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlatOracle;

impl ClassifierOracle for FlatOracle {
    fn predict(&self, _x: &[f64]) -> usize {
        0
    }

    fn loss_grad(&self, x: &[f64], _label: usize) -> Vec<f64> {
        vec![0.0; x.len()]
    }
}

/// Fourier coefficients of known intrinsic parameters, with periodic ones
/// (in degrees) stored as `(cos, sin)` column pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticDecoder {
    pub periodic: Vec<bool>,
    pub coeffs: DMatrix<f64>,
}

impl SemanticDecoder {
    pub fn fit(model: &CidmModel, params: &DMatrix<f64>, periodic: &[bool], l_trunc: usize) -> Result<Self> {
        if params.ncols() != periodic.len() {
            return Err(invalid(format!(
                "{} parameter columns but {} periodicity flags",
                params.ncols(),
                periodic.len()
            )));
        }
        let width: usize = periodic.iter().map(|&p| if p { 2 } else { 1 }).sum();
        let mut enc = DMatrix::zeros(params.nrows(), width);
        for r in 0..params.nrows() {
            let mut c = 0;
            for (k, &p) in periodic.iter().enumerate() {
                let v = params[(r, k)];
                if p {
                    enc[(r, c)] = v.to_radians().cos();
                    enc[(r, c + 1)] = v.to_radians().sin();
                    c += 2;
                } else {
                    enc[(r, c)] = v;
                    c += 1;
                }
            }
        }
        Ok(Self {
            periodic: periodic.to_vec(),
            coeffs: fourier_coefficients(model, &enc, l_trunc)?,
        })
    }

    pub fn from_parts(periodic: Vec<bool>, coeffs: DMatrix<f64>) -> Result<Self> {
        let width: usize = periodic.iter().map(|&p| if p { 2 } else { 1 }).sum();
        if coeffs.ncols() != width {
            return Err(invalid("coefficient columns do not match the periodicity flags"));
        }
        Ok(Self { periodic, coeffs })
    }

    pub fn decode(&self, model: &CidmModel, x: &[f64]) -> Result<Vec<f64>> {
        semantic_labels(model, self, x)
    }
}

/// Intrinsic parameters at `x`; periodic ones in degrees in `[0, 360)`.
pub fn semantic_labels(model: &CidmModel, decoder: &SemanticDecoder, x: &[f64]) -> Result<Vec<f64>> {
    let ext = extend_function(model, &decoder.coeffs, x)?;
    let mut out = Vec::with_capacity(decoder.periodic.len());
    let mut c = 0;
    for &p in &decoder.periodic {
        if p {
            let deg = ext[c + 1].atan2(ext[c]).to_degrees().rem_euclid(360.0);
            // rem_euclid can round up to exactly 360
            out.push(if deg >= 360.0 { 0.0 } else { deg });
            c += 2;
        } else {
            out.push(ext[c]);
            c += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub alpha: f64,
    pub max_steps: usize,
    pub tangent_dim: usize,
    pub normalize_gradient: bool,
    pub l_trunc: usize,
    pub project_iters: usize,
}

impl PgdConfig {
    /// Normalised gradient, 2 projection iterations, 50 steps, tangent dimension 1.
    pub fn new(alpha: f64, l_trunc: usize) -> Self {
        Self {
            alpha,
            max_steps: 50,
            tangent_dim: 1,
            normalize_gradient: true,
            l_trunc,
            project_iters: 2,
        }
    }

    /// Step size of 5% of the data diameter.
    pub fn for_diameter(diameter: f64, l_trunc: usize) -> Self {
        Self::new(0.05 * diameter, l_trunc)
    }

    fn validate(&self, projector: &NystromProjector, strict_alpha: bool) -> Result<()> {
        let alpha_ok = if strict_alpha { self.alpha > 0.0 } else { self.alpha >= 0.0 };
        if !(self.alpha.is_finite() && alpha_ok) {
            return Err(invalid(format!("step size {} must be positive", self.alpha)));
        }
        if self.tangent_dim == 0 || self.max_steps == 0 || self.project_iters == 0 {
            return Err(invalid("tangent_dim, max_steps and project_iters must be positive"));
        }
        if self.l_trunc != projector.l_trunc() {
            return Err(invalid(format!(
                "config l_trunc {} differs from the projector's {}",
                self.l_trunc,
                projector.l_trunc()
            )));
        }
        Ok(())
    }
}

/// Shared read-only pieces of a run.
#[derive(Debug, Clone, Copy)]
pub struct PgdContext<'a> {
    pub projector: &'a NystromProjector,
    /// Arrow maps of the leading eigenfields (at least `tangent_dim`).
    pub arrows: &'a [ArrowMap],
    pub decoder: &'a SemanticDecoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub x_on: Vec<f64>,
    pub g_raw: Vec<f64>,
    pub g_tan: Vec<f64>,
    pub x_stepped: Vec<f64>,
    pub x_next: Vec<f64>,
    pub label_pred: usize,
    pub semantics: Vec<f64>,
    /// `|project(x_next) - x_next|`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PgdStatus {
    Misclassified,
    MaxSteps,
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgdTrace {
    pub start: Vec<f64>,
    pub start_projected: Vec<f64>,
    pub true_label: usize,
    pub records: Vec<StepRecord>,
    pub status: PgdStatus,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// One gradient step from the on-manifold point `x_on`. `step` only labels the record.
pub fn om_pgd_step(
    x_on: &[f64],
    true_label: usize,
    step: usize,
    oracle: &dyn ClassifierOracle,
    ctx: &PgdContext,
    config: &PgdConfig,
) -> Result<StepRecord> {
    config.validate(ctx.projector, false)?;
    let model = ctx.projector.model();
    if x_on.len() != model.dim() {
        return Err(invalid(format!("point has {} coordinates, model has {}", x_on.len(), model.dim())));
    }
    let g_raw = oracle.loss_grad(x_on, true_label);
    if g_raw.len() != x_on.len() || g_raw.iter().any(|v| !v.is_finite()) {
        return Err(invalid("oracle gradient has the wrong length or non-finite entries"));
    }
    let graw_norm = norm(&g_raw);
    let g: Vec<f64> = if config.normalize_gradient && graw_norm > 0.0 {
        g_raw.iter().map(|v| v / graw_norm).collect()
    } else {
        g_raw.clone()
    };
    let t = tangent_frame_at(model, ctx.arrows, x_on, config.tangent_dim)?;
    let gt = &t * (t.transpose() * DVector::from_column_slice(&g));
    let g_tan: Vec<f64> = gt.iter().copied().collect();
    let diameter = model.diameter();
    if config.alpha > 0.0 && norm(&g_tan) <= ZERO_TANGENT_TOL * norm(&g) {
        return Err(Error::Stalled { displacement: 0.0 });
    }
    let x_stepped: Vec<f64> = x_on.iter().zip(&g_tan).map(|(a, b)| a + config.alpha * b).collect();
    let x_next = ctx.projector.project(&x_stepped, config.project_iters)?;
    let moved: f64 = norm(&x_next.iter().zip(x_on).map(|(a, b)| a - b).collect::<Vec<_>>());
    if config.alpha > 0.0 && moved < STALL_TOL * diameter {
        return Err(Error::Stalled { displacement: moved });
    }
    let again = ctx.projector.project(&x_next, config.project_iters)?;
    let residual = norm(&again.iter().zip(&x_next).map(|(a, b)| a - b).collect::<Vec<_>>());
    Ok(StepRecord {
        step,
        label_pred: oracle.predict(&x_next),
        semantics: semantic_labels(model, ctx.decoder, &x_next)?,
        x_on: x_on.to_vec(),
        g_raw,
        g_tan,
        x_stepped,
        x_next,
        residual,
    })
}

/// Runs steps from the projection of `start` until the label changes, the step
/// budget runs out, or the iterate stops moving.
pub fn om_pgd(
    start: &[f64],
    true_label: usize,
    oracle: &dyn ClassifierOracle,
    ctx: &PgdContext,
    config: &PgdConfig,
) -> Result<PgdTrace> {
    config.validate(ctx.projector, true)?;
    let start_projected = ctx.projector.project(start, config.project_iters)?;
    let mut records = Vec::new();
    let mut x = start_projected.clone();
    let mut status = PgdStatus::MaxSteps;
    for step in 1..=config.max_steps {
        match om_pgd_step(&x, true_label, step, oracle, ctx, config) {
            Ok(rec) => {
                let done = rec.label_pred != true_label;
                x = rec.x_next.clone();
                records.push(rec);
                if done {
                    status = PgdStatus::Misclassified;
                    break;
                }
            }
            Err(Error::Stalled { .. }) => {
                status = PgdStatus::Stalled;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(PgdTrace {
        start: start.to_vec(),
        start_projected,
        true_label,
        records,
        status,
    })
}

/// Smallest signed difference `a - b` of two angles in degrees.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    (a - b + 180.0).rem_euclid(360.0) - 180.0
}

/// Degrees moved per unit arc length on a circle of radius `r`.
pub fn degrees_per_length(r: f64) -> f64 {
    180.0 / (PI * r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cidm::CidmConfig;
    use crate::sec::{embedding_coefficients, SecBasisConfig, SecFrame};
    use crate::synth::{generate, SynthKind, SynthSpec};
    use std::sync::Arc;

    struct Fixture {
        projector: NystromProjector,
        arrows: Vec<ArrowMap>,
        decoder: SemanticDecoder,
    }

    fn fixture() -> Fixture {
        let mut spec = SynthSpec::new(SynthKind::Circle, 200, 3);
        spec.noise_sigma = 0.0;
        let (pts, params) = generate(&spec).unwrap();
        let model = Arc::new(CidmModel::fit(&pts, CidmConfig::new(8, 50)).unwrap());
        let frame = SecFrame::build(&model, SecBasisConfig::new(5, 50)).unwrap();
        let fhat = embedding_coefficients(&model, frame.config.m_op).unwrap();
        let arrows = frame.arrow_maps(&fhat, 2).unwrap();
        let decoder = SemanticDecoder::fit(&model, &params, &[true], 20).unwrap();
        let projector = NystromProjector::build(model, 20).unwrap();
        Fixture {
            projector,
            arrows,
            decoder,
        }
    }

    fn at(deg: f64) -> Vec<f64> {
        vec![deg.to_radians().cos(), deg.to_radians().sin()]
    }

    #[test]
    fn sector_prediction_and_centers() {
        let clf = sector_classifier(4, 10.0).unwrap();
        for c in 0..4 {
            assert_eq!(clf.predict(&at(clf.center(c))), c);
        }
        assert_eq!(clf.predict(&at(9.9)), 3);
        assert_eq!(clf.predict(&at(10.1)), 0);
        assert!(sector_classifier(1, 0.0).is_err());
    }

    #[test]
    fn sector_gradient_matches_differences() {
        let clf = sector_classifier(5, 17.0).unwrap();
        for (k, &x) in [[0.7, 0.3], [-1.2, 0.4], [0.2, -0.9], [1.5, 1.5]].iter().enumerate() {
            let g = clf.loss_grad(&x, k % 5);
            for d in 0..2 {
                let h = 1e-6;
                let (mut xp, mut xm) = (x, x);
                xp[d] += h;
                xm[d] -= h;
                let fd = (clf.loss(&xp, k % 5) - clf.loss(&xm, k % 5)) / (2.0 * h);
                assert!((fd - g[d]).abs() <= 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", g[d]);
            }
        }
    }

    #[test]
    fn gradient_heads_for_nearer_boundary() {
        let clf = sector_classifier(4, 0.0).unwrap();
        // class 0 spans [0, 90); 80 degrees is 10 from the upper boundary
        let x = at(80.0);
        let g = clf.loss_grad(&x, 0);
        let tangent = [-(80f64.to_radians().sin()), 80f64.to_radians().cos()];
        assert!(g[0] * tangent[0] + g[1] * tangent[1] > 0.0);
        let g = clf.loss_grad(&at(15.0), 0);
        assert!(g[0] * -(15f64.to_radians().sin()) + g[1] * 15f64.to_radians().cos() < 0.0);
    }

    #[test]
    fn zero_step_stays_put() {
        let f = fixture();
        let ctx = PgdContext {
            projector: &f.projector,
            arrows: &f.arrows,
            decoder: &f.decoder,
        };
        let clf = sector_classifier(4, 0.0).unwrap();
        let mut cfg = PgdConfig::new(0.0, 20);
        cfg.max_steps = 1;
        let x = f.projector.project(&at(40.0), 2).unwrap();
        let rec = om_pgd_step(&x, 0, 1, &clf, &ctx, &cfg).unwrap();
        let moved = norm(&rec.x_next.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(moved < 1e-2, "{moved}");
        assert!(om_pgd(&x, 0, &clf, &ctx, &cfg).is_err());
    }

    #[test]
    fn normal_gradient_stalls() {
        let f = fixture();
        let ctx = PgdContext {
            projector: &f.projector,
            arrows: &f.arrows,
            decoder: &f.decoder,
        };
        struct Normal(Vec<f64>);
        impl ClassifierOracle for Normal {
            fn predict(&self, _x: &[f64]) -> usize {
                0
            }
            fn loss_grad(&self, _x: &[f64], _label: usize) -> Vec<f64> {
                self.0.clone()
            }
        }
        let cfg = PgdConfig::new(0.05, 20);
        let x = f.projector.project(&at(33.0), 2).unwrap();
        let t = tangent_frame_at(f.projector.model(), &f.arrows, &x, 1).unwrap();
        let oracle = Normal(vec![-3.0 * t[(1, 0)], 3.0 * t[(0, 0)]]);
        let err = om_pgd_step(&x, 0, 1, &oracle, &ctx, &cfg).unwrap_err();
        assert_eq!(err.kind(), "StalledError");
        let trace = om_pgd(&at(33.0), 0, &FlatOracle, &ctx, &cfg).unwrap();
        assert_eq!(trace.status, PgdStatus::Stalled);
        assert!(trace.records.is_empty());
    }

    #[test]
    fn single_class_runs_to_budget() {
        struct Never;
        impl ClassifierOracle for Never {
            fn predict(&self, _x: &[f64]) -> usize {
                0
            }
            fn loss_grad(&self, x: &[f64], _label: usize) -> Vec<f64> {
                vec![-x[1], x[0]]
            }
        }
        let f = fixture();
        let ctx = PgdContext {
            projector: &f.projector,
            arrows: &f.arrows,
            decoder: &f.decoder,
        };
        let mut cfg = PgdConfig::new(0.05, 20);
        cfg.max_steps = 7;
        let trace = om_pgd(&at(0.0), 0, &Never, &ctx, &cfg).unwrap();
        assert_eq!(trace.status, PgdStatus::MaxSteps);
        assert_eq!(trace.records.len(), 7);
        for (k, r) in trace.records.iter().enumerate() {
            assert_eq!(r.step, k + 1);
            assert!(r.residual <= ON_MANIFOLD_TOL * f.projector.model().diameter());
        }
        // counter-clockwise gradient advances the angle
        let first = trace.records.first().unwrap().semantics[0];
        let last = trace.records.last().unwrap().semantics[0];
        assert!(angle_diff(last, first) > 10.0);
    }

    #[test]
    fn decoder_recovers_training_angles() {
        let f = fixture();
        let model = f.projector.model();
        let mut spec = SynthSpec::new(SynthKind::Circle, 200, 3);
        spec.noise_sigma = 0.0;
        let (_, params) = generate(&spec).unwrap();
        for i in (0..200).step_by(13) {
            let s = semantic_labels(model, &f.decoder, model.training().row(i)).unwrap();
            assert!(angle_diff(s[0], params[(i, 0)]).abs() < 1.0);
            assert!((0.0..360.0).contains(&s[0]));
        }
        let s = semantic_labels(model, &f.decoder, &[0.0, 1.5]).unwrap();
        assert!(angle_diff(s[0], 90.0).abs() < 5.0, "{s:?}");
    }

    #[test]
    fn mismatched_truncation_is_rejected() {
        let f = fixture();
        let ctx = PgdContext {
            projector: &f.projector,
            arrows: &f.arrows,
            decoder: &f.decoder,
        };
        let clf = sector_classifier(4, 0.0).unwrap();
        assert!(om_pgd(&at(5.0), 0, &clf, &ctx, &PgdConfig::new(0.05, 10)).is_err());
    }
}
