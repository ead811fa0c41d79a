//! `cidm repro <target>`: regenerates the plot data for each figure.
//!
//! Every target is a pure function of its seed and size, returning the files
//! it would write together with a summary of the quantities the figure is
//! judged by. Numbers are printed with Rust's shortest round-trip formatting,
//! so identical runs give identical bytes.

use std::path::Path;
use std::sync::Arc;

use cidm_core::cloud::rows_to_csv;
use cidm_core::nystrom::{coordinates, extend_function, fourier_coefficients};
use cidm_core::ompgd::{angle_diff, om_pgd, sector_classifier, ClassifierOracle, PgdConfig, PgdContext, PgdStatus, SemanticDecoder};
use cidm_core::sec::{embedding_coefficients, local_pca_tangent, SecBasisConfig, SecFrame};
use cidm_core::synth::{circle_tangent, fig1_target_function, generate, DensityProfile, NoiseProfile, SynthKind, SynthSpec};
use cidm_core::{CidmConfig, CidmModel, NystromProjector, PointCloud};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::{trace_jsonl, write_output, CliResult, ReproTarget};

pub struct ReproOutput<S> {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: S,
}

fn with_summary<S: Serialize>(mut files: Vec<(String, Vec<u8>)>, summary: S) -> ReproOutput<S> {
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serialises");
    text.push('\n');
    files.push(("summary.json".into(), text.into_bytes()));
    ReproOutput { files, summary }
}

fn csv(header: &str, rows: &[Vec<f64>]) -> Vec<u8> {
    let mut s = format!("# {header}\n");
    s.push_str(&rows_to_csv(rows.iter().map(Vec::as_slice)));
    s.into_bytes()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn abs_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (norm(a) * norm(b))).abs()
}

pub fn run(target: ReproTarget, out_dir: &Path, seed: u64, n: Option<usize>, force: bool) -> CliResult<()> {
    let files = match target {
        ReproTarget::Fig1 => fig1(seed, n.unwrap_or(300))?.files,
        ReproTarget::Fig2 => fig2(seed, n.unwrap_or(1600))?.files,
        ReproTarget::Fig3 => fig3(seed, n.unwrap_or(400))?.files,
        ReproTarget::PgdCircle => pgd_circle(seed, n.unwrap_or(400))?.files,
    };
    // check everything first so a refused run leaves no partial output
    if !force {
        for (name, _) in &files {
            let p = out_dir.join(name);
            if p.exists() {
                return Err(crate::CliError::Exists(p.display().to_string()));
            }
        }
    }
    for (name, bytes) in &files {
        write_output(&out_dir.join(name), bytes, true)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig1Summary {
    pub n_points: usize,
    pub l_trunc: usize,
    pub n_queries: usize,
    /// RMS of extension minus nearest-training value, relative to the RMS of the latter.
    pub relative_rms: f64,
}

/// Extension of a smooth function on a clean circle into the surrounding annulus.
pub fn fig1(seed: u64, n: usize) -> CliResult<ReproOutput<Fig1Summary>> {
    let (pts, params) = generate(&SynthSpec::new(SynthKind::Circle, n, seed))?;
    let l = 30.min(n);
    let model = CidmModel::fit(&pts, CidmConfig::new(8, l))?;
    let f = DMatrix::from_fn(n, 1, |i, _| fig1_target_function(params[(i, 0)]));
    let coeffs = fourier_coefficients(&model, &f, l)?;
    let training: Vec<Vec<f64>> = (0..n).map(|i| vec![pts.row(i)[0], pts.row(i)[1], params[(i, 0)], f[(i, 0)]]).collect();
    let (mut err, mut total) = (0.0, 0.0);
    let mut ext = Vec::new();
    for a in 0..72 {
        let t = (5.0 * a as f64).to_radians();
        for b in 0..11 {
            let r = 0.5 + 0.1 * b as f64;
            let x = [r * t.cos(), r * t.sin()];
            let got = extend_function(&model, &coeffs, &x)?[0];
            let nearest = (0..n)
                .min_by(|&i, &j| dist2(pts.row(i), &x).total_cmp(&dist2(pts.row(j), &x)))
                .expect("non-empty cloud");
            let want = f[(nearest, 0)];
            err += (got - want).powi(2);
            total += want * want;
            ext.push(vec![x[0], x[1], got, want]);
        }
    }
    let summary = Fig1Summary {
        n_points: n,
        l_trunc: l,
        n_queries: ext.len(),
        relative_rms: (err / total).sqrt(),
    };
    let files = vec![
        ("training.csv".into(), csv("x,y,theta_deg,f", &training)),
        ("extension.csv".into(), csv("x,y,f_extended,f_nearest_training", &ext)),
    ];
    Ok(with_summary(files, summary))
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig2Summary {
    pub n_points: usize,
    pub k_nn: usize,
    pub l_trunc: usize,
    pub n_grid: usize,
    /// Share of grid points with `|r - 1| <= 0.05` after one and two passes.
    pub within_005_iter1: f64,
    pub within_005_iter2: f64,
    pub training_radius_std: f64,
    pub projected_training_radius_std: f64,
}

/// Projection of a planar grid onto a noisy circle.
pub fn fig2(seed: u64, n: usize) -> CliResult<ReproOutput<Fig2Summary>> {
    let mut spec = SynthSpec::new(SynthKind::Circle, n, seed);
    spec.noise_sigma = 0.1;
    let (pts, _) = generate(&spec)?;
    let (k_nn, l) = (64.min(n - 1), 20.min(n));
    let model = Arc::new(CidmModel::fit(&pts, CidmConfig::new(k_nn, l))?);
    let proj = NystromProjector::build(model, l)?;
    let (lattice, _) = generate(&SynthSpec::new(SynthKind::Grid2d, 41 * 41, seed))?;
    let grid: Vec<Vec<f64>> = lattice
        .rows()
        .filter(|x| (0.3..=2.0).contains(&norm(x)))
        .map(<[f64]>::to_vec)
        .collect();
    let grid_cloud = PointCloud::from_rows(&grid)?;
    let p1 = proj.project_all(&grid_cloud, 1)?;
    let p2 = p1.iter().map(|y| proj.project(y, 1)).collect::<Result<Vec<_>, _>>()?;
    let share = |ys: &[Vec<f64>]| ys.iter().filter(|y| (norm(y) - 1.0).abs() <= 0.05).count() as f64 / ys.len() as f64;
    let train_proj = proj.project_all(&pts, 2)?;
    let radii: Vec<f64> = pts.rows().map(norm).collect();
    let proj_radii: Vec<f64> = train_proj.iter().map(|y| norm(y)).collect();
    let summary = Fig2Summary {
        n_points: n,
        k_nn,
        l_trunc: l,
        n_grid: grid.len(),
        within_005_iter1: share(&p1),
        within_005_iter2: share(&p2),
        training_radius_std: std_dev(&radii),
        projected_training_radius_std: std_dev(&proj_radii),
    };
    let training: Vec<Vec<f64>> = pts.rows().zip(&train_proj).map(|(x, y)| [x, y.as_slice()].concat()).collect();
    let files = vec![
        ("grid.csv".into(), csv("x,y", &grid)),
        ("project_iter1.csv".into(), csv("x,y", &p1)),
        ("project_iter2.csv".into(), csv("x,y", &p2)),
        ("training.csv".into(), csv("x,y,projected_x,projected_y", &training)),
    ];
    Ok(with_summary(files, summary))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TangentScores {
    pub clean_sec: f64,
    pub clean_pca: f64,
    pub noisy_sec: f64,
    pub noisy_pca: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig3Summary {
    pub n_points: usize,
    pub m_basis: usize,
    pub pca_k: usize,
    pub planar: TangentScores,
    pub circle4d: TangentScores,
}

const FIG3_PCA_K: usize = 20;

fn fig3_case(kind: SynthKind, seed: u64, n: usize) -> CliResult<(TangentScores, Vec<Vec<f64>>)> {
    let mut spec = SynthSpec::new(kind, n, seed);
    spec.noise_sigma = 0.1;
    spec.density_profile = DensityProfile::AngleSkewed;
    spec.noise_profile = NoiseProfile::AngleVarying;
    let (pts, params) = generate(&spec)?;
    let n_eigs = 50.min(n);
    let model = CidmModel::fit(&pts, CidmConfig::new(8, n_eigs))?;
    let frame = SecFrame::build(&model, SecBasisConfig::new(5, n_eigs))?;
    let fhat = embedding_coefficients(&model, frame.config.m_op)?;
    let map = &frame.arrow_maps(&fhat, 1)?[0];
    let mut sums = [0.0; 4];
    let mut counts = [0usize; 2];
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let theta = params[(i, 0)];
        let t2 = circle_tangent(theta);
        let truth: Vec<f64> = match kind {
            SynthKind::Circle4d => [t2[0], t2[1], t2[0], t2[1]].iter().map(|v| v * std::f64::consts::FRAC_1_SQRT_2).collect(),
            _ => t2.to_vec(),
        };
        let phis: Vec<f64> = model.eig_phi().row(i).iter().copied().collect();
        let arrow = map.arrow_from_phis(&phis);
        let pca: Vec<f64> = local_pca_tangent(&pts, pts.row(i), FIG3_PCA_K, 1)?.column(0).iter().copied().collect();
        let (cs, cp) = (abs_cos(&arrow, &truth), abs_cos(&pca, &truth));
        let half = usize::from(!(90.0..270.0).contains(&theta) || theta == 90.0);
        sums[2 * half] += cs;
        sums[2 * half + 1] += cp;
        counts[half] += 1;
        let mut row = vec![theta];
        row.extend_from_slice(pts.row(i));
        row.extend(&arrow);
        row.extend(&pca);
        row.extend([cs, cp]);
        rows.push(row);
    }
    let scores = TangentScores {
        clean_sec: sums[0] / counts[0] as f64,
        clean_pca: sums[1] / counts[0] as f64,
        noisy_sec: sums[2] / counts[1] as f64,
        noisy_pca: sums[3] / counts[1] as f64,
    };
    Ok((scores, rows))
}

fn fig3_header(dim: usize) -> String {
    let coords = |p: &str| (0..dim).map(|d| format!("{p}{d}")).collect::<Vec<_>>().join(",");
    format!("theta_deg,{},{},{},abs_cos_sec,abs_cos_pca", coords("x"), coords("sec"), coords("pca"))
}

/// First SEC eigenfield against local PCA on a circle with uneven density
/// and noise, in the plane and isometrically embedded in four dimensions.
/// The clean half is `90 < theta < 270`.
pub fn fig3(seed: u64, n: usize) -> CliResult<ReproOutput<Fig3Summary>> {
    let (planar, rows2) = fig3_case(SynthKind::Circle, seed, n)?;
    let (circle4d, rows4) = fig3_case(SynthKind::Circle4d, seed, n)?;
    let summary = Fig3Summary {
        n_points: n,
        m_basis: 5,
        pca_k: FIG3_PCA_K,
        planar,
        circle4d,
    };
    let files = vec![
        ("planar.csv".into(), csv(&fig3_header(2), &rows2)),
        ("circle4d.csv".into(), csv(&fig3_header(4), &rows4)),
    ];
    Ok(with_summary(files, summary))
}

#[derive(Debug, Clone, Serialize)]
pub struct PgdCircleSummary {
    pub n_points: usize,
    pub start_deg: f64,
    pub boundary_deg: f64,
    pub alpha: f64,
    pub status: PgdStatus,
    pub steps: usize,
    pub terminal_semantic_deg: f64,
    pub boundary_error_deg: f64,
    pub max_residual: f64,
    pub diameter: f64,
}

pub const PGD_START_DEG: f64 = 30.0;

/// Gradient run along a clean circle towards a sector boundary 10 degrees ahead.
pub fn pgd_circle(seed: u64, n: usize) -> CliResult<ReproOutput<PgdCircleSummary>> {
    let (pts, params) = generate(&SynthSpec::new(SynthKind::Circle, n, seed))?;
    let n_eigs = 60.min(n);
    let l = 20.min(n_eigs);
    let model = Arc::new(CidmModel::fit(&pts, CidmConfig::new(8, n_eigs))?);
    let frame = SecFrame::build(&model, SecBasisConfig::new(5, n_eigs))?;
    let fhat = embedding_coefficients(&model, frame.config.m_op)?;
    let arrows = frame.arrow_maps(&fhat, 2)?;
    let decoder = SemanticDecoder::fit(&model, &params, &[true], l)?;
    let projector = NystromProjector::from_parts(model.clone(), fourier_coefficients(&model, &coordinates(&pts), l)?)?;
    let ctx = PgdContext {
        projector: &projector,
        arrows: &arrows,
        decoder: &decoder,
    };
    let boundary = PGD_START_DEG + 10.0;
    let clf = sector_classifier(4, boundary - 90.0)?;
    let cfg = PgdConfig::new(2f64.to_radians(), l);
    let (s, c) = PGD_START_DEG.to_radians().sin_cos();
    let start = [c, s];
    let trace = om_pgd(&start, clf.predict(&start), &clf, &ctx, &cfg)?;
    let terminal = trace.records.last().map_or(f64::NAN, |r| r.semantics[0]);
    let summary = PgdCircleSummary {
        n_points: n,
        start_deg: PGD_START_DEG,
        boundary_deg: boundary,
        alpha: cfg.alpha,
        status: trace.status,
        steps: trace.records.len(),
        terminal_semantic_deg: terminal,
        boundary_error_deg: angle_diff(terminal, boundary).abs(),
        max_residual: trace.records.iter().map(|r| r.residual).fold(0.0, f64::max),
        diameter: model.diameter(),
    };
    let files = vec![("trace.jsonl".into(), trace_jsonl(&trace).into_bytes())];
    Ok(with_summary(files, summary))
}
