//! Command-line front end: `cidm <verb> ...`.
//!
//! Exit codes: 0 on success, 1 on usage and input errors, 2 on numerical
//! failures. Errors print one line `error: <Kind>: <message>` to stderr.

pub mod bundle;
pub mod repro;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cidm_core::cloud::{parse_csv_rows, rows_to_csv};
use cidm_core::nystrom::{eigenfunctions_at, extend_function, fourier_coefficients};
use cidm_core::ompgd::{om_pgd, ClassifierOracle, FlatOracle, PgdConfig, PgdContext, PgdStatus, SectorClassifier, SemanticDecoder};
use cidm_core::sec::{embedding_coefficients, tangent_frame_at, ArrowMap, SecBasisConfig, SecFrame};
use cidm_core::synth::{generate, DensityProfile, NoiseProfile, SynthKind, SynthSpec};
use cidm_core::{CidmConfig, CidmModel, PointCloud, ScaleMode, Shape};
use nalgebra::DMatrix;

use crate::bundle::{sha256_hex, Bundle};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Exists(String),
    Io(String),
    Bundle(String),
    Stalled(usize),
    Core(cidm_core::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "UsageError",
            CliError::Exists(_) => "OutputExistsError",
            CliError::Io(_) => "IoError",
            CliError::Bundle(_) => "BundleError",
            CliError::Stalled(_) => "StalledError",
            CliError::Core(e) => e.kind(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Stalled(_) => 2,
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Bundle(m) => f.write_str(m),
            CliError::Exists(p) => write!(f, "{p} exists; pass --force to overwrite"),
            CliError::Stalled(n) => write!(f, "gradient run stalled after {n} steps"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<cidm_core::Error> for CliError {
    fn from(e: cidm_core::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "cidm", version, about = "Manifold learning, vector fields and on-manifold gradient runs")]
struct Cli {
    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic point cloud and its intrinsic parameters.
    Synth(SynthArgs),
    /// Fit a model to a point CSV and write a bundle.
    Fit(FitArgs),
    /// Evaluate eigenfunctions, or extend training values, at query points.
    Extend(ExtendArgs),
    /// Nystrom-project query points.
    Project(ProjectArgs),
    /// Compute SEC eigenfields and store them in the bundle.
    SecFields(SecArgs),
    /// Tangent bases at query points from stored eigenfields.
    Tangent(TangentArgs),
    /// On-manifold gradient run against a sector classifier.
    Pgd(PgdArgs),
    /// Regenerate the data behind one of the figures.
    Repro(ReproArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum KindArg {
    Circle,
    Circle4d,
    Torus,
    Grid2d,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DensityArg {
    Uniform,
    Skewed,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum NoiseArg {
    Constant,
    Varying,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise level; defaults to the generator's own.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, value_enum, default_value = "uniform")]
    density: DensityArg,
    #[arg(long, value_enum, default_value = "constant")]
    noise: NoiseArg,
    #[arg(long)]
    out: PathBuf,
    /// Intrinsic parameters; defaults to `<out>.params.csv`.
    #[arg(long)]
    params_out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ShapeArg {
    Exponential,
    Indicator,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ScaleArg {
    MeanKnn,
    Kth,
    Fixed,
}

#[derive(Args, Debug)]
struct FitArgs {
    points: PathBuf,
    #[arg(long, default_value_t = 8)]
    k_nn: usize,
    #[arg(long, default_value_t = 40)]
    n_eigs: usize,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, value_enum, default_value = "exponential")]
    shape: ShapeArg,
    #[arg(long, value_enum, default_value = "mean-knn")]
    scale: ScaleArg,
    /// Projector truncation; defaults to min(20, n_eigs).
    #[arg(long)]
    l_trunc: Option<usize>,
    /// Intrinsic parameters of the training points, for semantic labels.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Comma-separated periodicity flags, one per parameter column.
    #[arg(long, value_delimiter = ',')]
    periodic: Vec<bool>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExtendArgs {
    bundle: PathBuf,
    queries: PathBuf,
    /// Training values to extend (one row per training point); without it the
    /// eigenfunctions themselves are written.
    #[arg(long)]
    values: Option<PathBuf>,
    #[arg(long)]
    l_trunc: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    bundle: PathBuf,
    queries: PathBuf,
    #[arg(long, default_value_t = 2)]
    iters: usize,
    #[arg(long)]
    l_trunc: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SecArgs {
    bundle: PathBuf,
    #[arg(long, default_value_t = 5)]
    m_basis: usize,
    #[arg(long)]
    m_inner: Option<usize>,
    #[arg(long)]
    m_op: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    tau_frac: f64,
    /// Write the updated bundle here instead of in place.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV of arrows at the training points: point, then one arrow per field.
    #[arg(long)]
    arrows: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    arrow_fields: usize,
}

#[derive(Args, Debug)]
struct TangentArgs {
    bundle: PathBuf,
    queries: PathBuf,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum OracleArg {
    Sector,
    Flat,
}

#[derive(Args, Debug)]
struct PgdArgs {
    bundle: PathBuf,
    /// Start at this row of the training set.
    #[arg(long, conflicts_with = "start")]
    start_row: Option<usize>,
    /// Start at these comma-separated coordinates.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    start: Vec<f64>,
    /// Step size; defaults to 5% of the data diameter.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 50)]
    max_steps: usize,
    #[arg(long, default_value_t = 1)]
    tangent_dim: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    normalize: bool,
    #[arg(long, default_value_t = 2)]
    iters: usize,
    #[arg(long, value_enum, default_value = "sector")]
    oracle: OracleArg,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    boundary_offset: f64,
    #[arg(long, default_value_t = 4.0)]
    kappa: f64,
    /// True label; defaults to the oracle's prediction at the start.
    #[arg(long)]
    label: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReproTarget {
    Fig1,
    Fig2,
    Fig3,
    PgdCircle,
}

#[derive(Args, Debug)]
struct ReproArgs {
    #[arg(value_enum)]
    target: ReproTarget,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Training-set size; each target has its own default.
    #[arg(long)]
    n: Option<usize>,
}

/// Parses `argv` (program name first), runs the verb and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return 1;
        }
    };
    let result = match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(CliError::Usage(format!("cannot build thread pool: {e}"))),
        },
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {e}", e.kind());
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let force = cli.force;
    match &cli.cmd {
        Cmd::Synth(a) => synth(a, force),
        Cmd::Fit(a) => fit(a, force),
        Cmd::Extend(a) => extend(a, force),
        Cmd::Project(a) => project(a, force),
        Cmd::SecFields(a) => sec_fields(a, force),
        Cmd::Tangent(a) => tangent(a, force),
        Cmd::Pgd(a) => pgd(a, force),
        Cmd::Repro(a) => repro::run(a.target, &a.out_dir, a.seed, a.n, force),
    }
}

/// Writes `contents` to `path`, refusing to replace an existing file unless `force`.
pub fn write_output(path: &Path, contents: &[u8], force: bool) -> CliResult<()> {
    if path.exists() && !force {
        return Err(CliError::Exists(path.display().to_string()));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn read_points(path: &Path) -> CliResult<PointCloud> {
    Ok(PointCloud::from_csv_str(&read_text(path)?)?)
}

fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    let rows = parse_csv_rows(&read_text(path)?)?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Usage(format!("{}: expected a non-empty rectangular CSV", path.display())));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn csv_of(rows: &[Vec<f64>]) -> String {
    rows_to_csv(rows.iter().map(Vec::as_slice))
}

fn synth(a: &SynthArgs, force: bool) -> CliResult<()> {
    let kind = match a.kind {
        KindArg::Circle => SynthKind::Circle,
        KindArg::Circle4d => SynthKind::Circle4d,
        KindArg::Torus => SynthKind::Torus,
        KindArg::Grid2d => SynthKind::Grid2d,
    };
    let mut spec = SynthSpec::new(kind, a.n, a.seed);
    if let Some(s) = a.sigma {
        spec.noise_sigma = s;
    }
    spec.density_profile = match a.density {
        DensityArg::Uniform => DensityProfile::Uniform,
        DensityArg::Skewed => DensityProfile::AngleSkewed,
    };
    spec.noise_profile = match a.noise {
        NoiseArg::Constant => NoiseProfile::Constant,
        NoiseArg::Varying => NoiseProfile::AngleVarying,
    };
    let (pts, params) = generate(&spec)?;
    let params_path = a.params_out.clone().unwrap_or_else(|| a.out.with_extension("params.csv"));
    let prows: Vec<Vec<f64>> = params.row_iter().map(|r| r.iter().copied().collect()).collect();
    write_output(&a.out, pts.to_csv_string().as_bytes(), force)?;
    write_output(&params_path, csv_of(&prows).as_bytes(), force)
}

fn fit(a: &FitArgs, force: bool) -> CliResult<()> {
    let text = read_text(&a.points)?;
    let pts = PointCloud::from_csv_str(&text)?;
    let mut config = CidmConfig::new(a.k_nn, a.n_eigs);
    config.epsilon = a.epsilon;
    config.shape = match a.shape {
        ShapeArg::Exponential => Shape::Exponential,
        ShapeArg::Indicator => Shape::Indicator,
    };
    config.scale_mode = match a.scale {
        ScaleArg::MeanKnn => ScaleMode::MeanKnn,
        ScaleArg::Kth => ScaleMode::KthNeighbor,
        ScaleArg::Fixed => ScaleMode::Fixed,
    };
    let l_trunc = a.l_trunc.unwrap_or(20.min(a.n_eigs));
    if a.out.exists() && !force {
        return Err(CliError::Exists(a.out.display().to_string()));
    }
    let model = Arc::new(CidmModel::fit(&pts, config)?);
    let xhat = fourier_coefficients(&model, &cidm_core::nystrom::coordinates(&pts), l_trunc)?;
    let labels = match &a.params {
        Some(p) => {
            let params = read_matrix(p)?;
            let periodic = if a.periodic.is_empty() { vec![false; params.ncols()] } else { a.periodic.clone() };
            Some(SemanticDecoder::fit(&model, &params, &periodic, l_trunc)?)
        }
        None => None,
    };
    let bundle = Bundle {
        model,
        dataset_digest: sha256_hex(text.as_bytes()),
        xhat,
        labels,
        sec: None,
    };
    bundle.save(&a.out, force)
}

fn extend(a: &ExtendArgs, force: bool) -> CliResult<()> {
    let b = Bundle::load(&a.bundle)?;
    let q = read_points(&a.queries)?;
    let model = &b.model;
    let rows: Vec<Vec<f64>> = match &a.values {
        Some(vp) => {
            let values = read_matrix(vp)?;
            let coeffs = fourier_coefficients(model, &values, a.l_trunc.unwrap_or(b.l_trunc()))?;
            q.rows().map(|x| extend_function(model, &coeffs, x)).collect::<Result<_, _>>()?
        }
        None => {
            let count = a.l_trunc.unwrap_or(b.l_trunc());
            q.rows().map(|x| eigenfunctions_at(model, count, x)).collect::<Result<_, _>>()?
        }
    };
    write_output(&a.out, csv_of(&rows).as_bytes(), force)
}

fn project(a: &ProjectArgs, force: bool) -> CliResult<()> {
    let b = Bundle::load(&a.bundle)?;
    let q = read_points(&a.queries)?;
    let proj = match a.l_trunc {
        Some(l) if l != b.l_trunc() => cidm_core::NystromProjector::build(b.model.clone(), l)?,
        _ => b.projector()?,
    };
    let rows = proj.project_all(&q, a.iters)?;
    write_output(&a.out, csv_of(&rows).as_bytes(), force)
}

fn arrow_maps(model: &CidmModel, frame: &SecFrame, count: usize) -> CliResult<Vec<ArrowMap>> {
    let fhat = embedding_coefficients(model, frame.config.m_op)?;
    Ok(frame.arrow_maps(&fhat, count)?)
}

fn sec_fields(a: &SecArgs, force: bool) -> CliResult<()> {
    let mut b = Bundle::load(&a.bundle)?;
    let target = a.out.clone().unwrap_or_else(|| a.bundle.clone());
    if target.exists() && !force {
        return Err(CliError::Exists(target.display().to_string()));
    }
    if let Some(p) = &a.arrows {
        if p.exists() && !force {
            return Err(CliError::Exists(p.display().to_string()));
        }
    }
    let model = b.model.clone();
    let mut cfg = SecBasisConfig::new(a.m_basis, model.n_eigs());
    if let Some(mi) = a.m_inner {
        cfg.m_inner = mi;
        cfg.m_op = (3 * a.m_basis).min(mi).max(a.m_basis);
    }
    if let Some(mo) = a.m_op {
        cfg.m_op = mo;
    }
    cfg.tau_frac = a.tau_frac;
    let frame = SecFrame::build(&model, cfg)?;
    if let Some(p) = &a.arrows {
        let maps = arrow_maps(&model, &frame, a.arrow_fields)?;
        let rows: Vec<Vec<f64>> = (0..model.n_points())
            .map(|i| {
                let phis: Vec<f64> = model.eig_phi().row(i).iter().copied().collect();
                let mut row = model.training().row(i).to_vec();
                for m in &maps {
                    row.extend(m.arrow_from_phis(&phis));
                }
                row
            })
            .collect();
        write_output(p, csv_of(&rows).as_bytes(), true)?;
    }
    b.sec = Some(frame);
    b.save(&target, true)
}

fn stored_frame(b: &Bundle) -> CliResult<&SecFrame> {
    b.sec
        .as_ref()
        .ok_or_else(|| CliError::Usage("bundle has no eigenfields; run sec-fields first".into()))
}

fn tangent(a: &TangentArgs, force: bool) -> CliResult<()> {
    let b = Bundle::load(&a.bundle)?;
    let frame = stored_frame(&b)?;
    let maps = arrow_maps(&b.model, frame, 2 * a.dim)?;
    let q = read_points(&a.queries)?;
    let mut rows = Vec::with_capacity(q.len());
    for x in q.rows() {
        let t = tangent_frame_at(&b.model, &maps, x, a.dim)?;
        let mut row = x.to_vec();
        for c in 0..a.dim {
            row.extend(t.column(c).iter());
        }
        rows.push(row);
    }
    write_output(&a.out, csv_of(&rows).as_bytes(), force)
}

fn pgd(a: &PgdArgs, force: bool) -> CliResult<()> {
    let b = Bundle::load(&a.bundle)?;
    let frame = stored_frame(&b)?;
    let model = b.model.clone();
    let start: Vec<f64> = match (a.start_row, a.start.is_empty()) {
        (Some(r), _) if r < model.n_points() => model.training().row(r).to_vec(),
        (Some(r), _) => return Err(CliError::Usage(format!("start row {r} is out of range"))),
        (None, false) => a.start.clone(),
        (None, true) => return Err(CliError::Usage("give --start-row or --start".into())),
    };
    if start.len() != model.dim() {
        return Err(CliError::Usage(format!("start point needs {} coordinates", model.dim())));
    }
    if a.out.exists() && !force {
        return Err(CliError::Exists(a.out.display().to_string()));
    }
    let projector = b.projector()?;
    let maps = arrow_maps(&model, frame, 2 * a.tangent_dim)?;
    let decoder = match &b.labels {
        Some(d) => d.clone(),
        None => SemanticDecoder::from_parts(Vec::new(), DMatrix::zeros(1, 0))?,
    };
    let ctx = PgdContext {
        projector: &projector,
        arrows: &maps,
        decoder: &decoder,
    };
    let mut cfg = PgdConfig::for_diameter(model.diameter(), projector.l_trunc());
    if let Some(al) = a.alpha {
        cfg.alpha = al;
    }
    cfg.max_steps = a.max_steps;
    cfg.tangent_dim = a.tangent_dim;
    cfg.normalize_gradient = a.normalize;
    cfg.project_iters = a.iters;
    let clf: SectorClassifier;
    let oracle: &dyn ClassifierOracle = match a.oracle {
        OracleArg::Sector => {
            clf = SectorClassifier::new(a.classes, a.boundary_offset, a.kappa)?;
            &clf
        }
        OracleArg::Flat => &FlatOracle,
    };
    let label = a.label.unwrap_or_else(|| oracle.predict(&start));
    let trace = om_pgd(&start, label, oracle, &ctx, &cfg)?;
    write_output(&a.out, trace_jsonl(&trace).as_bytes(), true)?;
    if trace.status == PgdStatus::Stalled {
        return Err(CliError::Stalled(trace.records.len()));
    }
    Ok(())
}

/// One JSON line per step record, then a summary line.
pub fn trace_jsonl(trace: &cidm_core::ompgd::PgdTrace) -> String {
    let mut out = String::new();
    for r in &trace.records {
        out.push_str(&serde_json::to_string(r).expect("record serialises"));
        out.push('\n');
    }
    let summary = serde_json::json!({
        "summary": {
            "status": trace.status,
            "steps": trace.records.len(),
            "true_label": trace.true_label,
            "start": trace.start,
            "start_projected": trace.start_projected,
            "final_label": trace.records.last().map(|r| r.label_pred),
            "final_semantics": trace.records.last().map(|r| r.semantics.clone()),
        }
    });
    out.push_str(&summary.to_string());
    out.push('\n');
    out
}

