//! `shape-transfer` command-line tool.
//!
//! Exit codes: 0 success, 2 IO failure, 3 invalid input, 4 numerical
//! failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use shape_transfer::cpd::CpdParams;
use shape_transfer::geometry::{
    load_mesh, load_point_cloud, save_mesh, save_point_cloud, single_view_scan, tessellated_sphere,
    virtual_scan, voxel_downsample, Camera, PointCloud, ScanSettings,
};
use shape_transfer::inference::{EnergyOrientation, InferenceParams};
use shape_transfer::latent::PcaEmOptions;
use shape_transfer::pipeline::{
    cross_validate, infer, load_training_set, save_training_set, select_canonical, train,
    CanonicalSelection, CategoryModel, EvalConfig, TrainConfig,
};
use shape_transfer::synthetic::{training_set, DrillShape};
use shape_transfer::transfer::{sample_grasp_motions, GraspDescriptor, SamplingParams};
use shape_transfer::ErrorKind;

#[derive(Parser)]
#[command(
    name = "shape-transfer",
    version,
    about = "Category-level shape spaces for grasp transfer"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ray-cast a mesh into a point cloud.
    Scan(ScanArgs),
    /// Learn a category model from a dataset directory.
    Train(TrainArgs),
    /// Fit a model to an observed cloud and transfer its grasp.
    Infer(InferArgs),
    /// Leave-two-out cross validation, one CSV row per held-out instance.
    Eval(EvalArgs),
    /// Sample perturbed copies of a canonical grasp motion.
    SampleMotion(SampleArgs),
    /// Write a synthetic drill-family dataset.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum View {
    Full,
    Single,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Orientation {
    /// Every template point must be explained by the observation.
    Template,
    /// Every observed point must be explained by the template.
    Observed,
}

#[derive(Args)]
struct ScanArgs {
    /// Mesh file (ASCII PLY or OBJ).
    mesh: PathBuf,
    /// Output PLY.
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    view: View,
    /// Camera sphere subdivisions for full views (0..=3).
    #[arg(long, default_value_t = 1)]
    subdivisions: usize,
    /// Camera sphere radius for full views (m).
    #[arg(long, default_value_t = 0.6)]
    radius: f64,
    /// Camera position for single views, `x,y,z`.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    camera: Option<Vector3<f64>>,
    /// Point the single-view camera looks at.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true, default_value = "0,0,0")]
    target: Vector3<f64>,
    /// Rays per image axis.
    #[arg(long, default_value_t = 160)]
    resolution: usize,
    /// Field of view (degrees).
    #[arg(long, default_value_t = 90.0)]
    fov: f64,
    /// Voxel leaf size for the output (m).
    #[arg(long)]
    leaf: Option<f64>,
}

#[derive(Args)]
struct CpdArgs {
    /// Deformation kernel width.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Smoothness weight.
    #[arg(long, default_value_t = 3.0)]
    lambda: f64,
    /// Registration variance (m²).
    #[arg(long, default_value_t = 0.01)]
    sigma2: f64,
    /// Outlier weight in [0, 1).
    #[arg(long, default_value_t = 0.1)]
    omega: f64,
    /// Registration EM iterations.
    #[arg(long, default_value_t = 150)]
    max_iters: usize,
    /// Re-estimate the variance in every M-step.
    #[arg(long)]
    update_sigma2: bool,
}

impl CpdArgs {
    fn params(&self) -> CpdParams<f64> {
        CpdParams {
            beta: self.beta,
            lambda: self.lambda,
            sigma2: self.sigma2,
            omega: self.omega,
            max_iters: self.max_iters,
            update_sigma2: self.update_sigma2,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    /// Dataset directory with `instances/<id>.ply` and `grasps/<id>.json`.
    data: PathBuf,
    #[command(flatten)]
    cpd: CpdArgs,
    /// Fraction of deformation variance the latent space keeps.
    #[arg(long, default_value_t = 0.95)]
    variance: f64,
    /// Ridge weight of the descriptor regression.
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// Voxel leaf applied to instances on load (m).
    #[arg(long)]
    leaf: Option<f64>,
    /// Seed of the PCA initialisation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "category")]
    category: String,
}

impl ModelArgs {
    fn config(&self) -> TrainConfig<f64> {
        TrainConfig {
            category: self.category.clone(),
            cpd: self.cpd.params(),
            variance_fraction: self.variance,
            pca: PcaEmOptions {
                seed: self.seed,
                ..Default::default()
            },
            ridge: self.ridge,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Output model file.
    #[arg(short, long)]
    out: PathBuf,
    /// Id of the template instance. Defaults to the first id.
    #[arg(long, conflicts_with = "min_energy")]
    canonical: Option<String>,
    /// Pick the template with the lowest summed registration energy.
    #[arg(long)]
    min_energy: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Shape-fit energy term (default: template for full views, observed
    /// for single views).
    #[arg(long, value_enum)]
    orientation: Option<Orientation>,
    /// Weight of the Gaussian latent prior (default: 0 for full views, 10
    /// for single views).
    #[arg(long)]
    prior: Option<f64>,
    /// Extra random starts.
    #[arg(long, default_value_t = 0)]
    restarts: usize,
    #[arg(long, value_enum, default_value = "full")]
    view: View,
}

impl FitArgs {
    fn params(&self, sigma2: f64, max_iters: usize, seed: u64) -> InferenceParams<f64> {
        let single = self.view == View::Single;
        let orientation = match self.orientation {
            Some(Orientation::Template) => EnergyOrientation::TemplateOuter,
            Some(Orientation::Observed) => EnergyOrientation::ObservedOuter,
            None if single => EnergyOrientation::ObservedOuter,
            None => EnergyOrientation::TemplateOuter,
        };
        InferenceParams {
            sigma2,
            max_iters,
            orientation,
            latent_prior: self.prior.unwrap_or(if single { 10.0 } else { 0.0 }),
            restarts: self.restarts,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct InferArgs {
    /// Model file written by `train`.
    model: PathBuf,
    /// Observed cloud (PLY or PCD).
    cloud: PathBuf,
    /// Directory for `fit.json`, `descriptor.json` and `completed.ply`.
    #[arg(short, long)]
    out: PathBuf,
    /// Shape-fit variance (m²).
    #[arg(long, default_value_t = 0.01)]
    sigma2: f64,
    /// Shape-fit iterations.
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Voxel leaf applied to the observation (m).
    #[arg(long)]
    leaf: Option<f64>,
    /// Seed of the random restarts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Preferred template id; the first remaining id is used when it is
    /// held out.
    #[arg(long)]
    canonical: Option<String>,
    /// Shape-fit variance (m²).
    #[arg(long, default_value_t = 0.01)]
    fit_sigma2: f64,
    /// Shape-fit iterations.
    #[arg(long, default_value_t = 500)]
    fit_max_iters: usize,
    #[command(flatten)]
    fit: FitArgs,
    /// Position tolerance for the fold summary (m).
    #[arg(long, default_value_t = 0.02)]
    max_position: f64,
    /// Orientation tolerance for the fold summary (degrees).
    #[arg(long, default_value_t = 10.0)]
    max_angle: f64,
}

#[derive(Args)]
struct SampleArgs {
    /// Canonical-space descriptor JSON.
    descriptor: PathBuf,
    #[arg(short = 'n', long, default_value_t = 10)]
    count: usize,
    /// Output JSON array; stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest offset distance (m).
    #[arg(long, default_value_t = 0.04)]
    max_translation: f64,
    /// Largest offset rotation (rad).
    #[arg(long, default_value_t = 0.2)]
    max_angle: f64,
    /// Per-axis translation standard deviation (m).
    #[arg(long, default_value_t = 0.02)]
    stddev: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(short, long)]
    out: PathBuf,
    #[arg(short = 'n', long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Voxel leaf of the scans (m).
    #[arg(long, default_value_t = 0.01)]
    leaf: f64,
    /// Also write meshes and occluded single views under `meshes/` and
    /// `views/`.
    #[arg(long)]
    extras: bool,
}

fn parse_vec3(s: &str) -> std::result::Result<Vector3<f64>, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [x, y, z] => Ok(Vector3::new(x, y, z)),
        _ => Err(format!("expected x,y,z, got `{s}`")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Scan(a) => scan(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::SampleMotion(a) => sample_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain on one line, skipping causes already quoted by their
/// parent's message.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !last.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
        last = text;
    }
    out
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<shape_transfer::Error>() {
            return match e.kind() {
                ErrorKind::Io => 2,
                ErrorKind::Validation => 3,
                ErrorKind::Numerical => 4,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<csv::Error>() {
            return if e.is_io_error() { 2 } else { 3 };
        }
    }
    3
}

fn invalid(message: impl Into<String>) -> anyhow::Error {
    shape_transfer::Error::Invalid(message.into()).into()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Warns when two clouds' bounding boxes do not intersect, which usually
/// means the inputs are not coarsely aligned.
fn check_overlap(what: &str, a: &PointCloud<f64>, b: &PointCloud<f64>) {
    let ((amin, amax), (bmin, bmax)) = (a.bounds(), b.bounds());
    if (0..3).any(|d| amax[d] < bmin[d] || bmax[d] < amin[d]) {
        log::warn!("{what}: bounding boxes do not overlap; inputs may not be aligned");
    }
}

fn scan(a: ScanArgs) -> Result<()> {
    let mesh = load_mesh::<f64>(&a.mesh)?;
    let settings = ScanSettings {
        resolution: a.resolution,
        fov: a.fov.to_radians(),
    };
    let mut cloud = match a.view {
        View::Full => virtual_scan(
            &mesh,
            &tessellated_sphere(a.subdivisions, a.radius)?,
            &settings,
        )?,
        View::Single => {
            let Some(position) = a.camera else {
                return Err(invalid("--view single needs --camera x,y,z"));
            };
            single_view_scan(&mesh, &Camera::looking_at(position, a.target)?, &settings)?
        }
    };
    if let Some(leaf) = a.leaf {
        cloud = voxel_downsample(&cloud, leaf)?;
    }
    save_point_cloud(&cloud, &a.out, None)?;
    log::info!("{} points written to {}", cloud.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let set = load_training_set::<f64>(&a.model.data, a.model.leaf)?;
    let config = a.model.config();
    let canonical = if a.min_energy {
        let clouds: Vec<_> = set.instances().iter().map(|i| i.cloud.clone()).collect();
        select_canonical(&clouds, CanonicalSelection::MinEnergy, &config.cpd)?
    } else if let Some(id) = &a.canonical {
        set.position(id)
            .ok_or_else(|| invalid(format!("no instance `{id}` in the dataset")))?
    } else {
        0
    };
    let template = &set.instances()[canonical];
    for inst in set.instances() {
        check_overlap(
            &format!("instance `{}`", inst.id),
            &inst.cloud,
            &template.cloud,
        );
    }
    let out = train(&set, canonical, &config)?;
    for r in &out.registrations {
        log::info!(
            "`{}`: {} iterations, converged {}, energy {:.6e}, σ² {:.3e}",
            r.id,
            r.iterations,
            r.converged,
            r.final_energy,
            r.sigma2
        );
    }
    out.model.save(&a.out)?;
    println!(
        "model `{}`: canonical `{}`, {} points, latent dimension {}",
        out.model.category,
        out.model.canonical_id,
        out.model.canonical.len(),
        out.model.latent_dim()
    );
    Ok(())
}

fn infer_cmd(a: InferArgs) -> Result<()> {
    let model = CategoryModel::<f64>::load(&a.model)?;
    let mut observed = load_point_cloud::<f64>(&a.cloud)?;
    if let Some(leaf) = a.leaf {
        observed = voxel_downsample(&observed, leaf)?;
    }
    check_overlap("observation", &observed, &model.canonical);
    let params = a.fit.params(a.sigma2, a.max_iters, a.seed);
    let res = infer(&model, &observed, &params)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_file(&a.out.join("fit.json"), &res.fit.to_json())?;
    write_file(&a.out.join("descriptor.json"), &res.descriptor.to_json())?;
    save_point_cloud(&res.completed, a.out.join("completed.ply"), None)?;
    println!(
        "energy {:.6e} after {} iterations (converged {})",
        res.fit.final_energy, res.fit.iterations, res.fit.converged
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let set = load_training_set::<f64>(&a.model.data, a.model.leaf)?;
    let config = EvalConfig {
        train: a.model.config(),
        inference: a.fit.params(a.fit_sigma2, a.fit_max_iters, a.model.seed),
        canonical_id: a.canonical.clone(),
    };
    let folds = cross_validate(&set, &config)?;

    let sink: Box<dyn std::io::Write> = match &a.csv {
        Some(path) => Box::new(
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        ),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "fold",
        "id",
        "canonical",
        "registration_error_m",
        "position_error_m",
        "orientation_error_deg",
        "energy",
        "iterations",
        "converged",
    ])?;
    for r in folds.iter().flat_map(|f| &f.results) {
        w.write_record([
            r.fold.to_string(),
            r.id.clone(),
            r.canonical_id.clone(),
            r.registration_error.to_string(),
            r.position_error.to_string(),
            r.orientation_error.to_degrees().to_string(),
            r.energy.to_string(),
            r.iterations.to_string(),
            r.converged.to_string(),
        ])?;
    }
    w.flush()?;
    let passing = folds
        .iter()
        .filter(|f| f.passes(a.max_position, a.max_angle.to_radians()))
        .count();
    eprintln!(
        "{passing} of {} folds within {} m and {}°",
        folds.len(),
        a.max_position,
        a.max_angle
    );
    Ok(())
}

fn sample_cmd(a: SampleArgs) -> Result<()> {
    let motion = GraspDescriptor::<f64>::load(&a.descriptor)?;
    let params = SamplingParams {
        max_translation: a.max_translation,
        max_angle: a.max_angle,
        translation_stddev: a.stddev,
        seed: a.seed,
    };
    let samples = sample_grasp_motions(&motion, &params, a.count)?;
    let docs = samples
        .iter()
        .map(|s| serde_json::from_str::<serde_json::Value>(&s.to_json()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let text = serde_json::to_string_pretty(&docs)?;
    match &a.out {
        Some(path) => write_file(path, &text),
        None => {
            use std::io::Write;
            writeln!(std::io::stdout().lock(), "{text}")?;
            Ok(())
        }
    }
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let shapes = DrillShape::sample_family(a.count, a.seed);
    let set = training_set::<f64>(&shapes, a.leaf)?;
    save_training_set(&set, &a.out)?;
    if a.extras {
        for sub in ["meshes", "views"] {
            let dir = a.out.join(sub);
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        for (shape, inst) in shapes.iter().zip(set.instances()) {
            save_mesh(
                &shape.mesh::<f64>()?,
                a.out.join("meshes").join(format!("{}.ply", inst.id)),
            )?;
            save_point_cloud(
                &shape.occluded_view::<f64>(a.leaf)?,
                a.out.join("views").join(format!("{}.ply", inst.id)),
                None,
            )?;
        }
    }
    println!("{} instances written to {}", set.len(), a.out.display());
    Ok(())
}
