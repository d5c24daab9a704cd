//! `lapreg` command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{Error, ErrorKind, Result};
use crate::geometry::CameraIntrinsics;
use crate::meshproc::shapes::{liver_blob, BlobParams};
use crate::metrics::{evaluate_2d, mean_chamfer, reprojection_error, Score, DEFAULT_D_MAX};
use crate::register::restart_seed;
use crate::render::LandmarkMap2D;
use crate::tooling::{
    load_bundle, load_problem, read_camera, read_labelled_mesh, read_landmark_map, read_landmarks, read_pose,
    register_problem, render_overlay, synth_case, write_pose, write_rgb_png, CaseBundle, PnpSettings,
    PoseSource, ProblemPaths, RegisterMethod, DEFAULT_POLYLINE_DILATION,
};

#[derive(Debug, Parser)]
#[command(name = "lapreg", version, about = "Register labelled liver meshes to laparoscopic landmark maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the camera pose of one case.
    Register(RegisterArgs),
    /// Score predicted 2D landmark maps.
    #[command(name = "eval-2d")]
    Eval2d(Eval2dArgs),
    /// Score predicted 3D landmark sets.
    #[command(name = "eval-3d")]
    Eval3d(EvalArgs),
    /// Score registered poses by landmark reprojection.
    #[command(name = "eval-reg")]
    EvalReg(EvalArgs),
    /// Draw the registered model over the case image.
    RenderOverlay(OverlayArgs),
    /// Write synthetic cases rendered from a labelled mesh.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct RegisterArgs {
    #[arg(long, value_enum)]
    method: RegisterMethod,
    /// Case manifest; replaces the individual asset flags.
    #[arg(long, conflicts_with_all = ["mesh", "landmarks3d", "landmarks2d", "camera", "mask"])]
    case: Option<PathBuf>,
    #[arg(long, required_unless_present = "case")]
    mesh: Option<PathBuf>,
    #[arg(long, required_unless_present = "case")]
    landmarks3d: Option<PathBuf>,
    /// Label-map PNG or polyline JSON.
    #[arg(long, required_unless_present = "case")]
    landmarks2d: Option<PathBuf>,
    #[arg(long, required_unless_present = "case")]
    camera: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    render_scale: Option<f64>,
    #[arg(long, env = "P2ILF_SEED", default_value_t = 0)]
    seed: u64,
    /// Pose file used as the canonical start.
    #[arg(long)]
    init: Option<PathBuf>,
    /// RANSAC inlier threshold in pixels.
    #[arg(long, default_value_t = PnpSettings::default().threshold)]
    threshold: f64,
    #[arg(long, default_value_t = PnpSettings::default().max_iterations)]
    ransac_iterations: usize,
    /// Polyline width in pixels when the 2D landmarks are JSON.
    #[arg(long, default_value_t = DEFAULT_POLYLINE_DILATION)]
    dilation: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Case manifests.
    #[arg(required = true)]
    cases: Vec<PathBuf>,
    /// Prediction file, or a directory holding one `<case id>` file per case.
    #[arg(long)]
    pred: PathBuf,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct Eval2dArgs {
    #[command(flatten)]
    common: EvalArgs,
    /// Precision tolerance in pixels.
    #[arg(long, default_value_t = 0.0)]
    tolerance: f64,
    #[arg(long, default_value_t = DEFAULT_D_MAX)]
    d_max: f64,
    #[arg(long, default_value_t = DEFAULT_POLYLINE_DILATION)]
    dilation: f64,
}

#[derive(Debug, Args)]
struct OverlayArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    pose: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Labelled mesh; a synthetic liver blob when absent.
    #[arg(long, requires = "landmarks3d")]
    mesh: Option<PathBuf>,
    #[arg(long, requires = "mesh")]
    landmarks3d: Option<PathBuf>,
    /// Camera file; a 1920x1080 pinhole camera when absent.
    #[arg(long)]
    camera: Option<PathBuf>,
    /// Fixed pose for a single case.
    #[arg(long, conflicts_with = "count")]
    pose: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, env = "P2ILF_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "case")]
    prefix: String,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
}

/// Camera of synthetic cases when none is given.
pub fn default_synth_camera() -> CameraIntrinsics {
    CameraIntrinsics::pinhole(1000.0, 1000.0, 960.0, 540.0, 1920, 1080)
}

/// Runs the command line and returns the process exit code: 0 on success, 1 for usage
/// errors, 2 for unreadable or inconsistent data and 3 when an algorithm fails.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Algorithmic => 3,
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Register(a) => register(a),
        Command::Eval2d(a) => eval_2d(a),
        Command::Eval3d(a) => eval_3d(a),
        Command::EvalReg(a) => eval_reg(a),
        Command::RenderOverlay(a) => overlay(a),
        Command::Synth(a) => synth(a),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.into(),
        source: e,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.into(),
        source: e.into(),
    }
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn register(a: RegisterArgs) -> Result<()> {
    let problem = match &a.case {
        Some(case) => load_bundle(case)?.problem()?,
        None => {
            let p = ProblemPaths {
                mesh: a.mesh.as_deref().expect("required by clap"),
                landmarks3d: a.landmarks3d.as_deref().expect("required by clap"),
                landmarks2d: a.landmarks2d.as_deref().expect("required by clap"),
                camera: a.camera.as_deref().expect("required by clap"),
                mask: a.mask.as_deref(),
            };
            load_problem(&p, a.dilation)?
        }
    };
    let mut cfg = a.method.config();
    cfg.seed = a.seed;
    if let Some(r) = a.restarts {
        cfg.restarts = r;
    }
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    if let Some(s) = a.render_scale {
        cfg.render_scale = s;
    }
    if let Some(path) = &a.init {
        let pose = read_pose(path)?;
        cfg.canonical_pose = Some(pose);
        cfg.chamfer.initial_pose = Some(pose);
    }
    cfg.validate()?;
    let pnp = PnpSettings {
        threshold: a.threshold,
        max_iterations: a.ransac_iterations,
    };
    let outcome = register_problem(&problem, a.method, &cfg, &pnp)?;
    write_pose(&a.out, &outcome.best.pose)?;
    if let Some(path) = &a.trace {
        let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
        w.write_record(["restart", "iteration", "loss"]).map_err(csv_err(path))?;
        for r in outcome.restarts.iter().flatten() {
            for (k, loss) in r.loss_trace.iter().enumerate() {
                w.write_record([r.restart_index.to_string(), k.to_string(), loss.to_string()])
                    .map_err(csv_err(path))?;
            }
        }
        w.flush().map_err(io_err(path))?;
    }
    let failed = outcome.restarts.iter().filter(|r| r.is_err()).count();
    println!(
        "restart {} of {}: loss {:.6} ({} failed)",
        outcome.best.restart_index,
        outcome.restarts.len(),
        outcome.best.final_loss,
        failed
    );
    Ok(())
}

/// Prediction file of `id`: `pred` itself for a single case, else `pred/<id>.<ext>` for
/// the first extension present.
fn prediction(pred: &Path, id: &str, single: bool, exts: &[&str]) -> Result<Option<PathBuf>> {
    if !pred.is_dir() {
        if !single {
            return Err(Error::InvalidArgument(
                "--pred must be a directory when several cases are given".into(),
            ));
        }
        return Ok(Some(pred.to_path_buf()));
    }
    Ok(exts.iter().map(|e| pred.join(format!("{id}.{e}"))).find(|p| p.is_file()))
}

/// Evaluates every case in parallel and writes the rows ordered by case id.
fn eval_rows(
    args: &EvalArgs,
    header: &[&str],
    row: impl Fn(&CaseBundle) -> Result<Vec<String>> + Sync,
) -> Result<()> {
    let rows: Vec<Result<(String, Vec<String>)>> = pool(args.jobs)?.install(|| {
        args.cases
            .par_iter()
            .map(|m| {
                let bundle = load_bundle(m)?;
                Ok((bundle.id.clone(), row(&bundle)?))
            })
            .collect()
    });
    let mut rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.0.cmp(&b.0));

    let stdout = Path::new("<stdout>");
    let dest = args.out.as_deref().unwrap_or(stdout);
    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(io_err(p))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let mut head = vec!["case"];
    head.extend_from_slice(header);
    w.write_record(&head).map_err(csv_err(dest))?;
    for (id, values) in rows {
        w.write_record(std::iter::once(id).chain(values)).map_err(csv_err(dest))?;
    }
    w.flush().map_err(io_err(dest))
}

fn strings(scores: impl IntoIterator<Item = Score>) -> Vec<String> {
    scores.into_iter().map(|s| s.to_string()).collect()
}

fn eval_2d(a: Eval2dArgs) -> Result<()> {
    let single = a.common.cases.len() == 1;
    let header = [
        "ridge_precision",
        "ridge_dsc",
        "ridge_g",
        "ligament_precision",
        "ligament_dsc",
        "ligament_g",
        "silhouette_precision",
        "silhouette_dsc",
        "silhouette_g",
    ];
    eval_rows(&a.common, &header, |b| {
        let gt = &b.landmarks2d;
        let pred = match prediction(&a.common.pred, &b.id, single, &["png", "json"])? {
            Some(p) => {
                let map = read_landmark_map(&p, a.dilation)?;
                if (map.width(), map.height()) != (gt.width(), gt.height()) {
                    return Err(Error::DimensionMismatch {
                        path: p,
                        message: format!(
                            "prediction is {}x{} but the ground truth is {}x{}",
                            map.width(),
                            map.height(),
                            gt.width(),
                            gt.height()
                        ),
                    });
                }
                map
            }
            None => LandmarkMap2D::new(gt.width(), gt.height()),
        };
        let r = evaluate_2d(&pred, gt, a.tolerance, a.d_max)?;
        Ok(strings([r.ridge, r.ligament, r.silhouette].iter().flat_map(|c| [c.precision, c.dsc, c.symmetric])))
    })
}

fn eval_3d(a: EvalArgs) -> Result<()> {
    let single = a.cases.len() == 1;
    eval_rows(&a, &["ridge", "ligament", "mean"], |b| {
        let Some(path) = prediction(&a.pred, &b.id, single, &["json"])? else {
            return Ok(strings([Score::Fail; 3]));
        };
        let pred = read_landmarks(&path, b.mesh.vertex_count())?.landmarks();
        let r = mean_chamfer(&pred, b.landmarks3d(), &b.mesh)?;
        Ok(strings([r.ridge, r.ligament, r.mean]))
    })
}

fn eval_reg(a: EvalArgs) -> Result<()> {
    let single = a.cases.len() == 1;
    eval_rows(&a, &["ridge", "ligament", "combined", "hausdorff"], |b| {
        let Some(path) = prediction(&a.pred, &b.id, single, &["json"])? else {
            return Ok(strings([Score::Fail; 4]));
        };
        let pose = read_pose(&path)?;
        let r = match reprojection_error(&pose, b.landmarks3d(), &b.mesh, &b.landmarks2d, &b.camera) {
            Ok(r) => r,
            Err(e) if e.kind() == ErrorKind::Algorithmic => return Ok(strings([Score::Fail; 4])),
            Err(e) => return Err(e),
        };
        let combined = r.combined().map_or(Score::Fail, Score::Value);
        Ok(strings([r.ridge, r.ligament, combined, r.hausdorff]))
    })
}

fn overlay(a: OverlayArgs) -> Result<()> {
    let bundle = load_bundle(&a.case)?;
    let pose = read_pose(&a.pose)?;
    let o = render_overlay(&bundle, &pose)?;
    if let Some(w) = &o.warning {
        eprintln!("warning: {w}");
    }
    write_rgb_png(&a.out, &o.image)
}

fn synth(a: SynthArgs) -> Result<()> {
    let mesh = match (&a.mesh, &a.landmarks3d) {
        (Some(m), Some(l)) => read_labelled_mesh(m, l)?,
        _ => liver_blob(&BlobParams::default()),
    };
    let intr = match &a.camera {
        Some(p) => read_camera(p)?,
        None => default_synth_camera(),
    };
    let fixed = a.pose.as_deref().map(read_pose).transpose()?;
    std::fs::create_dir_all(&a.out_dir).map_err(io_err(&a.out_dir))?;
    let written: Vec<Result<PathBuf>> = pool(a.jobs)?.install(|| {
        (0..a.count)
            .into_par_iter()
            .map(|i| {
                let id = format!("{}_{i:03}", a.prefix);
                let source = match fixed {
                    Some(p) => PoseSource::Pose(p),
                    None => PoseSource::Seed(restart_seed(a.seed, i)),
                };
                Ok(synth_case(&mesh, &intr, source, &a.out_dir.join(&id), &id)?.manifest_path)
            })
            .collect()
    });
    for path in written {
        println!("{}", path?.display());
    }
    Ok(())
}
