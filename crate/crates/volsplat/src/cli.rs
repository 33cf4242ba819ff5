//! Command-line surface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volsplat_core::fit::{
    fit_pose, fit_shape, fit_translation, AdamConfig, LossSpec, MeshRegularizer, PoseFitConfig,
    ShapeFitConfig, TranslationFitConfig, View,
};
use volsplat_core::grad::{gradcheck, GradcheckConfig, ImageL2, ParamClass};
use volsplat_core::math::rotation_from_axis_angle;
use volsplat_core::synth::icosphere;
use volsplat_core::{
    mesh_to_gaussians, pointcloud_to_gaussians, render, resynthesize, sample_attributes, Camera,
    ChannelKind, ConvertConfig, GaussianScene, Image, Mat3, PointCloud, SampleWeighting,
    SelectionConfig, Vec3, VertexAttributes,
};

use crate::bench::{run_bench, write_bench_report, BenchConfig};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::image_io::{read_png, write_pfm, write_png};
use crate::mesh_io::{read_geometry, Geometry};
use crate::report::{gradcheck_passed, write_fit_report, GradcheckRecord};
use crate::scene_file::{
    parse_camera, parse_scene, read_attributes, read_camera, read_scene, to_json, write_attributes,
    write_scene,
};

/// Environment variable setting the worker count when `--threads` is absent.
pub const THREADS_ENV: &str = "VOLSPLAT_THREADS";

/// Bundled 5-kernel scene and its camera.
pub const TEST_SCENE: &str = include_str!("../assets/test_scene.json");
pub const TEST_CAMERA: &str = include_str!("../assets/test_camera.json");

#[derive(Parser, Debug)]
#[command(
    name = "volsplat",
    version,
    about = "Gaussian ellipsoid volume renderer"
)]
pub struct Cli {
    /// Worker threads (overrides VOLSPLAT_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a scene to PNG and optional PFM buffers.
    Render(RenderArgs),
    /// Convert an OBJ/PLY mesh or point cloud to a scene.
    Convert(ConvertArgs),
    /// Time renders of synthetic cuboid scenes.
    Bench(BenchArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Fit kernel centers and colours to synthetic multi-view targets.
    FitShape(FitShapeArgs),
    /// Fit one translation per rigid part against a single view.
    FitTranslation(FitTranslationArgs),
    /// Fit the camera pose against a single view.
    FitPose(FitPoseArgs),
    /// Sample per-kernel attributes from an image.
    ExtractTexture(ExtractArgs),
    /// Render a scene with sampled attributes.
    Rerender(RerenderArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SelectionArgs {
    /// Kernels kept per ray.
    #[arg(long)]
    pub k_prime: Option<usize>,
    /// Peak density threshold.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Trace every kernel on every ray.
    #[arg(long)]
    pub no_coarse: bool,
}

impl SelectionArgs {
    fn resolve(&self, cfg: &RunConfig) -> Result<SelectionConfig> {
        let mut s = cfg.selection.apply(SelectionConfig::default());
        if let Some(k) = self.k_prime {
            s.k_prime = k;
        }
        if let Some(e) = self.eta {
            s.eta = e;
        }
        if self.no_coarse {
            s.coarse_enabled = false;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    /// PNG output (1- or 3-channel attributes).
    #[arg(long)]
    pub out: PathBuf,
    /// Store alpha in the PNG.
    #[arg(long)]
    pub png_alpha: bool,
    #[arg(long)]
    pub pfm_color: Option<PathBuf>,
    #[arg(long)]
    pub pfm_alpha: Option<PathBuf>,
    /// Per-pixel sum of kernel weights.
    #[arg(long)]
    pub pfm_weights: Option<PathBuf>,
    /// Absorption coefficient, replacing the scene's.
    #[arg(long)]
    pub tau: Option<f64>,
    #[command(flatten)]
    pub selection: SelectionArgs,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// .obj or .ply input.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Coverage rate in (0, 1).
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Normal-axis flatten rate in (0, 1].
    #[arg(long)]
    pub flatten: Option<f64>,
    /// Neighbours averaged for point-cloud spacing.
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Treat a mesh as a bare point cloud.
    #[arg(long)]
    pub points: bool,
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1000, 4000, 16000])]
    pub kernels: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [128, 256, 512])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Skip the exhaustive-selection comparison run.
    #[arg(long)]
    pub no_exhaustive: bool,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Scene (defaults to the bundled 5-kernel scene).
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Camera (defaults to the bundled camera).
    #[arg(long)]
    pub camera: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub selection: SelectionArgs,
}

#[derive(Args, Debug)]
pub struct FitOutputs {
    /// FitReport JSON.
    #[arg(long)]
    pub report: PathBuf,
    /// Loss trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitShapeArgs {
    /// Target: scene JSON or OBJ/PLY mesh rendered from the view rig.
    #[arg(long)]
    pub target: PathBuf,
    /// Initial shape: scene JSON or OBJ/PLY mesh (default: 642-vertex sphere).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Fitted scene JSON.
    #[arg(long)]
    pub out_scene: Option<PathBuf>,
    #[command(flatten)]
    pub outputs: FitOutputs,
    #[command(flatten)]
    pub selection: SelectionArgs,
}

#[derive(Args, Debug)]
pub struct FitTranslationArgs {
    /// One scene JSON or OBJ/PLY mesh per rigid part.
    #[arg(long, num_args = 1.., required = true)]
    pub parts: Vec<PathBuf>,
    #[arg(long)]
    pub camera: PathBuf,
    /// Target image; without it the parts are rendered at `target_offsets`.
    #[arg(long)]
    pub target_image: Option<PathBuf>,
    #[command(flatten)]
    pub outputs: FitOutputs,
    #[command(flatten)]
    pub selection: SelectionArgs,
}

#[derive(Args, Debug)]
pub struct FitPoseArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Pose to recover. Renders the target when no image is given and
    /// serves as ground truth for the error metrics.
    #[arg(long)]
    pub target_camera: PathBuf,
    #[arg(long)]
    pub target_image: Option<PathBuf>,
    /// Single start pose (default: `pose_starts` turns about the vertical).
    #[arg(long)]
    pub init_camera: Option<PathBuf>,
    #[command(flatten)]
    pub outputs: FitOutputs,
    #[command(flatten)]
    pub selection: SelectionArgs,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    /// Sampled attribute JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Normalize pixel weights by their per-pixel sum.
    #[arg(long)]
    pub normalized: bool,
    #[command(flatten)]
    pub selection: SelectionArgs,
}

#[derive(Args, Debug)]
pub struct RerenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub attrs: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub selection: SelectionArgs,
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be an integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match thread_count(cli.threads)? {
        Some(0) => Err(Error::Config("thread count must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Failed(format!("thread pool: {e}")))?
            .install(|| dispatch(cli, &cfg)),
        None => dispatch(cli, &cfg),
    }
}

fn dispatch(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    match &cli.command {
        Command::Render(a) => cmd_render(a, cfg),
        Command::Convert(a) => cmd_convert(a, cfg),
        Command::Bench(a) => cmd_bench(a),
        Command::Gradcheck(a) => cmd_gradcheck(a, cfg, cli.seed),
        Command::FitShape(a) => cmd_fit_shape(a, cfg, cli.seed),
        Command::FitTranslation(a) => cmd_fit_translation(a, cfg),
        Command::FitPose(a) => cmd_fit_pose(a, cfg),
        Command::ExtractTexture(a) => cmd_extract(a, cfg),
        Command::Rerender(a) => cmd_rerender(a, cfg),
    }
}

fn require_ext(path: &Path, ext: &str) -> Result<()> {
    let ok = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext));
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{}: expected a .{ext} file",
            path.display()
        )))
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::read(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ))
    }
}

/// Everything a render needs, checked before any output is written.
#[derive(Debug)]
pub struct RenderConfig {
    pub scene: PathBuf,
    pub camera: PathBuf,
    pub selection: SelectionConfig,
    pub tau: Option<f64>,
    pub png: PathBuf,
    pub png_alpha: bool,
    pub pfm_color: Option<PathBuf>,
    pub pfm_alpha: Option<PathBuf>,
    pub pfm_weights: Option<PathBuf>,
}

impl RenderConfig {
    pub fn from_args(a: &RenderArgs, cfg: &RunConfig) -> Result<Self> {
        require_file(&a.scene)?;
        require_file(&a.camera)?;
        require_ext(&a.out, "png")?;
        for p in [&a.pfm_color, &a.pfm_alpha, &a.pfm_weights]
            .into_iter()
            .flatten()
        {
            require_ext(p, "pfm")?;
        }
        Ok(RenderConfig {
            scene: a.scene.clone(),
            camera: a.camera.clone(),
            selection: a.selection.resolve(cfg)?,
            tau: a.tau.or(cfg.tau),
            png: a.out.clone(),
            png_alpha: a.png_alpha,
            pfm_color: a.pfm_color.clone(),
            pfm_alpha: a.pfm_alpha.clone(),
            pfm_weights: a.pfm_weights.clone(),
        })
    }
}

fn with_tau(scene: GaussianScene, tau: Option<f64>) -> Result<GaussianScene> {
    Ok(match tau {
        Some(t) => scene.with_tau(t)?,
        None => scene,
    })
}

fn cmd_render(a: &RenderArgs, cfg: &RunConfig) -> Result<()> {
    let rc = RenderConfig::from_args(a, cfg)?;
    let scene = with_tau(read_scene(&rc.scene)?, rc.tau)?;
    let camera = read_camera(&rc.camera)?;
    if !matches!(scene.attr_dim(), 1 | 3) {
        return Err(Error::Config(format!(
            "render writes 1- or 3-channel images, scene attributes have {} channels",
            scene.attr_dim()
        )));
    }
    let buffers = render(&scene, &camera, &rc.selection)?;
    let alpha = rc.png_alpha.then_some(&buffers.alpha);
    write_png(&rc.png, &buffers.image, alpha)?;
    if let Some(p) = &rc.pfm_color {
        write_pfm(p, &buffers.image)?;
    }
    if let Some(p) = &rc.pfm_alpha {
        write_pfm(p, &buffers.alpha)?;
    }
    if let Some(p) = &rc.pfm_weights {
        let n = camera.pixel_count();
        let sums = (0..n).map(|i| buffers.weights.weight_sum(i)).collect();
        let img = Image::from_data(
            camera.height(),
            camera.width(),
            1,
            ChannelKind::Feature,
            sums,
        )?;
        write_pfm(p, &img)?;
    }
    let (mean, max) = buffers.weights.kernels_per_pixel();
    println!(
        "rendered {} kernels at {}x{}: {mean:.2} kernels/pixel (max {max}), {} behind camera",
        scene.len(),
        camera.height(),
        camera.width(),
        buffers.behind_camera
    );
    Ok(())
}

fn convert_config(a: &ConvertArgs, cfg: &RunConfig) -> Result<ConvertConfig> {
    let d = ConvertConfig::default();
    let c = ConvertConfig {
        zeta: a.zeta.or(cfg.zeta).unwrap_or(d.zeta),
        flatten_rate: a.flatten.or(cfg.flatten_rate).unwrap_or(d.flatten_rate),
        neighbors: a.neighbors.or(cfg.neighbors).unwrap_or(d.neighbors),
    };
    c.validate()?;
    Ok(c)
}

/// Rest vertex positions and per-vertex neighbours of a mesh.
type MeshGraph = (Vec<Vec3>, Vec<Vec<usize>>);

/// Convert geometry to a scene; meshes also yield their neighbour graph.
fn geometry_scene(
    g: &Geometry,
    cc: &ConvertConfig,
    as_points: bool,
) -> Result<(GaussianScene, Option<MeshGraph>)> {
    match g {
        Geometry::Mesh(m) if !as_points => Ok((
            mesh_to_gaussians(m, cc)?,
            Some((m.vertices().to_vec(), m.neighbor_graph())),
        )),
        Geometry::Mesh(m) => {
            let cloud = PointCloud::new(m.vertices().to_vec(), m.colors().cloned())?;
            Ok((pointcloud_to_gaussians(&cloud, cc)?, None))
        }
        Geometry::Points(p) => Ok((pointcloud_to_gaussians(p, cc)?, None)),
    }
}

fn cmd_convert(a: &ConvertArgs, cfg: &RunConfig) -> Result<()> {
    let cc = convert_config(a, cfg)?;
    require_file(&a.input)?;
    require_ext(&a.out, "json")?;
    let g = read_geometry(&a.input)?;
    let (scene, _) = geometry_scene(&g, &cc, a.points)?;
    let scene = with_tau(scene, a.tau.or(cfg.tau))?;
    write_scene(&a.out, &scene)?;
    println!(
        "converted {} vertices to {} kernels",
        g.vertex_count(),
        scene.len()
    );
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    require_ext(&a.out, "json")?;
    let report = run_bench(&BenchConfig {
        kernels: a.kernels.clone(),
        sizes: a.sizes.clone(),
        repeats: a.repeats,
        compare_exhaustive: !a.no_exhaustive,
    })?;
    for r in &report.results {
        println!(
            "{:>6} kernels {:>4}x{:<4} coarse={:<5} {:>9.3} img/s  {:.2} kernels/px",
            r.kernels, r.height, r.width, r.coarse, r.images_per_second, r.kernels_per_pixel_mean
        );
    }
    write_bench_report(&a.out, &report)
}

fn scene_or_bundled(path: Option<&Path>) -> Result<GaussianScene> {
    match path {
        Some(p) => read_scene(p),
        None => parse_scene(Path::new("<bundled test_scene.json>"), TEST_SCENE),
    }
}

fn camera_or_bundled(path: Option<&Path>) -> Result<Camera> {
    match path {
        Some(p) => read_camera(p),
        None => parse_camera(Path::new("<bundled test_camera.json>"), TEST_CAMERA),
    }
}

/// Target for gradient checks: the scene with jittered centers and
/// attributes, so that the loss and its gradient are nonzero.
pub fn gradcheck_target(
    scene: &GaussianScene,
    camera: &Camera,
    cfg: &SelectionConfig,
    seed: u64,
) -> Result<(Image, Image)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = scene.clone();
    for k in 0..t.len() {
        let c = t.kernel(k).center
            + Vec3::new(
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
            );
        t.set_center(k, c)?;
        let attr: Vec<f64> = t
            .kernel(k)
            .attr
            .iter()
            .map(|v| v * rng.gen_range(0.6..1.0))
            .collect();
        t.set_attr(k, &attr)?;
    }
    let b = render(&t, camera, cfg)?;
    Ok((b.image, b.alpha))
}

fn cmd_gradcheck(a: &GradcheckArgs, cfg: &RunConfig, seed: u64) -> Result<()> {
    if let Some(p) = &a.report {
        require_ext(p, "json")?;
    }
    let scene = with_tau(scene_or_bundled(a.scene.as_deref())?, cfg.tau)?;
    let camera = camera_or_bundled(a.camera.as_deref())?;
    let sel = a.selection.resolve(cfg)?;
    let (target, target_alpha) = gradcheck_target(&scene, &camera, &sel, seed)?;
    let loss = ImageL2 {
        target: &target,
        target_alpha: Some(&target_alpha),
        image_weight: 1.0,
        alpha_weight: 1.0,
    };
    let d = GradcheckConfig::default();
    let check = GradcheckConfig {
        step: cfg.gradcheck_step.unwrap_or(d.step),
        tolerance: cfg.gradcheck_tolerance.unwrap_or(d.tolerance),
        ..d
    };
    let report = gradcheck(&scene, &camera, &sel, &loss, &ParamClass::ALL, &check)?;
    let rec = GradcheckRecord::new(&report);
    if let Some(p) = &a.report {
        crate::atomic::write_atomic(p, to_json(&rec).as_bytes())?;
    }
    for c in &rec.per_class {
        println!(
            "{:<12} checked {:>4} skipped {:>3} max rel error {:.3e}",
            c.class, c.checked, c.skipped_boundary, c.max_rel_error
        );
    }
    let verdict = if gradcheck_passed(&report) {
        "PASS"
    } else {
        "FAIL"
    };
    println!(
        "{verdict} max_rel_error={:.3e} tolerance={:.1e} checked={} skipped={}",
        rec.max_rel_error, rec.tolerance, rec.checked, rec.skipped_boundary
    );
    if verdict == "PASS" {
        Ok(())
    } else {
        Err(Error::Failed("gradient check failed".into()))
    }
}

/// A scene file (.json) or geometry (.obj/.ply) converted with default
/// converter settings.
fn load_scene_like(path: &Path, cfg: &RunConfig) -> Result<(GaussianScene, Option<MeshGraph>)> {
    require_file(path)?;
    let is_json = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let (scene, graph) = if is_json {
        (read_scene(path)?, None)
    } else {
        let d = ConvertConfig::default();
        let cc = ConvertConfig {
            zeta: cfg.zeta.unwrap_or(d.zeta),
            flatten_rate: cfg.flatten_rate.unwrap_or(d.flatten_rate),
            neighbors: cfg.neighbors.unwrap_or(d.neighbors),
        };
        cc.validate()?;
        geometry_scene(&read_geometry(path)?, &cc, false)?
    };
    Ok((with_tau(scene, cfg.tau)?, graph))
}

fn loss_spec(cfg: &RunConfig) -> Result<LossSpec> {
    let s = cfg.weights.apply(LossSpec::default());
    s.validate()?;
    Ok(s)
}

fn check_outputs(o: &FitOutputs) -> Result<()> {
    require_ext(&o.report, "json")?;
    if let Some(t) = &o.trace {
        require_ext(t, "csv")?;
    }
    Ok(())
}

fn cmd_fit_shape(a: &FitShapeArgs, cfg: &RunConfig, seed: u64) -> Result<()> {
    check_outputs(&a.outputs)?;
    if let Some(p) = &a.out_scene {
        require_ext(p, "json")?;
    }
    let sel = a.selection.resolve(cfg)?;
    let spec = loss_spec(cfg)?;
    let (target, _) = load_scene_like(&a.target, cfg)?;
    let (init, graph) = match &a.init {
        Some(p) => load_scene_like(p, cfg)?,
        None => {
            let mesh = icosphere(3, 1.0);
            let n = mesh.vertices().len();
            let gray = VertexAttributes::new(3, vec![0.5; 3 * n])?;
            let mesh = mesh.with_colors(gray)?;
            let s = with_tau(
                mesh_to_gaussians(&mesh, &ConvertConfig::default())?,
                cfg.tau,
            )?;
            (s, Some((mesh.vertices().to_vec(), mesh.neighbor_graph())))
        }
    };
    if init.attr_dim() != target.attr_dim() {
        return Err(Error::Config(format!(
            "init has {}-channel attributes but the target has {}",
            init.attr_dim(),
            target.attr_dim()
        )));
    }
    let reg = match graph {
        Some((rest, nb)) => Some(MeshRegularizer::new(&rest, nb)?),
        None if spec.edge_weight > 0.0 || spec.laplacian_weight > 0.0 => {
            return Err(Error::Config(
                "edge/laplacian weights need a mesh init (.obj/.ply) for the vertex graph".into(),
            ))
        }
        None => None,
    };
    let rig = cfg.views.clone().unwrap_or_default();
    let views = rig
        .cameras()?
        .iter()
        .map(|c| View::rendered(&target, c, &sel))
        .collect::<volsplat_core::Result<Vec<_>>>()?;
    let d = ShapeFitConfig::default();
    let fc = ShapeFitConfig {
        iters: cfg.iters.unwrap_or(d.iters),
        batch_views: cfg.batch_views.unwrap_or(d.batch_views),
        adam: cfg.adam(AdamConfig::SHAPE)?,
        spec,
        selection: sel,
        paths: cfg.paths()?,
        fit_attrs: cfg.fit_attrs.unwrap_or(d.fit_attrs),
        seed,
    };
    let report = fit_shape(&init, &views, reg.as_ref(), &fc)?;
    write_fit_report(
        &a.outputs.report,
        a.outputs.trace.as_deref(),
        "fit-shape",
        &report,
    )?;
    if let (Some(p), volsplat_core::fit::FitResult::Scene(s)) = (&a.out_scene, &report.result) {
        write_scene(p, s)?;
    }
    println!(
        "fit-shape: {} iterations, loss {:.4e} -> {:.4e}, mean IoU {:.4}",
        report.iterations(),
        report.initial_loss,
        report.final_loss,
        report.metric("mean_iou").unwrap_or(f64::NAN)
    );
    diverged(&report)
}

fn diverged(r: &volsplat_core::fit::FitReport) -> Result<()> {
    match r.diverged_at {
        Some(i) => Err(Error::Failed(format!(
            "optimisation diverged at iteration {i}; report written"
        ))),
        None => Ok(()),
    }
}

fn offsets(v: &Option<Vec<[f64; 3]>>, n: usize, what: &str) -> Result<Vec<Vec3>> {
    match v {
        None => Ok(vec![Vec3::ZERO; n]),
        Some(list) if list.len() == n => Ok(list.iter().map(|&a| Vec3::from_array(a)).collect()),
        Some(list) => Err(Error::Config(format!(
            "{what} has {} entries for {n} parts",
            list.len()
        ))),
    }
}

/// Target view from a PNG: RGBA alpha is the silhouette, otherwise
/// thresholded luminance.
fn image_view(path: &Path, camera: Camera) -> Result<View> {
    let png = read_png(path)?;
    Ok(match png.alpha {
        Some(a) => View::new(camera, png.image, a)?,
        None => View::from_image(camera, png.image)?,
    })
}

fn cmd_fit_translation(a: &FitTranslationArgs, cfg: &RunConfig) -> Result<()> {
    check_outputs(&a.outputs)?;
    let sel = a.selection.resolve(cfg)?;
    let spec = loss_spec(cfg)?;
    let parts = a
        .parts
        .iter()
        .map(|p| load_scene_like(p, cfg).map(|(s, _)| s))
        .collect::<Result<Vec<_>>>()?;
    let camera = read_camera(&a.camera)?;
    let init = offsets(&cfg.init_offsets, parts.len(), "init_offsets")?;
    let target = match &a.target_image {
        Some(p) => image_view(p, camera)?,
        None => {
            if cfg.target_offsets.is_none() {
                return Err(Error::Config(
                    "fit-translation needs --target-image or target_offsets in the config".into(),
                ));
            }
            let t = offsets(&cfg.target_offsets, parts.len(), "target_offsets")?;
            let mut scene = parts[0].translated(t[0]);
            for (p, o) in parts.iter().zip(&t).skip(1) {
                scene = scene.merged(&p.translated(*o))?;
            }
            View::rendered(&scene, &camera, &sel)?
        }
    };
    let d = TranslationFitConfig::default();
    let fc = TranslationFitConfig {
        iters: cfg.iters.unwrap_or(d.iters),
        adam: cfg.adam(AdamConfig::POSE)?,
        spec,
        selection: sel,
        paths: cfg.paths()?,
    };
    let report = fit_translation(&parts, &init, &target, &fc)?;
    write_fit_report(
        &a.outputs.report,
        a.outputs.trace.as_deref(),
        "fit-translation",
        &report,
    )?;
    println!(
        "fit-translation: {} iterations, loss {:.4e} -> {:.4e}",
        report.iterations(),
        report.initial_loss,
        report.final_loss
    );
    diverged(&report)
}

/// Camera poses seeing the scene turned by `k·2π/n` about the world
/// vertical through `pivot`.
pub fn turned_starts(camera: &Camera, pivot: Vec3, n: usize) -> Vec<(Mat3, Vec3)> {
    let r = *camera.rotation();
    let t = camera.translation();
    (0..n)
        .map(|k| {
            let q = rotation_from_axis_angle(Vec3::new(
                0.0,
                k as f64 * std::f64::consts::TAU / n as f64,
                0.0,
            ));
            // x_cam = R(Q(X − p) + p) + T
            (r * q, t + r * (pivot - q * pivot))
        })
        .collect()
}

fn cmd_fit_pose(a: &FitPoseArgs, cfg: &RunConfig) -> Result<()> {
    check_outputs(&a.outputs)?;
    let sel = a.selection.resolve(cfg)?;
    let spec = loss_spec(cfg)?;
    let scene = with_tau(read_scene(&a.scene)?, cfg.tau)?;
    let truth = read_camera(&a.target_camera)?;
    let target = match &a.target_image {
        Some(p) => image_view(p, truth.clone())?,
        None => View::rendered(&scene, &truth, &sel)?,
    };
    let starts = match &a.init_camera {
        Some(p) => {
            let c = read_camera(p)?;
            vec![(*c.rotation(), c.translation())]
        }
        None => {
            let n = cfg.pose_starts.unwrap_or(4);
            if n == 0 {
                return Err(Error::Config("pose_starts must be >= 1".into()));
            }
            let pivot = scene
                .kernels()
                .iter()
                .fold(Vec3::ZERO, |acc, k| acc + k.center)
                / scene.len().max(1) as f64;
            // Offset by half a step so that no start sits on the answer.
            let half =
                rotation_from_axis_angle(Vec3::new(0.0, std::f64::consts::PI / n as f64, 0.0));
            let shifted = truth.with_pose(
                *truth.rotation() * half,
                truth.translation() + *truth.rotation() * (pivot - half * pivot),
            )?;
            turned_starts(&shifted, pivot, n)
        }
    };
    let d = PoseFitConfig::default();
    let fc = PoseFitConfig {
        iters: cfg.iters.unwrap_or(d.iters),
        adam: cfg.adam(AdamConfig::POSE)?,
        spec,
        selection: sel,
        paths: cfg.paths()?,
    };
    let gt = (*truth.rotation(), truth.translation());
    let report = fit_pose(&scene, &target, &starts, &fc, Some(gt))?;
    write_fit_report(
        &a.outputs.report,
        a.outputs.trace.as_deref(),
        "fit-pose",
        &report,
    )?;
    println!(
        "fit-pose: {} starts, loss {:.4e} -> {:.4e}, rotation error {:.4} rad",
        starts.len(),
        report.initial_loss,
        report.final_loss,
        report.metric("rotation_error").unwrap_or(f64::NAN)
    );
    diverged(&report)
}

fn cmd_extract(a: &ExtractArgs, cfg: &RunConfig) -> Result<()> {
    require_ext(&a.out, "json")?;
    let sel = a.selection.resolve(cfg)?;
    let scene = read_scene(&a.scene)?;
    let camera = read_camera(&a.camera)?;
    let observed = read_png(&a.image)?.image;
    let weighting = if a.normalized || cfg.normalized.unwrap_or(false) {
        SampleWeighting::Normalized
    } else {
        SampleWeighting::Render
    };
    let s = sample_attributes(&observed, &scene, &camera, &sel, weighting)?;
    write_attributes(&a.out, &s)?;
    println!(
        "sampled {} kernels, {:.2}% masked",
        s.len(),
        100.0 * s.masked_fraction()
    );
    Ok(())
}

fn cmd_rerender(a: &RerenderArgs, cfg: &RunConfig) -> Result<()> {
    require_ext(&a.out, "png")?;
    let sel = a.selection.resolve(cfg)?;
    let scene = read_scene(&a.scene)?;
    let camera = read_camera(&a.camera)?;
    let attrs = read_attributes(&a.attrs)?;
    if !matches!(attrs.dim, 1 | 3) {
        return Err(Error::Config(format!(
            "rerender writes 1- or 3-channel images, attributes have {} channels",
            attrs.dim
        )));
    }
    let img = resynthesize(&attrs, &scene, &camera, &sel)?;
    write_png(&a.out, &img, None)?;
    println!("rerendered {} kernels", scene.len());
    Ok(())
}
