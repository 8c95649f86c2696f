//! The `tactile` command-line tool.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tactile_core::calibrate::{calibrate, CalibrationConfig};
use tactile_core::camera::CameraIntrinsics;
use tactile_core::contrastive::{correlated_dataset, train_alignment, AlignmentConfig, AlignmentPair};
use tactile_core::enhance::{build_reference, enhance, EnhancementConfig};
use tactile_core::episode::{Episode, EpisodeMeta, StreamSample, DEFAULT_HZ, DEFAULT_TOLERANCE_US};
use tactile_core::frame::{to_gray, RasterFrame};
use tactile_core::health::{
    calibrate_wear, default_probe, reference_wear_shape, simulate_wear_sample, LifespanTracker, SohWeights,
    DEFAULT_FAILURE_THRESHOLD,
};
use tactile_core::roi::rectify;
use tactile_core::synth::{coverage_board_poses, render_reference, synth_checkerboard_views, Board, GelScene};

use crate::error::{Result, ToolError};
use crate::formats::{
    load_correspondences, load_intrinsics, read_json, read_jsonl, save_correspondences, save_intrinsics, write_json,
    write_jsonl, write_metrics_csv, write_soh_csv, AlignmentFile, EnhancementFile, IntrinsicsFile, RoiFile, SceneFile,
};
use crate::pipeline::{bench, default_config, undistort_stage, Pipeline, PipelineConfig};
use crate::png::{read_png, write_png};
use crate::sim::{contact_samples, embed_patch, IndenterRecord};
use crate::store::write_episode;

#[derive(Debug, Parser)]
#[command(name = "tactile", version, about = "Vision-based tactile sensor toolkit", arg_required_else_help = true)]
pub struct Cli {
    /// Directory searched for configuration files given as relative paths
    /// that do not exist in the working directory.
    #[arg(long, global = true, env = "TACTILE_CONFIG_DIR", value_name = "DIR")]
    pub config_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate fisheye intrinsics from checkerboard correspondences.
    Calibrate(CalibrateArgs),
    /// Remove fisheye distortion from a frame.
    Undistort(UndistortArgs),
    /// Mask, rectify and crop the gel region of a frame.
    Roi(RoiArgs),
    /// Build the (dark, bright, reference) contact image.
    Enhance(EnhanceArgs),
    /// Undistort, rectify and enhance a raw frame in one go.
    Pipeline(PipelineArgs),
    /// Render synthetic tactile frames, truth masks and calibration data.
    Simulate(SimulateArgs),
    /// Train the tactile projection head by contrastive alignment.
    Pretrain(PretrainArgs),
    /// Compute a state-of-health lifespan curve.
    Soh(SohArgs),
    /// Pair visual, tactile and joint streams into an episode.
    Pair(PairArgs),
    /// Measure pipeline throughput.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// JSON-lines file with one view per line: {"board": [[X,Y,0],...], "pixels": [[u,v],...]}.
    #[arg(long, value_name = "FILE")]
    pub correspondences: PathBuf,
    /// Image width in pixels (required without --init).
    #[arg(long, required_unless_present = "init")]
    pub width: Option<usize>,
    /// Image height in pixels (required without --init).
    #[arg(long, required_unless_present = "init")]
    pub height: Option<usize>,
    /// Starting intrinsics; defaults to a field-of-view prior.
    #[arg(long, value_name = "FILE")]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = CalibrationConfig::default().max_iterations)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = CalibrationConfig::default().tolerance)]
    pub tolerance: f64,
    /// Diagonal field of view, degrees, used for the default start.
    #[arg(long, default_value_t = CalibrationConfig::default().fov_prior_degrees)]
    pub fov: f64,
    /// Output intrinsics JSON.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct UndistortArgs {
    #[arg(long, value_name = "FILE")]
    pub intrinsics: PathBuf,
    /// Pinhole camera of the output image; defaults to the input
    /// intrinsics without distortion.
    #[arg(long, value_name = "FILE")]
    pub output_intrinsics: Option<PathBuf>,
    #[arg(long = "in", value_name = "PNG")]
    pub input: PathBuf,
    #[arg(long, value_name = "PNG")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RoiArgs {
    /// ROI file: {"polygon": [[x,y],...], "affine": [[a,b,c],[d,e,f]], "crop": [x0,y0,w,h]}.
    #[arg(long, value_name = "FILE")]
    pub roi: PathBuf,
    #[arg(long = "in", value_name = "PNG")]
    pub input: PathBuf,
    #[arg(long, value_name = "PNG")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct EnhanceFlags {
    /// Vertical attenuation rate [default: 0.6].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Dark-channel gain [default: 1].
    #[arg(long)]
    pub gain_dark: Option<f64>,
    /// Bright-channel gain [default: 1].
    #[arg(long)]
    pub gain_bright: Option<f64>,
}

impl EnhanceFlags {
    fn apply(&self, base: EnhancementFile) -> EnhancementFile {
        EnhancementFile {
            alpha: self.alpha.unwrap_or(base.alpha),
            gain_dark: self.gain_dark.unwrap_or(base.gain_dark),
            gain_bright: self.gain_bright.unwrap_or(base.gain_bright),
        }
    }
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// No-contact reference frame(s), already rectified; several are averaged.
    #[arg(long = "ref", value_name = "PNG", required = true)]
    pub reference: Vec<PathBuf>,
    #[arg(long = "in", value_name = "PNG")]
    pub input: PathBuf,
    #[arg(long, value_name = "PNG")]
    pub out: PathBuf,
    #[command(flatten)]
    pub enhance: EnhanceFlags,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Pipeline configuration JSON; individual flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "FILE", required_unless_present = "config")]
    pub intrinsics: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub output_intrinsics: Option<PathBuf>,
    #[arg(long, value_name = "FILE", required_unless_present = "config")]
    pub roi: Option<PathBuf>,
    /// Raw no-contact reference frame(s).
    #[arg(long = "ref", value_name = "PNG", required = true)]
    pub reference: Vec<PathBuf>,
    #[arg(long = "in", value_name = "PNG")]
    pub input: PathBuf,
    #[arg(long, value_name = "PNG")]
    pub out: PathBuf,
    #[command(flatten)]
    pub enhance: EnhanceFlags,
    /// Also write the resolved configuration here.
    #[arg(long, value_name = "FILE")]
    pub save_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scene JSON {width, height, base_brightness, gradient_strength, noise_sigma}.
    #[arg(long, value_name = "FILE")]
    pub scene: Option<PathBuf>,
    /// Also write raw fisheye frames using this pipeline configuration
    /// (`default` for the built-in geometry).
    #[arg(long, value_name = "FILE")]
    pub camera_config: Option<PathBuf>,
    /// Also write checkerboard correspondences seen by the configured camera.
    #[arg(long, value_name = "FILE", requires = "camera_config")]
    pub correspondences: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub views: usize,
    /// Corner noise, pixels.
    #[arg(long, default_value_t = 0.0)]
    pub corner_noise: f64,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Train on this episode instead of a synthetic dataset.
    #[arg(long, value_name = "FILE")]
    pub episode: Option<PathBuf>,
    /// Size of the synthetic dataset.
    #[arg(long, default_value_t = 256)]
    pub pairs: usize,
    /// Side length of synthetic frames, pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = AlignmentConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = AlignmentConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = AlignmentConfig::default().learning_rate)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = AlignmentConfig::default().tau)]
    pub tau: f64,
    #[arg(long, default_value_t = AlignmentConfig::default().bank_capacity)]
    pub bank_capacity: usize,
    #[arg(long, default_value_t = AlignmentConfig::default().augmented_fraction)]
    pub augmented_fraction: f64,
    #[arg(long)]
    pub learn_tau: bool,
    #[arg(long)]
    pub train_visual_head: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trained heads JSON.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Per-epoch metrics CSV.
    #[arg(long, value_name = "FILE")]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SohArgs {
    /// JSON-lines samples {"cycle": n, "reference": "ref.png", "probe": "probe.png"};
    /// without it a simulated sensor is evaluated.
    #[arg(long, value_name = "FILE")]
    pub samples: Option<PathBuf>,
    /// Last simulated cycle.
    #[arg(long, default_value_t = 10_000)]
    pub cycles: u64,
    /// Simulated measurement cadence, cycles.
    #[arg(long, default_value_t = 100)]
    pub step: u64,
    /// Cycle at which the simulated sensor reaches the threshold.
    #[arg(long, default_value_t = 2000)]
    pub target_cycle: u64,
    /// Simulated pixel noise, gray levels.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, value_name = "FILE")]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_FAILURE_THRESHOLD)]
    pub threshold: f64,
    /// Report raw metrics instead of normalizing to the first sample.
    #[arg(long)]
    pub no_baseline: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Curve CSV (cycle, soh, uniformity, visibility, integrity).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    /// Visual stream, JSON lines {"t_us": n, "frame": "path.png"}.
    #[arg(long, value_name = "FILE", required_unless_present = "synthetic")]
    pub visual: Option<PathBuf>,
    /// Tactile stream, same format as --visual.
    #[arg(long, value_name = "FILE", required_unless_present = "synthetic")]
    pub tactile: Option<PathBuf>,
    /// Joint stream, JSON lines {"t_us": n, "joints": [7 values in -1..1]}.
    #[arg(long, value_name = "FILE", required_unless_present = "synthetic")]
    pub joints: Option<PathBuf>,
    /// Generate this many jittered 30 Hz samples per stream instead.
    #[arg(long, conflicts_with_all = ["visual", "tactile", "joints"])]
    pub synthetic: Option<usize>,
    /// Timing jitter of synthetic streams, microseconds.
    #[arg(long, default_value_t = 5000)]
    pub jitter_us: u64,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE_US)]
    pub tolerance_us: u64,
    /// Episodes root directory.
    #[arg(long, value_name = "DIR")]
    pub root: PathBuf,
    #[arg(long)]
    pub id: String,
    #[arg(long, default_value = "")]
    pub task: String,
    #[arg(long, default_value = "")]
    pub sensor: String,
    #[arg(long, default_value = "")]
    pub robot: String,
    /// Frame size, WIDTHxHEIGHT.
    #[arg(long, default_value = "640x480", value_parser = parse_size)]
    pub resolution: (usize, usize),
    #[arg(long, default_value_t = DEFAULT_HZ)]
    pub hz: u32,
    /// Creation time recorded in meta.json [default: now, RFC 3339].
    #[arg(long)]
    pub created_at: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Pipeline configuration; defaults to the built-in geometry.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub frames: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Seed of the synthetic input frames.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once('x').ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(w)?, parse(h)?))
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

struct Ctx<'a> {
    config_dir: Option<&'a Path>,
}

impl Ctx<'_> {
    /// Falls back to the configuration directory for relative paths that
    /// do not exist as given.
    fn resolve(&self, path: &Path) -> PathBuf {
        match self.config_dir {
            Some(dir) if path.is_relative() && !path.exists() => {
                let candidate = dir.join(path);
                if candidate.exists() { candidate } else { path.to_path_buf() }
            }
            _ => path.to_path_buf(),
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let ctx = Ctx { config_dir: cli.config_dir.as_deref() };
    match &cli.command {
        Command::Calibrate(a) => cmd_calibrate(&ctx, a),
        Command::Undistort(a) => cmd_undistort(&ctx, a),
        Command::Roi(a) => cmd_roi(&ctx, a),
        Command::Enhance(a) => cmd_enhance(a),
        Command::Pipeline(a) => cmd_pipeline(&ctx, a),
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Soh(a) => cmd_soh(&ctx, a),
        Command::Pair(a) => cmd_pair(a),
        Command::Bench(a) => cmd_bench(&ctx, a),
    }
}

fn cmd_calibrate(ctx: &Ctx, a: &CalibrateArgs) -> Result<()> {
    let views = load_correspondences(&ctx.resolve(&a.correspondences))?;
    let init = a.init.as_ref().map(|p| load_intrinsics(&ctx.resolve(p))).transpose()?;
    let size = match (&init, a.width, a.height) {
        (_, Some(w), Some(h)) => (w, h),
        (Some(c), _, _) => c.image_size(),
        _ => return Err(ToolError::Usage("--width and --height are required without --init".into())),
    };
    let config = CalibrationConfig { max_iterations: a.max_iterations, tolerance: a.tolerance, fov_prior_degrees: a.fov };
    let result = calibrate(&views, size, init.as_ref(), &config)?;
    save_intrinsics(&a.out, &result.intrinsics)?;
    println!(
        "{} views, rms {:.6} px after {} iterations",
        views.len(),
        result.rms_reprojection_error,
        result.iterations
    );
    Ok(())
}

fn output_camera(ctx: &Ctx, camera: &CameraIntrinsics, path: Option<&PathBuf>) -> Result<CameraIntrinsics> {
    match path {
        Some(p) => load_intrinsics(&ctx.resolve(p)),
        None => Ok(CameraIntrinsics { k: [0.0; 4], ..*camera }),
    }
}

fn cmd_undistort(ctx: &Ctx, a: &UndistortArgs) -> Result<()> {
    let camera = load_intrinsics(&ctx.resolve(&a.intrinsics))?;
    let output = output_camera(ctx, &camera, a.output_intrinsics.as_ref())?;
    let frame = read_png(&a.input)?;
    write_png(&a.out, &undistort_stage(&camera, &output, &frame)?)
}

fn cmd_roi(ctx: &Ctx, a: &RoiArgs) -> Result<()> {
    let roi: RoiFile = read_json(&ctx.resolve(&a.roi))?;
    let frame = read_png(&a.input)?;
    let spec = roi.to_spec(frame.size())?;
    write_png(&a.out, &rectify(&frame, &spec)?)
}

fn cmd_enhance(a: &EnhanceArgs) -> Result<()> {
    let config: EnhancementConfig = a.enhance.apply(EnhancementFile::default()).into();
    config.validate()?;
    let refs = a.reference.iter().map(|p| read_png(p).map(|f| to_gray(&f))).collect::<Result<Vec<_>>>()?;
    let reference = build_reference(&refs, config.alpha)?;
    let current = to_gray(&read_png(&a.input)?);
    write_png(&a.out, &enhance(&reference, &current, &config)?)
}

fn pipeline_config(ctx: &Ctx, a: &PipelineArgs) -> Result<PipelineConfig> {
    let mut config = match &a.config {
        Some(p) => read_json::<PipelineConfig>(&ctx.resolve(p))?,
        None => {
            let camera = load_intrinsics(&ctx.resolve(a.intrinsics.as_ref().expect("clap requires intrinsics")))?;
            let roi = read_json(&ctx.resolve(a.roi.as_ref().expect("clap requires roi")))?;
            PipelineConfig::new(&camera, roi, EnhancementConfig::default())
        }
    };
    if a.config.is_some() {
        if let Some(p) = &a.intrinsics {
            config.intrinsics = IntrinsicsFile::from(&load_intrinsics(&ctx.resolve(p))?);
        }
        if let Some(p) = &a.roi {
            config.roi = read_json(&ctx.resolve(p))?;
        }
    }
    if let Some(p) = &a.output_intrinsics {
        config.output_intrinsics = IntrinsicsFile::from(&load_intrinsics(&ctx.resolve(p))?);
    }
    config.enhancement = a.enhance.apply(config.enhancement);
    Ok(config)
}

fn cmd_pipeline(ctx: &Ctx, a: &PipelineArgs) -> Result<()> {
    let config = pipeline_config(ctx, a)?;
    let refs = a.reference.iter().map(|p| read_png(p)).collect::<Result<Vec<_>>>()?;
    let pipeline = Pipeline::new(&config, &refs)?;
    write_png(&a.out, &pipeline.process(&read_png(&a.input)?)?)?;
    if let Some(p) = &a.save_config {
        write_json(p, &config)?;
    }
    Ok(())
}

fn load_scene(ctx: &Ctx, path: Option<&PathBuf>) -> Result<GelScene> {
    let file = match path {
        Some(p) => read_json::<SceneFile>(&ctx.resolve(p))?,
        None => SceneFile::default(),
    };
    let scene = GelScene::from(&file);
    scene.validate()?;
    Ok(scene)
}

fn load_camera_config(ctx: &Ctx, path: &Path) -> Result<PipelineConfig> {
    if path == Path::new("default") {
        Ok(default_config())
    } else {
        read_json(&ctx.resolve(path))
    }
}

#[derive(Debug, Serialize)]
struct SimRecord {
    index: usize,
    frame: String,
    mask: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    raw: Option<String>,
    indenters: Vec<IndenterRecord>,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| ToolError::io(path, e))
}

fn mask_png(mask: &tactile_core::frame::FloatPlane) -> Result<RasterFrame> {
    let (w, h) = mask.size();
    let data = mask.values().iter().map(|&v| if v > 0.0 { 255 } else { 0 }).collect();
    Ok(RasterFrame::gray(w, h, data)?)
}

fn cmd_simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<()> {
    let scene = load_scene(ctx, a.scene.as_ref())?;
    let camera = a.camera_config.as_ref().map(|p| load_camera_config(ctx, p)).transpose()?;
    create_dir(&a.out)?;
    let reference = render_reference(&scene, a.seed)?;
    write_png(&a.out.join("reference.png"), &reference)?;
    if let Some(cfg) = &camera {
        write_png(&a.out.join("raw_reference.png"), &embed_patch(&reference, cfg)?)?;
        write_json(&a.out.join("pipeline.json"), cfg)?;
    }
    let samples = contact_samples(&scene, a.frames, a.seed)?;
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let frame = format!("frame_{i:06}.png");
        let mask = format!("mask_{i:06}.png");
        write_png(&a.out.join(&frame), &s.frame)?;
        write_png(&a.out.join(&mask), &mask_png(&s.mask)?)?;
        let raw = match &camera {
            Some(cfg) => {
                let name = format!("raw_{i:06}.png");
                write_png(&a.out.join(&name), &embed_patch(&s.frame, cfg)?)?;
                Some(name)
            }
            None => None,
        };
        records.push(SimRecord { index: i, frame, mask, raw, indenters: s.indenters.iter().map(Into::into).collect() });
    }
    write_jsonl(&a.out.join("manifest.jsonl"), &records)?;
    if let (Some(path), Some(cfg)) = (&a.correspondences, &camera) {
        let cam = cfg.camera()?;
        let board = Board::default();
        let poses = coverage_board_poses(&board, &cam, a.views, 30f64.to_radians(), 5.0, a.seed)?;
        let views = synth_checkerboard_views(&board, &cam, &poses, a.corner_noise, a.seed)?;
        save_correspondences(path, &views)?;
    }
    println!("wrote {} frames to {}", a.frames, a.out.display());
    Ok(())
}

fn episode_pairs(path: &Path) -> Result<Vec<AlignmentPair>> {
    let ep = crate::store::read_episode(path)?;
    Ok(ep.records.into_iter().map(|r| AlignmentPair { visual: r.visual, tactile: r.tactile, joints: r.joints }).collect())
}

fn cmd_pretrain(a: &PretrainArgs) -> Result<()> {
    let config = AlignmentConfig {
        tau: a.tau,
        batch_size: a.batch_size,
        bank_capacity: a.bank_capacity,
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        seed: a.seed,
        augmented_fraction: a.augmented_fraction,
        learn_tau: a.learn_tau,
        train_visual_head: a.train_visual_head,
        ..AlignmentConfig::default()
    };
    let pairs = match &a.episode {
        Some(p) => episode_pairs(p)?,
        None => correlated_dataset(a.pairs, a.size, a.seed)?,
    };
    let trained = train_alignment(&pairs, &config)?;
    for m in &trained.metrics {
        println!("epoch {:>3}  loss {:.6}  top1 {:.4}", m.epoch, m.loss, m.retrieval_top1);
    }
    write_json(&a.out, &AlignmentFile::new(&trained, a.seed))?;
    if let Some(p) = &a.metrics {
        write_metrics_csv(p, &trained.metrics)?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct SohLine {
    cycle: u64,
    reference: PathBuf,
    probe: PathBuf,
}

fn cmd_soh(ctx: &Ctx, a: &SohArgs) -> Result<()> {
    let mut tracker = LifespanTracker::new(!a.no_baseline, a.threshold, SohWeights::default())?;
    let mut curve = Vec::new();
    match &a.samples {
        Some(path) => {
            let path = ctx.resolve(path);
            let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
            for line in read_jsonl::<SohLine>(&path)? {
                let reference = to_gray(&read_png(&base.join(&line.reference))?);
                let probe = to_gray(&read_png(&base.join(&line.probe))?);
                curve.push(tracker.push(line.cycle, &reference, &probe)?);
            }
        }
        None => {
            if a.step == 0 {
                return Err(ToolError::Usage("--step must be positive".into()));
            }
            let mut scene = load_scene(ctx, a.scene.as_ref())?;
            let probe = default_probe(&scene);
            let wear = calibrate_wear(&scene, &reference_wear_shape(&scene), &probe, a.target_cycle, a.threshold)?;
            scene.noise_sigma = a.noise;
            let mut cycle = 0;
            while cycle <= a.cycles {
                let seed = a.seed.wrapping_add(cycle);
                let (reference, contact) = simulate_wear_sample(&scene, &wear, &probe, cycle, seed)?;
                curve.push(tracker.push(cycle, &reference, &contact)?);
                cycle += a.step;
            }
        }
    }
    if let Some(p) = &a.out {
        write_soh_csv(p, &curve)?;
    }
    match tracker.failure_cycle() {
        Some(c) => println!("failure cycle: {c}"),
        None => println!("failure cycle: none"),
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct FrameLine {
    t_us: u64,
    frame: PathBuf,
}

#[derive(Debug, Deserialize)]
struct JointLine {
    t_us: u64,
    joints: [f64; 7],
}

fn load_frame_stream(path: &Path) -> Result<Vec<StreamSample<RasterFrame>>> {
    let base = path.parent().unwrap_or(Path::new("."));
    read_jsonl::<FrameLine>(path)?
        .into_iter()
        .map(|l| Ok(StreamSample::new(l.t_us, read_png(&base.join(&l.frame))?)))
        .collect()
}

type Streams = (
    Vec<StreamSample<RasterFrame>>,
    Vec<StreamSample<RasterFrame>>,
    Vec<StreamSample<tactile_core::contrastive::JointVector>>,
);

/// Jittered 30 Hz streams of simulator frames scaled to `resolution`.
fn synthetic_streams(n: usize, a: &PairArgs) -> Result<Streams> {
    let (w, h) = a.resolution;
    let period = 1_000_000 / u64::from(a.hz.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let j = a.jitter_us;
    let times = |rng: &mut ChaCha8Rng| -> Vec<u64> {
        (0..n as u64).map(|i| j + i * period + rng.random_range(0..=2 * j) - j).collect()
    };
    let sort = |mut v: Vec<u64>| {
        v.sort_unstable();
        v.dedup();
        v
    };
    let (tv, tt, tj) = (sort(times(&mut rng)), sort(times(&mut rng)), sort(times(&mut rng)));
    let scene = GelScene { noise_sigma: 2.0, ..GelScene::new(w, h, 110, 0.5) };
    let samples = contact_samples(&scene, n, a.seed)?;
    let visual = tv
        .iter()
        .enumerate()
        .map(|(i, &t)| Ok(StreamSample::new(t, render_reference(&scene, a.seed.wrapping_add(i as u64))?)))
        .collect::<Result<Vec<_>>>()?;
    let tactile = tt.iter().zip(&samples).map(|(&t, s)| StreamSample::new(t, s.frame.clone())).collect();
    let joints = tj
        .iter()
        .map(|&t| {
            let q = [(); 7].map(|_| rng.random_range(-1.0..=1.0));
            Ok(StreamSample::new(t, tactile_core::contrastive::JointVector::new(q)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((visual, tactile, joints))
}

#[derive(Serialize)]
struct PairSettings {
    tolerance_us: u64,
    hz: u32,
    resolution: (usize, usize),
    sensor: String,
    robot: String,
}

fn now_rfc3339() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_default()
}

fn cmd_pair(a: &PairArgs) -> Result<()> {
    let (visual, tactile, joints) = match a.synthetic {
        Some(n) => synthetic_streams(n, a)?,
        None => {
            let (v, t, j) = (a.visual.as_ref(), a.tactile.as_ref(), a.joints.as_ref());
            let (Some(v), Some(t), Some(j)) = (v, t, j) else {
                return Err(ToolError::Usage("--visual, --tactile and --joints are required".into()));
            };
            let joints = read_jsonl::<JointLine>(j)?
                .into_iter()
                .map(|l| Ok(StreamSample::new(l.t_us, tactile_core::contrastive::JointVector::new(l.joints)?)))
                .collect::<Result<Vec<_>>>()?;
            (load_frame_stream(v)?, load_frame_stream(t)?, joints)
        }
    };
    let settings = PairSettings {
        tolerance_us: a.tolerance_us,
        hz: a.hz,
        resolution: a.resolution,
        sensor: a.sensor.clone(),
        robot: a.robot.clone(),
    };
    let hash = Sha256::digest(serde_json::to_vec(&settings).expect("settings serialize"));
    let meta = EpisodeMeta {
        episode_id: a.id.clone(),
        task: a.task.clone(),
        hz: a.hz,
        resolution: a.resolution,
        sensor: a.sensor.clone(),
        robot: a.robot.clone(),
        created_at: a.created_at.clone().unwrap_or_else(now_rfc3339),
        config_hash: hash.iter().map(|b| format!("{b:02x}")).collect(),
        tolerance_us: a.tolerance_us,
    };
    let (visual_n, tactile_n, joints_n) = (visual.len(), tactile.len(), joints.len());
    let (episode, dropped): (Episode, _) = Episode::assemble(meta, visual, tactile, joints)?;
    let manifest = write_episode(&episode, &a.root)?;
    println!(
        "paired {} of {visual_n} visual frames ({tactile_n} tactile, {joints_n} joint samples); dropped visual {} tactile {} joints {}",
        episode.records.len(),
        dropped.visual,
        dropped.tactile,
        dropped.joints
    );
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_bench(ctx: &Ctx, a: &BenchArgs) -> Result<()> {
    let config = match &a.config {
        Some(p) => load_camera_config(ctx, p)?,
        None => default_config(),
    };
    let (inputs, reference) = bench_inputs(&config, a.seed)?;
    let pipeline = Pipeline::new(&config, std::slice::from_ref(&reference))?;
    let report = bench(&pipeline, &inputs, a.frames, a.threads)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        println!("{} frames, {} thread(s): {:.1} fps", report.frames, report.threads, report.fps);
        for s in &report.stages {
            println!("  {:<10} mean {:>9.1} us  p99 {:>9.1} us", s.name, s.mean_us, s.p99_us);
        }
        println!(
            "  {:<10} mean {:>9.1} us  p99 {:>9.1} us  (stage sum {:.1} us)",
            "frame",
            report.mean_frame_us,
            report.p99_frame_us,
            report.stage_sum_us()
        );
    }
    Ok(())
}

/// Eight raw contact frames and the raw reference, rendered through the
/// configured camera.
pub fn bench_inputs(config: &PipelineConfig, seed: u64) -> Result<(Vec<RasterFrame>, RasterFrame)> {
    let (_, _, w, h) = config.roi.crop;
    let scene = GelScene { noise_sigma: 1.0, ..GelScene::new(w, h, 120, 0.8) };
    let reference = embed_patch(&render_reference(&scene, seed)?, config)?;
    let inputs = contact_samples(&scene, 8, seed)?
        .iter()
        .map(|s| embed_patch(&s.frame, config))
        .collect::<Result<Vec<_>>>()?;
    Ok((inputs, reference))
}
