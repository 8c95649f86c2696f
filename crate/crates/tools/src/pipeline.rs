//! The three-stage sensing pipeline (undistort, rectify, enhance) and its
//! throughput benchmark.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tactile_core::camera::{CameraIntrinsics, RemapTable};
use tactile_core::enhance::{build_reference, EnhancementConfig, Enhancer};
use tactile_core::frame::{to_gray, PixelCoord, RasterFrame};
use tactile_core::roi::{estimate_affine, PolygonMask, Rectifier, RoiSpec, DEFAULT_ROI_SIZE};
use tactile_core::Error as CoreError;

use crate::error::{Result, ToolError};
use crate::formats::{EnhancementFile, IntrinsicsFile, RoiFile};

/// Everything needed to turn raw sensor frames into enhanced tactile
/// images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub intrinsics: IntrinsicsFile,
    /// Pinhole camera of the undistorted image; its `k` is ignored.
    pub output_intrinsics: IntrinsicsFile,
    pub roi: RoiFile,
    pub enhancement: EnhancementFile,
}

impl PipelineConfig {
    /// Undistorts into a pinhole camera with the same focal length,
    /// principal point and size as `camera`.
    pub fn new(camera: &CameraIntrinsics, roi: RoiFile, enhancement: EnhancementConfig) -> Self {
        let mut output = IntrinsicsFile::from(camera);
        output.k = [0.0; 4];
        Self { intrinsics: camera.into(), output_intrinsics: output, roi, enhancement: enhancement.into() }
    }

    /// Hex SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("pipeline config serializes");
        Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn camera(&self) -> Result<CameraIntrinsics> {
        Ok(self.intrinsics.try_into()?)
    }

    pub fn output_camera(&self) -> Result<CameraIntrinsics> {
        Ok(self.output_intrinsics.try_into()?)
    }

    pub fn roi_spec(&self) -> Result<RoiSpec> {
        let out = self.output_camera()?;
        self.roi.to_spec(out.image_size())
    }
}

/// Default sensor geometry: a 640x480 fisheye camera with roughly a 120
/// degree diagonal field of view, and a gel patch in the middle of the
/// undistorted image rectified to 400x150.
pub fn default_config() -> PipelineConfig {
    let camera = CameraIntrinsics::new(380.0, 380.0, 320.0, 240.0, [0.05, -0.01, 0.0, 0.0], 640, 480)
        .expect("default intrinsics are valid");
    let quad = [(118.0, 168.0), (522.0, 161.0), (528.0, 318.0), (112.0, 312.0)];
    let (w, h) = (DEFAULT_ROI_SIZE.0 as f64, DEFAULT_ROI_SIZE.1 as f64);
    let target = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let corr: Vec<_> = quad
        .iter()
        .zip(target)
        .map(|(&(x, y), (u, v))| (PixelCoord::new(x, y), PixelCoord::new(u, v)))
        .collect();
    let (affine, _) = estimate_affine(&corr).expect("default quad is not degenerate");
    let mask = PolygonMask::new(quad.iter().map(|&(x, y)| PixelCoord::new(x, y)).collect(), (640, 480))
        .expect("default polygon is simple");
    let (rw, rh) = DEFAULT_ROI_SIZE;
    let spec = RoiSpec { mask, transform: affine, crop: (0, 0, rw, rh) };
    PipelineConfig::new(&camera, RoiFile::from_spec(&spec), EnhancementConfig::default())
}

/// Undistortion stage alone.
pub fn undistort_stage(camera: &CameraIntrinsics, output: &CameraIntrinsics, frame: &RasterFrame) -> Result<RasterFrame> {
    Ok(tactile_core::camera::undistort_image(frame, camera, output)?)
}

/// Precomputed pipeline for one configuration and reference.
pub struct Pipeline {
    camera_size: (usize, usize),
    undistort: Arc<RemapTable>,
    rectifier: Rectifier,
    enhancer: Enhancer,
}

impl Pipeline {
    /// `references` are raw no-contact frames; they pass through the first
    /// two stages and are averaged.
    pub fn new(config: &PipelineConfig, references: &[RasterFrame]) -> Result<Self> {
        let camera = config.camera()?;
        let output = config.output_camera()?;
        let undistort = Arc::new(RemapTable::undistort(&camera, &output));
        let spec = config.roi_spec()?;
        let rectifier = Rectifier::new(&spec)?;
        let enhancement: EnhancementConfig = config.enhancement.into();
        enhancement.validate()?;
        let mut rectified = Vec::with_capacity(references.len());
        for r in references {
            check_size(r, camera.image_size())?;
            rectified.push(to_gray(&rectifier.apply(&undistort.apply(r)?)?));
        }
        let reference = build_reference(&rectified, enhancement.alpha)?;
        let enhancer = Enhancer::new(&reference, &enhancement)?;
        Ok(Self { camera_size: camera.image_size(), undistort, rectifier, enhancer })
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.camera_size
    }

    pub fn output_size(&self) -> (usize, usize) {
        self.enhancer.size()
    }

    pub fn undistort(&self, frame: &RasterFrame) -> Result<RasterFrame> {
        Ok(self.undistort.apply(frame)?)
    }

    pub fn rectify(&self, frame: &RasterFrame) -> Result<RasterFrame> {
        Ok(self.rectifier.apply(frame)?)
    }

    pub fn enhance(&self, frame: &RasterFrame) -> Result<RasterFrame> {
        Ok(self.enhancer.apply(&to_gray(frame))?)
    }

    /// Full pipeline on one raw frame.
    pub fn process(&self, raw: &RasterFrame) -> Result<RasterFrame> {
        check_size(raw, self.camera_size)?;
        self.enhance(&self.rectify(&self.undistort(raw)?)?)
    }
}

fn check_size(frame: &RasterFrame, expected: (usize, usize)) -> Result<()> {
    if frame.size() != expected {
        return Err(CoreError::Dimension(format!(
            "frame is {}x{}, camera is {}x{}",
            frame.width(),
            frame.height(),
            expected.0,
            expected.1
        ))
        .into());
    }
    Ok(())
}

pub const MIN_BENCH_FRAMES: usize = 100;
const WARMUP_FRAMES: usize = 20;
const STAGES: [&str; 3] = ["undistort", "rectify", "enhance"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageStats {
    pub name: String,
    pub mean_us: f64,
    pub p99_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub frames: usize,
    pub threads: usize,
    pub fps: f64,
    /// Wall time of the timed loop divided by the frame count.
    pub mean_frame_us: f64,
    pub p99_frame_us: f64,
    pub stages: Vec<StageStats>,
}

impl BenchReport {
    pub fn stage_sum_us(&self) -> f64 {
        self.stages.iter().map(|s| s.mean_us).sum()
    }
}

struct Buffers {
    undistorted: Vec<u8>,
    masked: Vec<u8>,
    rectified: Vec<u8>,
    enhanced: Vec<u8>,
}

impl Buffers {
    fn new(pipeline: &Pipeline) -> Result<Self> {
        let (uw, uh) = pipeline.undistort.output_size();
        let (rw, rh) = pipeline.rectifier.output_size();
        if pipeline.enhancer.size() != (rw, rh) {
            return Err(CoreError::Dimension("reference does not match the ROI size".into()).into());
        }
        Ok(Self {
            undistorted: vec![0; uw * uh],
            masked: Vec::with_capacity(uw * uh),
            rectified: vec![0; rw * rh],
            enhanced: vec![0; rw * rh * 3],
        })
    }
}

impl Pipeline {
    /// Runs the three stages on a 1-channel raw buffer into `bufs` and
    /// returns the instants bracketing each stage.
    fn run_stages(&self, src: &[u8], bufs: &mut Buffers, threads: usize) -> [Instant; 4] {
        let uw = self.undistort.output_size().0;
        let rw = self.rectifier.output_size().0;
        let t0 = Instant::now();
        run_rows(&mut bufs.undistorted, uw, threads, |d, r| self.undistort.apply_rows(src, d, r));
        let t1 = Instant::now();
        let masked = self.rectifier.mask_source(&bufs.undistorted, &mut bufs.masked);
        run_rows(&mut bufs.rectified, rw, threads, |d, r| self.rectifier.remap_rows(masked, d, r));
        let t2 = Instant::now();
        let rectified = &bufs.rectified;
        run_rows(&mut bufs.enhanced, 3 * rw, threads, |d, r| self.enhancer.apply_rows(rectified, d, r));
        [t0, t1, t2, Instant::now()]
    }
}

fn run_rows(dst: &mut [u8], row_len: usize, threads: usize, f: impl Fn(&mut [u8], usize) + Sync) {
    if threads <= 1 {
        f(dst, 0);
        return;
    }
    let rows = dst.len() / row_len;
    let rows_per_chunk = rows.div_ceil(threads * 4).max(1);
    dst.par_chunks_mut(rows_per_chunk * row_len)
        .enumerate()
        .for_each(|(i, chunk)| f(chunk, i * rows_per_chunk));
}

fn percentile_99(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let rank = ((samples.len() as f64) * 0.99).ceil() as usize;
    samples[rank.clamp(1, samples.len()) - 1]
}

/// Times the pipeline on single-channel `inputs` (cycled) for `frames`
/// frames after a short warm-up. Stages run row-parallel on `threads`
/// threads; PNG coding is not involved.
pub fn bench(pipeline: &Pipeline, inputs: &[RasterFrame], frames: usize, threads: usize) -> Result<BenchReport> {
    if frames < MIN_BENCH_FRAMES {
        return Err(CoreError::InsufficientData { needed: MIN_BENCH_FRAMES, found: frames }.into());
    }
    if threads == 0 {
        return Err(ToolError::Usage("thread count must be at least 1".into()));
    }
    if inputs.is_empty() {
        return Err(CoreError::InsufficientData { needed: 1, found: 0 }.into());
    }
    for f in inputs {
        check_size(f, pipeline.camera_size)?;
        if f.channels() != 1 {
            return Err(CoreError::Channels { expected: 1, found: f.channels() }.into());
        }
    }
    let mut bufs = Buffers::new(pipeline)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ToolError::Usage(format!("cannot start {threads} threads: {e}")))?;

    let mut stage_us = [vec![0.0; frames], vec![0.0; frames], vec![0.0; frames]];
    let mut frame_us = vec![0.0; frames];
    let step = |src: &[u8], bufs: &mut Buffers| pipeline.run_stages(src, bufs, threads);
    let wall = pool.install(|| {
        for i in 0..WARMUP_FRAMES {
            step(inputs[i % inputs.len()].data(), &mut bufs);
        }
        let start = Instant::now();
        for i in 0..frames {
            let t = step(inputs[i % inputs.len()].data(), &mut bufs);
            for s in 0..3 {
                stage_us[s][i] = (t[s + 1] - t[s]).as_secs_f64() * 1e6;
            }
            frame_us[i] = (t[3] - t[0]).as_secs_f64() * 1e6;
        }
        start.elapsed().as_secs_f64()
    });
    std::hint::black_box(&bufs.enhanced);

    let stages = STAGES
        .iter()
        .zip(stage_us.iter_mut())
        .map(|(name, us)| StageStats {
            name: (*name).into(),
            mean_us: us.iter().sum::<f64>() / frames as f64,
            p99_us: percentile_99(us),
        })
        .collect();
    Ok(BenchReport {
        frames,
        threads,
        fps: frames as f64 / wall,
        mean_frame_us: wall * 1e6 / frames as f64,
        p99_frame_us: percentile_99(&mut frame_us),
        stages,
    })
}
