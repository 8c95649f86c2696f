//! JSON, JSON-lines and CSV file formats.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tactile_core::calibrate::CalibrationView;
use tactile_core::camera::CameraIntrinsics;
use tactile_core::contrastive::{EpochMetrics, ProjectionHead, TrainedAlignment};
use tactile_core::enhance::EnhancementConfig;
use tactile_core::frame::PixelCoord;
use tactile_core::health::SohSample;
use tactile_core::roi::{AffineTransform, PolygonMask, RoiSpec};
use tactile_core::synth::GelScene;

use crate::error::{Result, ToolError};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| ToolError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ToolError::parse(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| ToolError::parse(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| ToolError::io(path, e))
}

/// Parses one JSON value per non-blank line; errors name the line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| ToolError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| ToolError::parse(path, format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, values: &[T]) -> Result<()> {
    let mut text = String::new();
    for v in values {
        text.push_str(&serde_json::to_string(v).map_err(|e| ToolError::parse(path, e))?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| ToolError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicsFile {
    pub f_x: f64,
    pub f_y: f64,
    pub c_x: f64,
    pub c_y: f64,
    pub k: [f64; 4],
    pub width: usize,
    pub height: usize,
}

impl From<&CameraIntrinsics> for IntrinsicsFile {
    fn from(c: &CameraIntrinsics) -> Self {
        Self { f_x: c.fx, f_y: c.fy, c_x: c.cx, c_y: c.cy, k: c.k, width: c.width, height: c.height }
    }
}

impl TryFrom<IntrinsicsFile> for CameraIntrinsics {
    type Error = tactile_core::Error;

    fn try_from(f: IntrinsicsFile) -> tactile_core::Result<Self> {
        CameraIntrinsics::new(f.f_x, f.f_y, f.c_x, f.c_y, f.k, f.width, f.height)
    }
}

pub fn load_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    Ok(read_json::<IntrinsicsFile>(path)?.try_into()?)
}

pub fn save_intrinsics(path: &Path, camera: &CameraIntrinsics) -> Result<()> {
    write_json(path, &IntrinsicsFile::from(camera))
}

/// One calibration view per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceRecord {
    pub board: Vec<[f64; 3]>,
    pub pixels: Vec<[f64; 2]>,
}

impl From<&CalibrationView> for CorrespondenceRecord {
    fn from(view: &CalibrationView) -> Self {
        let (board, pixels) = view.correspondences().iter().map(|(b, p)| (*b, [p.x, p.y])).unzip();
        Self { board, pixels }
    }
}

pub fn load_correspondences(path: &Path) -> Result<Vec<CalibrationView>> {
    read_jsonl::<CorrespondenceRecord>(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r.board.len() != r.pixels.len() {
                return Err(ToolError::parse(
                    path,
                    format!("view {i}: {} board points but {} pixels", r.board.len(), r.pixels.len()),
                ));
            }
            let corr = r.board.into_iter().zip(r.pixels).map(|(b, [u, v])| (b, PixelCoord::new(u, v))).collect();
            Ok(CalibrationView::new(corr)?)
        })
        .collect()
}

pub fn save_correspondences(path: &Path, views: &[CalibrationView]) -> Result<()> {
    let records: Vec<CorrespondenceRecord> = views.iter().map(Into::into).collect();
    write_jsonl(path, &records)
}

/// ROI specification. `frame_size` may be omitted, in which case the size
/// of the frame being rectified is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiFile {
    pub polygon: Vec<[f64; 2]>,
    pub affine: [[f64; 3]; 2],
    pub crop: (i64, i64, usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_size: Option<(usize, usize)>,
}

impl RoiFile {
    pub fn from_spec(spec: &RoiSpec) -> Self {
        Self {
            polygon: spec.mask.vertices().iter().map(|p| [p.x, p.y]).collect(),
            affine: spec.transform.matrix(),
            crop: spec.crop,
            frame_size: Some(spec.mask.frame_size()),
        }
    }

    pub fn to_spec(&self, frame_size: (usize, usize)) -> Result<RoiSpec> {
        let size = self.frame_size.unwrap_or(frame_size);
        let vertices = self.polygon.iter().map(|&[x, y]| PixelCoord::new(x, y)).collect();
        Ok(RoiSpec::new(PolygonMask::new(vertices, size)?, AffineTransform::new(self.affine)?, self.crop)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhancementFile {
    pub alpha: f64,
    pub gain_dark: f64,
    pub gain_bright: f64,
}

impl Default for EnhancementFile {
    fn default() -> Self {
        EnhancementConfig::default().into()
    }
}

impl From<EnhancementConfig> for EnhancementFile {
    fn from(c: EnhancementConfig) -> Self {
        Self { alpha: c.alpha, gain_dark: c.gain_dark, gain_bright: c.gain_bright }
    }
}

impl From<EnhancementFile> for EnhancementConfig {
    fn from(f: EnhancementFile) -> Self {
        Self { alpha: f.alpha, gain_dark: f.gain_dark, gain_bright: f.gain_bright }
    }
}

/// Simulator scene; omitted fields take the simulator defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneFile {
    pub width: usize,
    pub height: usize,
    pub base_brightness: u8,
    pub gradient_strength: f64,
    pub noise_sigma: f64,
}

impl Default for SceneFile {
    fn default() -> Self {
        let s = GelScene::default();
        Self {
            width: s.width,
            height: s.height,
            base_brightness: s.base_brightness,
            gradient_strength: s.gradient_strength,
            noise_sigma: s.noise_sigma,
        }
    }
}

impl From<&SceneFile> for GelScene {
    fn from(f: &SceneFile) -> Self {
        GelScene { noise_sigma: f.noise_sigma, ..GelScene::new(f.width, f.height, f.base_brightness, f.gradient_strength) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadFile {
    pub d_in: usize,
    pub d_out: usize,
    /// Row-major, `d_out` rows of `d_in` entries.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl From<&ProjectionHead> for HeadFile {
    fn from(h: &ProjectionHead) -> Self {
        Self { d_in: h.d_in(), d_out: h.d_out(), weight: h.weight().to_vec(), bias: h.bias().to_vec() }
    }
}

impl TryFrom<HeadFile> for ProjectionHead {
    type Error = tactile_core::Error;

    fn try_from(f: HeadFile) -> tactile_core::Result<Self> {
        ProjectionHead::new(f.d_in, f.d_out, f.weight, f.bias)
    }
}

/// Trained projection heads plus the seed that fixes the toy encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentFile {
    pub seed: u64,
    pub tau: f64,
    pub tactile_head: HeadFile,
    pub visual_head: HeadFile,
}

impl AlignmentFile {
    pub fn new(trained: &TrainedAlignment, seed: u64) -> Self {
        Self {
            seed,
            tau: trained.tau,
            tactile_head: (&trained.tactile_head).into(),
            visual_head: (&trained.visual_head).into(),
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| ToolError::io(path, e))
}

pub fn soh_csv(samples: &[SohSample]) -> String {
    let mut out = String::from("cycle,soh,uniformity,visibility,integrity\n");
    for s in samples {
        let m = &s.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.cycle, s.soh, m.illumination_uniformity, m.deformation_visibility, m.structural_integrity
        );
    }
    out
}

pub fn write_soh_csv(path: &Path, samples: &[SohSample]) -> Result<()> {
    write_text(path, &soh_csv(samples))
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut out = String::from("epoch,loss,retrieval_top1\n");
    for m in metrics {
        let _ = writeln!(out, "{},{},{}", m.epoch, m.loss, m.retrieval_top1);
    }
    write_text(path, &out)
}
