use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::frame::{quantize, to_gray, RasterFrame};

pub const DEFAULT_FEATURE_DIM: usize = 64;

/// Patch-mean encoder with a fixed random mixing matrix.
///
/// The grayscale frame is split into `rows x cols` patches whose mean
/// intensities (scaled to `[-0.5, 0.5]`) are mixed by a seeded Gaussian
/// matrix into `dim` features.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyFeatureExtractor {
    rows: usize,
    cols: usize,
    dim: usize,
    mixing: Vec<f64>,
}

impl ToyFeatureExtractor {
    pub fn new(rows: usize, cols: usize, dim: usize, seed: u64) -> Result<Self> {
        if rows == 0 || cols == 0 || dim == 0 {
            return Err(Error::Config("patch grid and feature dimension must be non-zero".into()));
        }
        let patches = rows * cols;
        let scale = 1.0 / libm::sqrt(patches as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mixing = (0..dim * patches).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        Ok(Self { rows, cols, dim, mixing })
    }

    /// 8x8 grid, 64 features.
    pub fn default_with_seed(seed: u64) -> Self {
        Self::new(8, 8, DEFAULT_FEATURE_DIM, seed).expect("default grid is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn patch_means(&self, frame: &RasterFrame) -> Result<Vec<f64>> {
        let gray;
        let frame = match frame.channels() {
            1 => frame,
            3 => {
                gray = to_gray(frame);
                &gray
            }
            c => return Err(Error::Channels { expected: 1, found: c }),
        };
        let (w, h) = frame.size();
        if w < self.cols || h < self.rows {
            return Err(Error::Dimension(format!(
                "{w}x{h} frame is smaller than the {}x{} patch grid",
                self.cols, self.rows
            )));
        }
        let mut sums = alloc::vec![0.0; self.rows * self.cols];
        let mut counts = alloc::vec![0usize; self.rows * self.cols];
        let data = frame.data();
        for y in 0..h {
            let py = y * self.rows / h;
            for x in 0..w {
                let k = py * self.cols + x * self.cols / w;
                sums[k] += f64::from(data[y * w + x]);
                counts[k] += 1;
            }
        }
        Ok(sums.iter().zip(&counts).map(|(s, &n)| s / (255.0 * n as f64) - 0.5).collect())
    }

    pub fn extract(&self, frame: &RasterFrame) -> Result<Vec<f64>> {
        let means = self.patch_means(frame)?;
        Ok(self.mixing.chunks_exact(means.len()).map(|row| super::dot(row, &means)).collect())
    }
}

/// Augmentation applied in the order scale, crop, horizontal flip,
/// vertical flip.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentSpec {
    /// Zoom factor; the output of this step is `round(w * s) x round(h * s)`.
    pub scale: Option<f64>,
    /// Crop window `(width, height)` placed at a seed-dependent offset.
    pub crop: Option<(usize, usize)>,
    pub hflip: bool,
    pub vflip: bool,
}

impl AugmentSpec {
    /// Random zoom in `[0.8, 1.25]`, a crop back to `(width, height)` when
    /// zoomed in, and independent coin-flip mirrors.
    pub fn random(width: usize, height: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: f64 = libm::exp(rng.random_range(libm::log(0.8)..libm::log(1.25)));
        let zoom_in = s >= 1.0;
        Self {
            scale: Some(s),
            crop: zoom_in.then_some((width, height)),
            hflip: rng.random(),
            vflip: rng.random(),
        }
    }
}

fn scale_frame(frame: &RasterFrame, s: f64) -> Result<RasterFrame> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Config(format!("scale factor {s} must be positive")));
    }
    let (w, h, c) = (frame.width(), frame.height(), frame.channels());
    let ow = libm::round(w as f64 * s) as usize;
    let oh = libm::round(h as f64 * s) as usize;
    if ow == 0 || oh == 0 {
        return Err(Error::Geometry(format!("scale {s} collapses a {w}x{h} frame")));
    }
    let (sx, sy) = (w as f64 / ow as f64, h as f64 / oh as f64);
    let src = frame.data();
    let mut out = Vec::with_capacity(ow * oh * c);
    for y in 0..oh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = libm::floor(fy) as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for x in 0..ow {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = libm::floor(fx) as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            for ch in 0..c {
                let p = |xx: usize, yy: usize| f64::from(src[(yy * w + xx) * c + ch]);
                let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
                let bottom = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
                out.push(quantize(top * (1.0 - ty) + bottom * ty));
            }
        }
    }
    RasterFrame::new(ow, oh, c, out)
}

fn crop_frame(frame: &RasterFrame, x0: usize, y0: usize, cw: usize, ch: usize) -> Result<RasterFrame> {
    let c = frame.channels();
    let w = frame.width();
    let mut out = Vec::with_capacity(cw * ch * c);
    for y in y0..y0 + ch {
        out.extend_from_slice(&frame.data()[(y * w + x0) * c..(y * w + x0 + cw) * c]);
    }
    RasterFrame::new(cw, ch, c, out)
}

fn flip(frame: &RasterFrame, horizontal: bool) -> RasterFrame {
    let (w, h, c) = (frame.width(), frame.height(), frame.channels());
    let mut out = frame.clone();
    let src = frame.data();
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = if horizontal { (w - 1 - x, y) } else { (x, h - 1 - y) };
            let (d, s) = ((y * w + x) * c, (sy * w + sx) * c);
            dst[d..d + c].copy_from_slice(&src[s..s + c]);
        }
    }
    out
}

/// Applies `spec` to `frame`. The seed only positions the crop window.
pub fn augment(frame: &RasterFrame, spec: &AugmentSpec, seed: u64) -> Result<RasterFrame> {
    let mut out = match spec.scale {
        Some(s) => scale_frame(frame, s)?,
        None => frame.clone(),
    };
    if let Some((cw, ch)) = spec.crop {
        let (w, h) = out.size();
        if cw == 0 || ch == 0 || cw > w || ch > h {
            return Err(Error::Geometry(format!("crop {cw}x{ch} does not fit the {w}x{h} frame")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = rng.random_range(0..=w - cw);
        let y0 = rng.random_range(0..=h - ch);
        out = crop_frame(&out, x0, y0, cw, ch)?;
    }
    if spec.hflip {
        out = flip(&out, true);
    }
    if spec.vflip {
        out = flip(&out, false);
    }
    out.timestamp = frame.timestamp;
    Ok(out)
}
