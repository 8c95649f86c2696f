//! Contact-information enhancement.
//!
//! 1. Vertical attenuation `I'(x, y) = I(x, y) * exp(-alpha * y / H)` with
//!    `H` the ROI height.
//! 2. Difference channels against the no-contact reference:
//!    `dark = max(0, ref - cur)`, `bright = max(0, cur - ref)`.
//! 3. Channel-wise concatenation `(dark, bright, ref)`.
//!
//! The reference is stored after attenuation so both operands of the
//! difference see the same illumination correction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::frame::{quantize, FloatPlane, RasterFrame};

pub const DEFAULT_ALPHA: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnhancementConfig {
    pub alpha: f64,
    pub gain_dark: f64,
    pub gain_bright: f64,
}

impl Default for EnhancementConfig {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, gain_dark: 1.0, gain_bright: 1.0 }
    }
}

impl EnhancementConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self { alpha, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.gain_dark.is_finite() && self.gain_dark >= 0.0 && self.gain_bright.is_finite() && self.gain_bright >= 0.0) {
            return Err(Error::Config("gains must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// `exp(-alpha * y / height)` for every row; row 0 is exactly 1.
pub fn attenuation_weights(height: usize, alpha: f64) -> Result<Vec<f64>> {
    if height == 0 {
        return Err(Error::Dimension("attenuation needs at least one row".into()));
    }
    Ok((0..height).map(|y| attenuation_weight(y as f64, height, alpha)).collect())
}

/// `W(y) = exp(-alpha * y / height)`.
#[inline]
pub fn attenuation_weight(y: f64, height: usize, alpha: f64) -> f64 {
    libm::exp(-alpha * y / height as f64)
}

/// Multiplies each row of a 1-channel frame by its attenuation weight.
pub fn apply_attenuation(frame: &RasterFrame, alpha: f64) -> Result<FloatPlane> {
    if frame.channels() != 1 {
        return Err(Error::Channels { expected: 1, found: frame.channels() });
    }
    let weights = attenuation_weights(frame.height(), alpha)?;
    let w = frame.width();
    let values = frame
        .data()
        .chunks_exact(w.max(1))
        .zip(&weights)
        .flat_map(|(row, &k)| row.iter().map(move |&v| f64::from(v) * k))
        .collect();
    Ok(FloatPlane::from_raw(w, frame.height(), values))
}

/// Darkening and brightening relative to `reference`.
pub fn diff_channels(reference: &FloatPlane, current: &FloatPlane) -> Result<(FloatPlane, FloatPlane)> {
    if reference.size() != current.size() {
        return Err(size_error(reference.size(), current.size()));
    }
    let (w, h) = reference.size();
    let mut dark = Vec::with_capacity(w * h);
    let mut bright = Vec::with_capacity(w * h);
    for (&r, &c) in reference.values().iter().zip(current.values()) {
        let d = r - c;
        dark.push(if d > 0.0 { d } else { 0.0 });
        bright.push(if d < 0.0 { -d } else { 0.0 });
    }
    Ok((FloatPlane::from_raw(w, h, dark), FloatPlane::from_raw(w, h, bright)))
}

fn size_error(a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Dimension(format!("reference is {}x{}, current is {}x{}", a.0, a.1, b.0, b.1))
}

/// Attenuated no-contact reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFrame {
    plane: FloatPlane,
    alpha: f64,
    capture_count: usize,
}

impl ReferenceFrame {
    pub fn plane(&self) -> &FloatPlane {
        &self.plane
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn capture_count(&self) -> usize {
        self.capture_count
    }

    /// Quantized reference, as emitted in the third enhanced channel.
    pub fn to_frame(&self) -> RasterFrame {
        self.plane.to_frame()
    }

    pub fn size(&self) -> (usize, usize) {
        self.plane.size()
    }
}

/// Per-pixel mean of the attenuated no-contact frames.
pub fn build_reference(frames: &[RasterFrame], alpha: f64) -> Result<ReferenceFrame> {
    let first = frames.first().ok_or(Error::InsufficientData { needed: 1, found: 0 })?;
    let (w, h) = first.size();
    let mut sum = vec![0.0; w * h];
    for f in frames {
        if f.size() != (w, h) {
            return Err(size_error((w, h), f.size()));
        }
        let plane = apply_attenuation(f, alpha)?;
        for (s, v) in sum.iter_mut().zip(plane.values()) {
            *s += v;
        }
    }
    let n = frames.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(ReferenceFrame { plane: FloatPlane::from_raw(w, h, sum), alpha, capture_count: frames.len() })
}

/// Precomputed enhancement against one reference.
#[derive(Debug, Clone)]
pub struct Enhancer {
    width: usize,
    height: usize,
    weights: Vec<f64>,
    reference: Vec<f64>,
    reference_bytes: Vec<u8>,
    gain_dark: f64,
    gain_bright: f64,
}

impl Enhancer {
    /// Uses `config.alpha` for the current frames; the reference keeps the
    /// alpha it was built with.
    pub fn new(reference: &ReferenceFrame, config: &EnhancementConfig) -> Result<Self> {
        config.validate()?;
        let (width, height) = reference.size();
        Ok(Self {
            width,
            height,
            weights: attenuation_weights(height, config.alpha)?,
            reference: reference.plane.values().to_vec(),
            reference_bytes: reference.to_frame().into_data(),
            gain_dark: config.gain_dark,
            gain_bright: config.gain_bright,
        })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Enhances rows `[first_row, ..)` of a 1-channel buffer into an
    /// interleaved 3-channel destination covering the same rows.
    pub fn apply_rows(&self, current: &[u8], dst: &mut [u8], first_row: usize) {
        let w = self.width;
        let rows = dst.len() / (3 * w);
        for r in 0..rows {
            let y = first_row + r;
            let k = self.weights[y];
            let base = y * w;
            let src = &current[base..base + w];
            let reference = &self.reference[base..base + w];
            let ref_bytes = &self.reference_bytes[base..base + w];
            let out = &mut dst[r * 3 * w..(r + 1) * 3 * w];
            for x in 0..w {
                let d = reference[x] - f64::from(src[x]) * k;
                let (dark, bright) = if d > 0.0 { (d * self.gain_dark, 0.0) } else { (0.0, -d * self.gain_bright) };
                out[3 * x] = quantize(dark);
                out[3 * x + 1] = quantize(bright);
                out[3 * x + 2] = ref_bytes[x];
            }
        }
    }

    pub fn apply(&self, current: &RasterFrame) -> Result<RasterFrame> {
        if current.channels() != 1 {
            return Err(Error::Channels { expected: 1, found: current.channels() });
        }
        if current.size() != (self.width, self.height) {
            return Err(size_error((self.width, self.height), current.size()));
        }
        let mut out = vec![0u8; self.width * self.height * 3];
        self.apply_rows(current.data(), &mut out, 0);
        let mut frame = RasterFrame::new(self.width, self.height, 3, out)?;
        frame.timestamp = current.timestamp;
        Ok(frame)
    }
}

/// Attenuates `current`, differences it against `reference` and emits the
/// 3-channel `(dark, bright, reference)` composite.
pub fn enhance(reference: &ReferenceFrame, current: &RasterFrame, config: &EnhancementConfig) -> Result<RasterFrame> {
    Enhancer::new(reference, config)?.apply(current)
}
