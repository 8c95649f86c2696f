//! Raster frames, real-valued planes and the resampling kernel shared by
//! every image stage.
//!
//! Pixel origin is the top-left corner, `x` grows rightward and `y` grows
//! downward. Intermediate arithmetic stays in floating point; values are
//! quantized to 8 bits only at stage outputs with [`quantize`].

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A pixel-space coordinate. `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
}

impl PixelCoord {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// An 8-bit, row-major, channel-interleaved image with 1 or 3 channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterFrame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
    /// Capture time in microseconds since the epoch, when known.
    pub timestamp: Option<u64>,
}

impl RasterFrame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Channels { expected: 1, found: channels });
        }
        if data.len() != width * height * channels {
            return Err(Error::Dimension(alloc::format!(
                "buffer holds {} samples, {width}x{height}x{channels} needs {}",
                data.len(),
                width * height * channels
            )));
        }
        Ok(Self { width, height, channels, data, timestamp: None })
    }

    /// A frame with every sample set to `value`.
    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn with_timestamp(mut self, t_us: u64) -> Self {
        self.timestamp = Some(t_us);
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Extracts one channel as its own 1-channel frame.
    pub fn channel(&self, c: usize) -> Result<RasterFrame> {
        if c >= self.channels {
            return Err(Error::Channels { expected: c + 1, found: self.channels });
        }
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        let mut out = RasterFrame::gray(self.width, self.height, data)?;
        out.timestamp = self.timestamp;
        Ok(out)
    }

    /// Converts to a real-valued plane. The frame must be single-channel.
    pub fn to_plane(&self) -> Result<FloatPlane> {
        if self.channels != 1 {
            return Err(Error::Channels { expected: 1, found: self.channels });
        }
        Ok(FloatPlane {
            width: self.width,
            height: self.height,
            values: self.data.iter().map(|&v| f64::from(v)).collect(),
        })
    }
}

/// Real-valued single-channel plane used between stages.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatPlane {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl FloatPlane {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Dimension(alloc::format!(
                "plane holds {} values, {width}x{height} needs {}",
                values.len(),
                width * height
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("plane contains non-finite values".into()));
        }
        Ok(Self { width, height, values })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![0.0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.values[y * self.width..(y + 1) * self.width]
    }

    /// Quantizes into a 1-channel 8-bit frame.
    pub fn to_frame(&self) -> RasterFrame {
        RasterFrame {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.values.iter().map(|&v| quantize(v)).collect(),
            timestamp: None,
        }
    }

    pub(crate) fn from_raw(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        Self { width, height, values }
    }
}

/// Round half away from zero, then clamp to `[0, 255]`.
#[inline]
pub fn quantize(v: f64) -> u8 {
    let r = libm::round(v);
    if r <= 0.0 {
        0
    } else if r >= 255.0 {
        255
    } else {
        r as u8
    }
}

/// Luma conversion with weights (0.299, 0.587, 0.114). 1-channel frames
/// pass through unchanged.
pub fn to_gray(frame: &RasterFrame) -> RasterFrame {
    if frame.channels == 1 {
        return frame.clone();
    }
    let data = frame
        .data
        .chunks_exact(3)
        .map(|p| {
            quantize(0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
        })
        .collect();
    RasterFrame {
        width: frame.width,
        height: frame.height,
        channels: 1,
        data,
        timestamp: frame.timestamp,
    }
}

/// Bilinear interpolation at `at`, one value per channel.
///
/// `at` must satisfy `0 <= x <= width - 1` and `0 <= y <= height - 1`.
pub fn bilinear_sample(frame: &RasterFrame, at: PixelCoord) -> Result<Vec<f64>> {
    let (w, h) = (frame.width, frame.height);
    let inside = at.is_finite()
        && w > 0
        && h > 0
        && at.x >= 0.0
        && at.y >= 0.0
        && at.x <= (w - 1) as f64
        && at.y <= (h - 1) as f64;
    if !inside {
        return Err(Error::OutOfRange { x: at.x, y: at.y, width: w, height: h });
    }
    let x0 = libm::floor(at.x) as usize;
    let y0 = libm::floor(at.y) as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = at.x - x0 as f64;
    let fy = at.y - y0 as f64;
    let c = frame.channels;
    let px = |x: usize, y: usize, ch: usize| f64::from(frame.data[(y * w + x) * c + ch]);
    Ok((0..c)
        .map(|ch| {
            let top = px(x0, y0, ch) * (1.0 - fx) + px(x1, y0, ch) * fx;
            let bottom = px(x0, y1, ch) * (1.0 - fx) + px(x1, y1, ch) * fx;
            top * (1.0 - fy) + bottom * fy
        })
        .collect())
}

/// Precomputed bilinear tap: top-left source index and fixed-point weights.
///
/// Horizontal and vertical fractions are stored with 10 fractional bits. Taps whose source lies outside the frame produce 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Tap {
    pub index: u32,
    pub fx: u16,
    pub fy: u16,
}

pub(crate) const TAP_NONE: u32 = u32::MAX;
pub(crate) const TAP_ONE: u32 = 1 << 10;

impl Tap {
    pub const NONE: Tap = Tap { index: TAP_NONE, fx: 0, fy: 0 };

    /// Builds a tap for sampling at (x, y) in a `w`x`h` frame, or `NONE` if
    /// the location is outside `[0, w-1] x [0, h-1]`.
    pub fn at(x: f64, y: f64, w: usize, h: usize) -> Tap {
        if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
            return Tap::NONE;
        }
        let mut x0 = libm::floor(x) as usize;
        let mut y0 = libm::floor(y) as usize;
        let mut fx = x - x0 as f64;
        let mut fy = y - y0 as f64;
        // Keep the 2x2 footprint inside the frame at the right/bottom edges.
        if x0 + 1 >= w && w > 1 {
            x0 = w - 2;
            fx = 1.0;
        }
        if y0 + 1 >= h && h > 1 {
            y0 = h - 2;
            fy = 1.0;
        }
        Tap {
            index: (y0 * w + x0) as u32,
            fx: libm::round(fx * TAP_ONE as f64) as u16,
            fy: libm::round(fy * TAP_ONE as f64) as u16,
        }
    }

    /// Samples a single-channel buffer of row stride `w`.
    #[inline(always)]
    pub fn sample(&self, src: &[u8], w: usize) -> u8 {
        if self.index == TAP_NONE {
            return 0;
        }
        let i = self.index as usize;
        let fx = self.fx as u32;
        let fy = self.fy as u32;
        let p00 = src[i] as u32;
        let p01 = src.get(i + 1).copied().unwrap_or(0) as u32;
        let p10 = src.get(i + w).copied().unwrap_or(0) as u32;
        let p11 = src.get(i + w + 1).copied().unwrap_or(0) as u32;
        let top = p00 * (TAP_ONE - fx) + p01 * fx;
        let bottom = p10 * (TAP_ONE - fx) + p11 * fx;
        let v = top * (TAP_ONE - fy) + bottom * fy;
        ((v + (1 << 19)) >> 20) as u8
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_of_equal_channels() {
        let f = RasterFrame::filled(4, 3, 3, 100).unwrap();
        let g = to_gray(&f);
        assert_eq!(g.channels(), 1);
        assert!(g.data().iter().all(|&v| v == 100));
    }

    #[test]
    fn gray_passthrough_and_red_weight() {
        let f = RasterFrame::gray(2, 1, vec![7, 9]).unwrap();
        assert_eq!(to_gray(&f), f);
        let red = RasterFrame::new(1, 1, 3, vec![255, 0, 0]).unwrap();
        // 0.299 * 255 = 76.245
        assert_eq!(to_gray(&red).data(), &[76]);
    }

    #[test]
    fn frame_rejects_bad_shapes() {
        assert!(matches!(RasterFrame::new(2, 2, 2, vec![0; 8]), Err(Error::Channels { .. })));
        assert!(matches!(RasterFrame::new(2, 2, 1, vec![0; 3]), Err(Error::Dimension(_))));
    }

    #[test]
    fn bilinear_examples() {
        let f = RasterFrame::gray(2, 1, vec![0, 100]).unwrap();
        assert_eq!(bilinear_sample(&f, PixelCoord::new(1.0, 0.0)).unwrap(), vec![100.0]);
        assert_eq!(bilinear_sample(&f, PixelCoord::new(0.5, 0.0)).unwrap(), vec![50.0]);
        assert_eq!(bilinear_sample(&f, PixelCoord::new(0.25, 0.0)).unwrap(), vec![25.0]);
        assert!(matches!(
            bilinear_sample(&f, PixelCoord::new(1.5, 0.0)),
            Err(Error::OutOfRange { .. })
        ));
        assert!(bilinear_sample(&f, PixelCoord::new(0.0, -0.1)).is_err());
    }

    #[test]
    fn quantize_rounds_half_away_and_clamps() {
        assert_eq!(quantize(0.5), 1);
        assert_eq!(quantize(1.49), 1);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(300.0), 255);
        assert_eq!(quantize(254.5), 255);
    }

    #[test]
    fn tap_matches_float_bilinear_within_one_level() {
        let data: Vec<u8> = (0..64u32).map(|i| ((i * 37) % 251) as u8).collect();
        let f = RasterFrame::gray(8, 8, data).unwrap();
        for k in 0..200 {
            let x = (k as f64 * 0.0357) % 7.0;
            let y = (k as f64 * 0.0613) % 7.0;
            let exact = bilinear_sample(&f, PixelCoord::new(x, y)).unwrap()[0];
            let fixed = Tap::at(x, y, 8, 8).sample(f.data(), 8);
            assert!((f64::from(fixed) - exact).abs() <= 1.0, "{x} {y} {exact} {fixed}");
        }
        assert_eq!(Tap::at(7.0, 7.0, 8, 8).sample(f.data(), 8), f.get(7, 7, 0));
        assert_eq!(Tap::at(-0.5, 2.0, 8, 8), Tap::NONE);
    }
}
