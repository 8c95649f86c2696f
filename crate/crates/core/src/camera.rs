//! Equidistant fisheye camera model with a four-term polynomial in the
//! incidence angle, plus precomputed remap tables for whole-image
//! undistortion.
//!
//! Forward model for a pinhole-normalized point `(x, y)`:
//!
//! ```text
//! r   = sqrt(x^2 + y^2)
//! th  = atan(r)
//! th_d = th * (1 + k1 th^2 + k2 th^4 + k3 th^6 + k4 th^8)
//! u   = fx * (th_d / r) * x + cx
//! v   = fy * (th_d / r) * y + cy
//! ```
//!
//! The inverse treats the normalized distorted radius as `th_d`, solves the
//! polynomial for `th` by Newton iteration and rescales by `tan(th) / r_d`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::frame::{PixelCoord, RasterFrame, Tap};

const NEWTON_MAX_ITERATIONS: usize = 20;
const NEWTON_TOLERANCE: f64 = 1e-10;

/// Focal lengths, principal point and fisheye distortion coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k: [f64; 4],
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        k: [f64; 4],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy, k, width, height };
        cam.validate()?;
        Ok(cam)
    }

    /// Pinhole camera (no distortion) with the principal point at the image center.
    pub fn pinhole(f: f64, width: usize, height: usize) -> Self {
        Self {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            k: [0.0; 4],
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .chain(self.k.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("intrinsics contain non-finite values".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64)
        {
            return Err(Error::Config(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// `th * (1 + k1 th^2 + ... + k4 th^8)`.
    #[inline]
    pub fn distort_angle(&self, theta: f64) -> f64 {
        let t2 = theta * theta;
        let [k1, k2, k3, k4] = self.k;
        theta * (1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4))))
    }

    fn distort_angle_derivative(&self, theta: f64) -> f64 {
        let t2 = theta * theta;
        let [k1, k2, k3, k4] = self.k;
        1.0 + t2 * (3.0 * k1 + t2 * (5.0 * k2 + t2 * (7.0 * k3 + t2 * 9.0 * k4)))
    }

    /// Inverts [`distort_angle`](Self::distort_angle) by Newton iteration.
    pub fn undistort_angle(&self, theta_d: f64) -> Result<f64> {
        let mut theta = theta_d;
        let mut residual = f64::INFINITY;
        for _ in 0..NEWTON_MAX_ITERATIONS {
            residual = self.distort_angle(theta) - theta_d;
            let slope = self.distort_angle_derivative(theta);
            if slope == 0.0 || !slope.is_finite() {
                break;
            }
            let step = residual / slope;
            theta -= step;
            if libm::fabs(step) < NEWTON_TOLERANCE {
                residual = self.distort_angle(theta) - theta_d;
                if theta >= FRAC_PI_2 {
                    return Err(Error::Domain(format!(
                        "incidence angle {theta} rad is behind the pinhole plane"
                    )));
                }
                if theta < 0.0 {
                    break;
                }
                return Ok(theta);
            }
        }
        Err(Error::Numerical {
            message: format!("angle inversion did not converge for theta_d = {theta_d}"),
            residual: libm::fabs(residual),
        })
    }

    /// Distorted normalized coordinates of a pinhole-normalized point.
    #[inline]
    pub fn distort_normalized(&self, x: f64, y: f64) -> (f64, f64) {
        let r = libm::sqrt(x * x + y * y);
        if r == 0.0 {
            return (x, y);
        }
        let scale = self.distort_angle(libm::atan(r)) / r;
        (x * scale, y * scale)
    }

    /// Projects a pinhole-normalized point (ray direction divided by z) to
    /// distorted pixel coordinates.
    #[inline]
    pub fn distort_point(&self, x: f64, y: f64) -> PixelCoord {
        let (xd, yd) = self.distort_normalized(x, y);
        PixelCoord::new(self.fx * xd + self.cx, self.fy * yd + self.cy)
    }

    /// Pinhole-normalized coordinates of a distorted pixel.
    pub fn undistort_normalized(&self, distorted: PixelCoord) -> Result<(f64, f64)> {
        let xn = (distorted.x - self.cx) / self.fx;
        let yn = (distorted.y - self.cy) / self.fy;
        let r_d = libm::sqrt(xn * xn + yn * yn);
        if r_d == 0.0 {
            return Ok((0.0, 0.0));
        }
        let theta = self.undistort_angle(r_d)?;
        let scale = libm::tan(theta) / r_d;
        Ok((xn * scale, yn * scale))
    }

    /// Maps a distorted pixel to the pixel it would occupy in a pinhole
    /// camera sharing this camera's focal lengths and principal point.
    pub fn undistort_point(&self, distorted: PixelCoord) -> Result<PixelCoord> {
        let (x, y) = self.undistort_normalized(distorted)?;
        Ok(PixelCoord::new(self.fx * x + self.cx, self.fy * y + self.cy))
    }

    /// Bit-exact key used by [`RemapCache`].
    fn key(&self) -> [u64; 10] {
        [
            self.fx.to_bits(),
            self.fy.to_bits(),
            self.cx.to_bits(),
            self.cy.to_bits(),
            self.k[0].to_bits(),
            self.k[1].to_bits(),
            self.k[2].to_bits(),
            self.k[3].to_bits(),
            self.width as u64,
            self.height as u64,
        ]
    }
}

/// Per-output-pixel bilinear taps into a source frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RemapTable {
    src_width: usize,
    src_height: usize,
    out_width: usize,
    out_height: usize,
    taps: Vec<Tap>,
}

impl RemapTable {
    /// Builds a table from a closure mapping an output pixel to its source
    /// location. `None` marks an output pixel with no source.
    pub fn from_fn(
        src_size: (usize, usize),
        out_size: (usize, usize),
        mut map: impl FnMut(f64, f64) -> Option<PixelCoord>,
    ) -> Self {
        let (sw, sh) = src_size;
        let (ow, oh) = out_size;
        let mut taps = Vec::with_capacity(ow * oh);
        for v in 0..oh {
            for u in 0..ow {
                let tap = match map(u as f64, v as f64) {
                    Some(p) if p.is_finite() => Tap::at(p.x, p.y, sw, sh),
                    _ => Tap::NONE,
                };
                taps.push(tap);
            }
        }
        Self { src_width: sw, src_height: sh, out_width: ow, out_height: oh, taps }
    }

    /// Table taking a fisheye frame to a rectilinear view. Output pixels are
    /// interpreted in the pinhole camera `output` (its `k` is ignored) and
    /// pulled from the fisheye image through the forward model of `camera`.
    pub fn undistort(camera: &CameraIntrinsics, output: &CameraIntrinsics) -> Self {
        let out = *output;
        Self::from_fn(camera.image_size(), output.image_size(), |u, v| {
            let x = (u - out.cx) / out.fx;
            let y = (v - out.cy) / out.fy;
            Some(camera.distort_point(x, y))
        })
    }

    /// Table taking a rectilinear frame seen by the pinhole camera `source`
    /// (its `k` is ignored) to the fisheye view of `camera`.
    pub fn distort(source: &CameraIntrinsics, camera: &CameraIntrinsics) -> Self {
        let src = *source;
        Self::from_fn(source.image_size(), camera.image_size(), |u, v| {
            let (x, y) = camera.undistort_normalized(PixelCoord::new(u, v)).ok()?;
            Some(PixelCoord::new(src.fx * x + src.cx, src.fy * y + src.cy))
        })
    }

    pub fn source_size(&self) -> (usize, usize) {
        (self.src_width, self.src_height)
    }

    pub fn output_size(&self) -> (usize, usize) {
        (self.out_width, self.out_height)
    }

    /// Fills output rows `[first_row, first_row + dst.len() / out_width)` of
    /// a single-channel image.
    pub fn apply_rows(&self, src: &[u8], dst: &mut [u8], first_row: usize) {
        let start = first_row * self.out_width;
        let taps = &self.taps[start..start + dst.len()];
        for (d, tap) in dst.iter_mut().zip(taps) {
            *d = tap.sample(src, self.src_width);
        }
    }

    /// Remaps a 1- or 3-channel frame.
    pub fn apply(&self, frame: &RasterFrame) -> Result<RasterFrame> {
        if frame.size() != (self.src_width, self.src_height) {
            return Err(Error::Dimension(format!(
                "frame is {}x{}, remap table expects {}x{}",
                frame.width(),
                frame.height(),
                self.src_width,
                self.src_height
            )));
        }
        let n = self.out_width * self.out_height;
        let mut out = if frame.channels() == 1 {
            let mut data = alloc::vec![0u8; n];
            self.apply_rows(frame.data(), &mut data, 0);
            RasterFrame::gray(self.out_width, self.out_height, data)?
        } else {
            let mut data = alloc::vec![0u8; n * frame.channels()];
            let mut plane = alloc::vec![0u8; n];
            for c in 0..frame.channels() {
                let src = frame.channel(c)?;
                self.apply_rows(src.data(), &mut plane, 0);
                for (i, &v) in plane.iter().enumerate() {
                    data[i * frame.channels() + c] = v;
                }
            }
            RasterFrame::new(self.out_width, self.out_height, frame.channels(), data)?
        };
        out.timestamp = frame.timestamp;
        Ok(out)
    }
}

/// Remap tables keyed by the exact bit patterns of an intrinsics pair.
#[derive(Debug, Default)]
pub struct RemapCache {
    tables: BTreeMap<([u64; 10], [u64; 10]), Arc<RemapTable>>,
}

impl RemapCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn undistort(
        &mut self,
        camera: &CameraIntrinsics,
        output: &CameraIntrinsics,
    ) -> Arc<RemapTable> {
        self.tables
            .entry((camera.key(), output.key()))
            .or_insert_with(|| Arc::new(RemapTable::undistort(camera, output)))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

/// Removes fisheye distortion from `frame`; see [`RemapTable::undistort`].
/// Output pixels whose source falls outside the frame are 0.
pub fn undistort_image(
    frame: &RasterFrame,
    camera: &CameraIntrinsics,
    output: &CameraIntrinsics,
) -> Result<RasterFrame> {
    check_size(frame, camera)?;
    RemapTable::undistort(camera, output).apply(frame)
}

/// Applies fisheye distortion to a rectilinear frame; see [`RemapTable::distort`].
pub fn distort_image(
    frame: &RasterFrame,
    source: &CameraIntrinsics,
    camera: &CameraIntrinsics,
) -> Result<RasterFrame> {
    check_size(frame, source)?;
    RemapTable::distort(source, camera).apply(frame)
}

fn check_size(frame: &RasterFrame, camera: &CameraIntrinsics) -> Result<()> {
    if frame.size() != camera.image_size() {
        return Err(Error::Dimension(format!(
            "frame is {}x{}, intrinsics expect {}x{}",
            frame.width(),
            frame.height(),
            camera.width,
            camera.height
        )));
    }
    Ok(())
}
