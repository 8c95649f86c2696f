//! Synthetic tactile frames standing in for the physical sensor.
//!
//! The gel is modelled as a flat surface lit from the bottom edge: row `y`
//! of an `H`-row frame has brightness `base * (1 + g * y / H)`. Contacts dim
//! (or brighten) the surface multiplicatively inside each indenter disc.
//! Wear raises the illumination gradient, lowers contact contrast and burns
//! scratch lines into every later render.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::calibrate::{project, CalibrationView, ViewExtrinsics};
use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::frame::{quantize, FloatPlane, PixelCoord, RasterFrame};

/// Illumination and noise model of an untouched gel.
#[derive(Debug, Clone, PartialEq)]
pub struct GelScene {
    pub width: usize,
    pub height: usize,
    pub base_brightness: u8,
    /// Bottom rows are brighter by a factor up to `1 + gradient_strength`.
    pub gradient_strength: f64,
    /// Standard deviation of additive Gaussian noise, gray levels.
    pub noise_sigma: f64,
    /// Multiplier on indenter depth; 1 for a fresh gel.
    pub contrast: f64,
    /// Scratch lines burned into the surface.
    pub scratches: Vec<Scratch>,
}

impl Default for GelScene {
    /// 400x150 patch (80x30 mm at 5 px/mm) with a gradient that an
    /// attenuation rate of 0.6 flattens to within 5%.
    fn default() -> Self {
        Self {
            width: 400,
            height: 150,
            base_brightness: 120,
            gradient_strength: 0.8,
            noise_sigma: 0.0,
            contrast: 1.0,
            scratches: Vec::new(),
        }
    }
}

impl GelScene {
    pub fn new(width: usize, height: usize, base_brightness: u8, gradient_strength: f64) -> Self {
        Self { width, height, base_brightness, gradient_strength, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Dimension("scene must have non-zero size".into()));
        }
        if !(0.0..1.0).contains(&self.gradient_strength) {
            return Err(Error::Config(format!(
                "gradient strength {} outside [0, 1)",
                self.gradient_strength
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise sigma must be finite and non-negative".into()));
        }
        if !(self.contrast >= 0.0 && self.contrast.is_finite()) {
            return Err(Error::Config("contrast must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Noise-free brightness of the untouched gel.
    pub fn illumination(&self) -> FloatPlane {
        let (w, h) = (self.width, self.height);
        let mut values = Vec::with_capacity(w * h);
        for y in 0..h {
            let row = f64::from(self.base_brightness) * (1.0 + self.gradient_strength * y as f64 / h as f64);
            values.extend(core::iter::repeat_n(row, w));
        }
        for s in &self.scratches {
            s.burn(&mut values, w, h);
        }
        FloatPlane::from_raw(w, h, values)
    }
}

/// A dark line segment on the gel surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scratch {
    pub from: PixelCoord,
    pub to: PixelCoord,
    /// Fractional brightness loss along the line, in `[0, 1]`.
    pub depth: f64,
}

impl Scratch {
    const HALF_WIDTH: f64 = 1.0;

    fn burn(&self, values: &mut [f64], w: usize, h: usize) {
        let (ax, ay, bx, by) = (self.from.x, self.from.y, self.to.x, self.to.y);
        let x0 = libm::floor(ax.min(bx) - Self::HALF_WIDTH).max(0.0) as usize;
        let x1 = (libm::ceil(ax.max(bx) + Self::HALF_WIDTH).max(0.0) as usize).min(w.saturating_sub(1));
        let y0 = libm::floor(ay.min(by) - Self::HALF_WIDTH).max(0.0) as usize;
        let y1 = (libm::ceil(ay.max(by) + Self::HALF_WIDTH).max(0.0) as usize).min(h.saturating_sub(1));
        let (dx, dy) = (bx - ax, by - ay);
        let len2 = dx * dx + dy * dy;
        let factor = 1.0 - self.depth.clamp(0.0, 1.0);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (px, py) = (x as f64 - ax, y as f64 - ay);
                let t = if len2 > 0.0 { ((px * dx + py * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
                let (ex, ey) = (px - t * dx, py - t * dy);
                if ex * ex + ey * ey <= Self::HALF_WIDTH * Self::HALF_WIDTH {
                    values[y * w + x] *= factor;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// `exp(-2 (r/R)^2)`, i.e. a Gaussian with sigma `R/2` truncated at `R`.
    Gaussian,
    /// `sqrt(1 - (r/R)^2)`.
    SphericalCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Polarity {
    #[default]
    Darken,
    Brighten,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Indenter {
    pub center: PixelCoord,
    pub radius: f64,
    /// Fractional brightness change at the center, in `(0, 1]`.
    pub depth: f64,
    pub profile: Profile,
    pub polarity: Polarity,
}

impl Indenter {
    pub fn new(center: PixelCoord, radius: f64, depth: f64, profile: Profile) -> Self {
        Self { center, radius, depth, profile, polarity: Polarity::Darken }
    }

    /// Profile value at distance `r` from the center; 0 outside the disc.
    pub fn profile_at(&self, r: f64) -> f64 {
        if r >= self.radius {
            return 0.0;
        }
        let s = r / self.radius;
        match self.profile {
            Profile::Gaussian => libm::exp(-2.0 * s * s),
            Profile::SphericalCap => libm::sqrt(1.0 - s * s),
        }
    }
}

fn noise_field(len: usize, sigma: f64, seed: u64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; len];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// No-contact frame of `scene`, deterministic for `seed`.
pub fn render_reference(scene: &GelScene, seed: u64) -> Result<RasterFrame> {
    scene.validate()?;
    let light = scene.illumination();
    let noise = noise_field(light.values().len(), scene.noise_sigma, seed);
    let data = light.values().iter().zip(&noise).map(|(v, n)| quantize(v + n)).collect();
    RasterFrame::gray(scene.width, scene.height, data)
}

/// Frame with `indenters` pressed into the gel plus the ground-truth
/// contact mask (1 where the brightness changes by more than one gray
/// level). Uses the same noise realization as [`render_reference`].
pub fn render_contact(
    scene: &GelScene,
    indenters: &[Indenter],
    seed: u64,
) -> Result<(RasterFrame, FloatPlane)> {
    scene.validate()?;
    let (w, h) = (scene.width, scene.height);
    for (i, ind) in indenters.iter().enumerate() {
        let c = ind.center;
        if !(c.x >= 0.0 && c.y >= 0.0 && c.x < w as f64 && c.y < h as f64) {
            return Err(Error::Geometry(format!("indenter {i} center ({}, {}) outside frame", c.x, c.y)));
        }
        if !(ind.radius > 0.0) || !(ind.depth > 0.0 && ind.depth <= 1.0) {
            return Err(Error::Config(format!("indenter {i} needs radius > 0 and depth in (0, 1]")));
        }
    }
    let light = scene.illumination();
    let mut pressed = light.values().to_vec();
    for ind in indenters {
        let x0 = libm::floor(ind.center.x - ind.radius).max(0.0) as usize;
        let x1 = (libm::ceil(ind.center.x + ind.radius) as usize).min(w - 1);
        let y0 = libm::floor(ind.center.y - ind.radius).max(0.0) as usize;
        let y1 = (libm::ceil(ind.center.y + ind.radius) as usize).min(h - 1);
        let depth = (ind.depth * scene.contrast).min(1.0);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = x as f64 - ind.center.x;
                let dy = y as f64 - ind.center.y;
                let p = ind.profile_at(libm::sqrt(dx * dx + dy * dy));
                if p > 0.0 {
                    let factor = match ind.polarity {
                        Polarity::Darken => 1.0 - depth * p,
                        Polarity::Brighten => 1.0 + depth * p,
                    };
                    pressed[y * w + x] *= factor;
                }
            }
        }
    }
    let noise = noise_field(pressed.len(), scene.noise_sigma, seed);
    let data = pressed.iter().zip(&noise).map(|(v, n)| quantize(v + n)).collect();
    let mask = light
        .values()
        .iter()
        .zip(&pressed)
        .map(|(a, b)| if libm::fabs(a - b) > 1.0 { 1.0 } else { 0.0 })
        .collect();
    Ok((RasterFrame::gray(w, h, data)?, FloatPlane::from_raw(w, h, mask)))
}

/// Inner-corner grid of a planar checkerboard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Board {
    pub rows: usize,
    pub cols: usize,
    /// Square side, millimeters.
    pub square: f64,
}

impl Default for Board {
    fn default() -> Self {
        Self { rows: 7, cols: 10, square: 15.0 }
    }
}

impl Board {
    /// Corner positions in board coordinates, row-major.
    pub fn corners(&self) -> Vec<[f64; 3]> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| [c as f64 * self.square, r as f64 * self.square, 0.0]))
            .collect()
    }

    pub fn center(&self) -> [f64; 3] {
        [
            (self.cols - 1) as f64 * self.square / 2.0,
            (self.rows - 1) as f64 * self.square / 2.0,
            0.0,
        ]
    }
}

/// Projects the board corners for each pose and adds i.i.d. Gaussian pixel
/// noise. Fails naming the first view whose corners leave the image.
pub fn synth_checkerboard_views(
    board: &Board,
    camera: &CameraIntrinsics,
    poses: &[ViewExtrinsics],
    corner_noise_sigma: f64,
    seed: u64,
) -> Result<Vec<CalibrationView>> {
    let noise = Normal::new(0.0, corner_noise_sigma.max(0.0))
        .map_err(|_| Error::Config("invalid corner noise sigma".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corners = board.corners();
    let (w, h) = (camera.width as f64, camera.height as f64);
    let mut views = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let mut corr = Vec::with_capacity(corners.len());
        for b in &corners {
            let p = project(camera, pose, *b);
            if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= w - 1.0 && p.y <= h - 1.0) {
                return Err(Error::Geometry(format!(
                    "view {i}: corner ({}, {}) projects outside the image",
                    b[0], b[1]
                )));
            }
            let (nx, ny) = if corner_noise_sigma > 0.0 {
                (noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            corr.push((*b, PixelCoord::new(p.x + nx, p.y + ny)));
        }
        views.push(CalibrationView::new(corr)?);
    }
    Ok(views)
}

/// Random board poses whose corners all land at least `margin` pixels
/// inside the image: board center on a random viewing ray, distance in
/// `distance_mm`, tilt up to `max_tilt` radians and arbitrary in-plane
/// rotation.
pub fn random_board_poses(
    board: &Board,
    camera: &CameraIntrinsics,
    count: usize,
    distance_mm: (f64, f64),
    max_tilt: f64,
    margin: f64,
    seed: u64,
) -> Result<Vec<ViewExtrinsics>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corners = board.corners();
    let center = Vector3::from(board.center());
    let (w, h) = (camera.width as f64, camera.height as f64);
    let mut poses = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while poses.len() < count {
        attempts += 1;
        if attempts > 10_000 * count.max(1) {
            return Err(Error::Geometry("could not place the board inside the image".into()));
        }
        let target = PixelCoord::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
        let Ok((rx, ry)) = camera.undistort_normalized(target) else { continue };
        let dist = rng.random_range(distance_mm.0..=distance_mm.1);
        let ray = Vector3::new(rx, ry, 1.0).normalize() * dist;
        let spin = Rotation3::from_axis_angle(&Vector3::z_axis(), rng.random_range(-PI..PI));
        let axis_angle = rng.random_range(0.0..2.0 * PI);
        let axis = Unit::new_normalize(Vector3::new(libm::cos(axis_angle), libm::sin(axis_angle), 0.0));
        let tilt = Rotation3::from_axis_angle(&axis, rng.random_range(0.0..=max_tilt));
        let r = tilt * spin;
        let t = ray - r * center;
        let scaled = r.scaled_axis();
        let pose = ViewExtrinsics { rotation: [scaled.x, scaled.y, scaled.z], translation: [t.x, t.y, t.z] };
        let inside = corners.iter().all(|b| {
            let p = project(camera, &pose, *b);
            p.x >= margin && p.y >= margin && p.x <= w - 1.0 - margin && p.y <= h - 1.0 - margin
        });
        if inside {
            poses.push(pose);
        }
    }
    Ok(poses)
}

/// Board poses spread over the field of view: view `i` aims the board
/// center at a jittered cell of a near-square grid over the image, picks a
/// random tilt up to `max_tilt` and a random in-plane spin, then moves the
/// board to the closest distance (plus up to 10%) at which every corner is
/// at least `margin` pixels inside the image. Close, off-center boards
/// sample large incidence angles, which the distortion terms need.
pub fn coverage_board_poses(
    board: &Board,
    camera: &CameraIntrinsics,
    count: usize,
    max_tilt: f64,
    margin: f64,
    seed: u64,
) -> Result<Vec<ViewExtrinsics>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corners = board.corners();
    let center = Vector3::from(board.center());
    let (w, h) = (camera.width as f64, camera.height as f64);
    let grid_cols = libm::ceil(libm::sqrt(count as f64 * w / h)).max(1.0) as usize;
    let grid_rows = count.div_ceil(grid_cols).max(1);
    let fits = |pose: &ViewExtrinsics| {
        corners.iter().all(|b| {
            let p = project(camera, pose, *b);
            p.x >= margin && p.y >= margin && p.x <= w - 1.0 - margin && p.y <= h - 1.0 - margin
        })
    };
    let mut poses = Vec::with_capacity(count);
    for i in 0..count {
        let (gr, gc) = (i / grid_cols, i % grid_cols);
        let mut placed = None;
        for _ in 0..1000 {
            let u = (gc as f64 + rng.random_range(0.0..1.0)) / grid_cols as f64 * w;
            let v = (gr as f64 + rng.random_range(0.0..1.0)) / grid_rows as f64 * h;
            let Ok((rx, ry)) = camera.undistort_normalized(PixelCoord::new(u, v)) else { continue };
            let dir = Vector3::new(rx, ry, 1.0).normalize();
            let spin = Rotation3::from_axis_angle(&Vector3::z_axis(), rng.random_range(-PI..PI));
            let axis_angle = rng.random_range(0.0..2.0 * PI);
            let axis = Unit::new_normalize(Vector3::new(libm::cos(axis_angle), libm::sin(axis_angle), 0.0));
            let r = Rotation3::from_axis_angle(&axis, rng.random_range(0.0..=max_tilt)) * spin;
            let pose_at = |dist: f64| {
                let t = dir * dist - r * center;
                let a = r.scaled_axis();
                ViewExtrinsics { rotation: [a.x, a.y, a.z], translation: [t.x, t.y, t.z] }
            };
            let (mut lo, mut hi) = (10.0, 2000.0);
            if !fits(&pose_at(hi)) {
                continue;
            }
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                if fits(&pose_at(mid)) { hi = mid } else { lo = mid }
            }
            let pose = pose_at(hi * (1.0 + rng.random_range(0.0..0.1)));
            if fits(&pose) {
                placed = Some(pose);
                break;
            }
        }
        poses.push(placed.ok_or_else(|| Error::Geometry(format!("view {i}: no pose fits the image")))?);
    }
    Ok(poses)
}

/// Renders a checkerboard as seen by a rectilinear camera (`camera.k` is
/// ignored), supersampled `ss x ss` per pixel. Squares are 40/215 gray, the
/// area beyond the board 128.
pub fn render_checkerboard(
    board: &Board,
    camera: &CameraIntrinsics,
    pose: &ViewExtrinsics,
    ss: usize,
) -> RasterFrame {
    let r = Rotation3::from_scaled_axis(Vector3::from(pose.rotation));
    let t = Vector3::from(pose.translation);
    let normal = r * Vector3::z();
    let plane_d = normal.dot(&t);
    let rt = r.inverse();
    let (w, h) = (camera.width, camera.height);
    let ss = ss.max(1);
    let sq = board.square;
    let mut data = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let mut acc = 0.0;
            for sy in 0..ss {
                for sx in 0..ss {
                    let px = u as f64 - 0.5 + (sx as f64 + 0.5) / ss as f64;
                    let py = v as f64 - 0.5 + (sy as f64 + 0.5) / ss as f64;
                    let ray = Vector3::new((px - camera.cx) / camera.fx, (py - camera.cy) / camera.fy, 1.0);
                    let denom = normal.dot(&ray);
                    let value = if denom.abs() < 1e-12 {
                        128.0
                    } else {
                        let s = plane_d / denom;
                        let b = rt * (ray * s - t);
                        let outside = s <= 0.0
                            || b.x < -sq
                            || b.y < -sq
                            || b.x > board.cols as f64 * sq
                            || b.y > board.rows as f64 * sq;
                        if outside {
                            128.0
                        } else {
                            let parity = (libm::floor(b.x / sq) + libm::floor(b.y / sq)) as i64;
                            if parity.rem_euclid(2) == 0 { 40.0 } else { 215.0 }
                        }
                    };
                    acc += value;
                }
            }
            data.push(quantize(acc / (ss * ss) as f64));
        }
    }
    RasterFrame::gray(w, h, data).expect("buffer sized to frame")
}

/// Wear applied per grasp cycle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WearModel {
    /// Exponential rate at which the un-lit fraction `1 - g` of the
    /// illumination gradient is consumed.
    pub uniformity_decay: f64,
    /// Exponential rate at which contact contrast fades.
    pub contrast_decay: f64,
    pub scratches: Vec<ScratchEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScratchEvent {
    pub cycle: u64,
    pub scratch: Scratch,
}

impl WearModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.uniformity_decay >= 0.0 && self.contrast_decay >= 0.0) {
            return Err(Error::Config("wear decay rates must be non-negative".into()));
        }
        Ok(())
    }
}

/// The scene after `cycle` grasp cycles of `wear`.
pub fn degrade(scene: &GelScene, wear: &WearModel, cycle: u64) -> GelScene {
    let c = cycle as f64;
    let mut out = scene.clone();
    out.gradient_strength = 1.0 - (1.0 - scene.gradient_strength) * libm::exp(-wear.uniformity_decay * c);
    // Keep the documented invariant g < 1 even for extreme wear.
    out.gradient_strength = out.gradient_strength.min(1.0 - 1e-9);
    out.contrast = scene.contrast * libm::exp(-wear.contrast_decay * c);
    out.scratches
        .extend(wear.scratches.iter().filter(|e| e.cycle <= cycle).map(|e| e.scratch));
    out
}
