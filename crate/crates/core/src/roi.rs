//! Gel-region extraction: polygon mask, affine rectification and crop.

use alloc::format;
use alloc::vec::Vec;

use crate::camera::RemapTable;
use crate::error::{Error, Result};
use crate::frame::{FloatPlane, PixelCoord, RasterFrame};

/// Default rectified patch: 80 x 30 mm at 5 px/mm.
pub const DEFAULT_ROI_SIZE: (usize, usize) = (400, 150);

/// Simple polygon outlining the gel surface in frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonMask {
    vertices: Vec<PixelCoord>,
    frame_size: (usize, usize),
}

impl PolygonMask {
    pub fn new(vertices: Vec<PixelCoord>, frame_size: (usize, usize)) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InsufficientData { needed: 3, found: vertices.len() });
        }
        let (w, h) = (frame_size.0 as f64, frame_size.1 as f64);
        if let Some(v) = vertices
            .iter()
            .find(|v| !(v.is_finite() && v.x >= 0.0 && v.y >= 0.0 && v.x <= w && v.y <= h))
        {
            return Err(Error::Geometry(format!("vertex ({}, {}) outside the frame", v.x, v.y)));
        }
        if self_intersects(&vertices) {
            return Err(Error::Geometry("polygon is self-intersecting".into()));
        }
        Ok(Self { vertices, frame_size })
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64, frame_size: (usize, usize)) -> Result<Self> {
        Self::new(
            alloc::vec![
                PixelCoord::new(x0, y0),
                PixelCoord::new(x1, y0),
                PixelCoord::new(x1, y1),
                PixelCoord::new(x0, y1),
            ],
            frame_size,
        )
    }

    /// Rectangle covering the whole frame.
    pub fn full(frame_size: (usize, usize)) -> Self {
        Self::rectangle(0.0, 0.0, frame_size.0 as f64, frame_size.1 as f64, frame_size)
            .expect("full-frame rectangle is valid")
    }

    pub fn vertices(&self) -> &[PixelCoord] {
        &self.vertices
    }

    pub fn frame_size(&self) -> (usize, usize) {
        self.frame_size
    }

    /// Even-odd test; points on an edge are outside.
    pub fn contains(&self, p: PixelCoord) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if on_segment(p, a, b) {
                return false;
            }
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn cross(o: PixelCoord, a: PixelCoord, b: PixelCoord) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn on_segment(p: PixelCoord, a: PixelCoord, b: PixelCoord) -> bool {
    cross(a, b, p) == 0.0
        && p.x >= a.x.min(b.x)
        && p.x <= a.x.max(b.x)
        && p.y >= a.y.min(b.y)
        && p.y <= a.y.max(b.y)
}

fn segments_intersect(a: PixelCoord, b: PixelCoord, c: PixelCoord, d: PixelCoord) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)
}

fn self_intersects(v: &[PixelCoord]) -> bool {
    let n = v.len();
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

/// Binary mask: 1 where the pixel center `(x + 0.5, y + 0.5)` lies strictly
/// inside the polygon.
pub fn rasterize_mask(polygon: &PolygonMask) -> FloatPlane {
    let (w, h) = polygon.frame_size;
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let inside = polygon.contains(PixelCoord::new(x as f64 + 0.5, y as f64 + 0.5));
            values.push(if inside { 1.0 } else { 0.0 });
        }
    }
    FloatPlane::from_raw(w, h, values)
}

/// `[x', y']^T = A [x, y, 1]^T` with `A` a 2x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    a: [[f64; 3]; 2],
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform { a: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] };

    pub fn new(a: [[f64; 3]; 2]) -> Result<Self> {
        let t = Self { a };
        if a.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Geometry("affine matrix has non-finite entries".into()));
        }
        if libm::fabs(t.determinant()) <= 1e-9 {
            return Err(Error::Geometry(format!(
                "affine transform is singular (det {:e})",
                t.determinant()
            )));
        }
        Ok(t)
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self { a: [[1.0, 0.0, dx], [0.0, 1.0, dy]] }
    }

    pub fn matrix(&self) -> [[f64; 3]; 2] {
        self.a
    }

    pub fn determinant(&self) -> f64 {
        self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]
    }

    #[inline]
    pub fn apply(&self, p: PixelCoord) -> PixelCoord {
        let a = &self.a;
        PixelCoord::new(
            a[0][0] * p.x + a[0][1] * p.y + a[0][2],
            a[1][0] * p.x + a[1][1] * p.y + a[1][2],
        )
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        if libm::fabs(det) <= 1e-9 {
            return Err(Error::Geometry("affine transform is not invertible".into()));
        }
        let [[a, b, c], [d, e, f]] = self.a;
        let (ia, ib, id, ie) = (e / det, -b / det, -d / det, a / det);
        Ok(Self { a: [[ia, ib, -(ia * c + ib * f)], [id, ie, -(id * c + ie * f)]] })
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &AffineTransform) -> Self {
        let m = |t: &AffineTransform| {
            [[t.a[0][0], t.a[0][1], t.a[0][2]], [t.a[1][0], t.a[1][1], t.a[1][2]], [0.0, 0.0, 1.0]]
        };
        let (p, q) = (m(self), m(first));
        let mut out = [[0.0; 3]; 2];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| p[r][k] * q[k][c]).sum();
            }
        }
        Self { a: out }
    }
}

/// Fits `A` to point correspondences: exact for three points, least
/// squares beyond. Returns the transform and the RMS residual in pixels.
pub fn estimate_affine(correspondences: &[(PixelCoord, PixelCoord)]) -> Result<(AffineTransform, f64)> {
    let n = correspondences.len();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, found: n });
    }
    // Center the sources for conditioning; both output rows share the
    // 3x3 normal matrix of [x, y, 1].
    let (mx, my) = correspondences
        .iter()
        .fold((0.0, 0.0), |s, (p, _)| (s.0 + p.x / n as f64, s.1 + p.y / n as f64));
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [[0.0f64; 3]; 2];
    for (src, dst) in correspondences {
        let row = [src.x - mx, src.y - my, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            atb[0][i] += row[i] * dst.x;
            atb[1][i] += row[i] * dst.y;
        }
    }
    let det2 = ata[0][0] * ata[1][1] - ata[0][1] * ata[1][0];
    let scale = ata[0][0] + ata[1][1];
    if !(scale > 0.0) || det2 <= 1e-12 * scale * scale {
        return Err(Error::Geometry("source points are collinear (rank-deficient system)".into()));
    }
    let m = nalgebra::Matrix3::from_fn(|i, j| ata[i][j]);
    let lu = m.lu();
    let mut a = [[0.0; 3]; 2];
    for r in 0..2 {
        let sol = lu
            .solve(&nalgebra::Vector3::from(atb[r]))
            .ok_or_else(|| Error::Geometry("rank-deficient affine system".into()))?;
        // Undo the centering: x' = a0 (x - mx) + a1 (y - my) + a2.
        a[r] = [sol[0], sol[1], sol[2] - sol[0] * mx - sol[1] * my];
    }
    let t = AffineTransform::new(a)?;
    let sq: f64 = correspondences
        .iter()
        .map(|(s, d)| {
            let p = t.apply(*s);
            (p.x - d.x) * (p.x - d.x) + (p.y - d.y) * (p.y - d.y)
        })
        .sum();
    Ok((t, libm::sqrt(sq / n as f64)))
}

/// Mask, rectifying transform and crop window `(x0, y0, width, height)` in
/// rectified coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiSpec {
    pub mask: PolygonMask,
    pub transform: AffineTransform,
    pub crop: (i64, i64, usize, usize),
}

impl RoiSpec {
    pub fn new(mask: PolygonMask, transform: AffineTransform, crop: (i64, i64, usize, usize)) -> Result<Self> {
        let spec = Self { mask, transform, crop };
        spec.validate()?;
        Ok(spec)
    }

    /// Identity transform, full-frame mask and crop.
    pub fn identity(frame_size: (usize, usize)) -> Self {
        Self {
            mask: PolygonMask::full(frame_size),
            transform: AffineTransform::IDENTITY,
            crop: (0, 0, frame_size.0, frame_size.1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        AffineTransform::new(self.transform.a)?;
        let (w, h) = self.mask.frame_size;
        let corners = [(0.0, 0.0), (w as f64, 0.0), (0.0, h as f64), (w as f64, h as f64)];
        let (mut lx, mut ly, mut hx, mut hy) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in corners {
            let p = self.transform.apply(PixelCoord::new(x, y));
            lx = lx.min(p.x);
            ly = ly.min(p.y);
            hx = hx.max(p.x);
            hy = hy.max(p.y);
        }
        let (x0, y0, cw, ch) = self.crop;
        let eps = 1e-6;
        let inside = cw > 0
            && ch > 0
            && x0 as f64 >= lx - eps
            && y0 as f64 >= ly - eps
            && (x0 as f64 + cw as f64) <= hx + eps
            && (y0 as f64 + ch as f64) <= hy + eps;
        if !inside {
            return Err(Error::Geometry(format!(
                "crop {:?} outside transformed bounds [{lx:.2}, {hx:.2}] x [{ly:.2}, {hy:.2}]",
                self.crop
            )));
        }
        Ok(())
    }
}

/// Precomputed rectification for one [`RoiSpec`].
#[derive(Debug, Clone)]
pub struct Rectifier {
    table: RemapTable,
    /// `None` when the mask covers every pixel.
    mask: Option<Vec<u8>>,
}

impl Rectifier {
    pub fn new(spec: &RoiSpec) -> Result<Self> {
        spec.validate()?;
        let inverse = spec.transform.inverse()?;
        let (x0, y0, cw, ch) = spec.crop;
        let table = RemapTable::from_fn(spec.mask.frame_size, (cw, ch), |u, v| {
            Some(inverse.apply(PixelCoord::new(u + x0 as f64, v + y0 as f64)))
        });
        let raster = rasterize_mask(&spec.mask);
        let mask = if raster.values().iter().all(|&m| m == 1.0) {
            None
        } else {
            Some(raster.values().iter().map(|&m| if m == 1.0 { 0xff } else { 0 }).collect())
        };
        Ok(Self { table, mask })
    }

    pub fn output_size(&self) -> (usize, usize) {
        self.table.output_size()
    }

    /// Rectifies a single-channel buffer into `dst`, starting at output row
    /// `first_row`. `scratch` receives the masked source when a mask is set.
    pub fn apply_rows(&self, src: &[u8], scratch: &mut Vec<u8>, dst: &mut [u8], first_row: usize) {
        let masked = self.mask_source(src, scratch);
        self.remap_rows(masked, dst, first_row);
    }

    /// Zeroes the masked-out pixels of a single-channel source, returning
    /// `src` itself when the mask covers the whole frame.
    pub fn mask_source<'a>(&self, src: &'a [u8], scratch: &'a mut Vec<u8>) -> &'a [u8] {
        match &self.mask {
            None => src,
            Some(mask) => {
                scratch.clear();
                scratch.extend(src.iter().zip(mask).map(|(s, m)| s & m));
                scratch
            }
        }
    }

    /// Second half of [`apply_rows`](Self::apply_rows) for a source already
    /// passed through [`mask_source`](Self::mask_source).
    pub fn remap_rows(&self, masked: &[u8], dst: &mut [u8], first_row: usize) {
        self.table.apply_rows(masked, dst, first_row);
    }

    pub fn apply(&self, frame: &RasterFrame) -> Result<RasterFrame> {
        match &self.mask {
            None => self.table.apply(frame),
            Some(mask) => {
                if frame.size() != self.table.source_size() {
                    return self.table.apply(frame);
                }
                let mut masked = frame.clone();
                let c = frame.channels();
                for (i, v) in masked.data_mut().iter_mut().enumerate() {
                    *v &= mask[i / c];
                }
                self.table.apply(&masked)
            }
        }
    }
}

/// Masks, rectifies and crops `frame` according to `spec`.
pub fn rectify(frame: &RasterFrame, spec: &RoiSpec) -> Result<RasterFrame> {
    if frame.size() != spec.mask.frame_size {
        return Err(Error::Dimension(format!(
            "frame is {}x{}, ROI spec expects {}x{}",
            frame.width(),
            frame.height(),
            spec.mask.frame_size.0,
            spec.mask.frame_size.1
        )));
    }
    Rectifier::new(spec)?.apply(frame)
}
