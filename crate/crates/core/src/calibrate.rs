//! Intrinsic calibration from planar-target correspondences.
//!
//! Per-view poses are seeded by decomposing a board-to-image homography and
//! then refined jointly with `fx, fy, cx, cy, k1..k4` by Levenberg-Marquardt
//! on the squared pixel reprojection error. The Jacobian is built block-wise
//! by central finite differences: each view's residuals depend only on the
//! eight intrinsics and its own six pose parameters.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, SMatrix, Vector3};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::frame::PixelCoord;

const INTRINSIC_PARAMS: usize = 8;
const POSE_PARAMS: usize = 6;
const FD_RELATIVE_STEP: f64 = 1e-6;
const MAX_CONSECUTIVE_ESCALATIONS: usize = 10;
const STALL_RELATIVE_GAIN: f64 = 1e-12;
/// Mean squared reprojection error (px^2) below which a fit is exact.
const EXACT_FIT_MSE: f64 = 1e-20;

/// Board-to-camera rigid transform for one calibration view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewExtrinsics {
    /// Axis-angle rotation, radians.
    pub rotation: [f64; 3],
    /// Translation, millimeters.
    pub translation: [f64; 3],
}

impl ViewExtrinsics {
    pub fn validate(&self) -> Result<()> {
        let angle = norm3(self.rotation);
        if !(angle < PI) {
            return Err(Error::Geometry(format!("rotation magnitude {angle} must be below pi")));
        }
        if !(self.translation[2] > 0.0) {
            return Err(Error::Geometry("board must lie in front of the camera (t_z > 0)".into()));
        }
        Ok(())
    }

    /// Transforms a board point into camera coordinates.
    pub fn transform(&self, p: [f64; 3]) -> [f64; 3] {
        let r = Rotation3::from_scaled_axis(Vector3::from(self.rotation));
        let v = r * Vector3::from(p) + Vector3::from(self.translation);
        [v.x, v.y, v.z]
    }
}

/// Correspondences between board points (millimeters, `z = 0`) and observed
/// pixel locations for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationView {
    correspondences: Vec<([f64; 3], PixelCoord)>,
}

impl CalibrationView {
    pub fn new(correspondences: Vec<([f64; 3], PixelCoord)>) -> Result<Self> {
        if correspondences.len() < 4 {
            return Err(Error::InsufficientData { needed: 4, found: correspondences.len() });
        }
        if correspondences.iter().any(|(b, p)| b[2] != 0.0 || !p.is_finite()) {
            return Err(Error::Geometry("board points must have z = 0 and finite pixels".into()));
        }
        if collinear(correspondences.iter().map(|(b, _)| (b[0], b[1]))) {
            return Err(Error::Geometry("board points are collinear".into()));
        }
        Ok(Self { correspondences })
    }

    pub fn correspondences(&self) -> &[([f64; 3], PixelCoord)] {
        &self.correspondences
    }

    pub fn len(&self) -> usize {
        self.correspondences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.correspondences.is_empty()
    }
}

fn collinear(points: impl Iterator<Item = (f64, f64)> + Clone) -> bool {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
    for (x, y) in points {
        cxx += (x - mx) * (x - mx);
        cxy += (x - mx) * (y - my);
        cyy += (y - my) * (y - my);
    }
    let trace = cxx + cyy;
    trace == 0.0 || cxx * cyy - cxy * cxy <= 1e-12 * trace * trace
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    pub max_iterations: usize,
    /// Stop once the infinity norm of the cost gradient drops below this.
    pub tolerance: f64,
    /// Diagonal field of view assumed when no initial intrinsics are given.
    pub fov_prior_degrees: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { max_iterations: 200, tolerance: 1e-10, fov_prior_degrees: 120.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: Vec<ViewExtrinsics>,
    /// Root mean squared reprojection distance per correspondence, pixels.
    pub rms_reprojection_error: f64,
    pub iterations: usize,
    /// Sum of squared residuals after the initial guess and after each
    /// accepted step.
    pub accepted_costs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CalibrationError {
    Invalid(Error),
    /// The damping escalated repeatedly without reducing the cost.
    NotConverged { message: String, best: Box<CalibrationResult> },
}

impl From<Error> for CalibrationError {
    fn from(e: Error) -> Self {
        CalibrationError::Invalid(e)
    }
}

impl fmt::Display for CalibrationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CalibrationError::Invalid(e) => e.fmt(f),
            CalibrationError::NotConverged { message, best } => write!(
                f,
                "calibration did not converge: {message} (best rms {:.6} px)",
                best.rms_reprojection_error
            ),
        }
    }
}

impl core::error::Error for CalibrationError {}

/// Projects a board point through a pose and the fisheye model.
pub fn project(camera: &CameraIntrinsics, pose: &ViewExtrinsics, board: [f64; 3]) -> PixelCoord {
    let [x, y, z] = pose.transform(board);
    if z <= 0.0 {
        return PixelCoord::new(f64::INFINITY, f64::INFINITY);
    }
    camera.distort_point(x / z, y / z)
}

/// Default starting intrinsics: principal point at the image center and an
/// equidistant focal length that maps the half-diagonal to half the FoV.
pub fn initial_intrinsics(width: usize, height: usize, fov_degrees: f64) -> CameraIntrinsics {
    let half_diag = libm::sqrt((width * width + height * height) as f64) / 2.0;
    let f = half_diag / (fov_degrees.to_radians() / 2.0);
    CameraIntrinsics {
        fx: f,
        fy: f,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        k: [0.0; 4],
        width,
        height,
    }
}

/// Estimates a view pose by planar homography decomposition, using `camera`
/// to convert observed pixels to pinhole-normalized coordinates.
pub fn initial_pose(camera: &CameraIntrinsics, view: &CalibrationView) -> Result<ViewExtrinsics> {
    let mut src = Vec::with_capacity(view.len());
    let mut dst = Vec::with_capacity(view.len());
    for (b, p) in view.correspondences() {
        if let Ok((x, y)) = camera.undistort_normalized(*p) {
            src.push((b[0], b[1]));
            dst.push((x, y));
        }
    }
    if src.len() < 4 {
        return Err(Error::InsufficientData { needed: 4, found: src.len() });
    }
    let h = homography(&src, &dst)?;
    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let mut scale = 2.0 / (h1.norm() + h2.norm());
    if h3.z * scale < 0.0 {
        scale = -scale;
    }
    let r1 = h1 * scale;
    let r2 = h2 * scale;
    let r3 = r1.cross(&r2);
    let m = Matrix3::from_columns(&[r1, r2, r3]);
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Geometry("pose orthonormalization failed".into())),
    };
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    let rotation = Rotation3::from_matrix_unchecked(r).scaled_axis();
    let t = h3 * scale;
    Ok(ViewExtrinsics { rotation: [rotation.x, rotation.y, rotation.z], translation: [t.x, t.y, t.z] })
}

/// Direct linear transform with Hartley normalization.
fn homography(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Result<Matrix3<f64>> {
    let ns = normalizer(src);
    let nd = normalizer(dst);
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (&(x, y), &(u, v)) in src.iter().zip(dst) {
        let p = ns * Vector3::new(x, y, 1.0);
        let q = nd * Vector3::new(u, v, 1.0);
        let rows = [
            [-p.x, -p.y, -1.0, 0.0, 0.0, 0.0, q.x * p.x, q.x * p.y, q.x],
            [0.0, 0.0, 0.0, -p.x, -p.y, -1.0, q.y * p.x, q.y * p.y, q.y],
        ];
        for row in rows {
            let r = SMatrix::<f64, 9, 1>::from(row);
            ata += r * r.transpose();
        }
    }
    let eig = ata.symmetric_eigen();
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &v)| if v < best.1 { (i, v) } else { best });
    let e = eig.eigenvectors.column(idx);
    let hn = Matrix3::new(e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8]);
    let nd_inv = nd
        .try_inverse()
        .ok_or_else(|| Error::Geometry("degenerate image points".into()))?;
    Ok(nd_inv * hn * ns)
}

fn normalizer(points: &[(f64, f64)]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    let mean_dist = points
        .iter()
        .map(|p| libm::sqrt((p.0 - mx) * (p.0 - mx) + (p.1 - my) * (p.1 - my)))
        .sum::<f64>()
        / n;
    let s = if mean_dist > 0.0 { core::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

struct Problem<'a> {
    views: &'a [CalibrationView],
    width: usize,
    height: usize,
    points: usize,
}

impl Problem<'_> {
    fn n_params(&self) -> usize {
        INTRINSIC_PARAMS + POSE_PARAMS * self.views.len()
    }

    fn camera(&self, p: &[f64]) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: p[0],
            fy: p[1],
            cx: p[2],
            cy: p[3],
            k: [p[4], p[5], p[6], p[7]],
            width: self.width,
            height: self.height,
        }
    }

    fn pose(p: &[f64], view: usize) -> ViewExtrinsics {
        let o = INTRINSIC_PARAMS + POSE_PARAMS * view;
        ViewExtrinsics {
            rotation: [p[o], p[o + 1], p[o + 2]],
            translation: [p[o + 3], p[o + 4], p[o + 5]],
        }
    }

    fn view_residuals(&self, camera: &CameraIntrinsics, pose: &ViewExtrinsics, view: usize, out: &mut Vec<f64>) {
        out.clear();
        for (b, obs) in self.views[view].correspondences() {
            let q = project(camera, pose, *b);
            out.push(q.x - obs.x);
            out.push(q.y - obs.y);
        }
    }

    fn cost(&self, p: &[f64]) -> f64 {
        let camera = self.camera(p);
        let mut buf = Vec::new();
        let mut cost = 0.0;
        for v in 0..self.views.len() {
            self.view_residuals(&camera, &Self::pose(p, v), v, &mut buf);
            cost += buf.iter().map(|r| r * r).sum::<f64>();
        }
        if cost.is_finite() { cost } else { f64::INFINITY }
    }

    /// Gauss-Newton normal matrix `J^T J` and gradient `J^T r`.
    fn normal_equations(&self, p: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n_params();
        let mut jtj = DMatrix::<f64>::zeros(n, n);
        let mut jtr = DVector::<f64>::zeros(n);
        let mut base = Vec::new();
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        let mut work = p.to_vec();
        const COLS: usize = INTRINSIC_PARAMS + POSE_PARAMS;
        for v in 0..self.views.len() {
            let camera = self.camera(p);
            self.view_residuals(&camera, &Self::pose(p, v), v, &mut base);
            let rows = base.len();
            let mut jac = vec![0.0; rows * COLS];
            let offset = INTRINSIC_PARAMS + POSE_PARAMS * v;
            let param_index = |c: usize| if c < INTRINSIC_PARAMS { c } else { offset + c - INTRINSIC_PARAMS };
            for c in 0..COLS {
                let idx = param_index(c);
                let h = FD_RELATIVE_STEP * libm::fabs(p[idx]).max(1.0);
                work[idx] = p[idx] + h;
                self.view_residuals(&self.camera(&work), &Self::pose(&work, v), v, &mut plus);
                work[idx] = p[idx] - h;
                self.view_residuals(&self.camera(&work), &Self::pose(&work, v), v, &mut minus);
                work[idx] = p[idx];
                for r in 0..rows {
                    jac[r * COLS + c] = (plus[r] - minus[r]) / (2.0 * h);
                }
            }
            for a in 0..COLS {
                let ia = param_index(a);
                let mut g = 0.0;
                for r in 0..rows {
                    g += jac[r * COLS + a] * base[r];
                }
                jtr[ia] += g;
                for b in a..COLS {
                    let ib = param_index(b);
                    let mut s = 0.0;
                    for r in 0..rows {
                        s += jac[r * COLS + a] * jac[r * COLS + b];
                    }
                    jtj[(ia, ib)] += s;
                    if ia != ib {
                        jtj[(ib, ia)] += s;
                    }
                }
            }
        }
        (jtj, jtr)
    }

    fn result(&self, p: &[f64], cost: f64, iterations: usize, accepted: Vec<f64>) -> CalibrationResult {
        CalibrationResult {
            intrinsics: self.camera(p),
            extrinsics: (0..self.views.len()).map(|v| Self::pose(p, v)).collect(),
            rms_reprojection_error: libm::sqrt(cost / self.points as f64),
            iterations,
            accepted_costs: accepted,
        }
    }
}

/// Jointly estimates intrinsics and per-view poses.
///
/// `image_size` is only used when `init` is absent. At least three views
/// are required.
pub fn calibrate(
    views: &[CalibrationView],
    image_size: (usize, usize),
    init: Option<&CameraIntrinsics>,
    config: &CalibrationConfig,
) -> core::result::Result<CalibrationResult, CalibrationError> {
    if views.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, found: views.len() }.into());
    }
    let start = match init {
        Some(c) => {
            c.validate()?;
            *c
        }
        None => initial_intrinsics(image_size.0, image_size.1, config.fov_prior_degrees),
    };
    let problem = Problem {
        views,
        width: start.width,
        height: start.height,
        points: views.iter().map(CalibrationView::len).sum(),
    };
    let mut p = vec![start.fx, start.fy, start.cx, start.cy, start.k[0], start.k[1], start.k[2], start.k[3]];
    for view in views {
        let pose = initial_pose(&start, view)?;
        p.extend_from_slice(&pose.rotation);
        p.extend_from_slice(&pose.translation);
    }

    let mut cost = problem.cost(&p);
    if !cost.is_finite() {
        return Err(Error::Numerical {
            message: "initial guess projects points behind the camera".into(),
            residual: cost,
        }
        .into());
    }
    let mut accepted = vec![cost];
    let mut lambda = 1e-3;
    let n = problem.n_params();

    for iteration in 1..=config.max_iterations {
        let (jtj, jtr) = problem.normal_equations(&p);
        if jtr.amax() < config.tolerance {
            return Ok(problem.result(&p, cost, iteration - 1, accepted));
        }
        let mut escalations = 0;
        loop {
            let mut damped = jtj.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let step = damped.cholesky().map(|c| c.solve(&(-&jtr)));
            let mut candidate = p.clone();
            let (candidate_cost, predicted) = match step {
                Some(delta) => {
                    for (c, d) in candidate.iter_mut().zip(delta.iter()) {
                        *c += d;
                    }
                    // Reduction predicted by the local quadratic model.
                    let predicted = -2.0 * jtr.dot(&delta) - (&jtj * &delta).dot(&delta);
                    (problem.cost(&candidate), predicted)
                }
                None => (f64::INFINITY, f64::INFINITY),
            };
            if candidate_cost < cost {
                let relative_gain = (cost - candidate_cost) / cost;
                p = candidate;
                cost = candidate_cost;
                accepted.push(cost);
                lambda = (lambda / 10.0).max(1e-15);
                if relative_gain < STALL_RELATIVE_GAIN || cost == 0.0 {
                    return Ok(problem.result(&p, cost, iteration, accepted));
                }
                break;
            }
            if predicted <= STALL_RELATIVE_GAIN * cost || cost <= EXACT_FIT_MSE * problem.points as f64 {
                // The model promises no more than rounding noise: stationary.
                return Ok(problem.result(&p, cost, iteration, accepted));
            }
            lambda *= 10.0;
            escalations += 1;
            if escalations >= MAX_CONSECUTIVE_ESCALATIONS {
                return Err(CalibrationError::NotConverged {
                    message: format!("cost failed to decrease after {escalations} damping escalations"),
                    best: Box::new(problem.result(&p, cost, iteration, accepted)),
                });
            }
        }
    }
    Ok(problem.result(&p, cost, config.max_iterations, accepted))
}

fn norm3(v: [f64; 3]) -> f64 {
    libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_view() -> CalibrationView {
        let pts = [(0.0, 0.0), (15.0, 0.0), (0.0, 15.0), (15.0, 15.0)];
        CalibrationView::new(
            pts.iter().map(|&(x, y)| ([x, y, 0.0], PixelCoord::new(x, y))).collect(),
        )
        .unwrap()
    }

    #[test]
    fn too_few_views() {
        let views = [square_view(), square_view()];
        let err = calibrate(&views, (640, 480), None, &CalibrationConfig::default()).unwrap_err();
        assert_eq!(err, CalibrationError::Invalid(Error::InsufficientData { needed: 3, found: 2 }));
    }

    #[test]
    fn view_validation() {
        let collinear: Vec<_> =
            (0..5).map(|i| ([i as f64, 2.0 * i as f64, 0.0], PixelCoord::new(0.0, 0.0))).collect();
        assert!(matches!(CalibrationView::new(collinear), Err(Error::Geometry(_))));
        let few = vec![([0.0, 0.0, 0.0], PixelCoord::new(0.0, 0.0)); 3];
        assert!(matches!(CalibrationView::new(few), Err(Error::InsufficientData { .. })));
        let lifted = vec![
            ([0.0, 0.0, 1.0], PixelCoord::default()),
            ([1.0, 0.0, 0.0], PixelCoord::default()),
            ([0.0, 1.0, 0.0], PixelCoord::default()),
            ([1.0, 1.0, 0.0], PixelCoord::default()),
        ];
        assert!(CalibrationView::new(lifted).is_err());
    }

    #[test]
    fn homography_pose_recovers_fronto_parallel_board() {
        let cam = CameraIntrinsics::pinhole(300.0, 640, 480);
        let pose = ViewExtrinsics { rotation: [0.1, -0.2, 0.05], translation: [-20.0, 10.0, 250.0] };
        let corr = (0..5)
            .flat_map(|r| (0..6).map(move |c| [c as f64 * 15.0, r as f64 * 15.0, 0.0]))
            .map(|b| (b, project(&cam, &pose, b)))
            .collect();
        let view = CalibrationView::new(corr).unwrap();
        let est = initial_pose(&cam, &view).unwrap();
        for i in 0..3 {
            assert!((est.rotation[i] - pose.rotation[i]).abs() < 1e-6, "{est:?}");
            assert!((est.translation[i] - pose.translation[i]).abs() < 1e-4, "{est:?}");
        }
    }

    #[test]
    fn initial_focal_from_fov_prior() {
        let c = initial_intrinsics(640, 480, 120.0);
        assert!((c.fx - 400.0 / (PI / 3.0)).abs() < 1e-9);
        assert_eq!((c.cx, c.cy), (320.0, 240.0));
    }

    #[test]
    fn extrinsics_validation() {
        assert!(ViewExtrinsics { rotation: [0.0; 3], translation: [0.0, 0.0, -1.0] }.validate().is_err());
        assert!(ViewExtrinsics { rotation: [3.2, 0.0, 0.0], translation: [0.0, 0.0, 1.0] }.validate().is_err());
        assert!(ViewExtrinsics { rotation: [0.3, 0.0, 0.0], translation: [0.0, 0.0, 1.0] }.validate().is_ok());
    }
}
