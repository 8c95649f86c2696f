//! Sensor state of health (SOH).
//!
//! Three image-quality metrics, each in `[0, 1]`:
//!
//! - illumination uniformity: `1 - std(row means) / mean(row means)`
//! - deformation visibility: mean `|probe - reference|` over the probe
//!   region divided by the reference mean
//! - structural integrity: `1 -` fraction of pixels deviating by more than
//!   20 gray levels from their row median (scratches, tears)
//!
//! SOH is the weighted mean of the baseline-normalized metrics, in percent.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::frame::{FloatPlane, PixelCoord, RasterFrame};
use crate::synth::{
    degrade, render_contact, render_reference, GelScene, Indenter, Profile, Scratch, ScratchEvent, WearModel,
};

pub const DEFAULT_FAILURE_THRESHOLD: f64 = 80.0;
const SCRATCH_DEVIATION: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HealthMetrics {
    pub illumination_uniformity: f64,
    pub deformation_visibility: f64,
    pub structural_integrity: f64,
}

impl HealthMetrics {
    pub const FRESH: HealthMetrics =
        HealthMetrics { illumination_uniformity: 1.0, deformation_visibility: 1.0, structural_integrity: 1.0 };

    /// Divides by `baseline` metric-wise and clamps to `[0, 1]`. A metric
    /// whose baseline is zero normalizes to 1.
    pub fn normalized_by(&self, baseline: &HealthMetrics) -> HealthMetrics {
        let ratio = |v: f64, b: f64| if b > 0.0 { (v / b).clamp(0.0, 1.0) } else { 1.0 };
        HealthMetrics {
            illumination_uniformity: ratio(self.illumination_uniformity, baseline.illumination_uniformity),
            deformation_visibility: ratio(self.deformation_visibility, baseline.deformation_visibility),
            structural_integrity: ratio(self.structural_integrity, baseline.structural_integrity),
        }
    }
}

/// Metrics over the whole frame. See [`frame_metrics_in`].
pub fn frame_metrics(
    reference: &RasterFrame,
    probe_contact: &RasterFrame,
    baseline: Option<&HealthMetrics>,
) -> Result<HealthMetrics> {
    frame_metrics_in(reference, probe_contact, None, baseline)
}

/// Metrics with visibility measured inside `region` (non-zero entries), or
/// the whole frame when `region` is `None`.
pub fn frame_metrics_in(
    reference: &RasterFrame,
    probe_contact: &RasterFrame,
    region: Option<&FloatPlane>,
    baseline: Option<&HealthMetrics>,
) -> Result<HealthMetrics> {
    if reference.channels() != 1 || probe_contact.channels() != 1 {
        return Err(Error::Channels { expected: 1, found: reference.channels().max(probe_contact.channels()) });
    }
    if reference.size() != probe_contact.size() {
        return Err(Error::Dimension(format!(
            "reference is {}x{}, probe is {}x{}",
            reference.width(),
            reference.height(),
            probe_contact.width(),
            probe_contact.height()
        )));
    }
    if let Some(r) = region {
        if r.size() != reference.size() {
            return Err(Error::Dimension("probe region does not match the frame".into()));
        }
    }
    let (w, h) = reference.size();
    if w == 0 || h == 0 {
        return Err(Error::Dimension("empty frame".into()));
    }
    let data = reference.data();

    let row_means: Vec<f64> = data
        .chunks_exact(w)
        .map(|row| row.iter().map(|&v| f64::from(v)).sum::<f64>() / w as f64)
        .collect();
    let mean = row_means.iter().sum::<f64>() / h as f64;
    let uniformity = if mean > 0.0 {
        let var = row_means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / h as f64;
        (1.0 - libm::sqrt(var) / mean).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let mut response = 0.0;
    let mut count = 0usize;
    for (i, (&r, &p)) in data.iter().zip(probe_contact.data()).enumerate() {
        if region.is_none_or(|m| m.values()[i] != 0.0) {
            response += libm::fabs(f64::from(r) - f64::from(p));
            count += 1;
        }
    }
    let visibility = if count > 0 && mean > 0.0 { (response / count as f64 / mean).clamp(0.0, 1.0) } else { 0.0 };

    let mut damaged = 0usize;
    let mut sorted = Vec::with_capacity(w);
    for row in data.chunks_exact(w) {
        sorted.clear();
        sorted.extend_from_slice(row);
        sorted.sort_unstable();
        let median = if w % 2 == 1 {
            f64::from(sorted[w / 2])
        } else {
            0.5 * (f64::from(sorted[w / 2 - 1]) + f64::from(sorted[w / 2]))
        };
        damaged += row.iter().filter(|&&v| libm::fabs(f64::from(v) - median) > SCRATCH_DEVIATION).count();
    }
    let integrity = 1.0 - damaged as f64 / (w * h) as f64;

    let raw = HealthMetrics {
        illumination_uniformity: uniformity,
        deformation_visibility: visibility,
        structural_integrity: integrity,
    };
    Ok(match baseline {
        Some(b) => raw.normalized_by(b),
        None => raw,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SohWeights {
    pub uniformity: f64,
    pub visibility: f64,
    pub integrity: f64,
}

impl Default for SohWeights {
    fn default() -> Self {
        Self { uniformity: 1.0 / 3.0, visibility: 1.0 / 3.0, integrity: 1.0 / 3.0 }
    }
}

impl SohWeights {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.uniformity, self.visibility, self.integrity];
        if parts.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("SOH weights must be finite and non-negative".into()));
        }
        let sum: f64 = parts.iter().sum();
        if libm::fabs(sum - 1.0) > 1e-9 {
            return Err(Error::Config(format!("SOH weights sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// `100 * (w_u u + w_v v + w_s s)`, clamped to `[0, 100]`.
pub fn compute_soh(m: &HealthMetrics, weights: &SohWeights) -> Result<f64> {
    weights.validate()?;
    let s = weights.uniformity * m.illumination_uniformity
        + weights.visibility * m.deformation_visibility
        + weights.integrity * m.structural_integrity;
    Ok((100.0 * s).clamp(0.0, 100.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SohSample {
    pub cycle: u64,
    pub soh: f64,
    pub metrics: HealthMetrics,
}

/// Streaming lifespan evaluation: one pass, constant state beyond the
/// baseline.
#[derive(Debug, Clone)]
pub struct LifespanTracker {
    baseline_from_first: bool,
    threshold: f64,
    weights: SohWeights,
    region: Option<FloatPlane>,
    baseline: Option<HealthMetrics>,
    last_cycle: Option<u64>,
    failure_cycle: Option<u64>,
    seen: usize,
}

impl LifespanTracker {
    pub fn new(baseline_from_first: bool, threshold: f64, weights: SohWeights) -> Result<Self> {
        weights.validate()?;
        if !threshold.is_finite() {
            return Err(Error::Config("threshold must be finite".into()));
        }
        Ok(Self {
            baseline_from_first,
            threshold,
            weights,
            region: None,
            baseline: None,
            last_cycle: None,
            failure_cycle: None,
            seen: 0,
        })
    }

    /// Restricts the visibility metric to `region`.
    pub fn with_region(mut self, region: FloatPlane) -> Self {
        self.region = Some(region);
        self
    }

    pub fn push(&mut self, cycle: u64, reference: &RasterFrame, probe_contact: &RasterFrame) -> Result<SohSample> {
        if let Some(last) = self.last_cycle {
            if cycle <= last {
                return Err(Error::Ordering {
                    index: self.seen,
                    message: format!("cycle {cycle} does not follow {last}"),
                });
            }
        }
        let raw = frame_metrics_in(reference, probe_contact, self.region.as_ref(), None)?;
        let metrics = if self.baseline_from_first {
            let base = *self.baseline.get_or_insert(raw);
            raw.normalized_by(&base)
        } else {
            raw
        };
        let soh = compute_soh(&metrics, &self.weights)?;
        if self.failure_cycle.is_none() && soh < self.threshold {
            self.failure_cycle = Some(cycle);
        }
        self.last_cycle = Some(cycle);
        self.seen += 1;
        Ok(SohSample { cycle, soh, metrics })
    }

    pub fn failure_cycle(&self) -> Option<u64> {
        self.failure_cycle
    }
}

/// Evaluates a whole stream of `(cycle, reference, probe)` samples.
pub fn lifespan_curve<'a, I>(
    samples: I,
    baseline_from_first: bool,
    threshold: f64,
) -> Result<(Vec<SohSample>, Option<u64>)>
where
    I: IntoIterator<Item = (u64, &'a RasterFrame, &'a RasterFrame)>,
{
    let mut tracker = LifespanTracker::new(baseline_from_first, threshold, SohWeights::default())?;
    let curve = samples
        .into_iter()
        .map(|(c, r, p)| tracker.push(c, r, p))
        .collect::<Result<Vec<_>>>()?;
    Ok((curve, tracker.failure_cycle()))
}

/// Standard probe used for wear simulations: a spherical-cap indenter at
/// the patch center, radius a quarter of the patch height.
pub fn default_probe(scene: &GelScene) -> Indenter {
    Indenter::new(
        PixelCoord::new(scene.width as f64 / 2.0, scene.height as f64 / 2.0),
        scene.height as f64 / 4.0,
        0.3,
        Profile::SphericalCap,
    )
}

/// Wear shape used for lifespan studies: contact contrast fades and three
/// scratches appear at cycles 2600, 4200 and 7000. Rates are placeholders
/// to be scaled with [`calibrate_wear`]. The illumination gradient does
/// not drift.
pub fn reference_wear_shape(scene: &GelScene) -> WearModel {
    let (w, h) = (scene.width as f64, scene.height as f64);
    let scratch = |cycle, y: f64| ScratchEvent {
        cycle,
        scratch: Scratch {
            from: PixelCoord::new(0.06 * w, y * h),
            to: PixelCoord::new(0.94 * w, y * h + 4.0),
            depth: 0.5,
        },
    };
    WearModel {
        uniformity_decay: 0.0,
        contrast_decay: 1e-4,
        scratches: vec![scratch(2600, 0.07), scratch(4200, 0.17), scratch(7000, 0.83)],
    }
}

/// Renders the reference/probe pair of `scene` after `cycle` wear cycles.
pub fn simulate_wear_sample(
    scene: &GelScene,
    wear: &WearModel,
    probe: &Indenter,
    cycle: u64,
    seed: u64,
) -> Result<(RasterFrame, RasterFrame)> {
    let worn = degrade(scene, wear, cycle);
    let reference = render_reference(&worn, seed)?;
    let (contact, _) = render_contact(&worn, core::slice::from_ref(probe), seed)?;
    Ok((reference, contact))
}

/// SOH of the simulated sensor at `cycle`, normalized to cycle 0.
pub fn simulated_soh(scene: &GelScene, wear: &WearModel, probe: &Indenter, cycle: u64, seed: u64) -> Result<f64> {
    let (r0, p0) = simulate_wear_sample(scene, wear, probe, 0, seed)?;
    let base = frame_metrics(&r0, &p0, None)?;
    let (r, p) = simulate_wear_sample(scene, wear, probe, cycle, seed)?;
    compute_soh(&frame_metrics(&r, &p, Some(&base))?, &SohWeights::default())
}

/// Scales the decay rates of `shape` so that the simulated SOH at
/// `target_cycle` equals `target_soh` (bisection on the common scale).
/// Scratch events are kept as given.
pub fn calibrate_wear(
    scene: &GelScene,
    shape: &WearModel,
    probe: &Indenter,
    target_cycle: u64,
    target_soh: f64,
) -> Result<WearModel> {
    shape.validate()?;
    if shape.uniformity_decay == 0.0 && shape.contrast_decay == 0.0 {
        return Err(Error::Config("wear shape needs a non-zero decay rate".into()));
    }
    let scaled = |s: f64| WearModel {
        uniformity_decay: shape.uniformity_decay * s,
        contrast_decay: shape.contrast_decay * s,
        scratches: shape.scratches.clone(),
    };
    let soh_at = |s: f64| simulated_soh(scene, &scaled(s), probe, target_cycle, 0);
    let (mut lo, mut hi) = (0.0, 1.0);
    while soh_at(hi)? > target_soh {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Numerical {
                message: "wear cannot reach the target SOH".into(),
                residual: soh_at(hi)? - target_soh,
            });
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if soh_at(mid)? > target_soh {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(scaled(0.5 * (lo + hi)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soh_examples() {
        let w = SohWeights::default();
        assert!((compute_soh(&HealthMetrics::FRESH, &w).unwrap() - 100.0).abs() < 1e-12);
        let zero = HealthMetrics { illumination_uniformity: 0.0, deformation_visibility: 0.0, structural_integrity: 0.0 };
        assert_eq!(compute_soh(&zero, &w).unwrap(), 0.0);
        let m = HealthMetrics { illumination_uniformity: 0.9, deformation_visibility: 0.8, structural_integrity: 1.0 };
        assert!((compute_soh(&m, &w).unwrap() - 90.0).abs() < 1e-12);
        let bad = SohWeights { uniformity: 0.5, visibility: 0.5, integrity: 0.5 };
        assert!(matches!(compute_soh(&m, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn fresh_sensor_normalizes_to_one() {
        let reference = RasterFrame::filled(40, 20, 1, 120).unwrap();
        let mut probe = reference.clone();
        for y in 5..15 {
            for x in 10..30 {
                probe.set(x, y, 0, 40);
            }
        }
        let raw = frame_metrics(&reference, &probe, None).unwrap();
        let m = frame_metrics(&reference, &probe, Some(&raw)).unwrap();
        assert_eq!(m, HealthMetrics::FRESH);
    }

    #[test]
    fn dark_half_hurts_uniformity_and_no_response_has_zero_visibility() {
        let mut data = vec![150u8; 30 * 20];
        data[..30 * 10].fill(0);
        let r = RasterFrame::gray(30, 20, data).unwrap();
        let m = frame_metrics(&r, &r, None).unwrap();
        // Row means are 0 and 150 in equal measure: CV = 1, so uniformity 0.
        assert!(m.illumination_uniformity < 0.5, "{m:?}");
        assert_eq!(m.deformation_visibility, 0.0);
    }

    #[test]
    fn scratch_lowers_integrity() {
        let r = RasterFrame::filled(50, 10, 1, 120).unwrap();
        let mut s = r.clone();
        for x in 0..20 {
            s.set(x, 4, 0, 60);
        }
        let m = frame_metrics(&s, &s, None).unwrap();
        assert!((m.structural_integrity - (1.0 - 20.0 / 500.0)).abs() < 1e-12);
    }

    #[test]
    fn lifespan_basics() {
        let r = RasterFrame::filled(20, 10, 1, 100).unwrap();
        let mut p = r.clone();
        p.set(5, 5, 0, 10);
        let samples = [(0u64, &r, &p), (100, &r, &p), (200, &r, &p)];
        let (curve, fail) = lifespan_curve(samples, true, 80.0).unwrap();
        assert!(curve.iter().all(|s| (s.soh - 100.0).abs() < 1e-9));
        assert_eq!(fail, None);
        let (_, fail) = lifespan_curve([(0u64, &r, &p), (1, &r, &r)], true, 0.0).unwrap();
        assert_eq!(fail, None);
        let err = lifespan_curve([(5u64, &r, &p), (5, &r, &p)], true, 80.0).unwrap_err();
        assert!(matches!(err, Error::Ordering { index: 1, .. }));
    }
}
