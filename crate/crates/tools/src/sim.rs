//! Synthetic sensor data built on the core simulator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tactile_core::camera::{distort_image, RemapTable};
use tactile_core::frame::{FloatPlane, PixelCoord, RasterFrame};
use tactile_core::synth::{render_contact, GelScene, Indenter, Profile};
use tactile_core::Error as CoreError;

use crate::error::Result;
use crate::pipeline::PipelineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndenterRecord {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub depth: f64,
    pub profile: String,
}

impl From<&Indenter> for IndenterRecord {
    fn from(i: &Indenter) -> Self {
        let profile = match i.profile {
            Profile::Gaussian => "gaussian",
            Profile::SphericalCap => "spherical-cap",
        };
        Self { x: i.center.x, y: i.center.y, radius: i.radius, depth: i.depth, profile: profile.into() }
    }
}

/// One to three random indenters with depth in `[0.2, 0.8]` and radius
/// between 10 px and a third of the patch height.
pub fn random_indenters(scene: &GelScene, rng: &mut ChaCha8Rng) -> Vec<Indenter> {
    let (w, h) = (scene.width as f64, scene.height as f64);
    let max_r = (h / 3.0).max(10.5);
    (0..rng.random_range(1..=3))
        .map(|_| {
            let profile = if rng.random() { Profile::Gaussian } else { Profile::SphericalCap };
            Indenter::new(
                PixelCoord::new(rng.random_range(0.0..w), rng.random_range(0.0..h)),
                rng.random_range(10.0..max_r),
                rng.random_range(0.2..=0.8),
                profile,
            )
        })
        .collect()
}

/// A contact frame with its truth mask and the indenters that made it.
pub struct ContactSample {
    pub frame: RasterFrame,
    pub mask: FloatPlane,
    pub indenters: Vec<Indenter>,
}

/// `count` contact frames, deterministic for `seed`. Frame `i` uses noise
/// seed `seed + 1 + i`; the reference uses `seed`.
pub fn contact_samples(scene: &GelScene, count: usize, seed: u64) -> Result<Vec<ContactSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let indenters = random_indenters(scene, &mut rng);
            let (frame, mask) = render_contact(scene, &indenters, seed.wrapping_add(1 + i as u64))?;
            Ok(ContactSample { frame, mask, indenters })
        })
        .collect()
}

/// Places a rectified gel patch back into the raw fisheye image described
/// by `config`. Pixels outside the gel region are 0.
pub fn embed_patch(patch: &RasterFrame, config: &PipelineConfig) -> Result<RasterFrame> {
    let spec = config.roi_spec()?;
    let (x0, y0, cw, ch) = spec.crop;
    if patch.size() != (cw, ch) {
        return Err(CoreError::Dimension(format!(
            "patch is {}x{}, ROI crop is {cw}x{ch}",
            patch.width(),
            patch.height()
        ))
        .into());
    }
    let output = config.output_camera()?;
    let camera = config.camera()?;
    let transform = spec.transform;
    let (pw, ph) = (cw as f64, ch as f64);
    let placement = RemapTable::from_fn(patch.size(), output.image_size(), |u, v| {
        let p = transform.apply(PixelCoord::new(u, v));
        let q = PixelCoord::new(p.x - x0 as f64, p.y - y0 as f64);
        (q.x >= 0.0 && q.y >= 0.0 && q.x <= pw - 1.0 && q.y <= ph - 1.0).then_some(q)
    });
    let pinhole = placement.apply(patch)?;
    Ok(distort_image(&pinhole, &output, &camera)?)
}
