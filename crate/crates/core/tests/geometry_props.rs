use proptest::prelude::*;
use tactile_core::frame::{bilinear_sample, to_gray, PixelCoord, RasterFrame};
use tactile_core::roi::{estimate_affine, rasterize_mask, rectify, AffineTransform, PolygonMask, RoiSpec};

fn smooth_frame(w: usize, h: usize, phase: f64) -> RasterFrame {
    let data = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            (128.0 + 60.0 * (x / 17.0 + phase).sin() + 50.0 * (y / 13.0 - phase).cos()).round() as u8
        })
        .collect();
    RasterFrame::gray(w, h, data).unwrap()
}

fn affine() -> impl Strategy<Value = AffineTransform> {
    affine_within(0.2, 0.15, 0.1, 5.0)
}

fn affine_within(rot: f64, scale: f64, shear: f64, shift: f64) -> impl Strategy<Value = AffineTransform> {
    (-rot..rot, 1.0 - scale..1.0 + scale, 1.0 - scale..1.0 + scale, -shear..shear, -shift..shift, -shift..shift).prop_map(
        |(rot, sx, sy, shear, tx, ty)| {
            let (c, s) = (rot.cos(), rot.sin());
            AffineTransform::new([[c * sx, -s * sy + shear, tx], [s * sx, c * sy, ty]]).unwrap()
        },
    )
}

proptest! {
    #[test]
    fn affine_recovery_is_exact(a in affine(), pts in prop::collection::vec((0.0f64..640.0, 0.0f64..480.0), 3..30)) {
        let src: Vec<PixelCoord> = pts.iter().map(|&(x, y)| PixelCoord::new(x, y)).collect();
        // Reject near-collinear samples, which are a documented error case.
        let spread = src.windows(3).map(|w| {
            ((w[1].x - w[0].x) * (w[2].y - w[0].y) - (w[1].y - w[0].y) * (w[2].x - w[0].x)).abs()
        }).fold(0.0, f64::max);
        prop_assume!(spread > 100.0);
        let corr: Vec<_> = src.iter().map(|&p| (p, a.apply(p))).collect();
        let (fit, rms) = estimate_affine(&corr).unwrap();
        prop_assert!(rms < 1e-9);
        for (p, q) in &corr {
            let r = fit.apply(*p);
            prop_assert!((r.x - q.x).abs() < 1e-9 && (r.y - q.y).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_rectify_is_identity(w in 1usize..50, h in 1usize..50, seed in any::<u8>()) {
        let data = (0..w * h).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        let f = RasterFrame::gray(w, h, data).unwrap();
        prop_assert_eq!(rectify(&f, &RoiSpec::identity((w, h))).unwrap(), f);
    }

    #[test]
    fn rectification_composes(
        a1 in affine_within(0.1, 0.05, 0.05, 3.0),
        a2 in affine_within(0.1, 0.05, 0.05, 3.0),
        phase in 0.0f64..6.0,
    ) {
        let frame = smooth_frame(160, 120, phase);
        let first = RoiSpec::new(PolygonMask::full((160, 120)), a1, (20, 20, 110, 75)).unwrap();
        let second = RoiSpec::new(PolygonMask::full((110, 75)), a2, (15, 15, 70, 40)).unwrap();
        let two_step = rectify(&rectify(&frame, &first).unwrap(), &second).unwrap();

        let shifted = AffineTransform::translation(-20.0, -20.0).compose(&a1);
        let direct = RoiSpec::new(PolygonMask::full((160, 120)), a2.compose(&shifted), (15, 15, 70, 40)).unwrap();
        let one_step = rectify(&frame, &direct).unwrap();
        let worst = two_step.data().iter().zip(one_step.data()).map(|(a, b)| a.abs_diff(*b)).max().unwrap();
        prop_assert!(worst <= 1, "max difference {}", worst);
    }

    #[test]
    fn mask_matches_brute_force(
        pts in prop::collection::vec((0.0f64..30.0, 0.0f64..20.0), 3..7),
    ) {
        let mut verts: Vec<PixelCoord> = pts.iter().map(|&(x, y)| PixelCoord::new(x, y)).collect();
        // Sorting by angle around the centroid gives a simple (star-shaped) polygon.
        let (mx, my) = verts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
        let (mx, my) = (mx / verts.len() as f64, my / verts.len() as f64);
        verts.sort_by(|p, q| (p.y - my).atan2(p.x - mx).total_cmp(&(q.y - my).atan2(q.x - mx)));
        let Ok(poly) = PolygonMask::new(verts.clone(), (30, 20)) else { return Ok(()) };
        let mask = rasterize_mask(&poly);
        for y in 0..20 {
            for x in 0..30 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut inside = false;
                for i in 0..verts.len() {
                    let (a, b) = (verts[i], verts[(i + 1) % verts.len()]);
                    if (a.y > py) != (b.y > py) && px < a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y) {
                        inside = !inside;
                    }
                }
                let on_edge = (0..verts.len()).any(|i| {
                    let (a, b) = (verts[i], verts[(i + 1) % verts.len()]);
                    let cross = (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
                    cross.abs() < 1e-9 * (b.x - a.x).hypot(b.y - a.y).max(1.0)
                });
                prop_assume!(!on_edge);
                prop_assert_eq!(mask.get(x, y) == 1.0, inside, "pixel ({}, {})", x, y);
            }
        }
    }

    #[test]
    fn bilinear_is_exact_on_lattice_and_bounded(
        data in prop::collection::vec(any::<u8>(), 12), x in 0.0f64..=3.0, y in 0.0f64..=2.0,
    ) {
        let f = RasterFrame::gray(4, 3, data.clone()).unwrap();
        let v = bilinear_sample(&f, PixelCoord::new(x, y)).unwrap()[0];
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(3), (y0 + 1).min(2));
        let n = [data[y0 * 4 + x0], data[y0 * 4 + x1], data[y1 * 4 + x0], data[y1 * 4 + x1]];
        let lo = f64::from(*n.iter().min().unwrap());
        let hi = f64::from(*n.iter().max().unwrap());
        prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        let lattice = bilinear_sample(&f, PixelCoord::new(x0 as f64, y0 as f64)).unwrap()[0];
        prop_assert_eq!(lattice, f64::from(data[y0 * 4 + x0]));
    }

    #[test]
    fn gray_is_idempotent(data in prop::collection::vec(any::<u8>(), 3 * 20)) {
        let once = to_gray(&RasterFrame::new(5, 4, 3, data).unwrap());
        prop_assert_eq!(to_gray(&once), once);
    }
}
