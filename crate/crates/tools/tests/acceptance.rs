//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL
//! line with the measured values; the process fails if any criterion does.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tactile_core::calibrate::{calibrate, CalibrationConfig, ViewExtrinsics};
use tactile_core::camera::{distort_image, undistort_image, CameraIntrinsics};
use tactile_core::contrastive::{
    correlated_dataset, dual_positive_grad, dual_positive_loss, normalize_backward, train_alignment, AlignmentConfig,
    Embedding, JointVector, MemoryBank,
};
use tactile_core::enhance::{build_reference, enhance, EnhancementConfig, DEFAULT_ALPHA};
use tactile_core::episode::{pair_timestamps, Episode, EpisodeMeta, StreamSample, DEFAULT_TOLERANCE_US};
use tactile_core::frame::{FloatPlane, PixelCoord, RasterFrame};
use tactile_core::health::{
    calibrate_wear, default_probe, lifespan_curve, reference_wear_shape, simulate_wear_sample,
    DEFAULT_FAILURE_THRESHOLD,
};
use tactile_core::synth::{
    random_board_poses, render_checkerboard, render_contact, render_reference, synth_checkerboard_views, Board,
    GelScene, Indenter, Profile, WearModel,
};
use tactile_tools::cli::bench_inputs;
use tactile_tools::pipeline::{bench, default_config, Pipeline};
use tactile_tools::store::{read_episode, write_episode};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok { Ok(detail) } else { Err(detail) }
}

// 1. Calibration closed loop.

fn calibration_run(sigma: f64, seed: u64) -> (tactile_core::calibrate::CalibrationResult, f64) {
    let cam = calibration_truth();
    let board = Board::default();
    let poses = random_board_poses(&board, &cam, 20, (100.0, 200.0), 30f64.to_radians(), 5.0, 100 + seed).unwrap();
    let views = synth_checkerboard_views(&board, &cam, &poses, sigma, seed).unwrap();
    let start = Instant::now();
    let res = calibrate(&views, (640, 480), None, &CalibrationConfig::default()).unwrap();
    (res, start.elapsed().as_secs_f64())
}

fn calibration_truth() -> CameraIntrinsics {
    CameraIntrinsics::new(320.0, 320.0, 320.0, 240.0, [0.05, 0.0, 0.0, 0.0], 640, 480).unwrap()
}

fn criterion_calibration() -> Outcome {
    let (mut f_err, mut c_err, mut k_worst, mut slowest): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let mut k_mean = 0.0;
    let (mut rms_lo, mut rms_hi) = (f64::INFINITY, 0.0f64);
    for seed in 0..10 {
        let (res, secs) = calibration_run(0.2, seed);
        let c = res.intrinsics;
        f_err = f_err.max((c.fx / 320.0 - 1.0).abs()).max((c.fy / 320.0 - 1.0).abs());
        c_err = c_err.max((c.cx - 320.0).abs()).max((c.cy - 240.0).abs());
        k_worst = k_worst.max((c.k[0] / 0.05 - 1.0).abs());
        k_mean += c.k[0] / 10.0;
        rms_lo = rms_lo.min(res.rms_reprojection_error);
        rms_hi = rms_hi.max(res.rms_reprojection_error);
        slowest = slowest.max(secs);
    }
    let k_err = (k_mean / 0.05 - 1.0).abs();
    let (exact, _) = calibration_run(0.0, 7);
    let exact_f = (exact.intrinsics.fx / 320.0 - 1.0).abs().max((exact.intrinsics.fy / 320.0 - 1.0).abs());
    let ok = f_err < 0.01
        && c_err < 1.0
        && k_err < 0.10
        && rms_lo >= 0.1
        && rms_hi <= 0.3
        && slowest < 10.0
        && exact_f < 1e-3
        && exact.rms_reprojection_error < 1e-3;
    check(
        ok,
        format!(
            "sigma 0.2 over 10 seeds: |df/f| {f_err:.2e}, |dc| {c_err:.3} px, mean-k1 error {k_err:.3} (worst single seed {k_worst:.3}), rms {rms_lo:.3}..{rms_hi:.3} px, \
             slowest {slowest:.2} s; noise-free |df/f| {exact_f:.1e}, rms {:.1e} px",
            exact.rms_reprojection_error
        ),
    )
}

// 2. Undistortion round trip and straightening.

fn injective_to(cam: &CameraIntrinsics, theta: f64) -> bool {
    let [k1, k2, k3, k4] = cam.k;
    (1..=1000).all(|i| {
        let t2 = (theta * i as f64 / 1000.0).powi(2);
        1.0 + 3.0 * k1 * t2 + 5.0 * k2 * t2 * t2 + 7.0 * k3 * t2.powi(3) + 9.0 * k4 * t2.powi(4) > 0.0
    })
}

fn round_trip_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut tested = 0;
    while tested < 1000 {
        let k = [(); 4].map(|_| rng.random_range(-0.1..=0.1));
        let f = rng.random_range(200.0..500.0);
        let cam = CameraIntrinsics::new(f, f, 320.0, 240.0, k, 640, 480).unwrap();
        let theta: f64 = rng.random_range(0.0..1.0);
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        if !injective_to(&cam, theta) {
            continue;
        }
        tested += 1;
        let (x, y) = (theta.tan() * phi.cos(), theta.tan() * phi.sin());
        let back = cam.undistort_point(cam.distort_point(x, y)).unwrap();
        worst = worst.max((back.x - (f * x + 320.0)).hypot(back.y - (f * y + 240.0)));
    }
    worst
}

fn refine_corner(img: &[f64], w: usize, guess: PixelCoord) -> PixelCoord {
    const HALF: i64 = 5;
    let (mut px, mut py) = (guess.x, guess.y);
    for _ in 0..20 {
        let (cx, cy) = (px.round() as i64, py.round() as i64);
        let (mut a, mut b, mut c, mut bx, mut by) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for y in cy - HALF..=cy + HALF {
            for x in cx - HALF..=cx + HALF {
                let at = |xx: i64, yy: i64| img[yy as usize * w + xx as usize];
                let gx = (at(x + 1, y) - at(x - 1, y)) / 2.0;
                let gy = (at(x, y + 1) - at(x, y - 1)) / 2.0;
                let wgt = (-(((x - cx).pow(2) + (y - cy).pow(2)) as f64) / 18.0).exp();
                let (gxx, gxy, gyy) = (wgt * gx * gx, wgt * gx * gy, wgt * gy * gy);
                a += gxx;
                b += gxy;
                c += gyy;
                bx += gxx * x as f64 + gxy * y as f64;
                by += gxy * x as f64 + gyy * y as f64;
            }
        }
        let det = a * c - b * b;
        let (nx, ny) = ((c * bx - b * by) / det, (a * by - b * bx) / det);
        let step = (nx - px).hypot(ny - py);
        (px, py) = (nx, ny);
        if step < 1e-4 {
            break;
        }
    }
    PixelCoord::new(px, py)
}

fn line_residual(pts: &[PixelCoord]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (nx, ny) = (-angle.sin(), angle.cos());
    pts.iter().map(|p| ((p.x - mx) * nx + (p.y - my) * ny).abs()).fold(0.0, f64::max)
}

fn straightening_residual() -> f64 {
    let board = Board::default();
    let pinhole = CameraIntrinsics::pinhole(320.0, 640, 480);
    let fisheye = CameraIntrinsics::new(320.0, 320.0, 320.0, 240.0, [0.05, 0.0, 0.0, 0.0], 640, 480).unwrap();
    let c = board.center();
    let pose = ViewExtrinsics { rotation: [0.12, -0.15, 0.05], translation: [-c[0], -c[1], 130.0] };
    let raw = distort_image(&render_checkerboard(&board, &pinhole, &pose, 4), &pinhole, &fisheye).unwrap();
    let restored = undistort_image(&raw, &fisheye, &pinhole).unwrap();
    let img: Vec<f64> = restored.data().iter().map(|&v| f64::from(v)).collect();
    let corners: Vec<PixelCoord> = board
        .corners()
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let [x, y, z] = pose.transform(b);
            let nudge = if i % 2 == 0 { 1.2 } else { -1.2 };
            let guess = PixelCoord::new(320.0 * x / z + 320.0 + nudge, 320.0 * y / z + 240.0 - nudge);
            refine_corner(&img, 640, guess)
        })
        .collect();
    corners.chunks(board.cols).map(line_residual).fold(0.0, f64::max)
}

fn criterion_undistortion() -> Outcome {
    let round_trip = round_trip_error();
    let straight = straightening_residual();
    check(
        round_trip < 1e-6 && straight < 0.5,
        format!("round-trip max error {round_trip:.2e} px over 1000 points; corner-row line residual {straight:.3} px"),
    )
}

// 3. Enhancement identities.

fn channel(frame: &RasterFrame, c: usize) -> Vec<u8> {
    frame.data().iter().skip(c).step_by(3).copied().collect()
}

fn oracle_composite(reference: &RasterFrame, current: &RasterFrame, alpha: f64) -> Vec<u8> {
    let (w, h) = reference.size();
    let q = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    let mut out = Vec::with_capacity(3 * w * h);
    for (i, (&r, &c)) in reference.data().iter().zip(current.data()).enumerate() {
        let wy = (-alpha * (i / w) as f64 / h as f64).exp();
        let (r, c) = (f64::from(r) * wy, f64::from(c) * wy);
        out.extend([q((r - c).max(0.0)), q((c - r).max(0.0)), q(r)]);
    }
    out
}

fn criterion_enhancement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut overlap, mut nonzero_same, mut mismatched) = (0usize, 0usize, 0usize);
    for _ in 0..100 {
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..30));
        let alpha = rng.random_range(0.0..2.0);
        let cfg = EnhancementConfig::with_alpha(alpha);
        let mut frame = || RasterFrame::gray(w, h, (0..w * h).map(|_| rng.random()).collect()).unwrap();
        let (source, current) = (frame(), frame());
        let reference = build_reference(std::slice::from_ref(&source), alpha).unwrap();
        let out = enhance(&reference, &current, &cfg).unwrap();
        let (dark, bright) = (channel(&out, 0), channel(&out, 1));
        overlap += dark.iter().zip(&bright).filter(|(d, b)| **d != 0 && **b != 0).count();
        mismatched += usize::from(out.data() != oracle_composite(&source, &current, alpha).as_slice());
        let same = enhance(&reference, &source, &cfg).unwrap();
        nonzero_same += channel(&same, 0).iter().chain(&channel(&same, 1)).filter(|&&v| v != 0).count();
    }
    check(
        overlap == 0 && nonzero_same == 0 && mismatched == 0,
        format!(
            "100 random pairs: {overlap} pixels with dark*bright != 0, {nonzero_same} nonzero pixels for identical frames, \
             {mismatched} composites differing from the (dark, bright, ref) oracle"
        ),
    )
}

// 4. Contrastive loss exactness.

fn unit(x: &[f64]) -> Embedding {
    Embedding::unit(x.to_vec()).unwrap()
}

fn loss_of(xv: &[Vec<f64>], xt: &[Vec<f64>], bank: &MemoryBank, tau: f64) -> f64 {
    let v: Vec<_> = xv.iter().map(|x| unit(x)).collect();
    let t: Vec<_> = xt.iter().map(|x| unit(x)).collect();
    dual_positive_loss(&v, &t, bank, tau).unwrap().loss
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8)
}

fn gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, k, d) = (1 + seed as usize % 4, 2 + seed as usize % 7, 8 + seed as usize % 9);
    let vec = |rng: &mut ChaCha8Rng| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let xv: Vec<_> = (0..=b).map(|_| vec(&mut rng)).collect();
    let xt: Vec<_> = (0..b).map(|_| vec(&mut rng)).collect();
    let bank = MemoryBank::with_entries(k, (0..k).map(|_| unit(&vec(&mut rng)))).unwrap();
    let tau = rng.random_range(0.05..1.0);

    let v: Vec<_> = xv.iter().map(|x| unit(x)).collect();
    let t: Vec<_> = xt.iter().map(|x| unit(x)).collect();
    let g = dual_positive_grad(&v, &t, &bank, tau).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for tactile in [true, false] {
        let set = if tactile { &xt } else { &xv };
        for (i, x) in set.iter().enumerate() {
            let analytic = normalize_backward(x, if tactile { &g.tactile[i] } else { &g.visual[i] });
            let numeric: Vec<f64> = (0..d)
                .map(|j| {
                    let shifted = |delta: f64| {
                        let (mut pv, mut pt) = (xv.clone(), xt.clone());
                        if tactile { pt[i][j] += delta } else { pv[i][j] += delta }
                        loss_of(&pv, &pt, &bank, tau)
                    };
                    (shifted(h) - shifted(-h)) / (2.0 * h)
                })
                .collect();
            worst = worst.max(rel_err(&analytic, &numeric));
        }
    }
    let numeric_tau = (loss_of(&xv, &xt, &bank, tau + h) - loss_of(&xv, &xt, &bank, tau - h)) / (2.0 * h);
    worst.max(rel_err(&[g.tau], &[numeric_tau]))
}

fn criterion_loss() -> Outcome {
    let v = [unit(&[1.0, 0.0]), unit(&[0.0, 1.0])];
    let empty = dual_positive_loss(&v, &[unit(&[0.6, 0.8])], &MemoryBank::new(4), 0.07).unwrap().loss;
    let e = unit(&[1.0, 0.0, 0.0]);
    let bank = MemoryBank::with_entries(1, [e.clone()]).unwrap();
    let equal = dual_positive_loss(&[e.clone(), e.clone()], &[e], &bank, 0.07).unwrap().loss;
    let equal_err = (equal - 1.5f64.ln()).abs();
    let grad = (0..20).map(gradient_error).fold(0.0, f64::max);
    check(
        empty.to_bits() == 0 && equal_err < 1e-12 && grad < 1e-5,
        format!("empty-bank loss {empty}; |L - ln(3/2)| {equal_err:.1e}; worst gradient relative error {grad:.1e} over 20 configurations"),
    )
}

// 5. Alignment training.

fn criterion_alignment() -> Outcome {
    let data = correlated_dataset(256, 64, 0).unwrap();
    let run = train_alignment(&data, &AlignmentConfig::default()).unwrap();
    let again = train_alignment(&data, &AlignmentConfig::default()).unwrap();
    let m = &run.metrics;
    let (first, last) = (m[0], m[m.len() - 1]);
    let identical = run == again && m.iter().zip(&again.metrics).all(|(a, b)| a.loss.to_bits() == b.loss.to_bits());
    check(
        m.len() == 10 && last.loss < first.loss && last.retrieval_top1 >= 0.9 && identical,
        format!(
            "loss {:.4} -> {:.4} over {} epochs, top-1 {:.3}, bit-identical rerun: {identical}",
            first.loss,
            last.loss,
            m.len(),
            last.retrieval_top1
        ),
    )
}

// 6. Throughput.

fn criterion_throughput() -> Outcome {
    let config = default_config();
    let (inputs, reference) = bench_inputs(&config, 0).unwrap();
    let pipeline = Pipeline::new(&config, std::slice::from_ref(&reference)).unwrap();
    let (w, h) = pipeline.input_size();
    let report = bench(&pipeline, &inputs, 1000, 1).unwrap();
    let gap = (report.stage_sum_us() - report.mean_frame_us).abs() / report.mean_frame_us;
    check(
        report.fps >= 90.0 && gap <= 0.10 && (w, h) == (640, 480),
        format!(
            "{} frames of {w}x{h}, 1 thread: {:.1} fps (mean {:.0} us, p99 {:.0} us); stage sum within {:.2}% of total",
            report.frames,
            report.fps,
            report.mean_frame_us,
            report.p99_frame_us,
            100.0 * gap
        ),
    )
}

// 7. SOH lifespan.

fn soh_curve(scene: &GelScene, wear: &WearModel, step: u64) -> (Vec<f64>, Option<u64>) {
    let probe = default_probe(scene);
    let frames: Vec<_> = (0..=10_000 / step)
        .map(|i| {
            let (r, p) = simulate_wear_sample(scene, wear, &probe, i * step, 7).unwrap();
            (i * step, r, p)
        })
        .collect();
    let (samples, fail) =
        lifespan_curve(frames.iter().map(|(c, r, p)| (*c, r, p)), true, DEFAULT_FAILURE_THRESHOLD).unwrap();
    (samples.iter().map(|s| s.soh).collect(), fail)
}

fn criterion_soh() -> Outcome {
    let scene = GelScene { noise_sigma: 0.0, ..GelScene::default() };
    let probe = default_probe(&scene);
    let wear =
        calibrate_wear(&scene, &reference_wear_shape(&scene), &probe, 2000, DEFAULT_FAILURE_THRESHOLD).unwrap();
    let (curve, fail) = soh_curve(&scene, &wear, 10);
    let rises = curve.windows(2).filter(|w| w[1] > w[0]).count();
    let (fresh, _) = soh_curve(&scene, &WearModel::default(), 1000);
    let fresh_ok = fresh.iter().all(|&s| s == 100.0);
    check(
        fail.is_some_and(|c| (1900..=2100).contains(&c)) && rises == 0 && curve[0] == 100.0 && fresh_ok,
        format!(
            "failure cycle {fail:?}; {rises} increases over {} samples; initial SOH {}; unworn sensor at 100 throughout: {fresh_ok}",
            curve.len(),
            curve[0]
        ),
    )
}

// 8. Pairing and storage.

fn jittered(n: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    (0..n).map(|i| 10_000 + i as u64 * 33_333 + rng.random_range(0..=10_000u64) - 5_000).collect()
}

fn store_round_trip() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (w, h) = (32, 24);
    let frame = |rng: &mut ChaCha8Rng| RasterFrame::new(w, h, 3, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap();
    let times = jittered(40, &mut rng);
    let visual: Vec<_> = times.iter().map(|&t| StreamSample::new(t, frame(&mut rng))).collect();
    let tactile: Vec<_> = jittered(40, &mut rng).into_iter().map(|t| StreamSample::new(t, frame(&mut rng))).collect();
    let joints: Vec<_> = jittered(40, &mut rng)
        .into_iter()
        .map(|t| StreamSample::new(t, JointVector::new([(); 7].map(|_| rng.random_range(-1.0..=1.0))).unwrap()))
        .collect();
    let meta = EpisodeMeta { resolution: (w, h), ..EpisodeMeta::new("acceptance", "store round trip") };
    let (episode, _): (Episode, _) = Episode::assemble(meta, visual, tactile, joints).unwrap();
    let root = tempfile::tempdir().unwrap();
    let manifest = write_episode(&episode, root.path()).unwrap();
    read_episode(&manifest).unwrap() == episode && !episode.records.is_empty()
}

fn criterion_pairing() -> Outcome {
    let mut worst: f64 = 1.0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, t, j) = (jittered(1000, &mut rng), jittered(1000, &mut rng), jittered(1000, &mut rng));
        let (pairs, _) = pair_timestamps(&v, &t, &j, DEFAULT_TOLERANCE_US).unwrap();
        worst = worst.min(pairs.len() as f64 / 1000.0);
    }
    let round_trip = store_round_trip();
    check(
        worst >= 0.99 && round_trip,
        format!("worst pairing rate {:.1}% over 10 seeds of 1000 samples; store round trip identical: {round_trip}", 100.0 * worst),
    )
}

// 9. Closed-loop perception.

fn iou(dark: &[u8], truth: &FloatPlane) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&d, &t) in dark.iter().zip(truth.values()) {
        let (s, t) = (d > 0, t > 0.5);
        inter += usize::from(s && t);
        union += usize::from(s || t);
    }
    if union == 0 { 1.0 } else { inter as f64 / union as f64 }
}

fn criterion_perception() -> Outcome {
    let scene = GelScene { noise_sigma: 0.0, ..GelScene::default() };
    let reference = build_reference(&[render_reference(&scene, 0).unwrap()], DEFAULT_ALPHA).unwrap();
    let cfg = EnhancementConfig::default();
    let (mut worst, mut cases) = (f64::INFINITY, 0);
    for profile in [Profile::Gaussian, Profile::SphericalCap] {
        for depth in [0.2, 0.35, 0.6, 1.0] {
            for radius in [10.0, 14.5, 25.0, 40.0] {
                for (cx, cy) in [(200.0, 75.0), (60.3, 30.7), (330.0, 120.2), (20.0, 140.0)] {
                    let ind = Indenter::new(PixelCoord::new(cx, cy), radius, depth, profile);
                    let (frame, truth) = render_contact(&scene, &[ind], 0).unwrap();
                    let out = enhance(&reference, &frame, &cfg).unwrap();
                    worst = worst.min(iou(&channel(&out, 0), &truth));
                    cases += 1;
                }
            }
        }
    }
    check(worst >= 0.8, format!("worst dark-channel IoU {worst:.3} over {cases} indenters (depth >= 0.2, radius >= 10 px)"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("calibration closed loop", criterion_calibration),
        ("undistortion round trip and straightening", criterion_undistortion),
        ("enhancement identities", criterion_enhancement),
        ("contrastive loss exactness", criterion_loss),
        ("alignment training", criterion_alignment),
        ("throughput", criterion_throughput),
        ("SOH lifespan", criterion_soh),
        ("pairing and storage", criterion_pairing),
        ("closed-loop perception", criterion_perception),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
