//! One function per acceptance criterion. Each returns a [`Check`] with the
//! measured quantity next to its bound.

use std::time::{Duration, Instant};

use sketchloop_core::augment::{
    apply_augmentation, augmentation_backward, sample_augmentation, AugmentConfig, AugmentParams,
};
use sketchloop_core::guidance::wire::{
    decode_request, decode_response, encode_request, encode_response, GradSpace, GuidanceRequest, GuidanceResponse,
};
use sketchloop_core::guidance::{
    cfg_combine, Backend, GuidanceConfig, LatentEncoder, LatentGrid, MockDenoiser, NoiseSchedule, PixelTarget,
};
use sketchloop_core::optimize::{optimize_sketch, prune_and_reinit, CancelToken, Engine, OptimizeConfig};
use sketchloop_core::rng::Stream;
use sketchloop_core::session::{expand_prompt, EditOp, FrameStatus, Session, SessionSettings};
use sketchloop_core::sketch::random_init_strokes;
use sketchloop_core::{ControlPoint, RasterImage, Rasterizer, Sketch, SketchRng};
use sketchloop_service::api::{self, AppConfig, AppState};
use sketchloop_service::backend::GuidanceSpec;
use sketchloop_service::store::FileStore;

use crate::fixtures::*;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name, passed, detail: detail.into() }
    }
}

type CheckResult = Result<Check, String>;

pub type CheckFn = fn() -> CheckResult;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Every criterion in reporting order.
pub fn all() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("raster-gradient-fidelity", raster_gradient_fidelity),
        ("adjoint-dot-products", adjoint_dot_products),
        ("noise-schedule", noise_schedule),
        ("cfg-arithmetic", cfg_arithmetic),
        ("mock-sds-expectation", mock_sds_expectation),
        ("mock-end-to-end-convergence", mock_convergence),
        ("pixel-target-fitting", pixel_target_fitting),
        ("prune-invariants", prune_invariants),
        ("protocol-golden-bytes", protocol_golden_bytes),
        ("session-round-trip", session_round_trip),
        ("prompt-expansion-caption", prompt_expansion_caption),
        ("api-rejects-concurrent-runs", api_rejects_concurrent_runs),
        ("cli-determinism", cli_determinism),
    ]
}

/// Central differences of the full forward render against the analytic
/// backward pass, for random strokes and random cotangents supported on
/// pixels strictly inside the antialiasing band. Configurations whose
/// perturbed flattening changes its subdivision, or whose stencil moves some
/// band pixel across a switch of its nearest chord (a crease of the distance
/// field), are redrawn.
pub fn raster_gradient_fidelity() -> CheckResult {
    const NAME: &str = "raster-gradient-fidelity";
    let start = Instant::now();
    let r = Rasterizer::default();
    let mut rng = SketchRng::new(2025);
    let (w, h) = (40, 40);
    let step = 1e-3;
    let smooth = |s: f64| s * s * (3.0 - 2.0 * s);
    let (cov_lo, cov_hi) = (smooth(0.05), smooth(0.95));
    let (mut worst, mut configs, mut redrawn) = (0.0f64, 0, 0);
    while configs < 100 {
        let width = rng.uniform(2.0, 5.0);
        let segments = 1 + rng.int_inclusive(0, 1) as usize;
        let stroke = interior_stroke(&mut rng, w, h, segments, width);
        let oi = stroke.opacity() * stroke.ink();
        let sk = Sketch::with_strokes(w, h, vec![stroke]).map_err(err)?;
        let flats = r.flatten_sketch(&sk);
        let img = r.render_flattened(&sk, &flats).map_err(err)?;
        let mut v = RasterImage::zeros(w, h);
        let mut band = 0;
        for (i, &p) in img.data().iter().enumerate() {
            let cov = (1.0 - p) / oi;
            if cov > cov_lo && cov < cov_hi {
                v.data_mut()[i] = rng.uniform(-1.0, 1.0);
                band += 1;
            }
        }
        if band < 4 {
            continue;
        }
        let g = r.render_backward_flattened(&sk, &flats, &v).map_err(err)?.all_params();
        let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if scale == 0.0 {
            continue;
        }
        let base = sk.to_params();
        let band_px: Vec<ControlPoint> = (0..v.data().len())
            .filter(|&i| v.data()[i] != 0.0)
            .map(|i| ControlPoint::new((i % w as usize) as f64 + 0.5, (i / w as usize) as f64 + 0.5))
            .collect();
        let features = |f: &[ControlPoint]| band_px.iter().map(|&q| nearest_feature(f, q)).collect::<Vec<_>>();
        let base_features = features(&flats[0].vertices);
        let mut fd = Vec::with_capacity(base.len());
        let mut stable = true;
        for c in 0..base.len() {
            let mut side = |d: f64| {
                let mut p = base.clone();
                p[c] += d;
                let mut s = sk.clone();
                s.set_params(&p);
                let moved = r.flatten_sketch(&s);
                if moved.iter().zip(&flats).any(|(a, b)| a.params != b.params)
                    || features(&moved[0].vertices).iter().zip(&base_features).any(|(a, b)| !a.smoothly_joins(*b))
                {
                    stable = false;
                }
                r.render(&s).dot(&v)
            };
            let (plus, minus) = (side(step), side(-step));
            fd.push((plus - minus) / (2.0 * step));
        }
        if !stable {
            redrawn += 1;
            continue;
        }
        let e = g.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max) / scale;
        worst = worst.max(e);
        configs += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(Check::new(
        NAME,
        worst <= 1e-3 && secs < 30.0,
        format!("max relative error {worst:.3e} (bound 1e-3) over {configs} configs, {redrawn} redrawn; {secs:.1} s (limit 30 s)"),
    ))
}

/// Closest part of a polyline to a point: a chord interior or a vertex.
#[derive(Clone, Copy, PartialEq, Debug)]
enum Feature {
    Chord(usize),
    Vertex(usize),
}

impl Feature {
    /// A chord and its own endpoints meet with a continuous gradient; any
    /// other change of nearest feature is a crease.
    fn smoothly_joins(self, o: Feature) -> bool {
        match (self, o) {
            (Feature::Chord(c), Feature::Vertex(v)) | (Feature::Vertex(v), Feature::Chord(c)) => v == c || v == c + 1,
            _ => self == o,
        }
    }
}

fn nearest_feature(verts: &[ControlPoint], q: ControlPoint) -> Feature {
    let mut best = (f64::INFINITY, Feature::Vertex(0));
    for (i, pair) in verts.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len2 = dx * dx + dy * dy;
        let u = if len2 > 0.0 { ((q.x - a.x) * dx + (q.y - a.y) * dy) / len2 } else { 0.0 };
        let (feature, u) = if u <= 0.0 {
            (Feature::Vertex(i), 0.0)
        } else if u >= 1.0 {
            (Feature::Vertex(i + 1), 1.0)
        } else {
            (Feature::Chord(i), u)
        };
        let d = (q.x - a.x - u * dx).hypot(q.y - a.y - u * dy);
        if d < best.0 {
            best = (d, feature);
        }
    }
    best.1
}

/// `<f(u), v>` against `<u, f^T(v)>` for the augmentation's linear part and
/// the latent encoder.
pub fn adjoint_dot_products() -> CheckResult {
    const NAME: &str = "adjoint-dot-products";
    let mut rng = SketchRng::new(77);
    let cfg = AugmentConfig {
        perspective_p: 0.8,
        distortion: 0.4,
        scale: (0.5, 1.0),
        aspect: (0.8, 1.25),
        out_size: 16,
        batch: 1,
    };
    let (w, h) = (24, 20);
    let mut worst_aug = 0.0f64;
    for _ in 0..100 {
        let params = sample_augmentation(&mut rng, w, h, &cfg).map_err(err)?;
        let u = RasterImage::from_data(w, h, random_vec(&mut rng, (w * h) as usize)).map_err(err)?;
        let v = RasterImage::from_data(16, 16, random_vec(&mut rng, 256)).map_err(err)?;
        // Out-of-bounds taps read white, so the map is affine; pair the
        // adjoint with its linear part.
        let offset = apply_augmentation(&RasterImage::zeros(w, h), &params).map_err(err)?;
        let lin = apply_augmentation(&u, &params).map_err(err)?.zip_map(&offset, |a, b| a - b).map_err(err)?;
        let lhs = lin.dot(&v);
        let rhs = u.dot(&augmentation_backward(&params, &v).map_err(err)?);
        worst_aug = worst_aug.max((lhs - rhs).abs() / (u.norm() * v.norm()));
    }
    let mut worst_enc = 0.0f64;
    for trial in 0..100 {
        let enc = LatentEncoder::new(if trial % 2 == 0 { 4 } else { 8 });
        let u = RasterImage::from_data(48, 32, random_vec(&mut rng, 48 * 32)).map_err(err)?;
        let z = enc.encode(&u).map_err(err)?;
        let v = LatentGrid::new(z.width(), z.height(), random_vec(&mut rng, z.len())).map_err(err)?;
        let lhs = z.dot(&v);
        let rhs = u.dot(&enc.encode_backward(&v).map_err(err)?);
        worst_enc = worst_enc.max((lhs - rhs).abs() / (u.norm() * v.squared_norm().sqrt()));
    }
    Ok(Check::new(
        NAME,
        worst_aug <= 1e-6 && worst_enc <= 1e-6,
        format!("worst |<f(u),v> - <u,f'(v)>| / (|u||v|): augmentation {worst_aug:.2e}, encoder {worst_enc:.2e} (bound 1e-6, 100 trials each)"),
    ))
}

pub fn noise_schedule() -> CheckResult {
    const NAME: &str = "noise-schedule";
    let s = NoiseSchedule::default();
    let mut worst = 0.0f64;
    for t in 1..=s.steps() {
        let (a, sg) = s.schedule_at(t).map_err(err)?;
        worst = worst.max((a * a + sg * sg - 1.0).abs());
    }
    let got = s.alpha_bar(1000).map_err(err)?;
    let oracle = dd_alpha_bar(1000, 8.5e-4, 1.2e-2, 1000);
    let gap = (got - oracle).abs();
    Ok(Check::new(
        NAME,
        s.steps() == 1000 && worst <= 1e-12 && gap <= 1e-12,
        format!("max |a^2 + s^2 - 1| = {worst:.1e}; alpha_bar(1000) = {got:.17} vs double-double {oracle:.17} (gap {gap:.1e}, bound 1e-12)"),
    ))
}

pub fn cfg_arithmetic() -> CheckResult {
    const NAME: &str = "cfg-arithmetic";
    let mut rng = SketchRng::new(12);
    let grid = |rng: &mut SketchRng| LatentGrid::new(8, 8, (0..64).map(|_| rng.uniform(-50.0, 50.0)).collect()).unwrap();
    let mut ok_zero = true;
    let mut ok_equal = true;
    for _ in 0..100 {
        let (c, u) = (grid(&mut rng), grid(&mut rng));
        ok_zero &= cfg_combine(&c, &u, 0.0).map_err(err)? == c;
        let omega = rng.uniform(0.0, 200.0);
        ok_equal &= cfg_combine(&c, &c, omega).map_err(err)? == c;
    }
    let one = |v: f64| LatentGrid::filled(1, 1, v);
    let got = cfg_combine(&one(0.2), &one(0.1), 100.0).map_err(err)?.data()[0];
    Ok(Check::new(
        NAME,
        ok_zero && ok_equal && got == 10.2,
        format!("omega=0 identity {ok_zero}; equal-inputs identity {ok_equal}; (0.2, 0.1, omega=100) -> {got:?} (want 10.2 exactly)"),
    ))
}

/// Monte-Carlo mean of the mock residual over 10,000 noise draws against
/// the closed form `(alpha/sigma)(z - z_center)`, at 3 standard errors.
pub fn mock_sds_expectation() -> CheckResult {
    const NAME: &str = "mock-sds-expectation";
    let mut rng = SketchRng::new(31);
    let blend = 0.5;
    let mut mock = MockDenoiser::new(blend, LatentEncoder::new(4));
    let target = RasterImage::from_data(16, 16, (0..256).map(|_| rng.unit()).collect()).map_err(err)?;
    mock.register("glyph", target.clone());
    let cond = RasterImage::from_data(16, 16, (0..256).map(|_| 0.5 + 0.5 * rng.unit()).collect()).map_err(err)?;
    let image = RasterImage::from_data(16, 16, (0..256).map(|_| rng.unit()).collect()).map_err(err)?;
    let (t, omega, n) = (400, 100.0, 10_000usize);
    let (alpha, sigma) = NoiseSchedule::default().schedule_at(t).map_err(err)?;
    let z = mock.encoder.encode(&image).map_err(err)?;
    // Center from its definition, outside the mock.
    let mixed = target.zip_map(&cond, |a, c| blend * a + (1.0 - blend) * c).map_err(err)?;
    let zc: Vec<f64> = mock.encoder.encode(&mixed).map_err(err)?.data().iter().map(|m| (1.0 + omega) * m - omega).collect();
    let cells = z.len();
    let mut sum = vec![0.0; cells];
    let mut sum_sq = vec![0.0; cells];
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        let eps = LatentGrid::new(z.width(), z.height(), (0..cells).map(|_| rng.standard_normal()).collect()).map_err(err)?;
        let r = mock.residual(&z, &eps, alpha, sigma, "glyph", &cond, omega).map_err(err)?;
        for (i, &x) in r.data().iter().enumerate() {
            sum[i] += x;
        }
        draws.push(r);
    }
    let mut worst_ratio = 0.0f64;
    let (mut worst_gap, mut min_se, mut max_se) = (0.0f64, f64::INFINITY, 0.0f64);
    for i in 0..cells {
        let mean = sum[i] / n as f64;
        for d in &draws {
            sum_sq[i] += (d.data()[i] - mean).powi(2);
        }
        let se = (sum_sq[i] / (n - 1) as f64).sqrt() / (n as f64).sqrt();
        let expected = alpha / sigma * (z.data()[i] - zc[i]);
        let gap = (mean - expected).abs();
        worst_gap = worst_gap.max(gap);
        min_se = min_se.min(se);
        max_se = max_se.max(se);
        worst_ratio = worst_ratio.max(if se > 0.0 { gap / se } else if gap == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(Check::new(
        NAME,
        worst_ratio <= 3.0,
        format!(
            "t={t}, omega={omega}, {n} draws, {cells} cells: worst |mean - closed form| = {worst_gap:.2e} = {worst_ratio:.1} SE (bound 3 SE; SE in [{min_se:.1e}, {max_se:.1e}])"
        ),
    ))
}

/// Squared latent distance of `sketch`'s fixed view to `zc`.
fn latent_distance(mock: &MockDenoiser, sketch: &Sketch, view: &AugmentParams, zc: &LatentGrid) -> Result<f64, String> {
    let img = apply_augmentation(&Rasterizer::default().render(sketch), view).map_err(err)?;
    Ok(mock.encoder.encode(&img).map_err(err)?.squared_distance(zc))
}

pub fn mock_convergence() -> CheckResult {
    const NAME: &str = "mock-end-to-end-convergence";
    let w = 600;
    let ras = Rasterizer::default();
    let view = AugmentParams::identity(w, w, 512);
    let empty = Sketch::new(w, w).map_err(err)?;
    let center = apply_augmentation(&ras.render(&glyph(w, 6.0)), &view).map_err(err)?;
    let cond = apply_augmentation(&ras.render(&empty), &view).map_err(err)?;
    let mut mock = MockDenoiser::default();
    let omega = 100.0;
    mock.register("glyph", MockDenoiser::target_for_center(&center, &cond, omega, mock.blend).map_err(err)?);
    let zc = mock.encoder.encode(&center).map_err(err)?;
    let s0 = random_init_strokes(16, 5, w, w, &mut SketchRng::stream(42, Stream::Init)).map_err(err)?;
    let mut cfg = OptimizeConfig {
        iterations: 1000,
        snapshot_every: 0,
        seed: 42,
        augment: AugmentConfig::identity(512),
        guidance: GuidanceConfig { prompt: "glyph".into(), omega, ..Default::default() },
        ..Default::default()
    };
    cfg.adam.lr = 1.0;
    let engine = Engine::new(Backend::MockLatent(mock.clone()));
    let run = || optimize_sketch(&empty, &s0, &cfg, &engine, &mut |_| {}, &CancelToken::new()).map_err(|f| err(f.error));
    let start = Instant::now();
    let a = run()?;
    let secs = start.elapsed().as_secs_f64();
    let b = run()?;
    let bits = |s: &Sketch| s.to_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let identical = bits(&a.sketch) == bits(&b.sketch) && a.trace == b.trace;
    let d0 = latent_distance(&mock, &s0, &view, &zc)?;
    let d1 = latent_distance(&mock, &a.sketch, &view, &zc)?;
    let ratio = d1 / d0;
    Ok(Check::new(
        NAME,
        ratio <= 0.10 && identical && secs < 300.0,
        format!(
            "16x5 strokes, 1000 iters, lr 1, omega 100, seed 42: |z - z_c|^2 {d0:.4e} -> {d1:.4e}, ratio {ratio:.4} (bound 0.10); rerun bit-identical {identical}; {secs:.0} s (limit 300 s)"
        ),
    ))
}

/// Ratio measured on the first oracle run of this scene; a regression pin.
pub const PIXEL_FIT_PINNED_RATIO: f64 = 0.071030;

fn mean_sq(a: &RasterImage, b: &RasterImage) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data().len() as f64
}

pub fn pixel_target_fitting() -> CheckResult {
    const NAME: &str = "pixel-target-fitting";
    let w = 200;
    let ras = Rasterizer::default();
    let target = ras.render(&glyph(w, 3.0));
    let s0 = random_init_strokes(16, 5, w, w, &mut SketchRng::stream(42, Stream::Init)).map_err(err)?;
    let cfg = OptimizeConfig { iterations: 1000, seed: 42, augment: AugmentConfig::identity(w), ..Default::default() };
    let engine = Engine::new(Backend::PixelTarget(PixelTarget { target: target.clone() }));
    let empty = Sketch::new(w, w).map_err(err)?;
    let out = optimize_sketch(&empty, &s0, &cfg, &engine, &mut |_| {}, &CancelToken::new()).map_err(|f| err(f.error))?;
    let l0 = mean_sq(&ras.render(&s0), &target);
    let l1 = mean_sq(&ras.render(&out.sketch), &target);
    let ratio = l1 / l0;
    let pinned = (ratio - PIXEL_FIT_PINNED_RATIO).abs() <= 0.01 * PIXEL_FIT_PINNED_RATIO;
    Ok(Check::new(
        NAME,
        ratio <= 0.10 && pinned,
        format!("L2 {l0:.4e} -> {l1:.4e} over 1000 iters, ratio {ratio:.6} (bound 0.10; pinned {PIXEL_FIT_PINNED_RATIO:.6} +-1%)"),
    ))
}

pub fn prune_invariants() -> CheckResult {
    const NAME: &str = "prune-invariants";
    let mut rng = SketchRng::new(1234);
    let cfg = OptimizeConfig::default();
    let (mut conserved, mut degenerate_pruned, mut frozen_kept) = (true, true, true);
    let (mut pruned_total, mut frozen_total) = (0usize, 0usize);
    for trial in 0..1000u64 {
        let n = 1 + (rng.unit() * 12.0) as usize;
        let mut strokes = Vec::new();
        let mut kinds = Vec::new();
        for _ in 0..n {
            let segs = 1 + (rng.unit() * 5.0) as usize;
            let deg = rng.bernoulli(0.4);
            let frozen = rng.bernoulli(0.3);
            let s = if deg { degenerate_stroke(&mut rng, segs) } else { healthy_stroke(&mut rng, segs) };
            strokes.push(s.with_trainable(!frozen));
            kinds.push((deg, frozen));
        }
        let mut sketch = Sketch::with_strokes(200, 200, strokes).map_err(err)?;
        let before = sketch.clone();
        let pruned = prune_and_reinit(&mut sketch, &cfg, &mut SketchRng::new(trial));
        conserved &= sketch.len() == before.len();
        for (i, &(deg, frozen)) in kinds.iter().enumerate() {
            if frozen {
                frozen_total += 1;
                frozen_kept &= !pruned.contains(&i) && sketch.strokes[i] == before.strokes[i];
            } else if deg {
                degenerate_pruned &= pruned.contains(&i) && sketch.strokes[i] != before.strokes[i];
            }
        }
        pruned_total += pruned.len();
    }
    Ok(Check::new(
        NAME,
        conserved && degenerate_pruned && frozen_kept,
        format!("1000 trials: count conserved {conserved}; degenerate pruned {degenerate_pruned} ({pruned_total} prunes); frozen untouched {frozen_kept} ({frozen_total} frozen)"),
    ))
}

pub fn protocol_golden_bytes() -> CheckResult {
    const NAME: &str = "protocol-golden-bytes";
    let req_bytes = golden_request_bytes();
    let resp_bytes = golden_response_bytes();
    let want_req = GuidanceRequest {
        prompt: "cat".into(),
        negative_prompt: None,
        omega: 100.0,
        timestep: Some(400),
        width: 2,
        height: 2,
        image: vec![1.0, 0.5, 0.25, 0.0],
        cond: vec![1.0; 4],
    };
    let want_resp = GuidanceResponse { loss: Some(0.5), space: GradSpace::Pixel, pool: 1, grad: vec![-1.0, 2.0, 0.0, 0.5] };
    let req = decode_request(&req_bytes).map_err(err)?;
    let resp = decode_response(&resp_bytes).map_err(err)?;
    let decoded = req == want_req && resp == want_resp;
    let reencoded = encode_request(&req) == req_bytes && encode_response(&resp) == resp_bytes;
    Ok(Check::new(
        NAME,
        decoded && reencoded,
        format!("request {} B, response {} B: decode matches {decoded}; re-encode byte-identical {reencoded}", req_bytes.len(), resp_bytes.len()),
    ))
}

fn small_settings() -> SessionSettings {
    let mut s = SessionSettings { canvas_w: 64, canvas_h: 48, strokes: 3, segments: 2, ..Default::default() };
    s.config.iterations = 3;
    s.config.augment = AugmentConfig::identity(32);
    s
}

pub fn session_round_trip() -> CheckResult {
    const NAME: &str = "session-round-trip";
    let zero = Engine::new(Backend::Zero);
    let mut s = Session::new("validation", 100, small_settings());
    s.add_frame("a cat", false, None).map_err(err)?;
    s.apply_edit(0, &EditOp::Translate { indices: Some(vec![0]), dx: 3.5, dy: -1.25 }).map_err(err)?;
    s.apply_edit(0, &EditOp::AddStrokes {
        strokes: vec![],
        polylines: vec![vec![ControlPoint::new(1.0, 2.0), ControlPoint::new(30.0, 40.0), ControlPoint::new(50.0, 10.0)]],
        frozen: true,
    })
    .map_err(err)?;
    s.run_frame(0, &zero, &mut |_| {}, &CancelToken::new()).map_err(err)?;
    s.add_frame("[…] asleep", true, None).map_err(err)?;
    s.apply_edit(1, &EditOp::Scale { indices: None, factor: 1.5, pivot: None }).map_err(err)?;
    let token = CancelToken::new();
    token.cancel();
    s.run_frame(1, &zero, &mut |_| {}, &token).map_err(err)?;
    s.add_frame("a dog", false, None).map_err(err)?;
    let text = s.to_json();
    let back = Session::from_json(&text).map_err(err)?;
    let memory = back == s && back.to_json() == text;
    let dir = tempfile::tempdir().map_err(err)?;
    let store = FileStore::open(dir.path()).map_err(err)?;
    store.save(&s).map_err(err)?;
    let disk = store.load(&s.id).map_err(err)? == s;
    let statuses: Vec<FrameStatus> = s.frames.iter().map(|f| f.status).collect();
    Ok(Check::new(
        NAME,
        memory && disk,
        format!("3 frames {statuses:?}, {} B document: in-memory equality {memory}; file store equality {disk}", text.len()),
    ))
}

pub fn prompt_expansion_caption() -> CheckResult {
    const NAME: &str = "prompt-expansion-caption";
    const FIRST: &str = "A number of drawn absurd little figures upon the paper";
    const TEMPLATE: &str = "[…], the paper lying on the sundial";
    const WANT: &str = "A number of drawn absurd little figures upon the paper, the paper lying on the sundial";
    let direct = expand_prompt(TEMPLATE, FIRST).map_err(err)?;
    let mut s = Session::new("caption", 0, small_settings());
    s.add_frame(FIRST, false, None).map_err(err)?;
    s.run_frame(0, &Engine::new(Backend::Zero), &mut |_| {}, &CancelToken::new()).map_err(err)?;
    let framed = s.add_frame(TEMPLATE, true, None).map_err(err)?.resolved_prompt.clone();
    s.run_frame(1, &Engine::new(Backend::Zero), &mut |_| {}, &CancelToken::new()).map_err(err)?;
    let board = s.export_storyboard().map_err(err)?;
    let captioned = board.contains(&format!(">{WANT}</text>"));
    Ok(Check::new(
        NAME,
        direct == WANT && framed == WANT && captioned,
        format!("expanded {direct:?}; frame prompt matches {}; storyboard caption present {captioned}", framed == WANT),
    ))
}

/// Starts the real server on an ephemeral port and drives it over TCP.
pub fn api_rejects_concurrent_runs() -> CheckResult {
    const NAME: &str = "api-rejects-concurrent-runs";
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(1).enable_all().build().map_err(err)?;
    let mut defaults = small_settings();
    defaults.config.snapshot_every = 1;
    let state = AppState::new(AppConfig { guidance: GuidanceSpec::Zero, defaults, store: None }).map_err(err)?;
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).map_err(err)?;
    let addr = listener.local_addr().map_err(err)?.to_string();
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let server = rt.spawn(api::serve(listener, state, async {
        let _ = stop_rx.await;
    }));

    let result = (|| -> Result<(Vec<u16>, bool), String> {
        let j = |body: &str| -> Result<serde_json::Value, String> { serde_json::from_str(body).map_err(err) };
        let (_, body) = http(&addr, "POST", "/v1/sessions", Some("{}")).map_err(err)?;
        let id = j(&body)?["id"].as_str().ok_or("no session id")?.to_string();
        let frames = format!("/v1/sessions/{id}/frames");
        http(&addr, "POST", &frames, Some(r#"{"template":"a cat"}"#)).map_err(err)?;
        http(&addr, "POST", &frames, Some(r#"{"template":"a dog"}"#)).map_err(err)?;
        let mut codes = Vec::new();
        let long = r#"{"iterations":10000000}"#;
        codes.push(http(&addr, "POST", &format!("{frames}/0/run"), Some(long)).map_err(err)?.0);
        codes.push(http(&addr, "POST", &format!("{frames}/1/run"), None).map_err(err)?.0);
        codes.push(http(&addr, "POST", &format!("{frames}/0/run"), None).map_err(err)?.0);
        codes.push(http(&addr, "POST", &format!("{frames}/0/cancel"), None).map_err(err)?.0);
        let deadline = Instant::now() + Duration::from_secs(30);
        let released = loop {
            let (_, doc) = http(&addr, "GET", &format!("/v1/sessions/{id}"), None).map_err(err)?;
            if j(&doc)?["frames"][0]["status"] == "cancelled" {
                break true;
            }
            if Instant::now() > deadline {
                break false;
            }
            std::thread::sleep(Duration::from_millis(10));
        };
        codes.push(http(&addr, "POST", &format!("{frames}/1/run"), None).map_err(err)?.0);
        Ok((codes, released))
    })();
    let _ = stop_tx.send(());
    let _ = rt.block_on(server);
    let (codes, released) = result?;
    Ok(Check::new(
        NAME,
        codes == [202, 409, 409, 200, 202] && released,
        format!("run, run other, run same, cancel, run other -> {codes:?} (want [202, 409, 409, 200, 202]); lock released on cancel {released}"),
    ))
}

/// Invokes the `sketchloop run` entry point twice with identical flags.
pub fn cli_determinism() -> CheckResult {
    const NAME: &str = "cli-determinism";
    let dir = tempfile::tempdir().map_err(err)?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    std::fs::write(p("apple.ndjson"), format!("{APPLE}\n")).map_err(err)?;
    let code = sketchloop_service::cli::main_with_args([
        "sketchloop", "quickdraw-preview", &p("apple.ndjson"), "--canvas", "96", "--margin", "0.25", "--out", &p("target.svg"),
    ]);
    if code != 0 {
        return Err(format!("preview exited {code}"));
    }
    let guidance = format!("pixel:{}", p("target.svg"));
    let mut outputs = Vec::new();
    for k in 0..2 {
        let (out, trace) = (p(&format!("out{k}.svg")), p(&format!("trace{k}.jsonl")));
        let code = sketchloop_service::cli::main_with_args([
            "sketchloop", "run", "--prompt", "an apple", "--init", &p("apple.ndjson"), "--canvas", "96", "--strokes", "6",
            "--iters", "60", "--seed", "5", "--guidance", &guidance, "--augment", "on", "--out-size", "48", "--out", &out,
            "--trace", &trace,
        ]);
        if code != 0 {
            return Err(format!("run {k} exited {code}"));
        }
        outputs.push((std::fs::read(&out).map_err(err)?, std::fs::read(&trace).map_err(err)?));
    }
    let svg_same = outputs[0].0 == outputs[1].0;
    let trace_same = outputs[0].1 == outputs[1].1;
    Ok(Check::new(
        NAME,
        svg_same && trace_same,
        format!("two runs with identical flags: SVG ({} B) byte-identical {svg_same}; trace byte-identical {trace_same}", outputs[0].0.len()),
    ))
}
