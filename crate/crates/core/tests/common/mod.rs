#![allow(dead_code)]

use sketchloop_core::raster::{FlattenedStroke, RenderSettings};
use sketchloop_core::sketch::{ControlPoint, Sketch, Stroke};
use sketchloop_core::SketchRng;

/// A gently curving stroke whose support stays inside a `w x h` canvas.
pub fn interior_stroke(rng: &mut SketchRng, w: u32, h: u32, segments: usize, width: f64) -> Stroke {
    let margin = 10.0;
    let (wf, hf) = (w as f64, h as f64);
    let mut p = ControlPoint::new(rng.uniform(margin, wf - margin), rng.uniform(margin, hf - margin));
    let mut pts = vec![p];
    for _ in 0..3 * segments {
        p = ControlPoint::new(
            (p.x + rng.uniform(-6.0, 6.0)).clamp(margin, wf - margin),
            (p.y + rng.uniform(-6.0, 6.0)).clamp(margin, hf - margin),
        );
        pts.push(p);
    }
    Stroke::new(pts, width, rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0)).unwrap()
}

fn seg_dist(q: ControlPoint, a: ControlPoint, b: ControlPoint) -> f64 {
    let (abx, aby) = (b.x - a.x, b.y - a.y);
    let len2 = abx * abx + aby * aby;
    let u = if len2 == 0.0 { 0.0 } else { (((q.x - a.x) * abx + (q.y - a.y) * aby) / len2).clamp(0.0, 1.0) };
    let (px, py) = (a.x + u * abx, a.y + u * aby);
    ((q.x - px).powi(2) + (q.y - py).powi(2)).sqrt()
}

/// Brute-force rendering: every pixel against every chord of every stroke.
pub fn reference_render(sketch: &Sketch, flats: &[FlattenedStroke], settings: &RenderSettings) -> Vec<f64> {
    let (w, h) = (sketch.canvas_w(), sketch.canvas_h());
    let a = settings.aa_half_width;
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let q = ControlPoint::new(x as f64 + 0.5, y as f64 + 0.5);
            let mut factors = Vec::new();
            for (s, f) in sketch.strokes.iter().zip(flats) {
                let v = &f.vertices;
                let d = if v.len() == 1 {
                    seg_dist(q, v[0], v[0])
                } else {
                    v.windows(2).map(|c| seg_dist(q, c[0], c[1])).fold(f64::INFINITY, f64::min)
                };
                let t = ((s.width() / 2.0 + a - d) / (2.0 * a)).clamp(0.0, 1.0);
                let cov = t * t * (3.0 - 2.0 * t);
                if cov > 0.0 {
                    factors.push(1.0 - s.opacity() * s.ink() * cov);
                }
            }
            factors.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out.push(factors.iter().product());
        }
    }
    out
}

pub fn random_vec(rng: &mut SketchRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}
