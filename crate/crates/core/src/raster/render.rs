//! Soft-coverage stroke rendering and its adjoint.
//!
//! For a pixel centre `q` and stroke `i` with polyline distance `d`:
//!
//! ```text
//! s     = clamp((w/2 + a - d) / (2a), 0, 1)
//! cov   = s^2 (3 - 2s)
//! I(q)  = prod_i (1 - opacity_i * ink_i * cov_i)
//! ```
//!
//! Per-pixel factors are multiplied in sorted order, so the image does not
//! depend on stroke order down to the last bit. The backward pass treats the
//! flattening parameters as constants and is otherwise exact.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::sketch::{ControlPoint, Sketch, Stroke};

use super::bezier::{bernstein, flatten, FlattenedStroke};
use super::{RasterError, RasterImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    /// Maximum chord deviation when flattening, in pixels.
    pub flatten_tol: f64,
    /// Anti-aliasing half-width `a`, in pixels.
    pub aa_half_width: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            flatten_tol: 0.1,
            aa_half_width: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    pixel: u32,
    factor: f64,
    dcov_dd: f64,
    seg: u32,
    u: f64,
    /// Unit vector from the nearest polyline point towards the pixel centre.
    dir: ControlPoint,
}

/// Nearest-chord search over the pixels a stroke can touch.
fn stroke_samples(
    stroke: &Stroke,
    flat: &FlattenedStroke,
    width: u32,
    height: u32,
    settings: &RenderSettings,
) -> Vec<Sample> {
    let a = settings.aa_half_width;
    let half_w = stroke.width() / 2.0;
    let reach = half_w + a;
    let verts = &flat.local;
    let (ox, oy) = (flat.origin.x, flat.origin.y);

    // Pixel spans in canvas coordinates for a local interval; `ox`/`oy` are
    // integers, so the span moves exactly with the stroke.
    let pixel_range = |lo: f64, hi: f64, o: f64, n: u32| -> Option<(u32, u32)> {
        let first = ((lo - reach - 0.5).ceil() + o).max(0.0);
        let last = ((hi + reach - 0.5).floor() + o).min(n as f64 - 1.0);
        (first <= last).then_some((first as u32, last as u32))
    };

    let (mut lo, mut hi) = (verts[0], verts[0]);
    for v in verts {
        lo.x = lo.x.min(v.x);
        lo.y = lo.y.min(v.y);
        hi.x = hi.x.max(v.x);
        hi.y = hi.y.max(v.y);
    }
    let (Some((x0, x1)), Some((y0, y1))) =
        (pixel_range(lo.x, hi.x, ox, width), pixel_range(lo.y, hi.y, oy, height))
    else {
        return Vec::new();
    };
    let bw = (x1 - x0 + 1) as usize;
    let bh = (y1 - y0 + 1) as usize;
    let mut best_d2 = vec![f64::INFINITY; bw * bh];
    let mut best_seg = vec![0u32; bw * bh];
    let mut best_u = vec![0.0f64; bw * bh];

    let chords = verts.len().saturating_sub(1).max(1);
    for k in 0..chords {
        let pa = verts[k];
        let pb = verts[(k + 1).min(verts.len() - 1)];
        let (Some((sx0, sx1)), Some((sy0, sy1))) = (
            pixel_range(pa.x.min(pb.x), pa.x.max(pb.x), ox, width),
            pixel_range(pa.y.min(pb.y), pa.y.max(pb.y), oy, height),
        ) else {
            continue;
        };
        let ab = pb.sub(pa);
        let len2 = ab.dot(ab);
        for py in sy0.max(y0)..=sy1.min(y1) {
            let qy = py as f64 + 0.5 - oy;
            let row = (py - y0) as usize * bw;
            for px in sx0.max(x0)..=sx1.min(x1) {
                let q = ControlPoint::new(px as f64 + 0.5 - ox, qy);
                let aq = q.sub(pa);
                let u = if len2 > 0.0 {
                    (aq.dot(ab) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let diff = q.sub(pa.add(ab.scale(u)));
                let d2 = diff.dot(diff);
                let idx = row + (px - x0) as usize;
                if d2 < best_d2[idx] {
                    best_d2[idx] = d2;
                    best_seg[idx] = k as u32;
                    best_u[idx] = u;
                }
            }
        }
    }

    let strength = stroke.opacity() * stroke.ink();
    let mut out = Vec::new();
    for ly in 0..bh {
        for lx in 0..bw {
            let idx = ly * bw + lx;
            let d2 = best_d2[idx];
            if !(d2 < reach * reach) {
                continue;
            }
            let d = d2.sqrt();
            let raw = (reach - d) / (2.0 * a);
            let s = raw.clamp(0.0, 1.0);
            let cov = s * s * (3.0 - 2.0 * s);
            if cov <= 0.0 {
                continue;
            }
            let dcov_dd = if raw > 0.0 && raw < 1.0 {
                -6.0 * s * (1.0 - s) / (2.0 * a)
            } else {
                0.0
            };
            let (px, py) = (x0 + lx as u32, y0 + ly as u32);
            let k = best_seg[idx] as usize;
            let u = best_u[idx];
            let pa = verts[k];
            let pb = verts[(k + 1).min(verts.len() - 1)];
            let q = ControlPoint::new(px as f64 + 0.5 - ox, py as f64 + 0.5 - oy);
            let diff = q.sub(pa.add(pb.sub(pa).scale(u)));
            let dir = if d > 0.0 { diff.scale(1.0 / d) } else { ControlPoint::default() };
            out.push(Sample {
                pixel: py * width + px,
                factor: 1.0 - strength * cov,
                dcov_dd,
                seg: k as u32,
                u,
                dir,
            });
        }
    }
    out
}

/// Per-pixel lists of coverage factors, each sorted ascending.
struct FactorTable {
    offsets: Vec<u32>,
    factors: Vec<f64>,
}

impl FactorTable {
    fn build(samples: &[Vec<Sample>], n_pixels: usize) -> Self {
        let mut offsets = vec![0u32; n_pixels + 1];
        for s in samples.iter().flatten() {
            offsets[s.pixel as usize + 1] += 1;
        }
        for i in 0..n_pixels {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut factors = vec![0.0; *offsets.last().unwrap() as usize];
        for s in samples.iter().flatten() {
            let c = &mut cursor[s.pixel as usize];
            factors[*c as usize] = s.factor;
            *c += 1;
        }
        for p in 0..n_pixels {
            let (a, b) = (offsets[p] as usize, offsets[p + 1] as usize);
            if b - a > 1 {
                factors[a..b].sort_by(f64::total_cmp);
            }
        }
        Self { offsets, factors }
    }

    fn pixel(&self, p: usize) -> &[f64] {
        &self.factors[self.offsets[p] as usize..self.offsets[p + 1] as usize]
    }

    fn intensity(&self, p: usize) -> f64 {
        self.pixel(p).iter().fold(1.0, |acc, f| acc * f)
    }

    /// Product of all factors at `p` except one occurrence of `skip`.
    fn product_without(&self, p: usize, skip: f64) -> f64 {
        let mut skipped = false;
        let mut acc = 1.0;
        for &f in self.pixel(p) {
            if !skipped && f.to_bits() == skip.to_bits() {
                skipped = true;
            } else {
                acc *= f;
            }
        }
        acc
    }
}

/// Control-point gradients for every stroke of a sketch.
///
/// Frozen strokes are included so callers can inspect them, but
/// [`StrokeGradients::masked_params`] zeroes them before they reach an
/// optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct StrokeGradients {
    pub per_stroke: Vec<Vec<ControlPoint>>,
    trainable: Vec<bool>,
}

impl StrokeGradients {
    pub fn is_trainable(&self, stroke: usize) -> bool {
        self.trainable[stroke]
    }

    pub fn frozen(&self) -> impl Iterator<Item = (usize, &[ControlPoint])> {
        self.per_stroke
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.trainable[*i])
            .map(|(i, g)| (i, g.as_slice()))
    }

    /// Gradients in [`Sketch::to_params`] layout, every coordinate included.
    pub fn all_params(&self) -> Vec<f64> {
        self.per_stroke
            .iter()
            .flatten()
            .flat_map(|g| [g.x, g.y])
            .collect()
    }

    /// Like [`StrokeGradients::all_params`] with frozen strokes zeroed.
    pub fn masked_params(&self) -> Vec<f64> {
        self.per_stroke
            .iter()
            .zip(&self.trainable)
            .flat_map(|(gs, &t)| gs.iter().flat_map(move |g| if t { [g.x, g.y] } else { [0.0, 0.0] }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Rasterizer {
    pub settings: RenderSettings,
}

impl Rasterizer {
    pub fn new(settings: RenderSettings) -> Self {
        Self { settings }
    }

    pub fn flatten_sketch(&self, sketch: &Sketch) -> Vec<FlattenedStroke> {
        sketch
            .strokes
            .par_iter()
            .map(|s| flatten(s, self.settings.flatten_tol).expect("settings tolerance is positive"))
            .collect()
    }

    fn samples(&self, sketch: &Sketch, flats: &[FlattenedStroke]) -> Result<Vec<Vec<Sample>>, RasterError> {
        if flats.len() != sketch.len() {
            return Err(RasterError::Flattening {
                expected: sketch.len(),
                got: flats.len(),
            });
        }
        let (w, h) = (sketch.canvas_w(), sketch.canvas_h());
        Ok(sketch
            .strokes
            .par_iter()
            .zip(flats.par_iter())
            .map(|(s, f)| stroke_samples(s, f, w, h, &self.settings))
            .collect())
    }

    pub fn render(&self, sketch: &Sketch) -> RasterImage {
        let flats = self.flatten_sketch(sketch);
        self.render_flattened(sketch, &flats).expect("one flattening per stroke")
    }

    /// Renders with a caller-supplied flattening (one per stroke).
    pub fn render_flattened(
        &self,
        sketch: &Sketch,
        flats: &[FlattenedStroke],
    ) -> Result<RasterImage, RasterError> {
        let (w, h) = (sketch.canvas_w(), sketch.canvas_h());
        let samples = self.samples(sketch, flats)?;
        let n = w as usize * h as usize;
        let table = FactorTable::build(&samples, n);
        let mut img = RasterImage::white(w, h);
        img.data_mut()
            .par_chunks_mut(w as usize)
            .enumerate()
            .for_each(|(row, out)| {
                let base = row * w as usize;
                for (x, v) in out.iter_mut().enumerate() {
                    *v = table.intensity(base + x);
                }
            });
        Ok(img)
    }

    pub fn render_backward(
        &self,
        sketch: &Sketch,
        grad: &RasterImage,
    ) -> Result<StrokeGradients, RasterError> {
        let flats = self.flatten_sketch(sketch);
        self.render_backward_flattened(sketch, &flats, grad)
    }

    /// Adjoint of [`Rasterizer::render_flattened`] at fixed vertex parameters.
    pub fn render_backward_flattened(
        &self,
        sketch: &Sketch,
        flats: &[FlattenedStroke],
        grad: &RasterImage,
    ) -> Result<StrokeGradients, RasterError> {
        let (w, h) = (sketch.canvas_w(), sketch.canvas_h());
        grad.check_shape((w, h))?;
        let samples = self.samples(sketch, flats)?;
        let table = FactorTable::build(&samples, w as usize * h as usize);
        let g = grad.data();

        let per_stroke = sketch
            .strokes
            .par_iter()
            .zip(flats.par_iter())
            .zip(samples.par_iter())
            .map(|((stroke, flat), samples)| {
                let strength = stroke.opacity() * stroke.ink();
                let mut vgrad = vec![ControlPoint::default(); flat.vertices.len()];
                for s in samples {
                    let gp = g[s.pixel as usize];
                    if gp == 0.0 || s.dcov_dd == 0.0 {
                        continue;
                    }
                    let others = table.product_without(s.pixel as usize, s.factor);
                    let dl_dd = gp * (-strength) * others * s.dcov_dd;
                    // d(d)/dA = -dir (1 - u), d(d)/dB = -dir u
                    let k = s.seg as usize;
                    let kb = (k + 1).min(vgrad.len() - 1);
                    vgrad[k] = vgrad[k].sub(s.dir.scale(dl_dd * (1.0 - s.u)));
                    vgrad[kb] = vgrad[kb].sub(s.dir.scale(dl_dd * s.u));
                }
                let m = stroke.segment_count();
                let mut cgrad = vec![ControlPoint::default(); stroke.points().len()];
                for (vg, &param) in vgrad.iter().zip(&flat.params) {
                    if vg.x == 0.0 && vg.y == 0.0 {
                        continue;
                    }
                    let (k, t) = FlattenedStroke::locate(param, m);
                    for (j, b) in bernstein(t).into_iter().enumerate() {
                        cgrad[3 * k + j] = cgrad[3 * k + j].add(vg.scale(b));
                    }
                }
                cgrad
            })
            .collect();

        Ok(StrokeGradients {
            per_stroke,
            trainable: sketch.strokes.iter().map(|s| s.trainable).collect(),
        })
    }
}
