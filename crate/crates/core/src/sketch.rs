//! Stroke and sketch types, random initialization and polyline fitting.

use serde::{Deserialize, Serialize};

use crate::rng::SketchRng;

pub const DEFAULT_STROKE_WIDTH: f64 = 3.0;
pub const DEFAULT_SEGMENTS: usize = 5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SketchError {
    #[error("a stroke needs 3m+1 control points with m >= 1, got {0}")]
    PointCount(usize),
    #[error("stroke width must be positive and finite, got {0}")]
    Width(f64),
    #[error("{name} must lie in [0, 1], got {value}")]
    UnitRange { name: &'static str, value: f64 },
    #[error("control point {index} is not finite")]
    NonFinite { index: usize },
    #[error("canvas must be at least 1x1, got {0}x{1}")]
    Canvas(u32, u32),
    #[error("polyline fitting needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("segment count must be at least 1")]
    NoSegments,
}

/// A 2-D point in canvas pixels, origin at the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlPoint {
    pub x: f64,
    pub y: f64,
}

impl ControlPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k)
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn length(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<(f64, f64)> for ControlPoint {
    fn from((x, y): (f64, f64)) -> Self {
        Self::new(x, y)
    }
}

/// A connected path of cubic Bézier segments.
///
/// Segment `k` uses points `3k..=3k+3`, so neighbouring segments share their
/// junction point by storage and a path with `m` segments holds `3m + 1`
/// points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StrokeRepr", into = "StrokeRepr")]
pub struct Stroke {
    points: Vec<ControlPoint>,
    width: f64,
    ink: f64,
    opacity: f64,
    pub trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct StrokeRepr {
    points: Vec<ControlPoint>,
    width: f64,
    ink: f64,
    opacity: f64,
    trainable: bool,
}

impl TryFrom<StrokeRepr> for Stroke {
    type Error = SketchError;
    fn try_from(r: StrokeRepr) -> Result<Self, SketchError> {
        let mut s = Stroke::new(r.points, r.width, r.ink, r.opacity)?;
        s.trainable = r.trainable;
        Ok(s)
    }
}

impl From<Stroke> for StrokeRepr {
    fn from(s: Stroke) -> Self {
        StrokeRepr {
            points: s.points,
            width: s.width,
            ink: s.ink,
            opacity: s.opacity,
            trainable: s.trainable,
        }
    }
}

impl Stroke {
    /// Builds a trainable stroke, validating point count and visual attributes.
    pub fn new(
        points: Vec<ControlPoint>,
        width: f64,
        ink: f64,
        opacity: f64,
    ) -> Result<Self, SketchError> {
        if points.len() < 4 || !(points.len() - 1).is_multiple_of(3) {
            return Err(SketchError::PointCount(points.len()));
        }
        if let Some(index) = points.iter().position(|p| !p.is_finite()) {
            return Err(SketchError::NonFinite { index });
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(SketchError::Width(width));
        }
        for (name, value) in [("ink", ink), ("opacity", opacity)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SketchError::UnitRange { name, value });
            }
        }
        Ok(Self {
            points,
            width,
            ink,
            opacity,
            trainable: true,
        })
    }

    /// Opaque black stroke of the default width.
    pub fn black(points: Vec<ControlPoint>) -> Result<Self, SketchError> {
        Self::new(points, DEFAULT_STROKE_WIDTH, 1.0, 1.0)
    }

    pub fn with_trainable(mut self, trainable: bool) -> Self {
        self.trainable = trainable;
        self
    }

    pub fn points(&self) -> &[ControlPoint] {
        &self.points
    }

    /// Mutable access to coordinates; the point count cannot change.
    pub fn points_mut(&mut self) -> &mut [ControlPoint] {
        &mut self.points
    }

    pub fn segment_count(&self) -> usize {
        (self.points.len() - 1) / 3
    }

    pub fn segment(&self, k: usize) -> [ControlPoint; 4] {
        let p = &self.points[3 * k..3 * k + 4];
        [p[0], p[1], p[2], p[3]]
    }

    pub fn segments(&self) -> impl Iterator<Item = [ControlPoint; 4]> + '_ {
        (0..self.segment_count()).map(|k| self.segment(k))
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn ink(&self) -> f64 {
        self.ink
    }

    pub fn opacity(&self) -> f64 {
        self.opacity
    }

    /// Axis-aligned bounds of the control polygon: `(min, max)`.
    pub fn control_bounds(&self) -> (ControlPoint, ControlPoint) {
        let mut lo = ControlPoint::new(f64::INFINITY, f64::INFINITY);
        let mut hi = ControlPoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    pub fn translate(&mut self, dx: f64, dy: f64) {
        for p in &mut self.points {
            p.x += dx;
            p.y += dy;
        }
    }
}

/// An ordered set of strokes on a white canvas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sketch {
    pub strokes: Vec<Stroke>,
    canvas_w: u32,
    canvas_h: u32,
}

impl Sketch {
    pub fn new(canvas_w: u32, canvas_h: u32) -> Result<Self, SketchError> {
        if canvas_w < 1 || canvas_h < 1 {
            return Err(SketchError::Canvas(canvas_w, canvas_h));
        }
        Ok(Self {
            strokes: Vec::new(),
            canvas_w,
            canvas_h,
        })
    }

    pub fn with_strokes(
        canvas_w: u32,
        canvas_h: u32,
        strokes: Vec<Stroke>,
    ) -> Result<Self, SketchError> {
        let mut s = Self::new(canvas_w, canvas_h)?;
        s.strokes = strokes;
        Ok(s)
    }

    pub fn canvas_w(&self) -> u32 {
        self.canvas_w
    }

    pub fn canvas_h(&self) -> u32 {
        self.canvas_h
    }

    pub fn same_canvas(&self, other: &Sketch) -> bool {
        self.canvas_w == other.canvas_w && self.canvas_h == other.canvas_h
    }

    pub fn len(&self) -> usize {
        self.strokes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strokes.is_empty()
    }

    pub fn trainable_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.strokes
            .iter()
            .enumerate()
            .filter(|(_, s)| s.trainable)
            .map(|(i, _)| i)
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for s in &mut self.strokes {
            s.trainable = trainable;
        }
    }

    /// Total number of stored control points across all strokes.
    pub fn point_count(&self) -> usize {
        self.strokes.iter().map(|s| s.points.len()).sum()
    }

    /// Control points flattened to `[x0, y0, x1, y1, ...]` in stroke order.
    pub fn to_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.point_count() * 2);
        for s in &self.strokes {
            for p in &s.points {
                out.push(p.x);
                out.push(p.y);
            }
        }
        out
    }

    /// Inverse of [`Sketch::to_params`]. Panics if the length does not match.
    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.point_count() * 2, "parameter length");
        let mut it = params.chunks_exact(2);
        for s in &mut self.strokes {
            for p in &mut s.points {
                let c = it.next().unwrap();
                p.x = c[0];
                p.y = c[1];
            }
        }
    }

    /// Strokes of `self` followed by strokes of `other`, on `self`'s canvas.
    pub fn concat(&self, other: &Sketch) -> Sketch {
        let mut out = self.clone();
        out.strokes.extend(other.strokes.iter().cloned());
        out
    }
}

/// One random stroke: a uniform start point followed by a clamped random walk.
pub(crate) fn random_stroke(
    segments: usize,
    canvas_w: u32,
    canvas_h: u32,
    width: f64,
    rng: &mut SketchRng,
) -> Stroke {
    let (w, h) = (canvas_w as f64, canvas_h as f64);
    let r = 0.05 * w.min(h);
    let mut p = ControlPoint::new(rng.uniform(0.0, w), rng.uniform(0.0, h));
    let mut points = Vec::with_capacity(3 * segments + 1);
    points.push(p);
    for _ in 0..3 * segments {
        let dx = rng.uniform(-r, r);
        let dy = rng.uniform(-r, r);
        p = ControlPoint::new((p.x + dx).clamp(0.0, w), (p.y + dy).clamp(0.0, h));
        points.push(p);
    }
    Stroke::new(points, width, 1.0, 1.0).expect("random stroke is well formed")
}

/// `n` trainable black strokes of `segments` cubic segments each.
///
/// Each stroke starts at a uniform canvas point; every later control point
/// is the previous one plus a uniform offset in `[-r, r]` per axis with
/// `r = 0.05 * min(w, h)`, clamped to the canvas.
pub fn random_init_strokes(
    n: usize,
    segments: usize,
    canvas_w: u32,
    canvas_h: u32,
    rng: &mut SketchRng,
) -> Result<Sketch, SketchError> {
    if segments < 1 {
        return Err(SketchError::NoSegments);
    }
    let mut sketch = Sketch::new(canvas_w, canvas_h)?;
    sketch.strokes = (0..n)
        .map(|_| random_stroke(segments, canvas_w, canvas_h, DEFAULT_STROKE_WIDTH, rng))
        .collect();
    Ok(sketch)
}

/// Fits an interpolating cubic path through `points` via Catmull-Rom.
///
/// Interior tangents are central differences, endpoint tangents one-sided
/// differences. Each span becomes one Bézier segment with inner points
/// `p_i + m_i / 3` and `p_{i+1} - m_{i+1} / 3`.
pub fn fit_polyline_to_bezier(points: &[ControlPoint]) -> Result<Stroke, SketchError> {
    let n = points.len();
    if n < 2 {
        return Err(SketchError::TooFewPoints(n));
    }
    let tangent = |i: usize| -> ControlPoint {
        if i == 0 {
            points[1].sub(points[0])
        } else if i == n - 1 {
            points[n - 1].sub(points[n - 2])
        } else {
            points[i + 1].sub(points[i - 1]).scale(0.5)
        }
    };
    let mut out = Vec::with_capacity(3 * (n - 1) + 1);
    out.push(points[0]);
    for i in 0..n - 1 {
        let (m0, m1) = (tangent(i), tangent(i + 1));
        out.push(points[i].add(m0.scale(1.0 / 3.0)));
        out.push(points[i + 1].sub(m1.scale(1.0 / 3.0)));
        out.push(points[i + 1]);
    }
    Stroke::black(out)
}
