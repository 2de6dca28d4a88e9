//! Cubic Bézier evaluation and adaptive flattening.

use crate::sketch::{ControlPoint, Stroke};

use super::RasterError;

/// Deepest subdivision level per segment; bounds work on pathological curves.
const MAX_DEPTH: u32 = 18;

/// Bernstein weights of a cubic at `t`.
pub fn bernstein(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t]
}

/// Evaluates `B(t)` in Bernstein form. `t` must lie in `[0, 1]`.
pub fn eval_bezier(seg: &[ControlPoint; 4], t: f64) -> Result<ControlPoint, RasterError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(RasterError::ParamRange(t));
    }
    Ok(eval_unchecked(seg, t))
}

pub(crate) fn eval_unchecked(seg: &[ControlPoint; 4], t: f64) -> ControlPoint {
    if t == 0.0 {
        return seg[0];
    }
    if t == 1.0 {
        return seg[3];
    }
    let b = bernstein(t);
    ControlPoint::new(
        b[0] * seg[0].x + b[1] * seg[1].x + b[2] * seg[2].x + b[3] * seg[3].x,
        b[0] * seg[0].y + b[1] * seg[1].y + b[2] * seg[2].y + b[3] * seg[3].y,
    )
}

fn mid(a: ControlPoint, b: ControlPoint) -> ControlPoint {
    ControlPoint::new((a.x + b.x) * 0.5, (a.y + b.y) * 0.5)
}

fn split_half(q: &[ControlPoint; 4]) -> ([ControlPoint; 4], [ControlPoint; 4]) {
    let ab = mid(q[0], q[1]);
    let bc = mid(q[1], q[2]);
    let cd = mid(q[2], q[3]);
    let abc = mid(ab, bc);
    let bcd = mid(bc, cd);
    let m = mid(abc, bcd);
    ([q[0], ab, abc, m], [m, bcd, cd, q[3]])
}

/// Distance from `p` to the closed segment `a`-`b`.
pub fn point_segment_distance(p: ControlPoint, a: ControlPoint, b: ControlPoint) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    let u = if len2 > 0.0 {
        (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.sub(a.add(ab.scale(u))).length()
}

/// Upper bound on the distance from the curve piece to its chord.
///
/// Distance to a segment is convex, so its maximum over the convex hull of
/// the control polygon is attained at a control point.
fn chord_deviation_bound(q: &[ControlPoint; 4]) -> f64 {
    point_segment_distance(q[1], q[0], q[3]).max(point_segment_distance(q[2], q[0], q[3]))
}

fn subdivide(q: &[ControlPoint; 4], t0: f64, t1: f64, tol: f64, depth: u32, out: &mut Vec<f64>) {
    if depth >= MAX_DEPTH || chord_deviation_bound(q) <= tol {
        out.push(t1);
        return;
    }
    let (l, r) = split_half(q);
    let tm = 0.5 * (t0 + t1);
    subdivide(&l, t0, tm, tol, depth + 1, out);
    subdivide(&r, tm, t1, tol, depth + 1, out);
}

/// Polyline approximation of a stroke with the curve parameter of each vertex.
///
/// `params` are global: vertex parameter `k + t` lies on segment `k` at local
/// parameter `t`, so they increase strictly along the path. The last vertex
/// carries parameter `m` (the segment count).
///
/// Evaluation happens relative to `origin`, the integer floor of the first
/// control point, so an integer translation of the stroke moves `local`
/// by nothing and the rendered image by exactly that many pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlattenedStroke {
    /// Canvas-space vertices, `local + origin`.
    pub vertices: Vec<ControlPoint>,
    pub params: Vec<f64>,
    pub origin: ControlPoint,
    /// Vertices relative to `origin`.
    pub local: Vec<ControlPoint>,
}

fn origin_of(stroke: &Stroke) -> ControlPoint {
    let p = stroke.points()[0];
    ControlPoint::new(p.x.floor(), p.y.floor())
}

fn local_segment(stroke: &Stroke, k: usize, origin: ControlPoint) -> [ControlPoint; 4] {
    stroke.segment(k).map(|p| p.sub(origin))
}

impl FlattenedStroke {
    /// Splits a global parameter into `(segment index, local t)`.
    pub fn locate(param: f64, segment_count: usize) -> (usize, f64) {
        let k = (param.floor() as usize).min(segment_count - 1);
        (k, param - k as f64)
    }

    /// Vertices re-evaluated on `stroke` at the same parameters.
    ///
    /// Used to hold the parameterization fixed while control points move.
    pub fn reevaluate(&self, stroke: &Stroke) -> FlattenedStroke {
        let m = stroke.segment_count();
        let origin = origin_of(stroke);
        let local: Vec<ControlPoint> = self
            .params
            .iter()
            .map(|&u| {
                let (k, t) = Self::locate(u, m);
                eval_unchecked(&local_segment(stroke, k, origin), t)
            })
            .collect();
        FlattenedStroke {
            vertices: local.iter().map(|p| p.add(origin)).collect(),
            params: self.params.clone(),
            origin,
            local,
        }
    }
}

/// Flattens a stroke by recursive midpoint subdivision until every chord
/// stays within `tol` pixels of its curve piece.
pub fn flatten(stroke: &Stroke, tol: f64) -> Result<FlattenedStroke, RasterError> {
    if !(tol > 0.0) {
        return Err(RasterError::Tolerance(tol));
    }
    let m = stroke.segment_count();
    let origin = origin_of(stroke);
    let mut params = vec![0.0];
    let mut ts = Vec::new();
    for k in 0..m {
        ts.clear();
        subdivide(&local_segment(stroke, k, origin), 0.0, 1.0, tol, 0, &mut ts);
        params.extend(ts.iter().map(|t| k as f64 + t));
    }
    let flat = FlattenedStroke {
        vertices: Vec::new(),
        params,
        origin,
        local: Vec::new(),
    };
    Ok(flat.reevaluate(stroke))
}
