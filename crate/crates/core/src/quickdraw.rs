//! Ingestion of QuickDraw "simplified" ndjson drawings.
//!
//! Each line is a JSON object whose `"drawing"` key holds a list of strokes,
//! each stroke a pair `[xs, ys]` of integer coordinates in `0..=255`.

use serde_json::Value;

use crate::sketch::{fit_polyline_to_bezier, ControlPoint, Sketch, SketchError, Stroke};

pub const DEFAULT_MARGIN: f64 = 0.1;
const QUICKDRAW_EXTENT: f64 = 255.0;

#[derive(Debug, thiserror::Error)]
pub enum QuickDrawError {
    #[error("malformed JSON at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("margin must lie in [0, 0.5), got {0}")]
    Margin(f64),
    #[error(transparent)]
    Sketch(#[from] SketchError),
}

fn byte_offset(line: &str, err: &serde_json::Error) -> usize {
    let mut offset = 0;
    for (i, l) in line.split_inclusive('\n').enumerate() {
        if i + 1 == err.line() {
            return offset + err.column().saturating_sub(1).min(l.len());
        }
        offset += l.len();
    }
    offset
}

fn coords(v: &Value, what: &str, stroke: usize) -> Result<Vec<f64>, QuickDrawError> {
    let arr = v
        .as_array()
        .ok_or_else(|| QuickDrawError::Schema(format!("stroke {stroke}: {what} is not an array")))?;
    arr.iter()
        .map(|c| {
            c.as_f64()
                .filter(|x| (0.0..=QUICKDRAW_EXTENT).contains(x))
                .ok_or_else(|| {
                    QuickDrawError::Schema(format!(
                        "stroke {stroke}: {what} holds {c}, expected a number in [0, 255]"
                    ))
                })
        })
        .collect()
}

/// Parses one ndjson line into the raw polylines of its drawing.
pub fn parse_drawing(ndjson_line: &str) -> Result<Vec<Vec<(f64, f64)>>, QuickDrawError> {
    let value: Value = serde_json::from_str(ndjson_line).map_err(|e| QuickDrawError::Parse {
        offset: byte_offset(ndjson_line, &e),
        message: e.to_string(),
    })?;
    let drawing = value
        .get("drawing")
        .ok_or_else(|| QuickDrawError::Schema("missing \"drawing\" key".into()))?
        .as_array()
        .ok_or_else(|| QuickDrawError::Schema("\"drawing\" is not an array".into()))?;
    let mut out = Vec::with_capacity(drawing.len());
    for (i, stroke) in drawing.iter().enumerate() {
        let pair = stroke.as_array().filter(|a| a.len() >= 2).ok_or_else(|| {
            QuickDrawError::Schema(format!("stroke {i} is not an [xs, ys] pair"))
        })?;
        let xs = coords(&pair[0], "xs", i)?;
        let ys = coords(&pair[1], "ys", i)?;
        if xs.len() != ys.len() {
            return Err(QuickDrawError::Schema(format!(
                "stroke {i}: {} xs vs {} ys",
                xs.len(),
                ys.len()
            )));
        }
        if xs.is_empty() {
            return Err(QuickDrawError::Schema(format!("stroke {i} has no points")));
        }
        out.push(xs.into_iter().zip(ys).collect());
    }
    Ok(out)
}

/// Maps QuickDraw's `[0, 255]^2` box to the centered square of side
/// `(1 - 2 * margin) * min(w, h)`.
pub fn quickdraw_transform(canvas_w: u32, canvas_h: u32, margin: f64) -> impl Fn(f64, f64) -> ControlPoint {
    let (w, h) = (canvas_w as f64, canvas_h as f64);
    let side = (1.0 - 2.0 * margin) * w.min(h);
    let scale = side / QUICKDRAW_EXTENT;
    let (x0, y0) = ((w - side) / 2.0, (h - side) / 2.0);
    move |x, y| ControlPoint::new(x0 + x * scale, y0 + y * scale)
}

/// Loads a QuickDraw drawing as a frozen sketch, one stroke per polyline.
///
/// Single-point polylines (dots) become a degenerate chord from the point to
/// itself.
pub fn load_quickdraw(
    ndjson_line: &str,
    canvas_w: u32,
    canvas_h: u32,
    margin: f64,
) -> Result<Sketch, QuickDrawError> {
    if !(0.0..0.5).contains(&margin) {
        return Err(QuickDrawError::Margin(margin));
    }
    let polylines = parse_drawing(ndjson_line)?;
    let map = quickdraw_transform(canvas_w, canvas_h, margin);
    let mut sketch = Sketch::new(canvas_w, canvas_h)?;
    for poly in polylines {
        let mut pts: Vec<ControlPoint> = poly.iter().map(|&(x, y)| map(x, y)).collect();
        if pts.len() == 1 {
            pts.push(pts[0]);
        }
        let stroke: Stroke = fit_polyline_to_bezier(&pts)?.with_trainable(false);
        sketch.strokes.push(stroke);
    }
    Ok(sketch)
}
