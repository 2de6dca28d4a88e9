//! SVG export and import for the subset of SVG this crate writes.
//!
//! One `<path>` per stroke with absolute `M`/`C` commands, a white
//! background `<rect>`, and `data-ink` / `data-trainable` attributes so that
//! the round trip is lossless at six decimals.

use std::fmt::Write;

use crate::sketch::{ControlPoint, Sketch, SketchError, Stroke, DEFAULT_STROKE_WIDTH};

#[derive(Debug, thiserror::Error)]
pub enum SvgError {
    #[error("invalid XML: {0}")]
    Xml(#[from] roxmltree::Error),
    #[error("unsupported SVG feature: {0}")]
    Unsupported(String),
    #[error("invalid path data: {0}")]
    PathData(String),
    #[error("missing or invalid attribute {0}")]
    Attribute(&'static str),
    #[error(transparent)]
    Sketch(#[from] SketchError),
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

pub(crate) fn gray_hex(ink: f64) -> String {
    let g = ((1.0 - ink) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8;
    format!("#{g:02x}{g:02x}{g:02x}")
}

/// Path data `M x y C ...` for one stroke.
pub fn path_data(stroke: &Stroke) -> String {
    let pts = stroke.points();
    let mut d = format!("M {} {}", fmt6(pts[0].x), fmt6(pts[0].y));
    for seg in pts[1..].chunks_exact(3) {
        d.push_str(" C");
        for p in seg {
            let _ = write!(d, " {} {}", fmt6(p.x), fmt6(p.y));
        }
    }
    d
}

pub(crate) fn write_path_element(out: &mut String, stroke: &Stroke, indent: &str) {
    let _ = writeln!(
        out,
        "{indent}<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{}\" stroke-opacity=\"{}\" \
         stroke-linecap=\"round\" stroke-linejoin=\"round\" data-ink=\"{}\" data-trainable=\"{}\"/>",
        path_data(stroke),
        gray_hex(stroke.ink()),
        fmt6(stroke.width()),
        fmt6(stroke.opacity()),
        fmt6(stroke.ink()),
        stroke.trainable,
    );
}

/// Escapes text for use in XML character data and attribute values.
pub fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

pub fn export_svg(sketch: &Sketch) -> String {
    let (w, h) = (sketch.canvas_w(), sketch.canvas_h());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(out, "  <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"#ffffff\"/>");
    for s in &sketch.strokes {
        write_path_element(&mut out, s, "  ");
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, PartialEq)]
enum Token {
    Cmd(char),
    Num(f64),
}

fn tokenize(d: &str) -> Result<Vec<Token>, SvgError> {
    let mut out = Vec::new();
    let b = d.as_bytes();
    let mut i = 0;
    while i < b.len() {
        let c = b[i] as char;
        if c.is_ascii_whitespace() || c == ',' {
            i += 1;
        } else if c.is_ascii_alphabetic() && c != 'e' && c != 'E' {
            out.push(Token::Cmd(c));
            i += 1;
        } else {
            let start = i;
            i += 1;
            while i < b.len() {
                let c = b[i] as char;
                let prev = b[i - 1] as char;
                let ok = c.is_ascii_digit()
                    || c == '.'
                    || c == 'e'
                    || c == 'E'
                    || ((c == '-' || c == '+') && (prev == 'e' || prev == 'E'));
                if !ok {
                    break;
                }
                i += 1;
            }
            let s = &d[start..i];
            let v: f64 = s
                .parse()
                .map_err(|_| SvgError::PathData(format!("bad number {s:?}")))?;
            out.push(Token::Num(v));
        }
    }
    Ok(out)
}

fn parse_path(d: &str) -> Result<Vec<ControlPoint>, SvgError> {
    let tokens = tokenize(d)?;
    let mut it = tokens.into_iter().peekable();
    let num = |it: &mut std::iter::Peekable<std::vec::IntoIter<Token>>| -> Result<f64, SvgError> {
        match it.next() {
            Some(Token::Num(v)) => Ok(v),
            other => Err(SvgError::PathData(format!("expected number, found {other:?}"))),
        }
    };
    match it.next() {
        Some(Token::Cmd('M')) => {}
        Some(Token::Cmd(c)) => return Err(SvgError::Unsupported(format!("path command '{c}'"))),
        _ => return Err(SvgError::PathData("path must start with M".into())),
    }
    let mut pts = vec![ControlPoint::new(num(&mut it)?, num(&mut it)?)];
    while let Some(tok) = it.next() {
        match tok {
            Token::Cmd('C') => {}
            Token::Cmd(c) => return Err(SvgError::Unsupported(format!("path command '{c}'"))),
            Token::Num(_) => return Err(SvgError::PathData("number outside a C command".into())),
        }
        loop {
            for _ in 0..3 {
                pts.push(ControlPoint::new(num(&mut it)?, num(&mut it)?));
            }
            if !matches!(it.peek(), Some(Token::Num(_))) {
                break;
            }
        }
    }
    if pts.len() < 4 {
        return Err(SvgError::PathData("path has no C segment".into()));
    }
    Ok(pts)
}

fn f64_attr(node: roxmltree::Node, name: &'static str) -> Result<Option<f64>, SvgError> {
    node.attribute(name)
        .map(|v| v.trim().parse::<f64>().map_err(|_| SvgError::Attribute(name)))
        .transpose()
}

fn ink_from_color(color: &str) -> Option<f64> {
    let hex = color.strip_prefix('#')?;
    if hex.len() != 6 {
        return None;
    }
    let r = u8::from_str_radix(&hex[0..2], 16).ok()?;
    let g = u8::from_str_radix(&hex[2..4], 16).ok()?;
    let b = u8::from_str_radix(&hex[4..6], 16).ok()?;
    if r != g || g != b {
        return None;
    }
    Some(1.0 - r as f64 / 255.0)
}

fn canvas_dim(root: roxmltree::Node, name: &'static str, view_idx: usize) -> Result<u32, SvgError> {
    if let Some(v) = root.attribute(name) {
        let v = v.trim().trim_end_matches("px");
        let f: f64 = v.parse().map_err(|_| SvgError::Attribute(name))?;
        return if f >= 1.0 && f.fract() == 0.0 {
            Ok(f as u32)
        } else {
            Err(SvgError::Attribute(name))
        };
    }
    let vb = root.attribute("viewBox").ok_or(SvgError::Attribute(name))?;
    let parts: Vec<f64> = vb
        .split(|c: char| c.is_ascii_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| SvgError::Attribute("viewBox")))
        .collect::<Result<_, _>>()?;
    match parts.get(view_idx) {
        Some(&f) if parts.len() == 4 && f >= 1.0 => Ok(f.round() as u32),
        _ => Err(SvgError::Attribute("viewBox")),
    }
}

/// Parses SVG written by [`export_svg`] (or hand-written text in the same subset).
pub fn import_svg(text: &str) -> Result<Sketch, SvgError> {
    let doc = roxmltree::Document::parse(text)?;
    let root = doc.root_element();
    if root.tag_name().name() != "svg" {
        return Err(SvgError::Unsupported(format!("<{}> root element", root.tag_name().name())));
    }
    let w = canvas_dim(root, "width", 2)?;
    let h = canvas_dim(root, "height", 3)?;
    let mut sketch = Sketch::new(w, h)?;
    for node in root.children().filter(|n| n.is_element()) {
        match node.tag_name().name() {
            "rect" => {}
            "path" => {
                let d = node.attribute("d").ok_or(SvgError::Attribute("d"))?;
                let pts = parse_path(d)?;
                let width = f64_attr(node, "stroke-width")?.unwrap_or(DEFAULT_STROKE_WIDTH);
                let opacity = f64_attr(node, "stroke-opacity")?.unwrap_or(1.0);
                let ink = match f64_attr(node, "data-ink")? {
                    Some(v) => v,
                    None => node.attribute("stroke").and_then(ink_from_color).unwrap_or(1.0),
                };
                let trainable = match node.attribute("data-trainable") {
                    None | Some("true") => true,
                    Some("false") => false,
                    Some(_) => return Err(SvgError::Attribute("data-trainable")),
                };
                sketch
                    .strokes
                    .push(Stroke::new(pts, width, ink, opacity)?.with_trainable(trainable));
            }
            other => return Err(SvgError::Unsupported(format!("<{other}> element"))),
        }
    }
    Ok(sketch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SketchRng;
    use crate::sketch::random_init_strokes;

    #[test]
    fn empty_sketch_has_only_background() {
        let s = Sketch::new(600, 600).unwrap();
        let svg = export_svg(&s);
        assert_eq!(svg.matches("<rect").count(), 1);
        assert_eq!(svg.matches("<path").count(), 0);
    }

    #[test]
    fn one_segment_one_m_one_c() {
        let mut s = Sketch::new(10, 10).unwrap();
        s.strokes.push(
            Stroke::black(vec![
                ControlPoint::new(0.0, 0.0),
                ControlPoint::new(1.0, 0.0),
                ControlPoint::new(2.0, 0.0),
                ControlPoint::new(3.0, 0.0),
            ])
            .unwrap(),
        );
        let svg = export_svg(&s);
        assert_eq!(svg.matches("<path").count(), 1);
        assert!(svg.contains(
            "d=\"M 0.000000 0.000000 C 1.000000 0.000000 2.000000 0.000000 3.000000 0.000000\""
        ));
    }

    #[test]
    fn export_import_export_is_byte_identical() {
        let mut rng = SketchRng::new(9);
        let mut s = random_init_strokes(5, 3, 600, 400, &mut rng).unwrap();
        s.strokes[1].trainable = false;
        let a = export_svg(&s);
        let back = import_svg(&a).unwrap();
        for (x, y) in s.to_params().iter().zip(back.to_params()) {
            assert!((x - y).abs() <= 1e-5);
        }
        assert!(!back.strokes[1].trainable);
        assert_eq!(export_svg(&back), a);
    }

    #[test]
    fn ellipse_is_unsupported() {
        let text = r#"<svg xmlns="http://www.w3.org/2000/svg" width="10" height="10"><ellipse cx="1" cy="1" rx="1" ry="1"/></svg>"#;
        match import_svg(text) {
            Err(SvgError::Unsupported(m)) => assert!(m.contains("ellipse")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hand_written_path() {
        let text = r#"<svg xmlns="http://www.w3.org/2000/svg" width="10" height="10"><path d="M 0 0 C 1 0 2 0 3 0"/></svg>"#;
        let s = import_svg(text).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.strokes[0].segment_count(), 1);
        assert_eq!(s.strokes[0].width(), DEFAULT_STROKE_WIDTH);
    }

    #[test]
    fn compact_path_syntax_and_implicit_repeat() {
        let text = r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 20 30"><path d="M0,0C1,0,2,0,3,0 4,1,5,1,6,-1e0"/></svg>"#;
        let s = import_svg(text).unwrap();
        assert_eq!((s.canvas_w(), s.canvas_h()), (20, 30));
        assert_eq!(s.strokes[0].segment_count(), 2);
        assert_eq!(s.strokes[0].points()[6], ControlPoint::new(6.0, -1.0));
    }

    #[test]
    fn line_command_is_unsupported() {
        let text = r#"<svg xmlns="http://www.w3.org/2000/svg" width="10" height="10"><path d="M 0 0 L 1 1"/></svg>"#;
        assert!(matches!(import_svg(text), Err(SvgError::Unsupported(_))));
    }

    #[test]
    fn stroke_color_sets_ink() {
        let text = r##"<svg xmlns="http://www.w3.org/2000/svg" width="10" height="10"><path d="M 0 0 C 1 0 2 0 3 0" stroke="#000000"/></svg>"##;
        assert_eq!(import_svg(text).unwrap().strokes[0].ink(), 1.0);
    }
}
