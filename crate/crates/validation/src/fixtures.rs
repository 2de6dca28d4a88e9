//! Scenes, generators and reference implementations shared by the checks.

use std::io::{Read, Write};
use std::net::TcpStream;

use sketchloop_core::{ControlPoint, Sketch, SketchRng, Stroke};

/// A random-walk stroke kept 10 px inside the canvas. Walks that leave the
/// box are redrawn rather than clamped, since clamping stacks control points
/// and creates cusps where the render is not differentiable.
pub fn interior_stroke(rng: &mut SketchRng, w: u32, h: u32, segments: usize, width: f64) -> Stroke {
    let margin = 10.0;
    let (wf, hf) = (w as f64, h as f64);
    let inside = |p: ControlPoint| (margin..=wf - margin).contains(&p.x) && (margin..=hf - margin).contains(&p.y);
    loop {
        let mut p = ControlPoint::new(rng.uniform(margin, wf - margin), rng.uniform(margin, hf - margin));
        let mut pts = vec![p];
        for _ in 0..3 * segments {
            p = ControlPoint::new(p.x + rng.uniform(-6.0, 6.0), p.y + rng.uniform(-6.0, 6.0));
            pts.push(p);
        }
        if pts.iter().all(|&q| inside(q)) {
            return Stroke::new(pts, width, rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0)).unwrap();
        }
    }
}

pub fn random_vec(rng: &mut SketchRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

/// Three-stroke glyph laid out on a 600 px canvas and scaled to `w`.
pub fn glyph(w: u32, width: f64) -> Sketch {
    let s = w as f64 / 600.0;
    let p = |x: f64, y: f64| ControlPoint::new(x * s, y * s);
    let strokes = [
        [(150.0, 150.0), (250.0, 100.0), (350.0, 220.0), (450.0, 160.0)],
        [(300.0, 120.0), (220.0, 300.0), (380.0, 380.0), (300.0, 480.0)],
        [(140.0, 420.0), (240.0, 330.0), (380.0, 520.0), (470.0, 400.0)],
    ]
    .iter()
    .map(|pts| Stroke::new(pts.iter().map(|&(x, y)| p(x, y)).collect(), width * s, 1.0, 1.0).unwrap())
    .collect();
    Sketch::with_strokes(w, w, strokes).unwrap()
}

fn point_near(rng: &mut SketchRng, c: ControlPoint, r: f64) -> ControlPoint {
    ControlPoint::new(c.x + rng.uniform(-r, r), c.y + rng.uniform(-r, r))
}

/// Control polygon shorter than 4.5 px, so the curve is too.
pub fn degenerate_stroke(rng: &mut SketchRng, segments: usize) -> Stroke {
    let c = ControlPoint::new(rng.uniform(20.0, 180.0), rng.uniform(20.0, 180.0));
    let r = 0.1 / segments as f64;
    let pts = (0..3 * segments + 1).map(|_| point_near(rng, c, r)).collect();
    Stroke::new(pts, rng.uniform(1.0, 5.0), rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0)).unwrap()
}

/// Endpoints 60 px apart on both axes: arc length > 84, bbox area >= 3600.
pub fn healthy_stroke(rng: &mut SketchRng, segments: usize) -> Stroke {
    let a = ControlPoint::new(rng.uniform(0.0, 130.0), rng.uniform(0.0, 130.0));
    let b = ControlPoint::new(a.x + 60.0, a.y + 60.0);
    let n = 3 * segments + 1;
    let mut pts: Vec<ControlPoint> = (0..n).map(|_| point_near(rng, a.add(b).scale(0.5), 40.0)).collect();
    pts[0] = a;
    pts[n - 1] = b;
    Stroke::new(pts, 3.0, 1.0, 1.0).unwrap()
}

/// Double-double value `hi + lo`.
#[derive(Clone, Copy, Debug)]
pub struct Dd(pub f64, pub f64);

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd(s, (a - (s - bb)) + (b - bb))
}

impl Dd {
    pub fn from(v: f64) -> Self {
        Dd(v, 0.0)
    }

    pub fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.0, o.0);
        two_sum(s.0, s.1 + self.1 + o.1)
    }

    pub fn neg(self) -> Dd {
        Dd(-self.0, -self.1)
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = self.0 * o.0;
        let err = self.0.mul_add(o.0, -p);
        two_sum(p, err + self.0 * o.1 + self.1 * o.0)
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.0 / o.0;
        let r = self.add(o.mul(Dd::from(q1)).neg());
        two_sum(q1, r.0 / o.0)
    }

    pub fn sqrt(self) -> Dd {
        let x = Dd::from(self.0.sqrt());
        x.add(self.div(x)).mul(Dd::from(0.5))
    }

    pub fn value(self) -> f64 {
        self.0 + self.1
    }
}

/// Cumulative product of `1 - beta_i` over the first `t` steps of the
/// scaled-linear schedule, in double-double arithmetic.
pub fn dd_alpha_bar(t: usize, beta_start: f64, beta_end: f64, steps: usize) -> f64 {
    let (a, b) = (Dd::from(beta_start).sqrt(), Dd::from(beta_end).sqrt());
    let mut acc = Dd::from(1.0);
    for i in 0..t {
        let f = Dd::from(i as f64).div(Dd::from((steps - 1) as f64));
        let r = a.add(b.add(a.neg()).mul(f));
        acc = acc.mul(Dd::from(1.0).add(r.mul(r).neg()));
    }
    acc.value()
}

pub const REQUEST_HEADER: &[u8] = br#"{"prompt":"cat","negative_prompt":null,"omega":100.0,"timestep":400,"width":2,"height":2,"channels":1,"tensors":["image","cond"]}"#;
pub const RESPONSE_HEADER: &[u8] = br#"{"tensors":["grad"],"loss":0.5,"space":"pixel","pool":1}"#;

/// Request frame written out byte by byte: image 1, 0.5, 0.25, 0 and an
/// all-ones condition.
pub fn golden_request_bytes() -> Vec<u8> {
    let mut b = b"SDRG\x01".to_vec();
    b.extend_from_slice(&[129, 0, 0, 0]);
    b.extend_from_slice(REQUEST_HEADER);
    b.extend_from_slice(&[0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x3f, 0x00, 0x00, 0x80, 0x3e, 0, 0, 0, 0]);
    for _ in 0..4 {
        b.extend_from_slice(&[0x00, 0x00, 0x80, 0x3f]);
    }
    b
}

/// Response frame carrying the pixel gradient -1, 2, 0, 0.5.
pub fn golden_response_bytes() -> Vec<u8> {
    let mut b = b"SDRG\x01".to_vec();
    b.extend_from_slice(&[56, 0, 0, 0]);
    b.extend_from_slice(RESPONSE_HEADER);
    b.extend_from_slice(&[0x00, 0x00, 0x80, 0xbf, 0x00, 0x00, 0x00, 0x40, 0, 0, 0, 0, 0x00, 0x00, 0x00, 0x3f]);
    b
}

/// A QuickDraw apple with three strokes.
pub const APPLE: &str = r#"{"word":"apple","countrycode":"US","recognized":true,"drawing":[[[40,60,100,140,160,150,120,90,60,40],[90,60,50,60,90,140,170,175,160,120]],[[100,95],[50,20]],[[100,120,130],[40,30,35]]]}"#;

/// One HTTP/1.1 exchange with `Connection: close`; returns status and body.
pub fn http(addr: &str, method: &str, path: &str, body: Option<&str>) -> std::io::Result<(u16, String)> {
    let mut s = TcpStream::connect(addr)?;
    let body = body.unwrap_or("");
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )?;
    let mut raw = String::new();
    s.read_to_string(&mut raw)?;
    let status = raw
        .split(' ')
        .nth(1)
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, "no status line"))?;
    let body = raw.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    Ok((status, body))
}
