//! Random perspective + resized-crop augmentation and its adjoint.
//!
//! The warp, the crop and the resize collapse into one sampling map: output
//! pixel centre -> crop rectangle -> inverse homography -> bilinear tap into
//! the source. Taps outside the source read white.

use nalgebra::{Matrix3, SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::raster::{RasterError, RasterImage};
use crate::rng::SketchRng;

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("invalid augmentation config: {0}")]
    Config(String),
    #[error("homography is singular or ill-conditioned (condition number {0:e})")]
    Homography(f64),
    #[error("crop rectangle {0:?} leaves the {1}x{2} source")]
    Crop(CropRect, u32, u32),
    #[error(transparent)]
    Shape(#[from] RasterError),
}

const MAX_CONDITION: f64 = 1e8;
const CROP_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Probability of applying the perspective warp.
    pub perspective_p: f64,
    /// Corner displacement as a fraction of the half extent.
    pub distortion: f64,
    /// Crop area as a fraction of the source area.
    pub scale: (f64, f64),
    /// Crop width / height.
    pub aspect: (f64, f64),
    pub out_size: u32,
    /// Augmented views averaged per iteration.
    pub batch: u32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            perspective_p: 0.7,
            distortion: 0.2,
            scale: (0.7, 1.0),
            aspect: (0.95, 1.05),
            out_size: 512,
            batch: 1,
        }
    }
}

impl AugmentConfig {
    /// No warp and a full-frame crop; only the resize to `out_size` remains.
    pub fn identity(out_size: u32) -> Self {
        Self {
            perspective_p: 0.0,
            distortion: 0.0,
            scale: (1.0, 1.0),
            aspect: (1.0, 1.0),
            out_size,
            batch: 1,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: &str| Err(AugmentError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.perspective_p) {
            return bad("perspective probability must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.distortion) {
            return bad("distortion must lie in [0, 1)");
        }
        let (s0, s1) = self.scale;
        if !(s0 > 0.0 && s0 <= s1 && s1 <= 1.0) {
            return bad("scale range must satisfy 0 < lo <= hi <= 1");
        }
        let (a0, a1) = self.aspect;
        if !(a0 > 0.0 && a0 <= a1 && a1.is_finite()) {
            return bad("aspect range must satisfy 0 < lo <= hi");
        }
        if self.out_size < 1 {
            return bad("out_size must be at least 1");
        }
        if self.batch < 1 {
            return bad("batch must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub apply_perspective: bool,
    /// Maps source coordinates to warped coordinates, normalized so `h33 = 1`.
    pub homography: [[f64; 3]; 3],
    pub crop: CropRect,
    pub src_w: u32,
    pub src_h: u32,
    pub out_size: u32,
}

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl AugmentParams {
    pub fn identity(src_w: u32, src_h: u32, out_size: u32) -> Self {
        Self {
            apply_perspective: false,
            homography: IDENTITY,
            crop: CropRect {
                x: 0.0,
                y: 0.0,
                w: src_w as f64,
                h: src_h as f64,
            },
            src_w,
            src_h,
            out_size,
        }
    }

    fn matrix(&self) -> Matrix3<f64> {
        let h = &self.homography;
        Matrix3::new(
            h[0][0], h[0][1], h[0][2], h[1][0], h[1][1], h[1][2], h[2][0], h[2][1], h[2][2],
        )
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.out_size < 1 {
            return Err(AugmentError::Config("out_size must be at least 1".into()));
        }
        let sv = self.matrix().singular_values();
        let cond = sv.max() / sv.min();
        if !(cond.is_finite() && cond <= MAX_CONDITION) {
            return Err(AugmentError::Homography(cond));
        }
        let c = self.crop;
        let (w, h) = (self.src_w as f64, self.src_h as f64);
        let inside = c.x >= -CROP_SLACK
            && c.y >= -CROP_SLACK
            && c.w > 0.0
            && c.h > 0.0
            && c.x + c.w <= w + CROP_SLACK
            && c.y + c.h <= h + CROP_SLACK;
        if !inside {
            return Err(AugmentError::Crop(c, self.src_w, self.src_h));
        }
        Ok(())
    }

    fn inverse(&self) -> Result<[[f64; 3]; 3], AugmentError> {
        if self.homography == IDENTITY {
            return Ok(IDENTITY);
        }
        let inv = self
            .matrix()
            .try_inverse()
            .ok_or(AugmentError::Homography(f64::INFINITY))?;
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = inv[(r, c)];
            }
        }
        Ok(out)
    }
}

/// Homography taking each `src[i]` to `dst[i]`, solved as an 8x8 DLT system.
pub fn homography_from_corners(
    src: &[(f64, f64); 4],
    dst: &[(f64, f64); 4],
) -> Result<[[f64; 3]; 3], AugmentError> {
    if src == dst {
        return Ok(IDENTITY);
    }
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = src[i];
        let (u, v) = dst[i];
        let r = 2 * i;
        a.set_row(r, &SMatrix::<f64, 1, 8>::from_row_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -x * u, -y * u]));
        a.set_row(r + 1, &SMatrix::<f64, 1, 8>::from_row_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -x * v, -y * v]));
        b[r] = u;
        b[r + 1] = v;
    }
    let h = a
        .lu()
        .solve(&b)
        .ok_or(AugmentError::Homography(f64::INFINITY))?;
    Ok([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])
}

/// Draws one augmentation for a `src_w x src_h` source.
pub fn sample_augmentation(
    rng: &mut SketchRng,
    src_w: u32,
    src_h: u32,
    config: &AugmentConfig,
) -> Result<AugmentParams, AugmentError> {
    config.validate()?;
    let (w, h) = (src_w as f64, src_h as f64);
    let mut params = AugmentParams::identity(src_w, src_h, config.out_size);

    if rng.bernoulli(config.perspective_p) {
        params.apply_perspective = true;
        let (dx, dy) = (config.distortion * w / 2.0, config.distortion * h / 2.0);
        let corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
        let mut moved = corners;
        for c in &mut moved {
            c.0 += rng.uniform(-dx, dx);
            c.1 += rng.uniform(-dy, dy);
        }
        params.homography = homography_from_corners(&corners, &moved)?;
    }

    let area = rng.uniform(config.scale.0, config.scale.1) * w * h;
    let aspect = rng.uniform(config.aspect.0, config.aspect.1);
    let cw = (area * aspect).sqrt().min(w);
    let ch = (area / aspect).sqrt().min(h);
    params.crop = CropRect {
        x: rng.uniform(0.0, w - cw),
        y: rng.uniform(0.0, h - ch),
        w: cw,
        h: ch,
    };
    params.validate()?;
    Ok(params)
}

const OUTSIDE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Tap {
    idx: u32,
    weight: f64,
}

/// The four bilinear taps feeding output pixel `(ox, oy)`.
fn taps(params: &AugmentParams, inv: &[[f64; 3]; 3], ox: u32, oy: u32) -> [Tap; 4] {
    let c = params.crop;
    let n = params.out_size as f64;
    let wx = c.x + (ox as f64 + 0.5) * (c.w / n);
    let wy = c.y + (oy as f64 + 0.5) * (c.h / n);
    let (sx, sy) = if *inv == IDENTITY {
        (wx, wy)
    } else {
        let den = inv[2][0] * wx + inv[2][1] * wy + inv[2][2];
        (
            (inv[0][0] * wx + inv[0][1] * wy + inv[0][2]) / den,
            (inv[1][0] * wx + inv[1][1] * wy + inv[1][2]) / den,
        )
    };
    let (fx, fy) = (sx - 0.5, sy - 0.5);
    let (x0, y0) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - x0, fy - y0);
    let (w, h) = (params.src_w as i64, params.src_h as i64);
    let at = |x: f64, y: f64| -> u32 {
        let (xi, yi) = (x as i64, y as i64);
        if (0..w).contains(&xi) && (0..h).contains(&yi) && x.is_finite() && y.is_finite() {
            (yi * w + xi) as u32
        } else {
            OUTSIDE
        }
    };
    [
        Tap { idx: at(x0, y0), weight: (1.0 - tx) * (1.0 - ty) },
        Tap { idx: at(x0 + 1.0, y0), weight: tx * (1.0 - ty) },
        Tap { idx: at(x0, y0 + 1.0), weight: (1.0 - tx) * ty },
        Tap { idx: at(x0 + 1.0, y0 + 1.0), weight: tx * ty },
    ]
}

pub fn apply_augmentation(
    image: &RasterImage,
    params: &AugmentParams,
) -> Result<RasterImage, AugmentError> {
    image.check_shape((params.src_w, params.src_h))?;
    let inv = params.inverse()?;
    let n = params.out_size;
    let src = image.data();
    let mut out = RasterImage::white(n, n);
    out.data_mut()
        .par_chunks_mut(n as usize)
        .enumerate()
        .for_each(|(oy, row)| {
            for (ox, v) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for t in taps(params, &inv, ox as u32, oy as u32) {
                    let s = if t.idx == OUTSIDE { 1.0 } else { src[t.idx as usize] };
                    acc += t.weight * s;
                }
                *v = acc;
            }
        });
    Ok(out)
}

/// Adjoint of [`apply_augmentation`] with respect to the source pixels.
///
/// Scatters each output cotangent through its four bilinear weights in
/// output row-major order.
pub fn augmentation_backward(
    params: &AugmentParams,
    grad_out: &RasterImage,
) -> Result<RasterImage, AugmentError> {
    let n = params.out_size;
    grad_out.check_shape((n, n))?;
    let inv = params.inverse()?;
    let mut din = RasterImage::zeros(params.src_w, params.src_h);
    let g = grad_out.data();
    let d = din.data_mut();
    for oy in 0..n {
        for ox in 0..n {
            let go = g[(oy * n + ox) as usize];
            if go == 0.0 {
                continue;
            }
            for t in taps(params, &inv, ox, oy) {
                if t.idx != OUTSIDE {
                    d[t.idx as usize] += t.weight * go;
                }
            }
        }
    }
    Ok(din)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apply_h(h: &[[f64; 3]; 3], (x, y): (f64, f64)) -> (f64, f64) {
        let den = h[2][0] * x + h[2][1] * y + h[2][2];
        (
            (h[0][0] * x + h[0][1] * y + h[0][2]) / den,
            (h[1][0] * x + h[1][1] * y + h[1][2]) / den,
        )
    }

    #[test]
    fn identity_config_gives_identity_params() {
        let mut rng = SketchRng::new(3);
        let p = sample_augmentation(&mut rng, 600, 600, &AugmentConfig::identity(512)).unwrap();
        assert!(!p.apply_perspective);
        assert_eq!(p.homography, IDENTITY);
        assert_eq!(p.crop, CropRect { x: 0.0, y: 0.0, w: 600.0, h: 600.0 });
    }

    #[test]
    fn zero_distortion_keeps_identity_homography() {
        let cfg = AugmentConfig {
            perspective_p: 1.0,
            distortion: 0.0,
            ..AugmentConfig::default()
        };
        let mut rng = SketchRng::new(3);
        let p = sample_augmentation(&mut rng, 600, 600, &cfg).unwrap();
        assert!(p.apply_perspective);
        assert_eq!(p.homography, IDENTITY);
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = AugmentConfig::default();
        let a = sample_augmentation(&mut SketchRng::new(7), 600, 600, &cfg).unwrap();
        let b = sample_augmentation(&mut SketchRng::new(7), 600, 600, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampled_params_are_valid() {
        let cfg = AugmentConfig::default();
        let mut rng = SketchRng::new(11);
        for _ in 0..200 {
            let p = sample_augmentation(&mut rng, 600, 600, &cfg).unwrap();
            p.validate().unwrap();
            let area = p.crop.w * p.crop.h / (600.0 * 600.0);
            assert!((0.7 * 0.95 - 1e-12..=1.0 + 1e-12).contains(&area));
        }
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let mut rng = SketchRng::new(0);
        for cfg in [
            AugmentConfig { perspective_p: 1.5, ..Default::default() },
            AugmentConfig { scale: (0.9, 0.5), ..Default::default() },
            AugmentConfig { aspect: (0.0, 1.0), ..Default::default() },
            AugmentConfig { out_size: 0, ..Default::default() },
        ] {
            assert!(matches!(
                sample_augmentation(&mut rng, 10, 10, &cfg),
                Err(AugmentError::Config(_))
            ));
        }
    }

    #[test]
    fn dlt_maps_corners() {
        let src = [(0.0, 0.0), (600.0, 0.0), (600.0, 600.0), (0.0, 600.0)];
        let dst = [(12.0, -30.0), (590.0, 7.0), (640.0, 580.0), (-5.0, 610.0)];
        let h = homography_from_corners(&src, &dst).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            let (u, v) = apply_h(&h, *s);
            assert!((u - d.0).abs() < 1e-9 && (v - d.1).abs() < 1e-9);
        }
        assert_eq!(h[2][2], 1.0);
    }

    #[test]
    fn identity_apply_is_bit_exact() {
        let mut rng = SketchRng::new(5);
        let data: Vec<f64> = (0..12 * 12).map(|_| rng.unit()).collect();
        let sq = RasterImage::from_data(12, 12, data).unwrap();
        let p = AugmentParams::identity(12, 12, 12);
        assert_eq!(apply_augmentation(&sq, &p).unwrap(), sq);
        let back = augmentation_backward(&p, &sq).unwrap();
        assert_eq!(back, sq);
    }

    #[test]
    fn white_stays_white() {
        let cfg = AugmentConfig { perspective_p: 1.0, ..Default::default() };
        let mut rng = SketchRng::new(1);
        let p = sample_augmentation(&mut rng, 64, 64, &AugmentConfig { out_size: 32, ..cfg }).unwrap();
        let out = apply_augmentation(&RasterImage::white(64, 64), &p).unwrap();
        assert!(out.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_cotangent_gives_zero() {
        let mut rng = SketchRng::new(2);
        let p = sample_augmentation(&mut rng, 32, 32, &AugmentConfig { out_size: 16, ..Default::default() }).unwrap();
        let din = augmentation_backward(&p, &RasterImage::zeros(16, 16)).unwrap();
        assert!(din.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_errors() {
        let p = AugmentParams::identity(8, 8, 4);
        assert!(apply_augmentation(&RasterImage::white(8, 9), &p).is_err());
        assert!(augmentation_backward(&p, &RasterImage::zeros(5, 4)).is_err());
    }
}
