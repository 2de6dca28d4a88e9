//! Differentiable grayscale rasterization of Bézier strokes.

mod bezier;
mod render;

use std::path::Path;

pub use bezier::{bernstein, eval_bezier, flatten, point_segment_distance, FlattenedStroke};
pub use render::{RenderSettings, Rasterizer, StrokeGradients};

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("curve parameter {0} outside [0, 1]")]
    ParamRange(f64),
    #[error("flattening tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: (u32, u32), got: (u32, u32) },
    #[error("image data length {len} does not match {width}x{height}")]
    DataLength { width: u32, height: u32, len: usize },
    #[error("image dimensions must be at least 1x1")]
    Empty,
    #[error("image I/O: {0}")]
    Io(#[from] image::ImageError),
    #[error("flattening count {got} does not match stroke count {expected}")]
    Flattening { expected: usize, got: usize },
}

/// Row-major single-channel image; white is 1.0 and black 0.0.
///
/// The same type carries cotangents (`dL/dI`), which may leave `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl RasterImage {
    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        assert!(width >= 1 && height >= 1, "image must be at least 1x1");
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn white(width: u32, height: u32) -> Self {
        Self::filled(width, height, 1.0)
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn from_data(width: u32, height: u32, data: Vec<f64>) -> Result<Self, RasterError> {
        if width < 1 || height < 1 {
            return Err(RasterError::Empty);
        }
        if data.len() != width as usize * height as usize {
            return Err(RasterError::DataLength {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn shape(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = v;
    }

    pub fn check_shape(&self, expected: (u32, u32)) -> Result<(), RasterError> {
        if self.shape() == expected {
            Ok(())
        } else {
            Err(RasterError::Shape {
                expected,
                got: self.shape(),
            })
        }
    }

    pub fn dot(&self, other: &RasterImage) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Element-wise map into a new image of the same shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> RasterImage {
        RasterImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise combination; shapes must match.
    pub fn zip_map(
        &self,
        other: &RasterImage,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<RasterImage, RasterError> {
        other.check_shape(self.shape())?;
        Ok(RasterImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// 8-bit grayscale quantization, rounding half up.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)
            .collect()
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        let img = image::GrayImage::from_raw(self.width, self.height, self.to_gray8())
            .expect("buffer size matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Loads any image the `image` crate decodes, converted to luma in `[0, 1]`.
    pub fn read_image(path: impl AsRef<Path>) -> Result<RasterImage, RasterError> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
        RasterImage::from_data(w, h, data)
    }
}

/// Multiplicative compositing of two black-on-white layers.
///
/// The cotangent of each input is the incoming cotangent times the other
/// input, see [`compose_ink_backward`].
pub fn compose_ink(a: &RasterImage, b: &RasterImage) -> Result<RasterImage, RasterError> {
    a.zip_map(b, |x, y| x * y)
}

/// Cotangents `(dL/da, dL/db)` of [`compose_ink`].
pub fn compose_ink_backward(
    a: &RasterImage,
    b: &RasterImage,
    grad: &RasterImage,
) -> Result<(RasterImage, RasterImage), RasterError> {
    a.check_shape(b.shape())?;
    Ok((grad.zip_map(b, |g, y| g * y)?, grad.zip_map(a, |g, x| g * x)?))
}
