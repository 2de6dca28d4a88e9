use crate::raster::RasterImage;

use super::GuidanceError;

pub const DEFAULT_POOL: u32 = 8;

/// Single-channel latent grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl LatentGrid {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self, GuidanceError> {
        if data.len() != width as usize * height as usize {
            return Err(GuidanceError::Shape(format!(
                "latent data length {} for {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, v: f64) -> Self {
        Self {
            width,
            height,
            data: vec![v; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &LatentGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn zip_map(&self, other: &LatentGrid, f: impl Fn(f64, f64) -> f64) -> Result<LatentGrid, GuidanceError> {
        if !self.same_shape(other) {
            return Err(GuidanceError::Shape(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(LatentGrid {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> LatentGrid {
        LatentGrid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dot(&self, other: &LatentGrid) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.dot(self)
    }

    /// `||self - other||^2`
    pub fn squared_distance(&self, other: &LatentGrid) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Stand-in latent encoder: `k x k` average pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentEncoder {
    pub pool: u32,
}

impl Default for LatentEncoder {
    fn default() -> Self {
        Self { pool: DEFAULT_POOL }
    }
}

impl LatentEncoder {
    pub fn new(pool: u32) -> Self {
        assert!(pool >= 1, "pool factor must be positive");
        Self { pool }
    }

    pub fn latent_shape(&self, width: u32, height: u32) -> Result<(u32, u32), GuidanceError> {
        let k = self.pool;
        if !width.is_multiple_of(k) || !height.is_multiple_of(k) {
            return Err(GuidanceError::Shape(format!(
                "{width}x{height} image is not divisible by pool factor {k}"
            )));
        }
        Ok((width / k, height / k))
    }

    pub fn encode(&self, image: &RasterImage) -> Result<LatentGrid, GuidanceError> {
        let (lw, lh) = self.latent_shape(image.width(), image.height())?;
        let k = self.pool as usize;
        let w = image.width() as usize;
        let src = image.data();
        let inv = 1.0 / (k * k) as f64;
        let mut data = vec![0.0; lw as usize * lh as usize];
        for (cy, row) in data.chunks_mut(lw as usize).enumerate() {
            for (cx, cell) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for y in cy * k..(cy + 1) * k {
                    for x in cx * k..(cx + 1) * k {
                        acc += src[y * w + x];
                    }
                }
                *cell = acc * inv;
            }
        }
        LatentGrid::new(lw, lh, data)
    }

    /// Adjoint of [`LatentEncoder::encode`]: each cell's cotangent is spread
    /// uniformly over its block and divided by `k^2`.
    pub fn encode_backward(&self, grad: &LatentGrid) -> Result<RasterImage, GuidanceError> {
        let k = self.pool as usize;
        let (w, h) = (grad.width() as usize * k, grad.height() as usize * k);
        let inv = 1.0 / (k * k) as f64;
        let lw = grad.width() as usize;
        let mut out = vec![0.0; w * h];
        for (y, row) in out.chunks_mut(w).enumerate() {
            for (x, v) in row.iter_mut().enumerate() {
                *v = grad.data()[(y / k) * lw + x / k] * inv;
            }
        }
        RasterImage::from_data(w as u32, h as u32, out).map_err(|e| GuidanceError::Shape(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_constant_latent() {
        let z = LatentEncoder::default()
            .encode(&RasterImage::filled(64, 32, 0.37))
            .unwrap();
        assert_eq!((z.width(), z.height()), (8, 4));
        assert!(z.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn default_resolution() {
        let z = LatentEncoder::default().encode(&RasterImage::white(512, 512)).unwrap();
        assert_eq!((z.width(), z.height()), (64, 64));
    }

    #[test]
    fn indivisible_is_error() {
        assert!(LatentEncoder::default().encode(&RasterImage::white(60, 64)).is_err());
    }
}
