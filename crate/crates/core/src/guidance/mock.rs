use std::collections::BTreeMap;

use crate::raster::RasterImage;

use super::latent::{LatentEncoder, LatentGrid};
use super::{cfg_combine, GuidanceError};

pub const DEFAULT_COND_BLEND: f64 = 0.5;

/// Analytic stand-in for a conditional denoiser.
///
/// For a registered prompt the conditional prediction is
/// `(z_t - alpha * z_target) / sigma` with
/// `z_target = E(blend * target + (1 - blend) * cond)`; the unconditional
/// prediction uses the latent of a white canvas. For `z_t = alpha z + sigma e`
/// this gives `eps_hat - e = (alpha / sigma) (z - z_target)` exactly.
#[derive(Debug, Clone)]
pub struct MockDenoiser {
    targets: BTreeMap<String, RasterImage>,
    pub blend: f64,
    pub encoder: LatentEncoder,
}

impl Default for MockDenoiser {
    fn default() -> Self {
        Self {
            targets: BTreeMap::new(),
            blend: DEFAULT_COND_BLEND,
            encoder: LatentEncoder::default(),
        }
    }
}

impl MockDenoiser {
    pub fn new(blend: f64, encoder: LatentEncoder) -> Self {
        Self {
            targets: BTreeMap::new(),
            blend,
            encoder,
        }
    }

    pub fn register(&mut self, prompt: impl Into<String>, target: RasterImage) {
        self.targets.insert(prompt.into(), target);
    }

    pub fn target(&self, prompt: &str) -> Result<&RasterImage, GuidanceError> {
        self.targets
            .get(prompt)
            .ok_or_else(|| GuidanceError::UnknownPrompt(prompt.to_string()))
    }

    /// Pixel-space target whose superconditioned center equals `center`.
    ///
    /// Solves `(1 + omega) (blend T + (1 - blend) C) - omega W = center` for
    /// `T`, with `W` the white canvas. Lets a caller register a reachable
    /// goal despite the extrapolation of a large guidance scale.
    pub fn target_for_center(
        center: &RasterImage,
        cond: &RasterImage,
        omega: f64,
        blend: f64,
    ) -> Result<RasterImage, GuidanceError> {
        center
            .zip_map(cond, |g, c| ((g + omega) / (1.0 + omega) - (1.0 - blend) * c) / blend)
            .map_err(|e| GuidanceError::Shape(e.to_string()))
    }

    pub fn z_target(&self, prompt: &str, cond: &RasterImage) -> Result<LatentGrid, GuidanceError> {
        let target = self.target(prompt)?;
        let lam = self.blend;
        let mixed = target
            .zip_map(cond, |t, c| lam * t + (1.0 - lam) * c)
            .map_err(|e| GuidanceError::Shape(e.to_string()))?;
        self.encoder.encode(&mixed)
    }

    /// Latent of the all-white canvas the unconditional branch pulls toward.
    pub fn z_uncond(&self, like: &LatentGrid) -> LatentGrid {
        LatentGrid::filled(like.width(), like.height(), 1.0)
    }

    /// `(1 + omega) z_target - omega z_uncond`: where classifier-free
    /// guidance moves the expected residual to zero.
    pub fn z_center(&self, prompt: &str, cond: &RasterImage, omega: f64) -> Result<LatentGrid, GuidanceError> {
        let zt = self.z_target(prompt, cond)?;
        let zu = self.z_uncond(&zt);
        cfg_combine(&zt, &zu, omega)
    }

    /// Conditional noise prediction.
    pub fn denoise(
        &self,
        z_t: &LatentGrid,
        alpha: f64,
        sigma: f64,
        prompt: &str,
        cond: &RasterImage,
    ) -> Result<LatentGrid, GuidanceError> {
        let zt = self.z_target(prompt, cond)?;
        z_t.zip_map(&zt, |x, c| (x - alpha * c) / sigma)
    }

    pub fn denoise_uncond(&self, z_t: &LatentGrid, alpha: f64, sigma: f64) -> LatentGrid {
        z_t.map(|x| (x - alpha) / sigma)
    }

    /// `eps_hat - eps` for latent `z` noised with `eps` at `(alpha, sigma)`,
    /// with classifier-free guidance at scale `omega`.
    #[allow(clippy::too_many_arguments)]
    pub fn residual(
        &self,
        z: &LatentGrid,
        eps: &LatentGrid,
        alpha: f64,
        sigma: f64,
        prompt: &str,
        cond: &RasterImage,
        omega: f64,
    ) -> Result<LatentGrid, GuidanceError> {
        let z_t = z.zip_map(eps, |a, e| alpha * a + sigma * e)?;
        let eps_c = self.denoise(&z_t, alpha, sigma, prompt, cond)?;
        let eps_u = self.denoise_uncond(&z_t, alpha, sigma);
        let eps_hat = cfg_combine(&eps_c, &eps_u, omega)?;
        eps_hat.zip_map(eps, |a, b| a - b)
    }
}
