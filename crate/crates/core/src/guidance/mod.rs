//! Score-distillation guidance: noise schedule, classifier-free guidance and
//! the per-pixel gradient produced by each backend.

mod latent;
mod mock;
mod remote;
mod schedule;
pub mod wire;

use serde::{Deserialize, Serialize};

pub use latent::{LatentEncoder, LatentGrid, DEFAULT_POOL};
pub use mock::{MockDenoiser, DEFAULT_COND_BLEND};
pub use remote::{RemoteGuidance, DEFAULT_TIMEOUT, GUIDANCE_PATH};
pub use schedule::{NoiseSchedule, WeightFn};
use wire::{GradSpace, GuidanceRequest, ProtocolError};

use crate::raster::RasterImage;
use crate::rng::SketchRng;

#[derive(Debug, thiserror::Error)]
pub enum GuidanceError {
    #[error("timestep {t} outside 1..={steps}")]
    Timestep { t: u32, steps: u32 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no target registered for prompt {0:?}")]
    UnknownPrompt(String),
    #[error("invalid guidance config: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("guidance backend unavailable after {attempts} attempt(s): {message}")]
    Retriable { message: String, attempts: u32 },
    #[error("guidance backend error (status {status:?}): {body}")]
    Backend { status: Option<u16>, body: String },
}

impl GuidanceError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, GuidanceError::Retriable { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub prompt: String,
    pub negative_prompt: Option<String>,
    /// Classifier-free guidance scale.
    pub omega: f64,
    /// Inclusive range timesteps are drawn from.
    pub t_range: (u32, u32),
    pub weight: WeightFn,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            prompt: String::new(),
            negative_prompt: None,
            omega: 100.0,
            t_range: (50, 950),
            weight: WeightFn::Uniform,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<(), GuidanceError> {
        let (lo, hi) = self.t_range;
        if !(1 <= lo && lo <= hi && hi <= sched.steps()) {
            return Err(GuidanceError::Config(format!(
                "t_range ({lo}, {hi}) must satisfy 1 <= t_min <= t_max <= {}",
                sched.steps()
            )));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(GuidanceError::Config(format!("omega must be >= 0, got {}", self.omega)));
        }
        Ok(())
    }
}

/// `(1 + omega) * eps_cond - omega * eps_uncond`, element-wise, evaluated as
/// `c + omega * (c - u)` so equal inputs come back unchanged.
pub fn cfg_combine(
    eps_cond: &LatentGrid,
    eps_uncond: &LatentGrid,
    omega: f64,
) -> Result<LatentGrid, GuidanceError> {
    eps_cond.zip_map(eps_uncond, |c, u| c + omega * (c - u))
}

/// Pixel-space L2 target: gradient `2 (I - target) / N`.
#[derive(Debug, Clone)]
pub struct PixelTarget {
    pub target: RasterImage,
}

/// Where a guidance gradient comes from.
#[derive(Debug, Clone)]
pub enum Backend {
    /// Always returns a zero gradient; a stub for wiring and UI tests.
    Zero,
    PixelTarget(PixelTarget),
    MockLatent(MockDenoiser),
    Remote(RemoteGuidance),
}

impl Backend {
    pub fn kind(&self) -> &'static str {
        match self {
            Backend::Zero => "zero",
            Backend::PixelTarget(_) => "pixel_target",
            Backend::MockLatent(_) => "mock_latent",
            Backend::Remote(_) => "remote",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub t: Option<u32>,
    /// `||eps_hat - eps||^2` for latent backends, mean squared error for the
    /// pixel target, whatever the server reports for remote backends.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GuidanceOutput {
    /// `dL/dpixels` of the augmented composite.
    pub grad: RasterImage,
    pub diagnostics: Diagnostics,
}

fn draw_timestep(cfg: &GuidanceConfig, rng: &mut SketchRng) -> u32 {
    rng.int_inclusive(cfg.t_range.0, cfg.t_range.1)
}

fn to_f32(img: &RasterImage) -> Vec<f32> {
    img.data().iter().map(|&v| v as f32).collect()
}

/// One stochastic distillation gradient with respect to the augmented pixels.
///
/// Latent backends draw `t` uniformly from `cfg.t_range` and one standard
/// normal per latent cell, in that order.
pub fn sds_pixel_grad(
    aug_image: &RasterImage,
    aug_cond: &RasterImage,
    cfg: &GuidanceConfig,
    sched: &NoiseSchedule,
    backend: &Backend,
    rng: &mut SketchRng,
) -> Result<GuidanceOutput, GuidanceError> {
    cfg.validate(sched)?;
    aug_cond
        .check_shape(aug_image.shape())
        .map_err(|e| GuidanceError::Shape(e.to_string()))?;
    let (w, h) = aug_image.shape();
    match backend {
        Backend::Zero => Ok(GuidanceOutput {
            grad: RasterImage::zeros(w, h),
            diagnostics: Diagnostics::default(),
        }),
        Backend::PixelTarget(pt) => {
            let n = (w as f64) * (h as f64);
            let diff = aug_image
                .zip_map(&pt.target, |i, t| i - t)
                .map_err(|e| GuidanceError::Shape(e.to_string()))?;
            let loss = diff.dot(&diff) / n;
            Ok(GuidanceOutput {
                grad: diff.map(|d| 2.0 * d / n),
                diagnostics: Diagnostics { t: None, loss: Some(loss) },
            })
        }
        Backend::MockLatent(mock) => {
            let t = draw_timestep(cfg, rng);
            let (alpha, sigma) = sched.schedule_at(t)?;
            let z = mock.encoder.encode(aug_image)?;
            let eps = LatentGrid::new(
                z.width(),
                z.height(),
                (0..z.len()).map(|_| rng.standard_normal()).collect(),
            )?;
            let resid = mock.residual(&z, &eps, alpha, sigma, &cfg.prompt, aug_cond, cfg.omega)?;
            let wt = cfg.weight.weight(sigma);
            let grad = mock.encoder.encode_backward(&resid.map(|r| wt * r))?;
            Ok(GuidanceOutput {
                grad,
                diagnostics: Diagnostics {
                    t: Some(t),
                    loss: Some(resid.squared_norm()),
                },
            })
        }
        Backend::Remote(client) => {
            let t = draw_timestep(cfg, rng);
            let (_, sigma) = sched.schedule_at(t)?;
            let req = GuidanceRequest {
                prompt: cfg.prompt.clone(),
                negative_prompt: cfg.negative_prompt.clone(),
                omega: cfg.omega,
                timestep: Some(t),
                width: w,
                height: h,
                image: to_f32(aug_image),
                cond: to_f32(aug_cond),
            };
            let resp = client.call(&req)?;
            let values: Vec<f64> = resp.grad.iter().map(|&v| v as f64).collect();
            let grad = match resp.space {
                GradSpace::Pixel => RasterImage::from_data(w, h, values)
                    .map_err(|e| GuidanceError::Shape(e.to_string()))?,
                GradSpace::Latent => {
                    let enc = LatentEncoder::new(resp.pool);
                    let (lw, lh) = enc.latent_shape(w, h)?;
                    let wt = cfg.weight.weight(sigma);
                    let g = LatentGrid::new(lw, lh, values)?;
                    enc.encode_backward(&g.map(|v| wt * v))?
                }
            };
            Ok(GuidanceOutput {
                grad,
                diagnostics: Diagnostics { t: Some(t), loss: resp.loss },
            })
        }
    }
}
