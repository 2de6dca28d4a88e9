//! Guidance backend selection shared by the CLI and the HTTP server.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sketchloop_core::augment::{apply_augmentation, AugmentConfig, AugmentParams};
use sketchloop_core::guidance::{Backend, MockDenoiser, PixelTarget, RemoteGuidance};
use sketchloop_core::optimize::{Engine, OptimizeConfig};
use sketchloop_core::svg::import_svg;
use sketchloop_core::{RasterImage, Rasterizer, Sketch};

/// `zero`, `pixel:PATH`, `mock:PATH` or `remote:URL`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GuidanceSpec {
    Zero,
    /// Pixel-space fit to the image or SVG at the path.
    Pixel(PathBuf),
    /// Mock latent backend whose guided center is the image or SVG at the path.
    Mock(PathBuf),
    Remote(String),
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct SetupError(pub String);

impl FromStr for GuidanceSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        let need = |arg: &str| {
            if arg.is_empty() {
                Err(format!("guidance {kind:?} needs an argument, e.g. {kind}:PATH"))
            } else {
                Ok(arg.to_string())
            }
        };
        match kind {
            "zero" if arg.is_empty() => Ok(GuidanceSpec::Zero),
            "pixel" => need(arg).map(|p| GuidanceSpec::Pixel(p.into())),
            "mock" => need(arg).map(|p| GuidanceSpec::Mock(p.into())),
            "remote" => need(arg).map(GuidanceSpec::Remote),
            _ => Err(format!("unknown guidance {s:?}; expected zero, pixel:PATH, mock:PATH or remote:URL")),
        }
    }
}

impl fmt::Display for GuidanceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GuidanceSpec::Zero => write!(f, "zero"),
            GuidanceSpec::Pixel(p) => write!(f, "pixel:{}", p.display()),
            GuidanceSpec::Mock(p) => write!(f, "mock:{}", p.display()),
            GuidanceSpec::Remote(u) => write!(f, "remote:{u}"),
        }
    }
}

impl GuidanceSpec {
    /// Pixel and mock targets live in a fixed view, so random crops and
    /// warps only misalign them; those backends default to no augmentation.
    pub fn default_augment(&self, out_size: u32) -> AugmentConfig {
        match self {
            GuidanceSpec::Remote(_) => AugmentConfig { out_size, ..Default::default() },
            _ => AugmentConfig::identity(out_size),
        }
    }

    /// Builds the engine for one run that uses `initial` as its condition.
    pub fn engine(&self, initial: &Sketch, cfg: &OptimizeConfig) -> Result<Engine, SetupError> {
        let backend = match self {
            GuidanceSpec::Zero => Backend::Zero,
            GuidanceSpec::Remote(url) => Backend::Remote(RemoteGuidance::new(url)),
            GuidanceSpec::Pixel(path) => {
                let target = fixed_view(&load_target(path, initial, cfg)?, cfg)?;
                Backend::PixelTarget(PixelTarget { target })
            }
            GuidanceSpec::Mock(path) => {
                let center = fixed_view(&load_target(path, initial, cfg)?, cfg)?;
                let cond = fixed_view(&Rasterizer::new(cfg.render).render(initial), cfg)?;
                let mut mock = MockDenoiser::default();
                let target = MockDenoiser::target_for_center(&center, &cond, cfg.guidance.omega, mock.blend)
                    .map_err(|e| SetupError(e.to_string()))?;
                mock.register(cfg.guidance.prompt.clone(), target);
                Backend::MockLatent(mock)
            }
        };
        Ok(Engine::new(backend))
    }
}

fn fixed_view(img: &RasterImage, cfg: &OptimizeConfig) -> Result<RasterImage, SetupError> {
    let (w, h) = img.shape();
    apply_augmentation(img, &AugmentParams::identity(w, h, cfg.augment.out_size)).map_err(|e| SetupError(e.to_string()))
}

/// Reads a target as `.svg` (rendered) or any raster format, at the canvas size.
fn load_target(path: &Path, canvas: &Sketch, cfg: &OptimizeConfig) -> Result<RasterImage, SetupError> {
    let ctx = |e: &dyn fmt::Display| SetupError(format!("target {}: {e}", path.display()));
    let img = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("svg")) {
        let text = std::fs::read_to_string(path).map_err(|e| ctx(&e))?;
        let sketch = import_svg(&text).map_err(|e| ctx(&e))?;
        Rasterizer::new(cfg.render).render(&sketch)
    } else {
        RasterImage::read_image(path).map_err(|e| ctx(&e))?
    };
    let want = (canvas.canvas_w(), canvas.canvas_h());
    if img.shape() != want {
        return Err(ctx(&format!("size {:?} does not match the {}x{} canvas", img.shape(), want.0, want.1)));
    }
    Ok(img)
}
