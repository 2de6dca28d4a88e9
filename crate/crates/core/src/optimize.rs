//! The training loop: render, compose, augment, guide, backpropagate and
//! step Adam on the trainable control points, with periodic pruning.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::augment::{
    apply_augmentation, augmentation_backward, sample_augmentation, AugmentConfig, AugmentError,
};
use crate::guidance::{sds_pixel_grad, Backend, GuidanceConfig, GuidanceError, NoiseSchedule};
use crate::raster::{compose_ink, flatten, RasterError, RasterImage, RenderSettings, Rasterizer};
use crate::rng::{SketchRng, Stream};
use crate::sketch::{random_stroke, Sketch, Stroke};
use crate::svg::export_svg;

#[derive(Debug, thiserror::Error)]
pub enum OptimizeError {
    #[error("invalid optimization config: {0}")]
    Config(String),
    #[error("parameter length mismatch: {params} params, {grads} grads, {state} state")]
    Length { params: usize, grads: usize, state: usize },
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), OptimizeError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(OptimizeError::Length {
                params: params.len(),
                grads: grads.len(),
                state: self.m.len(),
            });
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powf(self.step as f64);
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    /// Clears both moments for `range` (a freshly reinitialized stroke).
    pub fn reset(&mut self, range: std::ops::Range<usize>) {
        self.m[range.clone()].fill(0.0);
        self.v[range].fill(0.0);
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(
    state: &AdamState,
    params: &[f64],
    grads: &[f64],
) -> Result<(AdamState, Vec<f64>), OptimizeError> {
    let mut s = state.clone();
    let mut p = params.to_vec();
    s.step(&mut p, grads)?;
    Ok((s, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeConfig {
    pub iterations: u32,
    /// Prune every this many iterations; 0 disables pruning.
    pub prune_every: u32,
    pub prune_warmup: u32,
    /// Minimum polyline arc length in pixels.
    pub prune_min_length: f64,
    /// Minimum polyline bounding-box area in square pixels.
    pub prune_min_bbox_area: f64,
    /// Attach an SVG snapshot every this many iterations; 0 only at the end.
    pub snapshot_every: u32,
    pub adam: AdamConfig,
    pub augment: AugmentConfig,
    pub guidance: GuidanceConfig,
    pub render: RenderSettings,
    pub seed: u64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            prune_every: 50,
            prune_warmup: 100,
            prune_min_length: 10.0,
            prune_min_bbox_area: 25.0,
            snapshot_every: 25,
            adam: AdamConfig::default(),
            augment: AugmentConfig::default(),
            guidance: GuidanceConfig::default(),
            render: RenderSettings::default(),
            seed: 0,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<(), OptimizeError> {
        let bad = |m: String| Err(OptimizeError::Config(m));
        if self.iterations < 1 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.prune_min_length >= 0.0 && self.prune_min_bbox_area >= 0.0) {
            return bad("prune thresholds must be non-negative".into());
        }
        let a = self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", a.lr));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if !(self.render.flatten_tol > 0.0 && self.render.aa_half_width > 0.0) {
            return bad("render tolerances must be positive".into());
        }
        self.augment.validate()?;
        self.guidance.validate(schedule)?;
        Ok(())
    }
}

/// One line of the progress trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// 1-based iteration.
    pub iter: u32,
    /// Backend diagnostic loss before this iteration's step, averaged over
    /// the augmented views; `null` when the backend reports none.
    pub loss: Option<f64>,
    /// Euclidean norm of the masked control-point gradient.
    pub grad_norm: f64,
    /// Trainable-sketch indices reinitialized after this step.
    pub pruned: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svg: Option<String>,
}

impl TraceEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace event serializes")
    }
}

pub fn trace_to_jsonl(trace: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in trace {
        out.push_str(&e.to_json_line());
        out.push('\n');
    }
    out
}

/// Shared flag checked at iteration boundaries.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// Guidance backend plus the noise schedule it is driven with.
#[derive(Debug, Clone)]
pub struct Engine {
    pub backend: Backend,
    pub schedule: NoiseSchedule,
}

impl Engine {
    pub fn new(backend: Backend) -> Self {
        Self {
            backend,
            schedule: NoiseSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Cancelled,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// The optimized trainable sketch.
    pub sketch: Sketch,
    pub trace: Vec<TraceEvent>,
    pub status: RunStatus,
}

/// A run that aborted; carries everything produced before the failure.
#[derive(Debug, thiserror::Error)]
#[error("optimization failed after {} iteration(s): {error}", trace.len())]
pub struct RunFailure {
    #[source]
    pub error: OptimizeError,
    pub sketch: Sketch,
    pub trace: Vec<TraceEvent>,
}

/// Arc length and bounding-box area of a stroke's flattened polyline.
pub fn stroke_extent(stroke: &Stroke, flatten_tol: f64) -> (f64, f64) {
    let flat = flatten(stroke, flatten_tol).expect("positive tolerance");
    let v = &flat.vertices;
    let length: f64 = v.windows(2).map(|w| w[1].sub(w[0]).length()).sum();
    let (mut lo, mut hi) = (v[0], v[0]);
    for p in v {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (length, (hi.x - lo.x) * (hi.y - lo.y))
}

/// Replaces degenerate trainable strokes with fresh random ones.
///
/// A stroke is degenerate when its arc length or bounding-box area falls
/// below the configured minimum. Replacements keep the segment count and
/// visual attributes. Returns the replaced indices in ascending order.
pub fn prune_and_reinit(sketch: &mut Sketch, cfg: &OptimizeConfig, rng: &mut SketchRng) -> Vec<usize> {
    let (w, h) = (sketch.canvas_w(), sketch.canvas_h());
    let mut pruned = Vec::new();
    for (i, stroke) in sketch.strokes.iter_mut().enumerate() {
        if !stroke.trainable {
            continue;
        }
        let (len, area) = stroke_extent(stroke, cfg.render.flatten_tol);
        if len < cfg.prune_min_length || area < cfg.prune_min_bbox_area {
            let fresh = random_stroke(stroke.segment_count(), w, h, stroke.width(), rng);
            *stroke = Stroke::new(fresh.points().to_vec(), stroke.width(), stroke.ink(), stroke.opacity())
                .expect("attributes were already valid");
            pruned.push(i);
        }
    }
    pruned
}

fn point_offsets(sketch: &Sketch) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(sketch.len() + 1);
    let mut acc = 0;
    offsets.push(0);
    for s in &sketch.strokes {
        acc += s.points().len() * 2;
        offsets.push(acc);
    }
    offsets
}

/// Optimizes `trainable` against the frozen condition sketch `initial`.
///
/// Each iteration composes both renders, averages the guidance gradient
/// over `cfg.augment.batch` augmented views, backpropagates to the
/// trainable control points (frozen strokes masked to zero) and takes an
/// Adam step. `on_event` sees every trace event as it is produced.
/// Cancellation is honored before each iteration.
pub fn optimize_sketch(
    initial: &Sketch,
    trainable: &Sketch,
    cfg: &OptimizeConfig,
    engine: &Engine,
    on_event: &mut dyn FnMut(&TraceEvent),
    cancel: &CancelToken,
) -> Result<RunOutcome, RunFailure> {
    let mut sketch = trainable.clone();
    let mut trace = Vec::new();
    let fail = |error: OptimizeError, sketch: Sketch, trace: Vec<TraceEvent>| RunFailure { error, sketch, trace };

    if let Err(e) = cfg.validate(&engine.schedule) {
        return Err(fail(e, sketch, trace));
    }
    if !initial.same_canvas(trainable) {
        let e = OptimizeError::Config(format!(
            "canvas mismatch: condition {}x{}, trainable {}x{}",
            initial.canvas_w(),
            initial.canvas_h(),
            trainable.canvas_w(),
            trainable.canvas_h()
        ));
        return Err(fail(e, sketch, trace));
    }

    let raster = Rasterizer::new(cfg.render);
    let (w, h) = (sketch.canvas_w(), sketch.canvas_h());
    let cond_src = raster.render(initial);
    let mut aug_rng = SketchRng::stream(cfg.seed, Stream::Augment);
    let mut guide_rng = SketchRng::stream(cfg.seed, Stream::Guidance);
    let mut prune_rng = SketchRng::stream(cfg.seed, Stream::Prune);
    let mut adam = AdamState::new(sketch.point_count() * 2, cfg.adam);
    let batch = cfg.augment.batch.max(1);

    for iter in 1..=cfg.iterations {
        if cancel.is_cancelled() {
            return Ok(RunOutcome {
                sketch,
                trace,
                status: RunStatus::Cancelled,
            });
        }
        let step = (|| -> Result<(Vec<f64>, Option<f64>), OptimizeError> {
            let flats = raster.flatten_sketch(&sketch);
            let rendered = raster.render_flattened(&sketch, &flats)?;
            let composite = compose_ink(&rendered, &cond_src)?;
            let mut d_comp = RasterImage::zeros(w, h);
            let mut loss_sum = 0.0;
            let mut loss_seen = false;
            for _ in 0..batch {
                let params = sample_augmentation(&mut aug_rng, w, h, &cfg.augment)?;
                let aug_img = apply_augmentation(&composite, &params)?;
                let aug_cond = apply_augmentation(&cond_src, &params)?;
                let out = sds_pixel_grad(&aug_img, &aug_cond, &cfg.guidance, &engine.schedule, &engine.backend, &mut guide_rng)?;
                if let Some(l) = out.diagnostics.loss {
                    loss_sum += l;
                    loss_seen = true;
                }
                let g = augmentation_backward(&params, &out.grad)?;
                for (acc, v) in d_comp.data_mut().iter_mut().zip(g.data()) {
                    *acc += v;
                }
            }
            let inv = 1.0 / batch as f64;
            // d(composite)/d(rendered) is the condition render.
            let d_render = d_comp.zip_map(&cond_src, |g, c| g * c * inv)?;
            let grads = raster.render_backward_flattened(&sketch, &flats, &d_render)?;
            Ok((grads.masked_params(), loss_seen.then_some(loss_sum * inv)))
        })();
        let (grads, loss) = match step {
            Ok(v) => v,
            Err(e) => return Err(fail(e, sketch, trace)),
        };
        let grad_norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        let mut params = sketch.to_params();
        if let Err(e) = adam.step(&mut params, &grads) {
            return Err(fail(e, sketch, trace));
        }
        sketch.set_params(&params);

        let mut pruned = Vec::new();
        if cfg.prune_every > 0 && iter >= cfg.prune_warmup && iter % cfg.prune_every == 0 {
            pruned = prune_and_reinit(&mut sketch, cfg, &mut prune_rng);
            let offsets = point_offsets(&sketch);
            for &i in &pruned {
                adam.reset(offsets[i]..offsets[i + 1]);
            }
        }

        let snapshot = iter == cfg.iterations || (cfg.snapshot_every > 0 && iter % cfg.snapshot_every == 0);
        let event = TraceEvent {
            iter,
            loss,
            grad_norm,
            pruned,
            svg: snapshot.then(|| export_svg(&initial.concat(&sketch))),
        };
        on_event(&event);
        trace.push(event);
    }
    Ok(RunOutcome {
        sketch,
        trace,
        status: RunStatus::Completed,
    })
}
