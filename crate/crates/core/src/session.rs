//! Multi-round storyboards: prompt expansion, edits between rounds, frame
//! lineage and persistence.

use std::fmt::Write as _;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::optimize::{
    optimize_sketch, CancelToken, Engine, OptimizeConfig, RunFailure, RunOutcome, RunStatus, TraceEvent,
};
use crate::rng::{SketchRng, Stream};
use crate::sketch::{fit_polyline_to_bezier, random_init_strokes, ControlPoint, Sketch, SketchError, Stroke, DEFAULT_SEGMENTS};
use crate::svg::{write_path_element, xml_escape};

pub const SCHEMA_VERSION: u32 = 1;
/// Placeholder for the previous frame's prompt.
pub const PREVIOUS_PROMPT: &str = "[…]";
/// ASCII spelling accepted for [`PREVIOUS_PROMPT`].
pub const PREVIOUS_PROMPT_ASCII: &str = "[...]";

const CAPTION_HEIGHT: u32 = 48;
const FRAME_GAP: u32 = 24;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("template references the previous prompt but there is none")]
    NoPreviousPrompt,
    #[error("frame {0} does not exist")]
    NoFrame(usize),
    #[error("frame {index} is {status:?}; {action} needs {expected}")]
    State {
        index: usize,
        status: FrameStatus,
        action: &'static str,
        expected: &'static str,
    },
    #[error("frame {0} is running")]
    Busy(usize),
    #[error("inherit needs a completed previous frame")]
    NothingToInherit,
    #[error("stroke index {index} out of range for {len} strokes")]
    StrokeIndex { index: usize, len: usize },
    #[error("scale factor must be positive and finite, got {0}")]
    ScaleFactor(f64),
    #[error("translation must be finite")]
    Translation,
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("no completed frames to export")]
    NoDoneFrames,
    #[error("unsupported schema version {0}")]
    Schema(u32),
    #[error("invalid session document: {0}")]
    Parse(String),
    #[error(transparent)]
    Sketch(#[from] SketchError),
}

/// Replaces every previous-prompt token in `template` with `previous`.
pub fn expand_prompt(template: &str, previous: &str) -> Result<String, SessionError> {
    let normalized = template.replace(PREVIOUS_PROMPT_ASCII, PREVIOUS_PROMPT);
    if !normalized.contains(PREVIOUS_PROMPT) {
        return Ok(template.to_string());
    }
    if previous.is_empty() {
        return Err(SessionError::NoPreviousPrompt);
    }
    Ok(normalized.replace(PREVIOUS_PROMPT, previous))
}

fn has_token(template: &str) -> bool {
    template.contains(PREVIOUS_PROMPT) || template.contains(PREVIOUS_PROMPT_ASCII)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Draft,
    Running,
    Done,
    Cancelled,
}

/// One sketch edit. `indices` address [`StoryboardFrame::sketch`]; where
/// optional, omitting them selects every stroke.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EditOp {
    Translate {
        #[serde(default)]
        indices: Option<Vec<usize>>,
        dx: f64,
        dy: f64,
    },
    /// Scales about `pivot`, by default the centroid of the selected
    /// control points.
    Scale {
        #[serde(default)]
        indices: Option<Vec<usize>>,
        factor: f64,
        #[serde(default)]
        pivot: Option<ControlPoint>,
    },
    /// Appends Bézier strokes as given and polylines fitted to Bézier paths.
    AddStrokes {
        #[serde(default)]
        strokes: Vec<Stroke>,
        #[serde(default)]
        polylines: Vec<Vec<ControlPoint>>,
        /// Add as frozen condition strokes instead of trainable ones.
        #[serde(default)]
        frozen: bool,
    },
    DeleteStrokes { indices: Vec<usize> },
    LockStrokes { indices: Vec<usize> },
    UnlockStrokes { indices: Vec<usize> },
    /// Reverts the most recent edit. Not itself recorded.
    Undo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub op: EditOp,
    /// Frame sketch before `op` was applied.
    pub before: Sketch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryboardFrame {
    pub index: usize,
    pub prompt_template: String,
    pub resolved_prompt: String,
    /// Frozen and trainable strokes in one list; the trainable flag decides
    /// which side of the optimization a stroke is on.
    pub sketch: Sketch,
    pub config: OptimizeConfig,
    pub status: FrameStatus,
    /// Present iff `status` is done.
    pub result: Option<Sketch>,
    /// Latest state of a cancelled run.
    #[serde(default)]
    pub partial_result: Option<Sketch>,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub history: Vec<HistoryEntry>,
}

fn split(sketch: &Sketch, trainable: bool) -> Sketch {
    let mut out = sketch.clone();
    out.strokes.retain(|s| s.trainable == trainable);
    out
}

fn check_indices(indices: &[usize], len: usize) -> Result<(), SessionError> {
    match indices.iter().find(|&&i| i >= len) {
        Some(&index) => Err(SessionError::StrokeIndex { index, len }),
        None => Ok(()),
    }
}

fn selection(indices: &Option<Vec<usize>>, len: usize) -> Result<Vec<usize>, SessionError> {
    match indices {
        Some(v) => {
            check_indices(v, len)?;
            let mut v = v.clone();
            v.sort_unstable();
            v.dedup();
            Ok(v)
        }
        None => Ok((0..len).collect()),
    }
}

/// Applies `op` to `sketch`. [`EditOp::Undo`] is rejected here.
pub fn apply_op(sketch: &mut Sketch, op: &EditOp) -> Result<(), SessionError> {
    let len = sketch.len();
    match op {
        EditOp::Translate { indices, dx, dy } => {
            if !(dx.is_finite() && dy.is_finite()) {
                return Err(SessionError::Translation);
            }
            for i in selection(indices, len)? {
                sketch.strokes[i].translate(*dx, *dy);
            }
        }
        EditOp::Scale { indices, factor, pivot } => {
            if !(*factor > 0.0 && factor.is_finite()) {
                return Err(SessionError::ScaleFactor(*factor));
            }
            let sel = selection(indices, len)?;
            let pivot = match pivot {
                Some(p) => *p,
                None => {
                    let pts: Vec<ControlPoint> = sel.iter().flat_map(|&i| sketch.strokes[i].points().to_vec()).collect();
                    if pts.is_empty() {
                        ControlPoint::default()
                    } else {
                        let sum = pts.iter().fold(ControlPoint::default(), |a, &p| a.add(p));
                        sum.scale(1.0 / pts.len() as f64)
                    }
                }
            };
            for i in sel {
                for p in sketch.strokes[i].points_mut() {
                    *p = pivot.add(p.sub(pivot).scale(*factor));
                }
            }
        }
        EditOp::AddStrokes { strokes, polylines, frozen } => {
            let mut added = strokes.clone();
            for poly in polylines {
                added.push(fit_polyline_to_bezier(poly)?);
            }
            sketch
                .strokes
                .extend(added.into_iter().map(|s| s.with_trainable(!frozen)));
        }
        EditOp::DeleteStrokes { indices } => {
            check_indices(indices, len)?;
            let mut idx = indices.clone();
            idx.sort_unstable();
            idx.dedup();
            for i in idx.into_iter().rev() {
                sketch.strokes.remove(i);
            }
        }
        EditOp::LockStrokes { indices } | EditOp::UnlockStrokes { indices } => {
            check_indices(indices, len)?;
            let trainable = matches!(op, EditOp::UnlockStrokes { .. });
            for &i in indices {
                sketch.strokes[i].trainable = trainable;
            }
        }
        EditOp::Undo => return Err(SessionError::NothingToUndo),
    }
    Ok(())
}

impl StoryboardFrame {
    /// Frozen strokes: the condition sketch of the next run.
    pub fn base_sketch(&self) -> Sketch {
        split(&self.sketch, false)
    }

    /// Trainable strokes the next run starts from.
    pub fn trainable_init(&self) -> Sketch {
        split(&self.sketch, true)
    }

    fn require(&self, action: &'static str, ok: &[FrameStatus], expected: &'static str) -> Result<(), SessionError> {
        if ok.contains(&self.status) {
            Ok(())
        } else if self.status == FrameStatus::Running {
            Err(SessionError::Busy(self.index))
        } else {
            Err(SessionError::State {
                index: self.index,
                status: self.status,
                action,
                expected,
            })
        }
    }

    /// Applies one edit to a draft frame and records it for undo.
    pub fn apply_edit(&mut self, op: &EditOp) -> Result<(), SessionError> {
        self.require("editing", &[FrameStatus::Draft], "a draft frame")?;
        if let EditOp::Undo = op {
            return self.undo();
        }
        let before = self.sketch.clone();
        apply_op(&mut self.sketch, op)?;
        self.history.push(HistoryEntry { op: op.clone(), before });
        Ok(())
    }

    pub fn undo(&mut self) -> Result<(), SessionError> {
        self.require("undo", &[FrameStatus::Draft], "a draft frame")?;
        let entry = self.history.pop().ok_or(SessionError::NothingToUndo)?;
        self.sketch = entry.before;
        Ok(())
    }
}

/// Everything an optimization run of one frame needs.
#[derive(Debug, Clone)]
pub struct RunRequest {
    pub frame: usize,
    pub initial: Sketch,
    pub trainable: Sketch,
    pub config: OptimizeConfig,
}

impl RunRequest {
    pub fn execute(
        &self,
        engine: &Engine,
        on_event: &mut dyn FnMut(&TraceEvent),
        cancel: &CancelToken,
    ) -> Result<RunOutcome, RunFailure> {
        optimize_sketch(&self.initial, &self.trainable, &self.config, engine, on_event, cancel)
    }
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionSettings {
    pub canvas_w: u32,
    pub canvas_h: u32,
    /// Random trainable strokes seeded into each new frame.
    pub strokes: usize,
    pub segments: usize,
    /// Starting config for new frames.
    pub config: OptimizeConfig,
}

impl Default for SessionSettings {
    fn default() -> Self {
        Self {
            canvas_w: 600,
            canvas_h: 600,
            strokes: 16,
            segments: DEFAULT_SEGMENTS,
            config: OptimizeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub frames: Vec<StoryboardFrame>,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub updated_at: u64,
    pub seed_base: u64,
    pub settings: SessionSettings,
}

#[derive(Serialize)]
struct DocumentOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    session: &'a Session,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

#[derive(Deserialize)]
struct DocumentIn {
    #[serde(flatten)]
    session: Session,
}

impl Session {
    pub fn new(id: impl Into<String>, seed_base: u64, settings: SessionSettings) -> Self {
        let t = now_millis();
        Self {
            id: id.into(),
            frames: Vec::new(),
            created_at: t,
            updated_at: t,
            seed_base,
            settings,
        }
    }

    fn touch(&mut self) {
        self.updated_at = now_millis().max(self.updated_at);
    }

    pub fn frame(&self, index: usize) -> Result<&StoryboardFrame, SessionError> {
        self.frames.get(index).ok_or(SessionError::NoFrame(index))
    }

    fn frame_mut(&mut self, index: usize) -> Result<&mut StoryboardFrame, SessionError> {
        self.frames.get_mut(index).ok_or(SessionError::NoFrame(index))
    }

    pub fn running_frame(&self) -> Option<usize> {
        self.frames.iter().position(|f| f.status == FrameStatus::Running)
    }

    pub fn frame_seed(&self, index: usize) -> u64 {
        self.seed_base.wrapping_add(index as u64)
    }

    /// Appends a draft frame. With `inherit`, the previous frame's result
    /// becomes the frozen base. `config` defaults to the session settings.
    pub fn add_frame(
        &mut self,
        template: &str,
        inherit: bool,
        config: Option<OptimizeConfig>,
    ) -> Result<&StoryboardFrame, SessionError> {
        if let Some(k) = self.running_frame() {
            return Err(SessionError::Busy(k));
        }
        let index = self.frames.len();
        let previous = self.frames.last();
        let resolved = match previous {
            None if has_token(template) => return Err(SessionError::NoPreviousPrompt),
            None => template.to_string(),
            Some(p) => expand_prompt(template, &p.resolved_prompt)?,
        };
        let (w, h) = (self.settings.canvas_w, self.settings.canvas_h);
        let mut sketch = if inherit {
            let prev = previous.ok_or(SessionError::NothingToInherit)?;
            let mut base = match (&prev.status, &prev.result) {
                (FrameStatus::Done, Some(r)) => r.clone(),
                _ => return Err(SessionError::NothingToInherit),
            };
            base.set_all_trainable(false);
            base
        } else {
            Sketch::new(w, h)?
        };
        let mut rng = SketchRng::stream(self.frame_seed(index), Stream::Init);
        let fresh = random_init_strokes(self.settings.strokes, self.settings.segments, sketch.canvas_w(), sketch.canvas_h(), &mut rng)?;
        sketch.strokes.extend(fresh.strokes);
        let mut config = config.unwrap_or_else(|| self.settings.config.clone());
        config.seed = self.frame_seed(index);
        self.frames.push(StoryboardFrame {
            index,
            prompt_template: template.to_string(),
            resolved_prompt: resolved.clone(),
            sketch,
            config: OptimizeConfig {
                guidance: crate::guidance::GuidanceConfig {
                    prompt: resolved,
                    ..config.guidance.clone()
                },
                ..config
            },
            status: FrameStatus::Draft,
            result: None,
            partial_result: None,
            error: None,
            history: Vec::new(),
        });
        self.touch();
        Ok(&self.frames[index])
    }

    pub fn apply_edit(&mut self, index: usize, op: &EditOp) -> Result<&StoryboardFrame, SessionError> {
        if let Some(k) = self.running_frame() {
            return Err(SessionError::Busy(k));
        }
        self.frame_mut(index)?.apply_edit(op)?;
        self.touch();
        self.frame(index)
    }

    /// Marks a frame running and returns what to optimize. Rejects with
    /// [`SessionError::Busy`] while any frame of the session is running.
    /// `overrides` replaces the frame config (prompt and seed are kept).
    pub fn begin_run(&mut self, index: usize, overrides: Option<OptimizeConfig>) -> Result<RunRequest, SessionError> {
        if let Some(k) = self.running_frame() {
            return Err(SessionError::Busy(k));
        }
        let seed = self.frame_seed(index);
        let frame = self.frame_mut(index)?;
        frame.require("running", &[FrameStatus::Draft, FrameStatus::Cancelled], "a draft or cancelled frame")?;
        if let Some(mut c) = overrides {
            c.seed = seed;
            c.guidance.prompt = frame.resolved_prompt.clone();
            frame.config = c;
        }
        frame.status = FrameStatus::Running;
        frame.error = None;
        frame.partial_result = None;
        let req = RunRequest {
            frame: index,
            initial: frame.base_sketch(),
            trainable: frame.trainable_init(),
            config: frame.config.clone(),
        };
        self.touch();
        Ok(req)
    }

    /// Records the outcome of the run started by [`Session::begin_run`].
    pub fn finish_run(&mut self, index: usize, outcome: Result<RunOutcome, RunFailure>) -> Result<&StoryboardFrame, SessionError> {
        let frame = self.frame_mut(index)?;
        if frame.status != FrameStatus::Running {
            return Err(SessionError::State {
                index,
                status: frame.status,
                action: "finishing a run",
                expected: "a running frame",
            });
        }
        let base = frame.base_sketch();
        match outcome {
            Ok(out) => {
                let combined = base.concat(&out.sketch);
                match out.status {
                    RunStatus::Completed => {
                        frame.status = FrameStatus::Done;
                        frame.result = Some(combined);
                    }
                    RunStatus::Cancelled => {
                        frame.status = FrameStatus::Cancelled;
                        frame.partial_result = Some(combined);
                    }
                }
            }
            Err(failure) => {
                frame.status = FrameStatus::Draft;
                frame.error = Some(failure.to_string());
            }
        }
        self.touch();
        self.frame(index)
    }

    /// Runs a frame to completion on the calling thread.
    pub fn run_frame(
        &mut self,
        index: usize,
        engine: &Engine,
        on_event: &mut dyn FnMut(&TraceEvent),
        cancel: &CancelToken,
    ) -> Result<&StoryboardFrame, SessionError> {
        let req = self.begin_run(index, None)?;
        let outcome = req.execute(engine, on_event, cancel);
        self.finish_run(index, outcome)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&DocumentOut {
            schema_version: SCHEMA_VERSION,
            session: self,
        })
        .expect("session serializes")
    }

    pub fn from_json(text: &str) -> Result<Session, SessionError> {
        let probe: VersionProbe = serde_json::from_str(text).map_err(|e| SessionError::Parse(e.to_string()))?;
        if probe.schema_version != SCHEMA_VERSION {
            return Err(SessionError::Schema(probe.schema_version));
        }
        let doc: DocumentIn = serde_json::from_str(text).map_err(|e| SessionError::Parse(e.to_string()))?;
        Ok(doc.session)
    }

    /// Lays out every done frame left to right with its resolved prompt
    /// as a caption.
    pub fn export_storyboard(&self) -> Result<String, SessionError> {
        let done: Vec<(&StoryboardFrame, &Sketch)> = self
            .frames
            .iter()
            .filter(|f| f.status == FrameStatus::Done)
            .filter_map(|f| f.result.as_ref().map(|r| (f, r)))
            .collect();
        if done.is_empty() {
            return Err(SessionError::NoDoneFrames);
        }
        let total_w: u32 =
            done.iter().map(|(_, r)| r.canvas_w()).sum::<u32>() + FRAME_GAP * (done.len() as u32 - 1);
        let max_h = done.iter().map(|(_, r)| r.canvas_h()).max().unwrap_or(0);
        let total_h = max_h + CAPTION_HEIGHT;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total_w}\" height=\"{total_h}\" viewBox=\"0 0 {total_w} {total_h}\">"
        );
        let _ = writeln!(out, "  <rect x=\"0\" y=\"0\" width=\"{total_w}\" height=\"{total_h}\" fill=\"#ffffff\"/>");
        let mut x = 0;
        for (frame, result) in done {
            let (w, h) = (result.canvas_w(), result.canvas_h());
            let _ = writeln!(
                out,
                "  <g class=\"frame\" data-index=\"{}\" transform=\"translate({x} 0)\">",
                frame.index
            );
            let _ = writeln!(
                out,
                "    <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"none\" stroke=\"#cccccc\"/>"
            );
            for s in &result.strokes {
                write_path_element(&mut out, s, "    ");
            }
            let _ = writeln!(
                out,
                "    <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>",
                w / 2,
                h + CAPTION_HEIGHT / 2,
                xml_escape(&frame.resolved_prompt)
            );
            out.push_str("  </g>\n");
            x += w + FRAME_GAP;
        }
        out.push_str("</svg>\n");
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expansion() {
        assert_eq!(expand_prompt("A tortoise and a hare", "").unwrap(), "A tortoise and a hare");
        assert_eq!(expand_prompt("[…] and […]", "x").unwrap(), "x and x");
        assert_eq!(expand_prompt("[...] and […]", "x").unwrap(), "x and x");
        assert!(matches!(expand_prompt("[…] more", ""), Err(SessionError::NoPreviousPrompt)));
    }

    #[test]
    fn first_frame_rejects_token() {
        let mut s = Session::new("s", 0, SessionSettings::default());
        assert!(s.add_frame("[…] more", false, None).is_err());
        assert!(s.frames.is_empty());
    }

    #[test]
    fn inherit_requires_done() {
        let mut s = Session::new("s", 0, SessionSettings { strokes: 2, ..Default::default() });
        s.add_frame("a", false, None).unwrap();
        assert!(matches!(s.add_frame("[…] b", true, None), Err(SessionError::NothingToInherit)));
    }

    #[test]
    fn undo_restores() {
        let mut s = Session::new("s", 0, SessionSettings { strokes: 3, ..Default::default() });
        s.add_frame("a", false, None).unwrap();
        let before = s.frames[0].sketch.clone();
        s.apply_edit(0, &EditOp::Scale { indices: None, factor: 1.7, pivot: None }).unwrap();
        assert_ne!(s.frames[0].sketch, before);
        s.apply_edit(0, &EditOp::Undo).unwrap();
        assert_eq!(s.frames[0].sketch, before);
        assert!(s.frames[0].history.is_empty());
    }

    #[test]
    fn edit_op_json() {
        let op: EditOp = serde_json::from_str(r#"{"kind":"translate","dx":10,"dy":-5}"#).unwrap();
        assert_eq!(op, EditOp::Translate { indices: None, dx: 10.0, dy: -5.0 });
    }

    #[test]
    fn unknown_schema() {
        let mut doc: serde_json::Value = serde_json::from_str(&Session::new("s", 1, SessionSettings::default()).to_json()).unwrap();
        doc["schema_version"] = 99.into();
        assert!(matches!(Session::from_json(&doc.to_string()), Err(SessionError::Schema(99))));
    }
}
