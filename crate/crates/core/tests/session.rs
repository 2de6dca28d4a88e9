use proptest::prelude::*;
use sketchloop_core::augment::AugmentConfig;
use sketchloop_core::guidance::Backend;
use sketchloop_core::optimize::{CancelToken, Engine, OptimizeConfig};
use sketchloop_core::session::{expand_prompt, EditOp, FrameStatus, Session, SessionError, SessionSettings};
use sketchloop_core::svg::import_svg;
use sketchloop_core::{ControlPoint, Sketch, Stroke};

const FIRST: &str = "A number of drawn absurd little figures upon the paper";
const COMPOSED: &str = "A number of drawn absurd little figures upon the paper, the paper lying on the sundial";

fn settings() -> SessionSettings {
    SessionSettings {
        canvas_w: 64,
        canvas_h: 48,
        strokes: 3,
        segments: 2,
        config: OptimizeConfig {
            iterations: 3,
            augment: AugmentConfig { out_size: 32, ..Default::default() },
            ..Default::default()
        },
    }
}

fn zero() -> Engine {
    Engine::new(Backend::Zero)
}

fn run_done(s: &mut Session, k: usize) {
    s.run_frame(k, &zero(), &mut |_| {}, &CancelToken::new()).unwrap();
    assert_eq!(s.frames[k].status, FrameStatus::Done);
}

#[test]
fn composed_storyboard_caption() {
    assert_eq!(expand_prompt("[…], the paper lying on the sundial", FIRST).unwrap(), COMPOSED);
    assert_eq!(expand_prompt("[...], the paper lying on the sundial", FIRST).unwrap(), COMPOSED);
    let mut s = Session::new("fig", 7, settings());
    s.add_frame(FIRST, false, None).unwrap();
    run_done(&mut s, 0);
    let f = s.add_frame("[…], the paper lying on the sundial", true, None).unwrap();
    assert_eq!(f.resolved_prompt, COMPOSED);
    assert_eq!(f.config.guidance.prompt, COMPOSED);
    assert!(!f.resolved_prompt.contains("[…]"));
}

#[test]
fn empty_session_round_trips() {
    let s = Session::new("empty", 3, SessionSettings::default());
    let doc = s.to_json();
    let v: serde_json::Value = serde_json::from_str(&doc).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(Session::from_json(&doc).unwrap(), s);
}

fn three_frame_session() -> Session {
    let mut s = Session::new("three", 100, settings());
    s.add_frame("a cat", false, None).unwrap();
    s.apply_edit(0, &EditOp::Translate { indices: Some(vec![0]), dx: 3.5, dy: -1.25 }).unwrap();
    s.apply_edit(0, &EditOp::AddStrokes {
        strokes: vec![],
        polylines: vec![vec![ControlPoint::new(1.0, 1.0), ControlPoint::new(9.0, 4.0), ControlPoint::new(20.0, 2.0)]],
        frozen: true,
    })
    .unwrap();
    run_done(&mut s, 0);
    s.add_frame("[…] on a mat", true, None).unwrap();
    s.apply_edit(1, &EditOp::Scale { indices: None, factor: 0.8, pivot: None }).unwrap();
    s.apply_edit(1, &EditOp::LockStrokes { indices: vec![5] }).unwrap();
    run_done(&mut s, 1);
    s.add_frame("[…], at night", true, None).unwrap();
    s.apply_edit(2, &EditOp::DeleteStrokes { indices: vec![0, 2] }).unwrap();
    s
}

#[test]
fn three_frame_session_round_trips() {
    let s = three_frame_session();
    assert_eq!(s.frames[2].history.len(), 1);
    let back = Session::from_json(&s.to_json()).unwrap();
    assert_eq!(back, s);
    assert_eq!(back.to_json(), s.to_json());
}

#[test]
fn truncated_and_foreign_documents_are_rejected() {
    let doc = three_frame_session().to_json();
    for cut in [1, doc.len() / 3, doc.len() - 2] {
        assert!(matches!(Session::from_json(&doc[..cut]), Err(SessionError::Parse(_))));
    }
    let future = doc.replacen("\"schema_version\": 1", "\"schema_version\": 9", 1);
    assert!(matches!(Session::from_json(&future), Err(SessionError::Schema(9))));
}

#[test]
fn prompt_lineage_is_deterministic() {
    let s = three_frame_session();
    let prompts: Vec<&str> = s.frames.iter().map(|f| f.resolved_prompt.as_str()).collect();
    assert_eq!(prompts, ["a cat", "a cat on a mat", "a cat on a mat, at night"]);
    let again = three_frame_session();
    for (a, b) in s.frames.iter().zip(&again.frames) {
        assert_eq!(a.sketch, b.sketch);
        assert_eq!(a.result, b.result);
    }
}

#[test]
fn inherited_base_is_frozen_previous_result() {
    let mut s = Session::new("inh", 0, settings());
    s.add_frame("x", false, None).unwrap();
    run_done(&mut s, 0);
    let prev = s.frames[0].result.clone().unwrap();
    let f = s.add_frame("[…] y", true, None).unwrap();
    let base = f.base_sketch();
    assert_eq!(base.len(), prev.len());
    assert!(base.strokes.iter().all(|st| !st.trainable));
    for (a, b) in base.strokes.iter().zip(&prev.strokes) {
        assert_eq!(a.points(), b.points());
    }
    assert_eq!(f.trainable_init().len(), 3);
    assert_eq!(f.config.seed, 1);
}

#[test]
fn zero_gradient_run_keeps_trainable_strokes() {
    let mut s = Session::new("z", 5, settings());
    s.add_frame("x", false, None).unwrap();
    s.apply_edit(0, &EditOp::LockStrokes { indices: vec![1] }).unwrap();
    let base = s.frames[0].base_sketch();
    let train = s.frames[0].trainable_init();
    run_done(&mut s, 0);
    let result = s.frames[0].result.as_ref().unwrap();
    assert_eq!(result, &base.concat(&train));
    assert!(s.frames[0].partial_result.is_none());
}

#[test]
fn state_machine_rules() {
    let mut s = Session::new("sm", 0, settings());
    s.add_frame("x", false, None).unwrap();
    let req = s.begin_run(0, None).unwrap();
    assert_eq!(s.frames[0].status, FrameStatus::Running);
    assert!(matches!(s.begin_run(0, None), Err(SessionError::Busy(0))));
    assert!(matches!(s.add_frame("y", false, None), Err(SessionError::Busy(0))));
    assert!(matches!(
        s.apply_edit(0, &EditOp::Translate { indices: None, dx: 1.0, dy: 0.0 }),
        Err(SessionError::Busy(0))
    ));
    // Cancel before the first iteration.
    let token = CancelToken::new();
    token.cancel();
    let out = req.execute(&zero(), &mut |_| {}, &token);
    s.finish_run(0, out).unwrap();
    let f = &s.frames[0];
    assert_eq!(f.status, FrameStatus::Cancelled);
    assert!(f.result.is_none());
    assert!(f.partial_result.is_some());
    // A cancelled frame may be rerun, but not edited.
    assert!(matches!(
        s.apply_edit(0, &EditOp::Translate { indices: None, dx: 1.0, dy: 0.0 }),
        Err(SessionError::State { .. })
    ));
    run_done(&mut s, 0);
    assert!(s.frames[0].partial_result.is_none());
    assert!(matches!(s.begin_run(0, None), Err(SessionError::State { .. })));
    assert!(matches!(s.begin_run(4, None), Err(SessionError::NoFrame(4))));
}

#[test]
fn failed_run_returns_frame_to_draft_with_error() {
    let mut s = Session::new("f", 0, settings());
    s.add_frame("unregistered", false, None).unwrap();
    let engine = Engine::new(Backend::MockLatent(Default::default()));
    s.run_frame(0, &engine, &mut |_| {}, &CancelToken::new()).unwrap();
    let f = &s.frames[0];
    assert_eq!(f.status, FrameStatus::Draft);
    assert!(f.error.as_deref().unwrap().contains("unregistered"), "{:?}", f.error);
    assert!(f.result.is_none());
}

#[test]
fn overrides_keep_prompt_and_seed() {
    let mut s = Session::new("o", 40, settings());
    s.add_frame("p", false, None).unwrap();
    let req = s.begin_run(0, Some(OptimizeConfig { iterations: 2, seed: 999, ..settings().config })).unwrap();
    assert_eq!(req.config.iterations, 2);
    assert_eq!(req.config.seed, 40);
    assert_eq!(req.config.guidance.prompt, "p");
}

fn sample_sketch() -> Sketch {
    let st = |pts: &[(f64, f64)]| Stroke::black(pts.iter().copied().map(ControlPoint::from).collect()).unwrap();
    Sketch::with_strokes(
        100,
        100,
        vec![st(&[(1.0, 2.0), (3.0, 4.0), (5.0, 6.0), (7.0, 8.0)]), st(&[(10.0, 10.0), (20.0, 5.0), (30.0, 0.0), (40.0, 5.0)])],
    )
    .unwrap()
}

fn edit(sketch: &Sketch, op: EditOp) -> Sketch {
    let mut s = Session::new("e", 0, SessionSettings { strokes: 0, canvas_w: 100, canvas_h: 100, ..settings() });
    s.add_frame("e", false, None).unwrap();
    s.frames[0].sketch = sketch.clone();
    s.apply_edit(0, &op).unwrap();
    s.frames[0].sketch.clone()
}

#[test]
fn zero_translation_and_inverse_pair() {
    let base = sample_sketch();
    assert_eq!(edit(&base, EditOp::Translate { indices: None, dx: 0.0, dy: 0.0 }), base);
    let moved = edit(&base, EditOp::Translate { indices: None, dx: 10.0, dy: -5.0 });
    let back = edit(&moved, EditOp::Translate { indices: None, dx: -10.0, dy: 5.0 });
    for (a, b) in back.strokes.iter().zip(&base.strokes) {
        for (p, q) in a.points().iter().zip(b.points()) {
            assert!((p.x - q.x).abs() <= 1e-9 && (p.y - q.y).abs() <= 1e-9);
        }
    }
}

#[test]
fn scale_about_origin_doubles_points() {
    let base = sample_sketch();
    let scaled = edit(&base, EditOp::Scale { indices: None, factor: 2.0, pivot: Some(ControlPoint::new(0.0, 0.0)) });
    for (a, b) in scaled.strokes.iter().zip(&base.strokes) {
        for (p, q) in a.points().iter().zip(b.points()) {
            assert_eq!((p.x, p.y), (2.0 * q.x, 2.0 * q.y));
        }
    }
    // Default pivot is the selection centroid, which stays put.
    let one = edit(&base, EditOp::Scale { indices: Some(vec![0]), factor: 3.0, pivot: None });
    assert_eq!(one.strokes[1], base.strokes[1]);
    assert_eq!(one.strokes[0].points()[0], ControlPoint::new(-5.0, -4.0));
}

#[test]
fn bad_edits_are_rejected_without_side_effects() {
    let mut s = Session::new("b", 0, settings());
    s.add_frame("b", false, None).unwrap();
    let before = s.frames[0].clone();
    for op in [
        EditOp::DeleteStrokes { indices: vec![3] },
        EditOp::Scale { indices: None, factor: 0.0, pivot: None },
        EditOp::Scale { indices: None, factor: -1.0, pivot: None },
        EditOp::Translate { indices: Some(vec![9]), dx: 1.0, dy: 1.0 },
        EditOp::Translate { indices: None, dx: f64::NAN, dy: 1.0 },
        EditOp::AddStrokes { strokes: vec![], polylines: vec![vec![ControlPoint::new(0.0, 0.0)]], frozen: false },
    ] {
        assert!(s.apply_edit(0, &op).is_err(), "{op:?}");
        assert_eq!(s.frames[0], before);
    }
    assert!(matches!(s.apply_edit(0, &EditOp::Undo), Err(SessionError::NothingToUndo)));
}

#[test]
fn edit_ops_have_tagged_json() {
    let op: EditOp = serde_json::from_str(r#"{"kind":"translate","dx":10,"dy":-5}"#).unwrap();
    assert_eq!(op, EditOp::Translate { indices: None, dx: 10.0, dy: -5.0 });
    let op: EditOp = serde_json::from_str(r#"{"kind":"scale","indices":[1],"factor":2,"pivot":{"x":0,"y":0}}"#).unwrap();
    assert!(matches!(op, EditOp::Scale { factor, .. } if factor == 2.0));
    let op: EditOp = serde_json::from_str(r#"{"kind":"unlock_strokes","indices":[0,2]}"#).unwrap();
    assert_eq!(op, EditOp::UnlockStrokes { indices: vec![0, 2] });
    assert!(serde_json::from_str::<EditOp>(r#"{"kind":"rotate","angle":1}"#).is_err());
    let text = serde_json::to_string(&EditOp::Undo).unwrap();
    assert_eq!(text, r#"{"kind":"undo"}"#);
}

#[test]
fn storyboard_lists_done_frames_in_order() {
    let mut s = Session::new("board", 0, settings());
    assert!(matches!(s.export_storyboard(), Err(SessionError::NoDoneFrames)));
    let templates = ["A tortoise & a hare", "[…] <on> the line", "[…], racing", "[…], finished"];
    for (k, t) in templates.iter().enumerate() {
        s.add_frame(t, k > 0, None).unwrap();
        run_done(&mut s, k);
    }
    let svg = s.export_storyboard().unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let groups: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("frame")).collect();
    assert_eq!(groups.len(), 4);
    for (k, g) in groups.iter().enumerate() {
        assert_eq!(g.attribute("data-index"), Some(k.to_string().as_str()));
        let caption: String = g.descendants().filter(|n| n.has_tag_name("text")).flat_map(|n| n.text()).collect();
        assert_eq!(caption, s.frames[k].resolved_prompt);
        let paths = g.descendants().filter(|n| n.has_tag_name("path")).count();
        assert_eq!(paths, s.frames[k].result.as_ref().unwrap().len());
    }
    assert_eq!(groups[3].attribute("transform"), Some("translate(264 0)"));
}

#[test]
fn storyboard_skips_unfinished_frames() {
    let mut s = Session::new("board", 0, settings());
    s.add_frame("one", false, None).unwrap();
    run_done(&mut s, 0);
    s.add_frame("[…] two", true, None).unwrap();
    let svg = s.export_storyboard().unwrap();
    assert_eq!(svg.matches("class=\"frame\"").count(), 1);
    // The per-frame result is itself a valid single sketch document.
    let result = s.frames[0].result.clone().unwrap();
    let back = import_svg(&sketchloop_core::svg::export_svg(&result)).unwrap();
    assert_eq!(back.len(), result.len());
}

proptest! {
    #[test]
    fn undo_restores_prior_sketch(dx in -50.0f64..50.0, dy in -50.0f64..50.0, k in 0.1f64..4.0, which in 0usize..4) {
        let mut s = Session::new("u", 1, settings());
        s.add_frame("u", false, None).unwrap();
        let before = s.frames[0].sketch.clone();
        let op = match which {
            0 => EditOp::Translate { indices: None, dx, dy },
            1 => EditOp::Scale { indices: Some(vec![0, 2]), factor: k, pivot: None },
            2 => EditOp::DeleteStrokes { indices: vec![1] },
            _ => EditOp::AddStrokes { strokes: vec![], polylines: vec![vec![ControlPoint::new(dx, dy), ControlPoint::new(dy, dx)]], frozen: false },
        };
        s.apply_edit(0, &op).unwrap();
        s.apply_edit(0, &EditOp::Undo).unwrap();
        prop_assert_eq!(&s.frames[0].sketch, &before);
        prop_assert!(s.frames[0].history.is_empty());
    }

    #[test]
    fn expansion_replaces_every_token(prev in "[a-z ]{1,20}", parts in prop::collection::vec("[a-z ,]{0,8}", 1..5)) {
        let template = parts.join("[…]");
        let out = expand_prompt(&template, &prev).unwrap();
        prop_assert!(!out.contains("[…]"));
        prop_assert_eq!(out, parts.join(&prev));
    }
}
