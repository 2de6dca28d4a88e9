use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use sketchloop_core::augment::AugmentConfig;
use sketchloop_core::quickdraw::load_quickdraw;
use sketchloop_core::rng::Stream;
use sketchloop_core::session::{Session, SessionSettings};
use sketchloop_core::sketch::random_init_strokes;
use sketchloop_core::svg::{export_svg, import_svg};
use sketchloop_core::SketchRng;

const APPLE: &str = r#"{"word":"apple","countrycode":"US","recognized":true,"drawing":[[[40,60,100,140,160,150,120,90,60,40],[90,60,50,60,90,140,170,175,160,120]],[[100,95],[50,20]],[[100,120,130],[40,30,35]]]}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sketchloop"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Self { dir: tempfile::tempdir().unwrap() };
        std::fs::write(f.path("apple.ndjson"), format!("{APPLE}\n{APPLE}\n")).unwrap();
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }
}

fn small_run<'a>(fx: &'a Fixture, out: &'a str, extra: &[&'a str]) -> Vec<String> {
    let mut args: Vec<String> = ["run", "--prompt", "an apple", "--canvas", "64", "--out-size", "32", "--strokes", "4", "--segments", "2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    args.extend(["--init".into(), fx.s("apple.ndjson"), "--out".into(), fx.s(out)]);
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

fn run_strings(args: &[String]) -> Output {
    bin().args(args).output().unwrap()
}

#[test]
fn help_and_usage_errors() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("quickdraw-preview"));
    assert_eq!(code(&run(&[])), 2);
    assert_eq!(code(&run(&["paint"])), 2);

    let fx = Fixture::new();
    let o = run(&["run", "--guidance", "zero", "--out", &fx.s("x.svg")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--prompt"), "{}", stderr(&o));
    let o = run(&["run", "--prompt", "a", "--guidance", "clip:x", "--out", &fx.s("x.svg")]);
    assert_eq!(code(&o), 2);
    assert!(!fx.path("x.svg").exists());
}

#[test]
fn config_errors_exit_2() {
    let fx = Fixture::new();
    let cases: Vec<Vec<String>> = vec![
        small_run(&fx, "o.svg", &["--guidance", "pixel:/nonexistent/t.png"]),
        small_run(&fx, "o.svg", &["--guidance", "zero", "--iters", "0"]),
        small_run(&fx, "o.svg", &["--guidance", "zero", "--lr", "-2"]),
        small_run(&fx, "o.svg", &["--guidance", "zero", "--line", "5"]),
        small_run(&fx, "o.svg", &["--guidance", "zero", "--segments", "0"]),
        vec!["run".into(), "--prompt".into(), "a".into(), "--guidance".into(), "zero".into(), "--init".into(), fx.s("missing.txt"), "--out".into(), fx.s("o.svg")],
    ];
    for args in cases {
        let o = run_strings(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).starts_with("error: "));
    }
    assert!(!fx.path("o.svg").exists());
}

#[test]
fn zero_guidance_writes_init_plus_random_strokes() {
    let fx = Fixture::new();
    let o = run_strings(&small_run(&fx, "out.svg", &["--guidance", "zero", "--iters", "1", "--seed", "9", "--trace", &fx.s("t.jsonl")]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let mut init = load_quickdraw(APPLE, 64, 64, 0.1).unwrap();
    init.set_all_trainable(false);
    let fresh = random_init_strokes(4, 2, 64, 64, &mut SketchRng::stream(9, Stream::Init)).unwrap();
    let expected = export_svg(&init.concat(&fresh));
    assert_eq!(std::fs::read_to_string(fx.path("out.svg")).unwrap(), expected);

    let trace = std::fs::read_to_string(fx.path("t.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = trace.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["iter"], 1);
}

#[test]
fn runs_are_byte_identical_for_a_seed() {
    let fx = Fixture::new();
    // Fit toward the apple itself rendered at the canvas size.
    o_ok(&run(&["quickdraw-preview", &fx.s("apple.ndjson"), "--canvas", "64", "--out", &fx.s("target.svg")]));
    let guidance = format!("pixel:{}", fx.s("target.svg"));
    let mut outputs = Vec::new();
    for (i, seed) in ["3", "3", "4"].iter().enumerate() {
        let out = format!("o{i}.svg");
        let trace = fx.s(&format!("t{i}.jsonl"));
        let png = fx.s(&format!("o{i}.png"));
        let args = small_run(&fx, &out, &["--guidance", &guidance, "--iters", "30", "--seed", seed, "--trace", &trace, "--png", &png]);
        o_ok(&run_strings(&args));
        outputs.push((
            std::fs::read(fx.path(&out)).unwrap(),
            std::fs::read(&trace).unwrap(),
            std::fs::read(&png).unwrap(),
        ));
    }
    assert!(outputs[0] == outputs[1]);
    assert_ne!(outputs[0].0, outputs[2].0);
    assert_eq!(&outputs[0].2[..8], b"\x89PNG\r\n\x1a\n");
    let sketch = import_svg(std::str::from_utf8(&outputs[0].0).unwrap()).unwrap();
    assert_eq!(sketch.len(), 7);
    assert_eq!(String::from_utf8_lossy(&outputs[0].1).lines().count(), 30);
}

fn o_ok(o: &Output) {
    assert_eq!(code(o), 0, "{}", stderr(o));
}

#[test]
fn unreachable_backend_exits_3() {
    let fx = Fixture::new();
    let o = run_strings(&small_run(&fx, "o.svg", &["--guidance", "remote:http://127.0.0.1:9/", "--iters", "2"]));
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(!fx.path("o.svg").exists());
}

#[test]
fn svg_init_keeps_its_canvas() {
    let fx = Fixture::new();
    o_ok(&run(&["quickdraw-preview", &fx.s("apple.ndjson"), "--line", "1", "--canvas", "48", "--out", &fx.s("a.svg")]));
    let init = std::fs::read_to_string(fx.path("a.svg")).unwrap();
    let args = ["run", "--prompt", "p", "--guidance", "zero", "--iters", "1", "--strokes", "2", "--init", &fx.s("a.svg"), "--out", &fx.s("o.svg")];
    o_ok(&run(&args));
    let out = import_svg(&std::fs::read_to_string(fx.path("o.svg")).unwrap()).unwrap();
    let init = import_svg(&init).unwrap();
    assert_eq!((out.canvas_w(), out.canvas_h(), out.len()), (48, 48, init.len() + 2));
    assert_eq!(out.strokes[..init.len()], init.strokes[..]);

    let o = run(&["run", "--prompt", "p", "--guidance", "zero", "--canvas", "64", "--init", &fx.s("a.svg"), "--out", &fx.s("o.svg")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn preview_matches_the_library_conversion() {
    let fx = Fixture::new();
    o_ok(&run(&["quickdraw-preview", &fx.s("apple.ndjson"), "--canvas", "200", "--margin", "0.2", "--out", &fx.s("p.svg"), "--png", &fx.s("p.png")]));
    let expected = export_svg(&load_quickdraw(APPLE, 200, 200, 0.2).unwrap());
    assert_eq!(std::fs::read_to_string(fx.path("p.svg")).unwrap(), expected);
    assert!(fx.path("p.png").is_file());
    assert_eq!(code(&run(&["quickdraw-preview", &fx.s("missing.ndjson"), "--out", &fx.s("q.svg")])), 2);
}

#[test]
fn export_writes_storyboard_or_one_frame() {
    let fx = Fixture::new();
    let mut settings = SessionSettings { canvas_w: 40, canvas_h: 30, strokes: 2, segments: 1, ..Default::default() };
    settings.config.iterations = 3;
    settings.config.augment = AugmentConfig::identity(16);
    let mut session = Session::new("s", 0, settings);
    let zero = sketchloop_core::optimize::Engine::new(sketchloop_core::guidance::Backend::Zero);
    session.add_frame("a boat", false, None).unwrap();
    session.run_frame(0, &zero, &mut |_| {}, &Default::default()).unwrap();
    session.add_frame("[…] at dusk", true, None).unwrap();
    let path = fx.path("s.json");
    std::fs::write(&path, session.to_json()).unwrap();

    o_ok(&run(&["export", path.to_str().unwrap(), "--out", &fx.s("board.svg")]));
    assert_eq!(std::fs::read_to_string(fx.path("board.svg")).unwrap(), session.export_storyboard().unwrap());
    o_ok(&run(&["export", path.to_str().unwrap(), "--frame", "0", "--out", &fx.s("f0.svg")]));
    assert_eq!(
        std::fs::read_to_string(fx.path("f0.svg")).unwrap(),
        export_svg(session.frames[0].result.as_ref().unwrap())
    );
    assert_eq!(code(&run(&["export", path.to_str().unwrap(), "--frame", "1", "--out", &fx.s("f1.svg")])), 2);
    std::fs::write(fx.path("bad.json"), "{").unwrap();
    assert_eq!(code(&run(&["export", &fx.s("bad.json"), "--out", &fx.s("b.svg")])), 2);
}

fn http_get(addr: &str, path: &str) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out
}

#[test]
fn serve_answers_over_tcp() {
    let fx = Fixture::new();
    let mut child = bin()
        .args(["serve", "--port", "0", "--state", &fx.s("state")])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut err = BufReader::new(child.stderr.take().unwrap());
    let addr = loop {
        let mut line = String::new();
        assert!(err.read_line(&mut line).unwrap() > 0, "server exited early");
        if let Some(rest) = line.trim().strip_prefix("listening on http://") {
            break rest.to_string();
        }
    };
    let health = http_get(&addr, "/v1/healthz");
    let missing = http_get(&addr, "/v1/sessions/nope");
    child.kill().unwrap();
    let _ = child.wait();
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.ends_with(r#"{"ok":true}"#));
    assert!(missing.starts_with("HTTP/1.1 404"), "{missing}");
    assert!(Path::new(&fx.s("state")).is_dir());
}
