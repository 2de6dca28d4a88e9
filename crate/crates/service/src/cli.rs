//! The `sketchloop` command line.
//!
//! Exit codes: 0 success, 1 I/O or internal failure, 2 usage or config
//! error, 3 guidance backend error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sketchloop_core::guidance::{GuidanceConfig, GuidanceError, WeightFn};
use sketchloop_core::optimize::{optimize_sketch, AdamConfig, CancelToken, OptimizeConfig, OptimizeError, RunStatus};
use sketchloop_core::quickdraw::load_quickdraw;
use sketchloop_core::rng::Stream;
use sketchloop_core::session::{Session, SessionSettings};
use sketchloop_core::sketch::random_init_strokes;
use sketchloop_core::svg::{export_svg, import_svg};
use sketchloop_core::{Rasterizer, Sketch, SketchRng};

use crate::api::{self, AppConfig, AppState};
use crate::backend::GuidanceSpec;
use crate::store::FileStore;

#[derive(Debug, Parser)]
#[command(name = "sketchloop", version, about = "Text-guided Bezier sketch optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize one sketch headlessly.
    Run(RunArgs),
    /// Host the HTTP API.
    Serve(ServeArgs),
    /// Write a saved session's storyboard (or one frame) as SVG.
    Export(ExportArgs),
    /// Convert one QuickDraw drawing to SVG.
    QuickdrawPreview(PreviewArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AugmentMode {
    /// Off for zero, pixel and mock guidance; on for remote.
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Weight {
    Uniform,
    Sigma2,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub prompt: String,
    /// Frozen initial sketch, `.ndjson` (QuickDraw) or `.svg`.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Square canvas side; an SVG init brings its own size.
    #[arg(long)]
    pub canvas: Option<u32>,
    /// Zero-based line of a QuickDraw file.
    #[arg(long, default_value_t = 0)]
    pub line: usize,
    #[arg(long, default_value_t = sketchloop_core::quickdraw::DEFAULT_MARGIN)]
    pub margin: f64,
    #[arg(long, default_value_t = 16)]
    pub strokes: usize,
    #[arg(long, default_value_t = 5)]
    pub segments: usize,
    #[arg(long, default_value_t = 1000)]
    pub iters: u32,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    #[arg(long, default_value_t = 100.0)]
    pub omega: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// zero | pixel:PATH | mock:PATH | remote:URL
    #[arg(long)]
    pub guidance: GuidanceSpec,
    #[arg(long)]
    pub negative_prompt: Option<String>,
    #[arg(long, value_enum, default_value_t = Weight::Uniform)]
    pub weight: Weight,
    #[arg(long, value_enum, default_value_t = AugmentMode::Auto)]
    pub augment: AugmentMode,
    #[arg(long, default_value_t = 512)]
    pub out_size: u32,
    #[arg(long, default_value_t = 25)]
    pub snapshot_every: u32,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub png: Option<PathBuf>,
    /// Trace as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory for `{id}.json` session documents; in-memory if absent.
    #[arg(long)]
    pub state: Option<PathBuf>,
    #[arg(long, default_value = "zero")]
    pub guidance: GuidanceSpec,
    #[arg(long, default_value_t = 600)]
    pub canvas: u32,
    #[arg(long, default_value_t = 512)]
    pub out_size: u32,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Session document.
    pub session: PathBuf,
    /// Export only this frame's result.
    #[arg(long)]
    pub frame: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub line: usize,
    #[arg(long, default_value_t = 600)]
    pub canvas: u32,
    #[arg(long, default_value_t = sketchloop_core::quickdraw::DEFAULT_MARGIN)]
    pub margin: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

fn config(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn classify(e: &OptimizeError) -> CliError {
    match e {
        OptimizeError::Guidance(
            GuidanceError::Backend { .. } | GuidanceError::Retriable { .. } | GuidanceError::Protocol(_),
        ) => CliError::Backend(e.to_string()),
        OptimizeError::Config(_) | OptimizeError::Augment(_) | OptimizeError::Guidance(_) => config(e),
        _ => CliError::Io(e.to_string()),
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Serve(a) => cmd_serve(&a),
        Command::Export(a) => cmd_export(&a),
        Command::QuickdrawPreview(a) => cmd_preview(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn read_line(path: &Path, line: usize) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .nth(line)
        .map(str::to_string)
        .ok_or_else(|| config(format!("{} has no drawing at line {line}", path.display())))
}

/// The frozen condition sketch named by `--init`.
pub fn load_init(path: Option<&Path>, canvas: Option<u32>, line: usize, margin: f64) -> Result<Sketch, CliError> {
    let side = canvas.unwrap_or(600);
    let Some(path) = path else {
        return Sketch::new(side, side).map_err(config);
    };
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let mut sketch = match ext.as_str() {
        "ndjson" | "json" => load_quickdraw(&read_line(path, line)?, side, side, margin).map_err(config)?,
        "svg" => {
            let text = std::fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
            let s = import_svg(&text).map_err(|e| config(format!("{}: {e}", path.display())))?;
            if let Some(c) = canvas {
                if (s.canvas_w(), s.canvas_h()) != (c, c) {
                    return Err(config(format!(
                        "--canvas {c} conflicts with the {}x{} init SVG",
                        s.canvas_w(),
                        s.canvas_h()
                    )));
                }
            }
            s
        }
        _ => return Err(config(format!("{}: init must be .ndjson or .svg", path.display()))),
    };
    sketch.set_all_trainable(false);
    Ok(sketch)
}

/// Optimization config for a `run` invocation.
pub fn run_config(a: &RunArgs) -> OptimizeConfig {
    let augment = match a.augment {
        AugmentMode::Auto => a.guidance.default_augment(a.out_size),
        AugmentMode::On => GuidanceSpec::Remote(String::new()).default_augment(a.out_size),
        AugmentMode::Off => GuidanceSpec::Zero.default_augment(a.out_size),
    };
    OptimizeConfig {
        iterations: a.iters,
        snapshot_every: a.snapshot_every,
        seed: a.seed,
        adam: AdamConfig { lr: a.lr, ..Default::default() },
        augment,
        guidance: GuidanceConfig {
            prompt: a.prompt.clone(),
            negative_prompt: a.negative_prompt.clone(),
            omega: a.omega,
            weight: match a.weight {
                Weight::Uniform => WeightFn::Uniform,
                Weight::Sigma2 => WeightFn::Sigma2,
            },
            ..Default::default()
        },
        ..Default::default()
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(io_at(path))
}

fn cmd_run(a: &RunArgs) -> Result<(), CliError> {
    if a.prompt.trim().is_empty() {
        return Err(config("--prompt must not be empty"));
    }
    let initial = load_init(a.init.as_deref(), a.canvas, a.line, a.margin)?;
    let (w, h) = (initial.canvas_w(), initial.canvas_h());
    let mut rng = SketchRng::stream(a.seed, Stream::Init);
    let trainable = random_init_strokes(a.strokes, a.segments, w, h, &mut rng).map_err(config)?;
    let cfg = run_config(a);
    cfg.validate(&Default::default()).map_err(config)?;
    let engine = a.guidance.engine(&initial, &cfg).map_err(config)?;

    let mut trace = match &a.trace {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(io_at(p))?)),
        None => None,
    };
    let mut trace_err = None;
    let mut last_loss = None;
    let outcome = optimize_sketch(
        &initial,
        &trainable,
        &cfg,
        &engine,
        &mut |e| {
            last_loss = e.loss.or(last_loss);
            if let Some(t) = trace.as_mut() {
                if let Err(err) = writeln!(t, "{}", e.to_json_line()) {
                    trace_err.get_or_insert(err);
                }
            }
        },
        &CancelToken::new(),
    )
    .map_err(|f| classify(&f.error))?;
    if let (Some(t), Some(p)) = (trace.as_mut(), &a.trace) {
        if let Some(e) = trace_err {
            return Err(io_at(p)(e));
        }
        t.flush().map_err(io_at(p))?;
    }
    debug_assert_eq!(outcome.status, RunStatus::Completed);
    let result = initial.concat(&outcome.sketch);
    write_text(&a.out, &export_svg(&result))?;
    if let Some(p) = &a.png {
        Rasterizer::new(cfg.render).render(&result).write_png(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
    }
    match last_loss {
        Some(l) => eprintln!("{} iterations, last loss {l:.6e}", outcome.trace.len()),
        None => eprintln!("{} iterations", outcome.trace.len()),
    }
    Ok(())
}

fn cmd_serve(a: &ServeArgs) -> Result<(), CliError> {
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let store = match &a.state {
        Some(dir) => Some(FileStore::open(dir).map_err(io_at(dir))?),
        None => None,
    };
    let mut defaults = SessionSettings { canvas_w: a.canvas, canvas_h: a.canvas, ..Default::default() };
    defaults.config.augment = a.guidance.default_augment(a.out_size);
    defaults.config.validate(&Default::default()).map_err(config)?;
    let state = AppState::new(AppConfig { guidance: a.guidance.clone(), defaults, store })
        .map_err(|e| CliError::Io(format!("loading sessions: {e}")))?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().map_err(|e| config(format!("bad address: {e}")))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| CliError::Io(format!("bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
        eprintln!("listening on http://{local}");
        tracing::info!(guidance = %a.guidance, "serving");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        api::serve(listener, state, shutdown).await.map_err(|e| CliError::Io(e.to_string()))
    })
}

fn cmd_export(a: &ExportArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.session).map_err(io_at(&a.session))?;
    let session = Session::from_json(&text).map_err(config)?;
    let svg = match a.frame {
        Some(k) => {
            let frame = session.frame(k).map_err(config)?;
            let result = frame.result.as_ref().ok_or_else(|| config(format!("frame {k} has no result")))?;
            export_svg(result)
        }
        None => session.export_storyboard().map_err(config)?,
    };
    write_text(&a.out, &svg)
}

fn cmd_preview(a: &PreviewArgs) -> Result<(), CliError> {
    let sketch = load_quickdraw(&read_line(&a.input, a.line)?, a.canvas, a.canvas, a.margin).map_err(config)?;
    write_text(&a.out, &export_svg(&sketch))?;
    if let Some(p) = &a.png {
        Rasterizer::default().render(&sketch).write_png(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}
