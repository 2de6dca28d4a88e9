//! Runs every acceptance check and prints one line per criterion.
//!
//! Positional arguments filter checks by substring, e.g.
//! `cargo test --test acceptance -- schedule`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<_> = sketchloop_validation::all()
        .into_iter()
        .filter(|(name, _)| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str())))
        .collect();
    println!("running {} acceptance checks", selected.len());
    let mut failed = Vec::new();
    for (name, check) in selected.iter() {
        let start = Instant::now();
        let (passed, detail) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(Ok(c)) => (c.passed, c.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        let verdict = if passed { "PASS" } else { "FAIL" };
        println!("{verdict} {name}: {detail} [{:.1} s]", start.elapsed().as_secs_f64());
        if !passed {
            failed.push(*name);
        }
    }
    println!(
        "acceptance: {} passed, {} failed{}",
        selected.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
