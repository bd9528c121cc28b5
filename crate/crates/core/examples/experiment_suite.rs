//! Runs one named suite at desk budget and prints its summary.
//!
//! ```text
//! cargo run --release --example experiment_suite -- maze2 [seeds] [out_dir]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use vpl_lab::harness::{run_suite, SuiteOptions, SUITES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "maze2".to_string());
    if !SUITES.contains(&name.as_str()) {
        return Err(format!("unknown suite {name}; choose one of {SUITES:?}").into());
    }
    let mut opts = SuiteOptions::desk();
    if let Some(n) = args.next() {
        opts.seeds = Some((0..n.parse()?).collect());
    }
    let out = args.next().map(PathBuf::from);

    let start = Instant::now();
    let result = run_suite(&name, &opts, out.as_deref())?;
    println!("{name}: seeds {:?} in {:.1}s", result.seeds, start.elapsed().as_secs_f64());
    for (key, s) in &result.summary {
        println!("  {key:<40} {:>8.4} ± {:.4}", s.mean, s.stderr);
    }
    Ok(())
}
