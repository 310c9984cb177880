//! Frames per second against batch size and beam on the toy model, through
//! the same bench entry point as `tbeam bench`.
//!
//! ```bash
//! cargo run --release --example batch_throughput
//! ```

use clap::Parser;
use tbeam::cli::{cmd_bench, Cli, Command};

fn main() -> tbeam::Result<()> {
    let args = [
        "tbeam", "bench", "--toy", "7", "--vocab-size", "1024", "--hidden", "640", "--utterances", "32", "--frames", "50",
        "--batch", "1,8,32", "--beam", "1,4,6", "--frame-ms", "40",
    ];
    let Command::Bench(bench) = Cli::parse_from(args).command else {
        unreachable!("bench arguments")
    };
    let rows = cmd_bench(&bench)?;
    println!("{:>5} {:>4} {:>10} {:>8}", "batch", "beam", "frames/s", "RTFx");
    for r in &rows {
        println!(
            "{:>5} {:>4} {:>10.0} {:>8.1}",
            r.batch,
            r.beam,
            r.report.frames_per_second,
            r.report.rtfx.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
