//! Measures the gradual-over-direct gap on rotating moons (0-30 degrees to
//! 60-90 degrees, 300 samples per domain, 5 seeds) that the acceptance margin
//! was frozen against.
//!
//! ```text
//! cargo run --release --example calibrate
//! ```

use gradshift::data::ShiftTask;
use gradshift::diagnostics::mean;
use gradshift::pipeline::{run_da, RunConfig};

fn main() -> gradshift::Result<()> {
    let vanilla = RunConfig {
        stages: 1,
        selection_enhanced: false,
        labeling_enhanced: false,
        ..RunConfig::default()
    };
    let (mut ours, mut direct, mut source_only) = (Vec::new(), Vec::new(), Vec::new());
    println!("seed  source-only  vanilla  gradual");
    for seed in 0..5 {
        let task = ShiftTask::rotating_moons(300, 300, 0.1, (0.0, 30.0), (60.0, 90.0), seed)?;
        let (target, labels) = task.target.split_labels();
        let g = run_da(
            &task.source,
            &target,
            &RunConfig {
                seed,
                ..RunConfig::default()
            },
            Some(&labels),
        )?;
        let v = run_da(
            &task.source,
            &target,
            &RunConfig {
                seed,
                ..vanilla.clone()
            },
            Some(&labels),
        )?;
        let (so, va, gr) = (
            g.source_only_accuracy.unwrap(),
            v.final_accuracy.unwrap(),
            g.final_accuracy.unwrap(),
        );
        println!("{seed:>4}  {so:>11.3}  {va:>7.3}  {gr:>7.3}");
        source_only.push(so);
        direct.push(va);
        ours.push(gr);
    }
    println!(
        "mean  {:>11.3}  {:>7.3}  {:>7.3}   gap {:.1} points",
        mean(&source_only),
        mean(&direct),
        mean(&ours),
        100.0 * (mean(&ours) - mean(&direct))
    );
    Ok(())
}
