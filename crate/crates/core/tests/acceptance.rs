//! Runs the nine acceptance criteria on the reference configuration and
//! prints one line per criterion. Exits nonzero if any criterion fails.

use kvbeam::acceptance::{run, CRITERION_COUNT};
use kvbeam::BeamConfig;

fn main() {
    let config = BeamConfig::reference();
    let mut failed = Vec::new();
    for id in 1..=CRITERION_COUNT {
        let report = run(id, &config);
        println!("{}", report.line());
        if !report.passed() {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {CRITERION_COUNT} criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
