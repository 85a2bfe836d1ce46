//! Runs every demo case at one seed and prints the before/after table.

use calrig::pipeline::{cmd_demo, run_pipeline, summary_header, summary_row, RunInputs};
use calrig::presets::DEMO_CASES;

fn main() {
    let seed: u64 = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let root = tempfile_dir();
    println!("{}", summary_header());
    for case in DEMO_CASES {
        let dir = root.join(case);
        let outcome = match cmd_demo(case, seed, &dir) {
            Ok(o) => o,
            Err(e) => {
                eprintln!("{case}: {e}");
                run_pipeline(&RunInputs::demo(case, seed).unwrap(), &dir).unwrap()
            }
        };
        println!("{}", summary_row(case, &outcome));
    }
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("calrig-demo-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
