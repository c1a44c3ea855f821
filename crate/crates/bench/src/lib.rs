//! Fixtures shared by the benchmarks.

use std::path::PathBuf;

use polext::{Project, RunDir};

pub fn corpus(name: &str) -> RunDir {
    RunDir::new(
        PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("../../corpus")
            .join(name),
    )
}

/// A loaded corpus entry with its range widened to fit its literals.
pub fn project(name: &str) -> (RunDir, Project) {
    let dir = corpus(name);
    let project = dir.load((0, 7)).expect("corpus loads");
    (dir, project)
}
