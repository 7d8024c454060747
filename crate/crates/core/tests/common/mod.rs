#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};

use leo_control::config::ScenarioConfig;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn load(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&fixture(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

/// Prints a verdict line past the test harness capture, then asserts.
pub fn verdict(criterion: u32, title: &str, ok: bool, detail: String) {
    let tag = if ok { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{tag} criterion {criterion}: {title} ({detail})");
    let _ = out.flush();
    assert!(ok, "criterion {criterion} failed: {detail}");
}
