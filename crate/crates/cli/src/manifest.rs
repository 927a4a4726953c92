//! Run manifests: config hash, seed, tool version, produced files, and
//! wall-clock per stage. The manifest is run metadata; the numeric artifacts
//! it lists are what reruns reproduce byte for byte.

use anyhow::Result;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub struct RunManifest {
    config_sha256: String,
    seed: u64,
    outputs: Vec<PathBuf>,
    stages: Vec<(String, f64)>,
    started: Instant,
    current_stage: Option<(String, Instant)>,
}

impl RunManifest {
    pub fn new(config_text: &str, seed: u64) -> Self {
        let digest = Sha256::digest(config_text.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            let _ = write!(hex, "{byte:02x}");
        }
        RunManifest {
            config_sha256: hex,
            seed,
            outputs: Vec::new(),
            stages: Vec::new(),
            started: Instant::now(),
            current_stage: None,
        }
    }

    pub fn begin_stage(&mut self, name: &str) {
        self.end_stage();
        self.current_stage = Some((name.to_string(), Instant::now()));
    }

    pub fn end_stage(&mut self) {
        if let Some((name, t0)) = self.current_stage.take() {
            self.stages.push((name, t0.elapsed().as_secs_f64() * 1e3));
        }
    }

    pub fn record_output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn config_sha256(&self) -> &str {
        &self.config_sha256
    }

    /// Write `manifest.txt` into the output directory.
    pub fn write(mut self, out_dir: &Path) -> Result<()> {
        self.end_stage();
        let mut s = String::new();
        let _ = writeln!(s, "HJRL MANIFEST v1");
        let _ = writeln!(s, "tool_version = {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "config_sha256 = {}", self.config_sha256);
        let _ = writeln!(s, "seed = {}", self.seed);
        let mut outputs = self.outputs.clone();
        outputs.sort();
        for path in outputs {
            let _ = writeln!(s, "output = {}", path.display());
        }
        for (name, ms) in &self.stages {
            let _ = writeln!(s, "wall_ms {name} = {ms:.1}");
        }
        let _ = writeln!(
            s,
            "wall_ms total = {:.1}",
            self.started.elapsed().as_secs_f64() * 1e3
        );
        std::fs::write(out_dir.join("manifest.txt"), s)?;
        Ok(())
    }
}
