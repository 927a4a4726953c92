//! Plain-text experiment configuration: `[section]` headers and `key = value`
//! lines, `#` comments. Every key has a default, so a config file only needs
//! the overrides; serialization materializes all of them in canonical order,
//! which is also what gets hashed into the run manifest.

use anyhow::{anyhow, bail, Context, Result};
use std::fmt::Write as _;
use std::path::Path;

use hjrl_core::Real;

/// All knobs of an experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // [roi]
    pub x_min: Real,
    pub x_max: Real,
    pub y_min: Real,
    pub y_max: Real,
    pub nx: usize,
    pub ny: usize,
    // [dynamics]
    pub a_max: Real,
    // [cost]
    pub radius: Real,
    pub scale: Real,
    // [discount]
    pub rate: Real,
    pub dt: Real,
    // [sweep]
    pub tol: Real,
    pub max_iters: usize,
    // [horizon]
    pub t_final: Real,
    // [train]
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: Real,
    pub target_refresh: usize,
    pub hidden: usize,
    pub omega0: Real,
    // [reach]
    pub threshold: Real,
    pub band_cells: usize,
    pub max_switches: usize,
    pub oracle_nx: usize,
    pub oracle_ny: usize,
    // [run]
    pub seed: u64,
}

impl Default for ExperimentConfig {
    /// Paper defaults for the PDE/RL comparison stage: `[-2.5, 2.5]^2` at
    /// 201 x 201, `dt = 0.05`, `rate = 1.0`, `tol = 1e-6`, 2000 iterations.
    /// The tube-comparison stage overrides the ROI to `[-10, 10]^2` at
    /// 501 x 501 (see `configs/stage1.cfg`).
    fn default() -> Self {
        ExperimentConfig {
            x_min: -2.5,
            x_max: 2.5,
            y_min: -2.5,
            y_max: 2.5,
            nx: 201,
            ny: 201,
            a_max: 1.0,
            radius: 1.0,
            scale: 1.0,
            rate: 1.0,
            dt: 0.05,
            tol: 1e-6,
            max_iters: 2000,
            t_final: 1.0,
            batch_size: 256,
            steps: 50_000,
            learning_rate: 1e-4,
            target_refresh: 200,
            hidden: 100,
            omega0: 30.0,
            threshold: -5e-3,
            band_cells: 2,
            max_switches: 3,
            oracle_nx: 51,
            oracle_ny: 51,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| anyhow!("line {line_no}: unterminated section header"))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {line_no}: expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(&section, key, value)
                .with_context(|| format!("line {line_no}: key `{section}.{key}`"))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        ExperimentConfig::parse_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        fn real(v: &str) -> Result<Real> {
            let x: Real = v.parse().map_err(|_| anyhow!("invalid number `{v}`"))?;
            if !x.is_finite() {
                bail!("value must be finite");
            }
            Ok(x)
        }
        fn int(v: &str) -> Result<usize> {
            v.parse().map_err(|_| anyhow!("invalid integer `{v}`"))
        }

        match (section, key) {
            ("roi", "x_min") => self.x_min = real(value)?,
            ("roi", "x_max") => self.x_max = real(value)?,
            ("roi", "y_min") => self.y_min = real(value)?,
            ("roi", "y_max") => self.y_max = real(value)?,
            ("roi", "nx") => self.nx = int(value)?,
            ("roi", "ny") => self.ny = int(value)?,
            ("dynamics", "a_max") => self.a_max = real(value)?,
            ("cost", "radius") => self.radius = real(value)?,
            ("cost", "scale") => self.scale = real(value)?,
            ("discount", "rate") => self.rate = real(value)?,
            ("discount", "dt") => self.dt = real(value)?,
            ("sweep", "tol") => self.tol = real(value)?,
            ("sweep", "max_iters") => self.max_iters = int(value)?,
            ("horizon", "t_final") => self.t_final = real(value)?,
            ("train", "batch_size") => self.batch_size = int(value)?,
            ("train", "steps") => self.steps = int(value)?,
            ("train", "learning_rate") => self.learning_rate = real(value)?,
            ("train", "target_refresh") => self.target_refresh = int(value)?,
            ("train", "hidden") => self.hidden = int(value)?,
            ("train", "omega0") => self.omega0 = real(value)?,
            ("reach", "threshold") => self.threshold = real(value)?,
            ("reach", "band_cells") => self.band_cells = int(value)?,
            ("reach", "max_switches") => self.max_switches = int(value)?,
            ("reach", "oracle_nx") => self.oracle_nx = int(value)?,
            ("reach", "oracle_ny") => self.oracle_ny = int(value)?,
            ("run", "seed") => {
                self.seed = value.parse().map_err(|_| anyhow!("invalid seed `{value}`"))?
            }
            _ => bail!("unknown configuration key"),
        }
        Ok(())
    }

    /// Canonical text with every key materialized; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[roi]");
        let _ = writeln!(s, "x_min = {}", self.x_min);
        let _ = writeln!(s, "x_max = {}", self.x_max);
        let _ = writeln!(s, "y_min = {}", self.y_min);
        let _ = writeln!(s, "y_max = {}", self.y_max);
        let _ = writeln!(s, "nx = {}", self.nx);
        let _ = writeln!(s, "ny = {}", self.ny);
        let _ = writeln!(s, "\n[dynamics]");
        let _ = writeln!(s, "a_max = {}", self.a_max);
        let _ = writeln!(s, "\n[cost]");
        let _ = writeln!(s, "radius = {}", self.radius);
        let _ = writeln!(s, "scale = {}", self.scale);
        let _ = writeln!(s, "\n[discount]");
        let _ = writeln!(s, "rate = {}", self.rate);
        let _ = writeln!(s, "dt = {}", self.dt);
        let _ = writeln!(s, "\n[sweep]");
        let _ = writeln!(s, "tol = {}", self.tol);
        let _ = writeln!(s, "max_iters = {}", self.max_iters);
        let _ = writeln!(s, "\n[horizon]");
        let _ = writeln!(s, "t_final = {}", self.t_final);
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "target_refresh = {}", self.target_refresh);
        let _ = writeln!(s, "hidden = {}", self.hidden);
        let _ = writeln!(s, "omega0 = {}", self.omega0);
        let _ = writeln!(s, "\n[reach]");
        let _ = writeln!(s, "threshold = {}", self.threshold);
        let _ = writeln!(s, "band_cells = {}", self.band_cells);
        let _ = writeln!(s, "max_switches = {}", self.max_switches);
        let _ = writeln!(s, "oracle_nx = {}", self.oracle_nx);
        let _ = writeln!(s, "oracle_ny = {}", self.oracle_ny);
        let _ = writeln!(s, "\n[run]");
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.serialize();
        let back = ExperimentConfig::parse_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::parse_str("[roi]\nnx = 51\nny = 51\n# comment\n").unwrap();
        assert_eq!(cfg.nx, 51);
        assert_eq!(cfg.dt, 0.05);
        assert_eq!(cfg.rate, 1.0);
        let again = ExperimentConfig::parse_str(&cfg.serialize()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_key_is_named_in_the_error() {
        let err = ExperimentConfig::parse_str("[dynamics]\nb_max = 2\n").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("dynamics.b_max"), "{msg}");
    }

    #[test]
    fn malformed_line_is_rejected() {
        assert!(ExperimentConfig::parse_str("[roi\n").is_err());
        assert!(ExperimentConfig::parse_str("[roi]\nnx 51\n").is_err());
        assert!(ExperimentConfig::parse_str("[roi]\nnx = abc\n").is_err());
    }
}
