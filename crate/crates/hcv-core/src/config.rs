//! Pipeline configuration and the plain `key = value` config-file format.

use std::path::PathBuf;

use crate::error::{Error, Result};

/// Which local-correlation path the refinement loop uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalMode {
    /// Recompute correlations recentered at the current flow (default).
    Recentered,
    /// Index the precomputed zero-centered local volume, zero beyond radius.
    Precomputed,
}

/// Pipeline parameters.
///
/// `d_h`/`d_v` default to the full per-axis extent at 1/16 resolution,
/// capped at 128.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub d_h: Option<usize>,
    pub d_v: Option<usize>,
    pub k: usize,
    pub l_r: usize,
    pub r_g: usize,
    pub iters: usize,
    pub damping: f32,
    pub temperature: f32,
    pub weights: Option<PathBuf>,
    pub threads: Option<usize>,
    pub local_mode: LocalMode,
}

/// Softmax temperature matched to the unit-norm descriptor correlations
/// (bounded by 1/sqrt(C)); see the README's parameter notes.
pub const DEFAULT_TEMPERATURE: f32 = 0.006;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d_h: None,
            d_v: None,
            k: 8,
            l_r: 4,
            r_g: 3,
            iters: 24,
            damping: 0.8,
            temperature: DEFAULT_TEMPERATURE,
            weights: None,
            threads: None,
            local_mode: LocalMode::Recentered,
        }
    }
}

impl RunConfig {
    /// Displacement ranges for a level-16 grid: the per-axis extent capped
    /// at 128 unless set explicitly.
    pub fn derived_d(&self, h16: usize, w16: usize) -> (usize, usize) {
        let d_h = self.d_h.unwrap_or_else(|| w16.min(128)).max(1);
        let d_v = self.d_v.unwrap_or_else(|| h16.min(128)).max(1);
        (d_h, d_v)
    }

    /// K clamped to the candidate counts of a level-16 grid.
    pub fn effective_k(&self, h16: usize, w16: usize) -> usize {
        self.k.min(h16).min(w16).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("config: k must be positive".to_string()));
        }
        if self.l_r == 0 {
            return Err(Error::invalid("config: l_r must be positive".to_string()));
        }
        if self.iters == 0 {
            return Err(Error::invalid("config: iters must be positive".to_string()));
        }
        if !(self.damping >= 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid(format!(
                "config: damping must lie in [0, 1], got {}",
                self.damping
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid(format!(
                "config: temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Applies one `key = value` setting. Unknown keys are rejected.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |detail: String| Error::invalid(format!("config key {key}: {detail}"));
        match key {
            "d_h" => self.d_h = Some(parse_num(value).map_err(bad)?),
            "d_v" => self.d_v = Some(parse_num(value).map_err(bad)?),
            "k" => self.k = parse_num(value).map_err(bad)?,
            "l_r" => self.l_r = parse_num(value).map_err(bad)?,
            "r_g" => self.r_g = parse_num(value).map_err(bad)?,
            "iters" => self.iters = parse_num(value).map_err(bad)?,
            "damping" => self.damping = parse_float(value).map_err(bad)?,
            "temperature" => self.temperature = parse_float(value).map_err(bad)?,
            "weights" => self.weights = Some(PathBuf::from(value)),
            "threads" => self.threads = Some(parse_num(value).map_err(bad)?),
            "local" => {
                self.local_mode = match value {
                    "recentered" => LocalMode::Recentered,
                    "precomputed" => LocalMode::Precomputed,
                    other => return Err(bad(format!("unknown local mode {other}"))),
                }
            }
            other => {
                return Err(Error::invalid(format!("config: unknown key {other}")));
            }
        }
        Ok(())
    }

    /// Parses a config file of `key = value` lines; `#` starts a comment and
    /// blank lines are ignored.
    pub fn apply_file(&mut self, path: &std::path::Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::invalid(format!(
                    "config {}:{}: expected key = value, got {raw:?}",
                    path.display(),
                    lineno + 1
                )));
            };
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

fn parse_num(value: &str) -> std::result::Result<usize, String> {
    value.parse::<usize>().map_err(|e| e.to_string())
}

fn parse_float(value: &str) -> std::result::Result<f32, String> {
    value.parse::<f32>().map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_contract() {
        let c = RunConfig::default();
        assert_eq!(c.k, 8);
        assert_eq!(c.l_r, 4);
        assert_eq!(c.r_g, 3);
        assert_eq!(c.iters, 24);
        assert_eq!(c.damping, 0.8);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn derived_d_is_per_axis_extent_capped() {
        let c = RunConfig::default();
        // 1080x1920 at level 16: 68 rows, 120 cols
        assert_eq!(c.derived_d(68, 120), (120, 68));
        // 4K-ish grids hit the cap
        assert_eq!(c.derived_d(135, 240), (128, 128));
        let explicit = RunConfig {
            d_h: Some(10),
            d_v: Some(20),
            ..RunConfig::default()
        };
        assert_eq!(explicit.derived_d(68, 120), (10, 20));
    }

    #[test]
    fn config_file_round_trip() {
        let mut c = RunConfig::default();
        let dir = std::env::temp_dir();
        let p = dir.join(format!("hcv-cfg-{}.conf", std::process::id()));
        std::fs::write(
            &p,
            "# comment\nk = 4\nl_r=2\ndamping = 0.5\nweights = /tmp/w.hcvw\nlocal = precomputed\n",
        )
        .unwrap();
        c.apply_file(&p).unwrap();
        std::fs::remove_file(&p).ok();
        assert_eq!(c.k, 4);
        assert_eq!(c.l_r, 2);
        assert_eq!(c.damping, 0.5);
        assert_eq!(c.weights.as_deref(), Some(std::path::Path::new("/tmp/w.hcvw")));
        assert_eq!(c.local_mode, LocalMode::Precomputed);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut c = RunConfig::default();
        assert!(c.apply_kv("bogus", "1").is_err());
        assert!(c.apply_kv("damping", "not-a-number").is_err());
    }
}
