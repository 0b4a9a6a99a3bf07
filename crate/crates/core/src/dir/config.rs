//! Run configuration: flat `key = value` text, one key per line, `#` starts a
//! comment. Later assignments override earlier ones, so command-line
//! overrides are applied by calling [`DirConfig::set`] after loading a file.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Spectral,
    Gds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// Nearest neighbors of SHOT-style descriptors.
    Descriptor,
    /// Fixed landmark pairs only.
    Landmarks,
    /// A correspondence read from a file.
    File,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Spectral => "spectral",
            Mode::Gds => "gds",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "spectral" => Ok(Mode::Spectral),
            "gds" => Ok(Mode::Gds),
            _ => Err(format!("expected `spectral` or `gds`, found `{s}`")),
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::Descriptor => "descriptor",
            InitKind::Landmarks => "landmarks",
            InitKind::File => "file",
        })
    }
}

impl FromStr for InitKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "descriptor" | "shot" => Ok(InitKind::Descriptor),
            "landmarks" => Ok(InitKind::Landmarks),
            "file" => Ok(InitKind::File),
            _ => Err(format!(
                "expected `descriptor`, `shot`, `landmarks` or `file`, found `{s}`"
            )),
        }
    }
}

pub const DEFAULT_THRESHOLDS: [f64; 10] = [0.26, 0.22, 0.18, 0.14, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];

#[derive(Debug, Clone, PartialEq)]
pub struct DirConfig {
    pub max_iters: usize,
    /// Distortion threshold per iteration; normalized to `max_iters` entries
    /// by [`DirConfig::validate`].
    pub lmd_thresholds: Vec<f64>,
    /// Spectral cap `K`.
    pub k: usize,
    pub ring_depth: usize,
    pub mode: Mode,
    pub gds_anchor_cap: usize,
    pub init: InitKind,
    /// SHOT support radius as a fraction of the source bounding-box diagonal.
    pub shot_radius: f64,
    /// Drop points whose final distortion reaches the last threshold.
    pub prune: bool,
    /// Neighbors per local mesh for point clouds.
    pub k_local: usize,
    pub eps_cap: f64,
    pub landmarks: Option<PathBuf>,
    pub init_file: Option<PathBuf>,
}

impl Default for DirConfig {
    fn default() -> Self {
        Self {
            max_iters: 10,
            lmd_thresholds: DEFAULT_THRESHOLDS.to_vec(),
            k: 500,
            ring_depth: 2,
            mode: Mode::Spectral,
            gds_anchor_cap: crate::descriptors::GDS_MAX_ANCHORS,
            init: InitKind::Descriptor,
            shot_radius: crate::descriptors::SHOT_DEFAULT_RADIUS_FRACTION,
            prune: false,
            k_local: crate::geometry::DEFAULT_K_LOCAL,
            eps_cap: crate::lmd::DEFAULT_EPS_CAP,
            landmarks: None,
            init_file: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| Error::Config {
        key: key.into(),
        msg: format!("cannot parse `{value}`: {e}"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config {
            key: key.into(),
            msg: format!("expected a boolean, found `{value}`"),
        }),
    }
}

impl DirConfig {
    pub const KEYS: [&'static str; 13] = [
        "max_iters",
        "lmd_thresholds",
        "K",
        "ring_depth",
        "mode",
        "gds_anchor_cap",
        "init",
        "shot_radius",
        "prune",
        "k_local",
        "eps_cap",
        "landmarks",
        "init_file",
    ];

    /// Assigns one key. Paths are taken verbatim.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "max_iters" => self.max_iters = parse_value(key, value)?,
            "lmd_thresholds" => {
                self.lmd_thresholds = value
                    .split([',', ' ', '\t'])
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_value(key, s))
                    .collect::<Result<_>>()?
            }
            "K" => self.k = parse_value(key, value)?,
            "ring_depth" => self.ring_depth = parse_value(key, value)?,
            "mode" => self.mode = parse_value(key, value)?,
            "gds_anchor_cap" => self.gds_anchor_cap = parse_value(key, value)?,
            "init" => self.init = parse_value(key, value)?,
            "shot_radius" => self.shot_radius = parse_value(key, value)?,
            "prune" => self.prune = parse_bool(key, value)?,
            "k_local" => self.k_local = parse_value(key, value)?,
            "eps_cap" => self.eps_cap = parse_value(key, value)?,
            "landmarks" => self.landmarks = (!value.is_empty()).then(|| PathBuf::from(value)),
            "init_file" => self.init_file = (!value.is_empty()).then(|| PathBuf::from(value)),
            _ => {
                return Err(Error::Config {
                    key: key.into(),
                    msg: format!("unknown key; expected one of {}", Self::KEYS.join(", ")),
                })
            }
        }
        Ok(())
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn apply_str(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(origin, ln + 1, "expected `key = value`"));
            };
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Defaults overridden by the file at `path`, validated.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        let mut cfg = Self::default();
        cfg.apply_str(&text, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks the invariants and pads (repeating the last value) or truncates
    /// the threshold list to `max_iters` entries.
    pub fn validate(&mut self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config { key: key.into(), msg });
        if self.max_iters == 0 {
            return bad("max_iters", "must be at least 1".into());
        }
        if self.lmd_thresholds.is_empty() {
            return bad("lmd_thresholds", "needs at least one value".into());
        }
        if self.lmd_thresholds.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return bad("lmd_thresholds", "values must be positive and finite".into());
        }
        if self.lmd_thresholds.windows(2).any(|w| w[1] > w[0]) {
            return bad("lmd_thresholds", "values must be non-increasing".into());
        }
        if self.k < 2 {
            return bad("K", "must be at least 2".into());
        }
        if self.ring_depth == 0 {
            return bad("ring_depth", "must be at least 1".into());
        }
        if self.gds_anchor_cap == 0 || self.gds_anchor_cap > crate::descriptors::GDS_MAX_ANCHORS {
            return bad(
                "gds_anchor_cap",
                format!("must be in 1..={}", crate::descriptors::GDS_MAX_ANCHORS),
            );
        }
        if !(self.shot_radius > 0.0 && self.shot_radius.is_finite()) {
            return bad("shot_radius", "must be positive".into());
        }
        if self.k_local < crate::geometry::MIN_K_LOCAL {
            return bad("k_local", format!("must be at least {}", crate::geometry::MIN_K_LOCAL));
        }
        if !(self.eps_cap >= 0.0 && self.eps_cap.is_finite()) {
            return bad("eps_cap", "must be nonnegative".into());
        }
        if self.init == InitKind::Landmarks && self.landmarks.is_none() {
            return bad("landmarks", "landmark initialization needs a landmark file".into());
        }
        if self.init == InitKind::File && self.init_file.is_none() {
            return bad(
                "init_file",
                "file initialization needs an initial correspondence file".into(),
            );
        }
        let last = *self.lmd_thresholds.last().expect("checked nonempty");
        self.lmd_thresholds.resize(self.max_iters, last);
        Ok(())
    }

    /// Threshold of 1-based iteration `i`.
    pub fn threshold(&self, i: usize) -> f64 {
        let t = &self.lmd_thresholds;
        t[(i - 1).min(t.len() - 1)]
    }

    /// Resolved configuration as `key = value` lines, in key order.
    pub fn to_text(&self) -> String {
        let list = self
            .lmd_thresholds
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let values = [
            self.max_iters.to_string(),
            list,
            self.k.to_string(),
            self.ring_depth.to_string(),
            self.mode.to_string(),
            self.gds_anchor_cap.to_string(),
            self.init.to_string(),
            self.shot_radius.to_string(),
            self.prune.to_string(),
            self.k_local.to_string(),
            self.eps_cap.to_string(),
            path(&self.landmarks),
            path(&self.init_file),
        ];
        Self::KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let mut c = DirConfig::default();
        c.validate().unwrap();
        assert_eq!(c, DirConfig::default());
        assert_eq!(c.threshold(1), 0.26);
        assert_eq!(c.threshold(10), 0.1);
    }

    #[test]
    fn text_round_trip() {
        let mut c = DirConfig::default();
        c.set("mode", "gds").unwrap();
        c.set("K", "300").unwrap();
        c.set("landmarks", "lm.txt").unwrap();
        c.set("prune", "yes").unwrap();
        let mut d = DirConfig::default();
        d.apply_str(&c.to_text(), Path::new("x")).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn comments_and_overrides() {
        let mut c = DirConfig::default();
        c.apply_str(
            "# header\nmax_iters = 4 # trailing\n\nlmd_thresholds = 0.3, 0.2\n",
            Path::new("c"),
        )
        .unwrap();
        c.set("max_iters", "5").unwrap();
        c.validate().unwrap();
        assert_eq!(c.lmd_thresholds, vec![0.3, 0.2, 0.2, 0.2, 0.2]);
        let mut t = DirConfig::default();
        t.set("max_iters", "2").unwrap();
        t.validate().unwrap();
        assert_eq!(t.lmd_thresholds, vec![0.26, 0.22]);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = DirConfig::default();
        assert!(matches!(c.set("nope", "1"), Err(Error::Config { .. })));
        assert!(matches!(c.set("K", "abc"), Err(Error::Config { .. })));
        assert!(matches!(c.set("mode", "fast"), Err(Error::Config { .. })));
        assert!(matches!(
            c.apply_str("K 5", Path::new("c")),
            Err(Error::Parse { line: 1, .. })
        ));
        c.set("lmd_thresholds", "0.1,0.2").unwrap();
        assert!(c.validate().is_err());
        let mut c = DirConfig::default();
        c.set("gds_anchor_cap", "0").unwrap();
        assert!(c.validate().is_err());
    }
}
