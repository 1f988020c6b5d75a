//! Run configuration: an optional TOML file, overridden by command flags.
//!
//! ```toml
//! seed = 7
//! beam_width = 8              # or "unbounded"
//! matcher_threshold = 0.5
//! lambda = 1.0
//! weights = "from-counts"     # or a text weight such as "0.615"
//!
//! [paths]
//! fixtures = "fixtures/brooklyn"
//! data = "out/dataset"
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use wayfarer_core::mcq::WeightsMode;
use wayfarer_core::plan::BeamWidth;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub fixtures: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum RawBeam {
    Width(i64),
    Name(String),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    #[serde(default)]
    paths: Paths,
    beam_width: Option<RawBeam>,
    matcher_threshold: Option<f64>,
    lambda: Option<f64>,
    weights: Option<String>,
}

/// Validated settings from the config file. Every field is optional; the
/// accessors merge in the command-line value, which wins.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub beam_width: Option<BeamWidth>,
    pub matcher_threshold: Option<f64>,
    pub lambda: Option<f64>,
    pub weights: Option<WeightsMode>,
}

/// Parses `8` or `unbounded`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Beam(pub BeamWidth);

impl FromStr for Beam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("unbounded") {
            return Ok(Beam(BeamWidth::Unbounded));
        }
        match s.parse::<usize>() {
            Ok(w) if w >= 1 => Ok(Beam(BeamWidth::Bounded(w))),
            _ => Err(format!("expected a width of at least 1 or \"unbounded\", got {s:?}")),
        }
    }
}

/// Parses `from-counts` or an explicit text weight in [0, 1].
pub fn parse_weights(s: &str) -> Result<WeightsMode, String> {
    if s == "from-counts" {
        return Ok(WeightsMode::FromCounts);
    }
    match s.parse::<f64>() {
        Ok(w) if (0.0..=1.0).contains(&w) => Ok(WeightsMode::Explicit(w)),
        _ => Err(format!("expected \"from-counts\" or a text weight in [0, 1], got {s:?}")),
    }
}

fn check_threshold(t: f64) -> Result<f64> {
    if t > 0.0 && t <= 1.0 {
        Ok(t)
    } else {
        bail!("matcher_threshold: {t} is outside (0, 1]")
    }
}

fn check_lambda(l: f64) -> Result<f64> {
    if l.is_finite() && l >= 0.0 {
        Ok(l)
    } else {
        bail!("lambda: {l} must be finite and non-negative")
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| anyhow!("{}", e.message().trim()))?;
        // fields are checked in declaration order so the first failure is reported
        let beam_width = match raw.beam_width {
            None => None,
            Some(RawBeam::Width(w)) if w >= 1 => Some(BeamWidth::Bounded(w as usize)),
            Some(RawBeam::Width(w)) => bail!("beam_width: {w} must be at least 1"),
            Some(RawBeam::Name(s)) => Some(s.parse::<Beam>().map_err(|e| anyhow!("beam_width: {e}"))?.0),
        };
        let matcher_threshold = raw.matcher_threshold.map(check_threshold).transpose()?;
        let lambda = raw.lambda.map(check_lambda).transpose()?;
        let weights = raw.weights.map(|w| parse_weights(&w).map_err(|e| anyhow!("weights: {e}"))).transpose()?;
        if let Some(p) = &raw.paths.fixtures {
            if !p.is_dir() {
                bail!("paths.fixtures: no such directory: {}", p.display());
            }
        }
        if let Some(p) = &raw.paths.data {
            if !p.is_dir() {
                bail!("paths.data: no such directory: {}", p.display());
            }
        }
        Ok(RunConfig { seed: raw.seed, paths: raw.paths, beam_width, matcher_threshold, lambda, weights })
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("--config: cannot read {}", path.display()))?;
        RunConfig::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// The seed is mandatory for randomized commands.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64> {
        flag.or(self.seed).ok_or_else(|| anyhow!("missing seed: pass --seed N or set `seed` in the config file"))
    }

    pub fn beam(&self, flag: Option<Beam>) -> BeamWidth {
        flag.map(|b| b.0).or(self.beam_width).unwrap_or_default()
    }

    pub fn threshold(&self, flag: Option<f64>) -> Result<f64> {
        check_threshold(flag.or(self.matcher_threshold).unwrap_or(wayfarer_core::mcq::DEFAULT_JACCARD_THRESHOLD))
    }

    pub fn lambda(&self, flag: Option<f64>) -> Result<f64> {
        check_lambda(flag.or(self.lambda).unwrap_or(wayfarer_core::cot::DEFAULT_LAMBDA))
    }

    pub fn weights(&self, flag: Option<WeightsMode>) -> WeightsMode {
        flag.or(self.weights).unwrap_or_default()
    }

    /// A path from the flag, else from the config file, else an error naming
    /// the flag.
    pub fn path(&self, flag_name: &str, flag: Option<PathBuf>, fallback: Option<&PathBuf>) -> Result<PathBuf> {
        flag.or_else(|| fallback.cloned()).ok_or_else(|| anyhow!("{flag_name}: required (no value in flags or config)"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_file() {
        let c = RunConfig::parse("seed = 3\nbeam_width = \"unbounded\"\nmatcher_threshold = 0.6\nweights = \"0.615\"\n")
            .unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.beam_width, Some(BeamWidth::Unbounded));
        assert_eq!(c.weights, Some(WeightsMode::Explicit(0.615)));
        assert_eq!(c.seed(Some(9)).unwrap(), 9);
        assert_eq!(c.threshold(None).unwrap(), 0.6);
        assert_eq!(RunConfig::parse("beam_width = 4").unwrap().beam(None), BeamWidth::Bounded(4));
    }

    #[test]
    fn first_failing_field_is_named() {
        let err = |s: &str| format!("{:#}", RunConfig::parse(s).unwrap_err());
        assert!(err("beam_width = 0\nmatcher_threshold = 7.0").starts_with("beam_width"));
        assert!(err("matcher_threshold = 7.0\nlambda = -1.0").starts_with("matcher_threshold"));
        assert!(err("lambda = -1.0").starts_with("lambda"));
        assert!(err("weights = \"heavy\"").starts_with("weights"));
        assert!(err("[paths]\nfixtures = \"/definitely/not/here\"").starts_with("paths.fixtures"));
        assert!(err("colour = 1").contains("colour"));
        assert!(RunConfig::default().seed(None).unwrap_err().to_string().contains("seed"));
    }
}
