//! Scenario configuration files.
//!
//! Structured TOML with units spelled out in the key names (`width_long_ns`,
//! `step_mhz`): unit mistakes are the dominant failure mode in this domain,
//! so every number says what it is. Unknown keys are rejected with the
//! parser's line/column diagnostics, and a loaded scenario is validated
//! against the same guards the library enforces at run time.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::brillouin::{FiberProfile, Hotspot, PulseScheme, SamplingGrid};
use crate::deconv::DeconvConfig;
use crate::dpp::check_short_width;
use crate::error::{Error, Result};
use crate::simulator::{grid_for, FrequencySweep, NoiseSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub fiber: FiberSection,
    pub pulse: PulseSection,
    pub grid: GridSection,
    pub sweep: SweepSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deconv: Option<DeconvSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<OutputSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSection {
    pub length_m: f64,
    pub base_bfs_ghz: f64,
    pub linewidth_mhz: f64,
    #[serde(default = "default_gain_scale")]
    pub gain_scale: f64,
    #[serde(default, rename = "hotspot", skip_serializing_if = "Vec::is_empty")]
    pub hotspots: Vec<HotspotSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HotspotSection {
    pub start_m: f64,
    pub length_m: f64,
    /// BFS offset from the base fiber, MHz.
    pub bfs_offset_mhz: f64,
}

/// Either `width_ns` (single pulse) or both `width_long_ns` and
/// `width_short_ns` (differential pair).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width_ns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width_long_ns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width_short_ns: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub sample_rate_gsa: f64,
    #[serde(default = "default_group_velocity")]
    pub group_velocity_m_per_s: f64,
}

/// Sweep frequencies relative to the fiber base BFS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub start_offset_mhz: f64,
    pub step_mhz: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub snr_db: f64,
    pub seed: u64,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeconvSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degradation_tolerance_mhz: Option<f64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_rel_tolerance")]
    pub rel_tolerance: f64,
    #[serde(default = "default_penalty_rho")]
    pub penalty_rho: f64,
    #[serde(default)]
    pub nonnegative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_gain_scale() -> f64 {
    1.0
}

fn default_group_velocity() -> f64 {
    2.0e8
}

fn default_realizations() -> usize {
    100
}

fn default_max_iters() -> usize {
    DeconvConfig::default().max_iters
}

fn default_rel_tolerance() -> f64 {
    DeconvConfig::default().rel_tolerance
}

fn default_penalty_rho() -> f64 {
    DeconvConfig::default().penalty_rho
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "svg".into()]
}

/// How the regularization weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeconvMode {
    FixedMu(f64),
    /// Search the weight until the averaged-profile degradation hits this
    /// tolerance, Hz.
    DegradationTolerance(f64),
}

impl ScenarioConfig {
    pub fn fiber(&self) -> FiberProfile {
        let base = self.fiber.base_bfs_ghz * 1e9;
        FiberProfile::uniform(
            self.fiber.length_m,
            base,
            self.fiber.linewidth_mhz * 1e6,
            self.fiber.gain_scale,
        )
        .with_hotspots(
            self.fiber
                .hotspots
                .iter()
                .map(|h| Hotspot {
                    start_m: h.start_m,
                    length_m: h.length_m,
                    bfs_hz: base + h.bfs_offset_mhz * 1e6,
                })
                .collect(),
        )
    }

    pub fn pulse(&self) -> Result<PulseScheme> {
        match (
            self.pulse.width_ns,
            self.pulse.width_long_ns,
            self.pulse.width_short_ns,
        ) {
            (Some(w), None, None) => Ok(PulseScheme::Single { width_s: w * 1e-9 }),
            (None, Some(l), Some(s)) => Ok(PulseScheme::Pair {
                width_long_s: l * 1e-9,
                width_short_s: s * 1e-9,
            }),
            _ => Err(Error::Config(
                "pulse needs either width_ns or both width_long_ns and width_short_ns".into(),
            )),
        }
    }

    pub fn sweep(&self) -> FrequencySweep {
        let base = self.fiber.base_bfs_ghz * 1e9;
        FrequencySweep {
            start_hz: base + self.sweep.start_offset_mhz * 1e6,
            step_hz: self.sweep.step_mhz * 1e6,
            count: self.sweep.count,
        }
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.grid.sample_rate_gsa * 1e9
    }

    pub fn sampling_grid(&self) -> Result<SamplingGrid> {
        grid_for(
            &self.fiber(),
            self.pulse()?,
            self.sample_rate_hz(),
            self.grid.group_velocity_m_per_s,
        )
    }

    pub fn noise_spec(&self) -> Option<NoiseSpec> {
        self.noise.as_ref().map(|n| NoiseSpec {
            target_snr_db: n.snr_db,
            seed: n.seed,
        })
    }

    pub fn realizations(&self) -> usize {
        self.noise.as_ref().map_or(1, |n| n.realizations)
    }

    pub fn deconv_mode(&self) -> Result<DeconvMode> {
        let d = self
            .deconv
            .as_ref()
            .ok_or_else(|| Error::Config("scenario has no [deconv] section".into()))?;
        match (d.mu, d.degradation_tolerance_mhz) {
            (Some(mu), None) => Ok(DeconvMode::FixedMu(mu)),
            (None, Some(tol)) => Ok(DeconvMode::DegradationTolerance(tol * 1e6)),
            _ => Err(Error::Config(
                "deconv needs exactly one of mu or degradation_tolerance_mhz".into(),
            )),
        }
    }

    pub fn deconv_config(&self) -> Option<DeconvConfig> {
        self.deconv.as_ref().map(|d| DeconvConfig {
            max_iters: d.max_iters,
            rel_tolerance: d.rel_tolerance,
            penalty_rho: d.penalty_rho,
            nonnegative: d.nonnegative,
            track_objective: false,
            track_best: true,
        })
    }

    /// Full load-time validation: every library guard the scenario will hit
    /// later fires here first, with the file's vocabulary.
    pub fn validate(&self, allow_short_pair: bool) -> Result<()> {
        let fiber = self.fiber();
        fiber.validate()?;
        let pulse = self.pulse()?;
        pulse.validate()?;
        if let PulseScheme::Pair { width_short_s, .. } = pulse {
            check_short_width(width_short_s, fiber.linewidth_hz, allow_short_pair)?;
        }
        if !(self.grid.sample_rate_gsa > 0.0) {
            return Err(Error::Validation(format!(
                "sample_rate_gsa must be positive, got {}",
                self.grid.sample_rate_gsa
            )));
        }
        self.sweep().validate_covers(&fiber)?;
        self.sampling_grid()?;
        if let Some(n) = &self.noise {
            if !(n.snr_db.is_finite() || n.snr_db == f64::INFINITY) {
                return Err(Error::Validation(format!("snr_db {} is not usable", n.snr_db)));
            }
            if n.realizations == 0 {
                return Err(Error::Validation("realizations must be at least 1".into()));
            }
        }
        if let Some(d) = &self.deconv {
            self.deconv_mode()?;
            if let Some(mu) = d.mu {
                if !(mu >= 0.0) {
                    return Err(Error::Validation(format!("mu must be nonnegative, got {mu}")));
                }
            }
            if let Some(t) = d.degradation_tolerance_mhz {
                if !(t > 0.0) {
                    return Err(Error::Validation(format!(
                        "degradation_tolerance_mhz must be positive, got {t}"
                    )));
                }
            }
            if d.max_iters == 0 || !(d.rel_tolerance > 0.0) || !(d.penalty_rho > 0.0) {
                return Err(Error::Validation(
                    "deconv solver parameters must be positive".into(),
                ));
            }
        }
        if let Some(o) = &self.outputs {
            for f in &o.formats {
                if f != "csv" && f != "svg" {
                    return Err(Error::Validation(format!(
                        "unknown output format {f:?}; known formats are csv and svg"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Parses a scenario file. Parse failures keep the TOML line/column text;
/// the scenario is validated before it is returned.
pub fn load_scenario(path: impl AsRef<Path>, allow_short_pair: bool) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let config = parse_scenario(&text)?;
    config.validate(allow_short_pair)?;
    Ok(config)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn save_scenario(path: impl AsRef<Path>, config: &ScenarioConfig) -> Result<()> {
    std::fs::write(path.as_ref(), to_toml(config)?)?;
    Ok(())
}

pub fn to_toml(config: &ScenarioConfig) -> Result<String> {
    toml::to_string_pretty(config)
        .map_err(|e| Error::Config(format!("cannot serialize scenario: {e}")))
}

/// Hash of the canonical serialized form; embedded in every artifact so a
/// result can be traced back to the exact scenario that produced it.
pub fn config_hash(config: &ScenarioConfig) -> Result<String> {
    let canonical = to_toml(config)?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG3C: &str = r#"
[fiber]
length_m = 40.0
base_bfs_ghz = 10.8
linewidth_mhz = 27.0

[[fiber.hotspot]]
start_m = 10.0
length_m = 3.0
bfs_offset_mhz = 30.0

[[fiber.hotspot]]
start_m = 20.0
length_m = 1.0
bfs_offset_mhz = 30.0

[[fiber.hotspot]]
start_m = 28.0
length_m = 0.5
bfs_offset_mhz = 30.0

[pulse]
width_long_ns = 60.0
width_short_ns = 40.0

[grid]
sample_rate_gsa = 1.0

[sweep]
start_offset_mhz = -100.0
step_mhz = 1.0
count = 201

[noise]
snr_db = 23.0
seed = 1234

[deconv]
mu = 0.04
rel_tolerance = 1e-4
"#;

    #[test]
    fn parses_a_full_scenario() {
        let cfg = parse_scenario(FIG3C).unwrap();
        cfg.validate(false).unwrap();
        let fiber = cfg.fiber();
        assert_eq!(fiber.hotspots.len(), 3);
        assert_eq!(fiber.hotspots[2].length_m, 0.5);
        assert_eq!(fiber.hotspots[0].bfs_hz, 10.8e9 + 30e6);
        assert!(matches!(cfg.pulse().unwrap(), PulseScheme::Pair { .. }));
        let sweep = cfg.sweep();
        assert_eq!(sweep.count, 201);
        assert_eq!(sweep.start_hz, 10.8e9 - 100e6);
        assert_eq!(cfg.realizations(), 100);
        assert_eq!(cfg.deconv_mode().unwrap(), DeconvMode::FixedMu(0.04));
        let solver = cfg.deconv_config().unwrap();
        assert_eq!(solver.rel_tolerance, 1e-4);
        assert_eq!(solver.max_iters, DeconvConfig::default().max_iters);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let bad = FIG3C.replace("snr_db = 23.0", "snr_db = 23.0\nbanana = 1");
        let err = parse_scenario(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("banana"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn short_pair_is_rejected_unless_overridden() {
        let cfg_text = FIG3C
            .replace("width_long_ns = 60.0", "width_long_ns = 30.0")
            .replace("width_short_ns = 40.0", "width_short_ns = 10.0");
        let cfg = parse_scenario(&cfg_text).unwrap();
        let err = cfg.validate(false).unwrap_err();
        assert!(err.to_string().contains("differential floor"), "{err}");
        cfg.validate(true).unwrap();
    }

    #[test]
    fn pulse_shape_must_be_unambiguous() {
        let both = FIG3C.replace(
            "width_long_ns = 60.0",
            "width_ns = 20.0\nwidth_long_ns = 60.0",
        );
        let cfg = parse_scenario(&both).unwrap();
        assert!(matches!(cfg.pulse(), Err(Error::Config(_))));
    }

    #[test]
    fn deconv_mode_must_be_exclusive() {
        let both = FIG3C.replace("mu = 0.04", "mu = 0.04\ndegradation_tolerance_mhz = 0.1");
        let cfg = parse_scenario(&both).unwrap();
        assert!(cfg.deconv_mode().is_err());
        let neither = FIG3C.replace("mu = 0.04\n", "");
        let cfg = parse_scenario(&neither).unwrap();
        assert!(cfg.deconv_mode().is_err());
    }

    #[test]
    fn sweep_must_cover_hotspots() {
        let narrow = FIG3C
            .replace("start_offset_mhz = -100.0", "start_offset_mhz = -20.0")
            .replace("count = 201", "count = 41");
        let cfg = parse_scenario(&narrow).unwrap();
        assert!(cfg.validate(false).is_err());
    }

    #[test]
    fn round_trips_structurally() {
        let cfg = parse_scenario(FIG3C).unwrap();
        let text = to_toml(&cfg).unwrap();
        let again = parse_scenario(&text).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(to_toml(&again).unwrap(), text);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let cfg = parse_scenario(FIG3C).unwrap();
        let h1 = config_hash(&cfg).unwrap();
        let h2 = config_hash(&parse_scenario(FIG3C).unwrap()).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);
        let other = parse_scenario(&FIG3C.replace("seed = 1234", "seed = 1235")).unwrap();
        assert_ne!(h1, config_hash(&other).unwrap());
    }

    #[test]
    fn load_and_save_through_the_filesystem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.cfg");
        let cfg = parse_scenario(FIG3C).unwrap();
        save_scenario(&path, &cfg).unwrap();
        let loaded = load_scenario(&path, false).unwrap();
        assert_eq!(cfg, loaded);
        assert!(load_scenario(dir.path().join("missing.cfg"), false).is_err());
    }
}
