//! Experiment configuration: scenario selection, parameter blocks, and seeds.
//!
//! Configs are TOML. Every random stream is named explicitly — there is no
//! ambient randomness anywhere in the toolkit, so a config plus its seeds
//! reproduces an experiment byte for byte.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leakage::LeakageParams;
use crate::noise::NoiseParams;
use crate::regulator::RegulatorParams;

/// Which pipeline produced (or should produce) a trace set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Bare core: leakage plus measurement noise.
    Unprotected,
    /// Injected DAC noise added straight onto unprotected traces.
    NoiseOnly,
    /// Core behind the attenuation stage.
    AsAes,
    /// Attenuation stage plus injected noise on the supply side.
    AsAesPlusNoise,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Unprotected,
        Scenario::NoiseOnly,
        Scenario::AsAes,
        Scenario::AsAesPlusNoise,
    ];

    /// On-disk tag byte.
    pub fn tag(self) -> u8 {
        match self {
            Scenario::Unprotected => 0,
            Scenario::NoiseOnly => 1,
            Scenario::AsAes => 2,
            Scenario::AsAesPlusNoise => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.tag() == tag)
    }

    pub fn needs_regulator(self) -> bool {
        matches!(self, Scenario::AsAes | Scenario::AsAesPlusNoise)
    }

    pub fn needs_noise(self) -> bool {
        matches!(self, Scenario::NoiseOnly | Scenario::AsAesPlusNoise)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Unprotected => "unprotected",
            Scenario::NoiseOnly => "noise-only",
            Scenario::AsAes => "as-aes",
            Scenario::AsAesPlusNoise => "as-aes-plus-noise",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown scenario `{s}` (expected one of: unprotected, noise-only, as-aes, as-aes-plus-noise)"))
    }
}

/// Explicit seeds for the three independent stream families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    /// Plaintext draw and baseline measurement noise of synthesized sets.
    pub master: u64,
    /// Injected-noise LFSR seeding (per-trace seeds derive from this).
    pub noise: u64,
    /// Post-attenuation measurement noise in the protected pipelines.
    pub measurement: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            master: 1,
            noise: 2,
            measurement: 3,
        }
    }
}

mod hex_key {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(key: &[u8; 16], ser: S) -> Result<S::Ok, S::Error> {
        let mut s = String::with_capacity(32);
        for b in key {
            s.push_str(&format!("{b:02x}"));
        }
        ser.serialize_str(&s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<[u8; 16], D::Error> {
        let s = String::deserialize(de)?;
        if s.len() != 32 || !s.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(serde::de::Error::custom(
                "key must be 32 hex characters (16 bytes)",
            ));
        }
        let mut key = [0u8; 16];
        for (i, b) in key.iter_mut().enumerate() {
            *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).unwrap();
        }
        Ok(key)
    }
}

/// One experiment: a scenario, its parameter blocks, and explicit seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub n_traces: usize,
    /// Key under test, 32 hex characters.
    #[serde(with = "hex_key")]
    pub key: [u8; 16],
    pub seeds: Seeds,
    pub leakage: LeakageParams,
    /// Required for the as-aes scenarios.
    pub regulator: Option<RegulatorParams>,
    /// Required for the noise-injection scenarios.
    pub noise: Option<NoiseParams>,
    /// Where sweep points drop their per-point reports.
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Unprotected,
            n_traces: 1000,
            key: [
                0x00, 0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09, 0x0a, 0x0b, 0x0c,
                0x0d, 0x0e, 0x0f,
            ],
            seeds: Seeds::default(),
            leakage: LeakageParams::default(),
            regulator: Some(RegulatorParams::default()),
            noise: Some(NoiseParams::default()),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Validate all blocks the scenario requires; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.n_traces == 0 {
            return Err(Error::Config("n_traces must be >= 1".into()));
        }
        self.leakage.validate()?;
        let mut warnings = Vec::new();
        if self.scenario.needs_regulator() {
            let reg = self.regulator.as_ref().ok_or_else(|| {
                Error::Config(format!(
                    "scenario `{}` needs a [regulator] block",
                    self.scenario
                ))
            })?;
            warnings.extend(reg.validate()?);
            let dt = self.leakage.sample_period();
            if dt > reg.max_dt() {
                return Err(Error::Config(format!(
                    "leakage sample period {dt:.3e} s exceeds the regulator stability bound {:.3e} s",
                    reg.max_dt()
                )));
            }
        } else if let Some(reg) = &self.regulator {
            warnings.extend(reg.validate()?);
        }
        if self.scenario.needs_noise() {
            let noise = self.noise.as_ref().ok_or_else(|| {
                Error::Config(format!("scenario `{}` needs a [noise] block", self.scenario))
            })?;
            noise.validate()?;
            if self.leakage.sample_period() > noise.update_period {
                return Err(Error::Config(
                    "leakage sample period exceeds the noise DAC update period".into(),
                ));
            }
        } else if let Some(noise) = &self.noise {
            noise.validate()?;
        }
        Ok(warnings)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_for_every_scenario() {
        for scenario in Scenario::ALL {
            let cfg = ExperimentConfig {
                scenario,
                ..ExperimentConfig::default()
            };
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn missing_blocks_are_rejected() {
        let cfg = ExperimentConfig {
            scenario: Scenario::AsAes,
            regulator: None,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            scenario: Scenario::NoiseOnly,
            noise: None,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig {
            scenario: Scenario::AsAesPlusNoise,
            n_traces: 123,
            ..ExperimentConfig::default()
        };
        let text = cfg.to_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn scenario_tags_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(Scenario::from_tag(s.tag()), Some(s));
            assert_eq!(s.as_str().parse::<Scenario>().unwrap(), s);
        }
        assert_eq!(Scenario::from_tag(9), None);
    }

    #[test]
    fn unknown_fields_are_diagnosed() {
        let err = toml::from_str::<ExperimentConfig>("scenaro = \"unprotected\"").unwrap_err();
        assert!(err.to_string().contains("scenaro"));
    }

    #[test]
    fn key_parses_from_hex() {
        let cfg: ExperimentConfig =
            toml::from_str("key = \"ffeeddccbbaa99887766554433221100\"").unwrap();
        assert_eq!(cfg.key[0], 0xff);
        assert_eq!(cfg.key[15], 0x00);
        assert!(toml::from_str::<ExperimentConfig>("key = \"zz\"").is_err());
    }
}
