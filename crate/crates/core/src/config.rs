//! Scenario documents (TOML) and the shipped presets.
//!
//! Every section is optional and falls back to the library defaults; keys
//! inside a section may also be omitted. Unknown keys are rejected. Loading
//! validates every section and reports failures with a dotted key path such
//! as `link.window_fraction`.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::decoherence::{CoherenceModel, CoherenceParams};
use crate::error::{Error, Result};
use crate::link::LinkParams;
use crate::raman::RamanConfig;
use crate::rate::TimingBudget;
use crate::seqsim::{SequenceConfig, SequenceParams};
use crate::zeeman::{AtomicConstants, QubitBasis};

/// Overrides the directory searched for `--preset` names.
pub const CONFIG_DIR_ENV: &str = "ATOMLINK_CONFIG_DIR";

pub const PRESETS: [&str; 3] = ["paper-5km", "paper-50km", "paper-101km"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoherenceSection {
    #[serde(default = "CoherenceParams::initial_default")]
    pub initial: CoherenceParams,
    #[serde(default = "CoherenceParams::memory_default")]
    pub memory: CoherenceParams,
}

impl Default for CoherenceSection {
    fn default() -> Self {
        Self {
            initial: CoherenceParams::initial_default(),
            memory: CoherenceParams::memory_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub atomic: AtomicConstants,
    pub link: LinkParams,
    pub timing: TimingBudget,
    /// Also supplies the bias field for the coherence models.
    pub raman: RamanConfig,
    pub coherence: CoherenceSection,
    pub sequence: SequenceParams,
}

/// Prefixes parameter errors with the section they came from.
fn in_section(section: &str, err: Error) -> Error {
    match err {
        Error::Parameter { name, value, reason } => {
            Error::config(format!("{section}.{name}"), format!("{value}: {reason}"))
        }
        Error::Config { path, message } if !path.contains('.') || path.starts_with(section) => {
            Error::Config { path, message }
        }
        Error::Config { path, message } => Error::config(format!("{section}.{path}"), message),
        other => Error::config(section, other.to_string()),
    }
}

/// Dotted key path of the entry at byte `offset` of a TOML document,
/// recovered from the nearest table header above it.
fn key_path_at(text: &str, offset: usize) -> String {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let line_end = text[offset..].find('\n').map_or(text.len(), |i| offset + i);
    let line = text[line_start..line_end].trim();
    let key = line.split('=').next().unwrap_or("").trim();
    let header = before[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    match (header, key.is_empty() || key.starts_with('[')) {
        (Some(h), false) => format!("{h}.{key}"),
        (Some(h), true) => h,
        (None, false) => key.to_string(),
        (None, true) => String::from("<document>"),
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let path = e
                .span()
                .map_or_else(|| "<document>".to_string(), |s| key_path_at(text, s.start));
            Error::config(path, e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config { path: key, message } => Error::config(format!("{}: {key}", path.display()), message),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        self.atomic.validate().map_err(|e| in_section("atomic", e))?;
        self.link.validate().map_err(|e| in_section("link", e))?;
        self.timing.validate().map_err(|e| in_section("timing", e))?;
        self.raman.validate().map_err(|e| in_section("raman", e))?;
        self.initial_model().map_err(|e| in_section("coherence.initial", e))?;
        self.memory_model().map_err(|e| in_section("coherence.memory", e))?;
        self.sequence.validate().map_err(|e| in_section("sequence", e))?;
        self.sequence_config()?.validate().map_err(|e| in_section("link", e))?;
        Ok(())
    }

    pub fn initial_model(&self) -> Result<CoherenceModel> {
        CoherenceModel::new(
            QubitBasis::Initial,
            self.coherence.initial,
            &self.atomic,
            self.raman.bias_field_gauss,
        )
    }

    pub fn memory_model(&self) -> Result<CoherenceModel> {
        CoherenceModel::new(
            QubitBasis::Memory,
            self.coherence.memory,
            &self.atomic,
            self.raman.bias_field_gauss,
        )
    }

    pub fn sequence_config(&self) -> Result<SequenceConfig> {
        Ok(SequenceConfig {
            link: self.link,
            timing: self.timing,
            sequence: self.sequence.clone(),
            memory: self.memory_model()?,
            initial: self.initial_model()?,
        })
    }
}

/// Directory holding the preset files: `$ATOMLINK_CONFIG_DIR` if set,
/// otherwise the `presets/` directory shipped with the crate.
pub fn preset_dir() -> PathBuf {
    match std::env::var_os(CONFIG_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => Path::new(env!("CARGO_MANIFEST_DIR")).join("presets"),
    }
}

pub fn load_preset(name: &str) -> Result<ScenarioConfig> {
    load_preset_from(&preset_dir(), name)
}

pub fn load_preset_from(dir: &Path, name: &str) -> Result<ScenarioConfig> {
    if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
        return Err(Error::config("preset", format!("invalid preset name `{name}`")));
    }
    let path = dir.join(format!("{name}.toml"));
    if !path.is_file() {
        return Err(Error::config(
            "preset",
            format!("no preset `{name}` in {}", dir.display()),
        ));
    }
    ScenarioConfig::from_path(&path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_defaults() {
        let cfg = ScenarioConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = ScenarioConfig::from_toml_str("[link]\nlength_km = 5.0\nwindow_len = 3\n").unwrap_err();
        match err {
            Error::Config { path, message } => {
                assert_eq!(path, "link.window_len", "{message}");
                assert!(message.contains("window_len"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_value_reports_path() {
        let err = ScenarioConfig::from_toml_str("[link]\nwindow_fraction = 1.4\n").unwrap_err();
        assert!(
            matches!(err, Error::Config { ref path, .. } if path == "link.window_fraction"),
            "{err}"
        );
        let err = ScenarioConfig::from_toml_str("[coherence.memory]\nt2_us = -3.0\nv0 = 0.8\n").unwrap_err();
        assert!(
            matches!(err, Error::Config { ref path, .. } if path == "coherence.memory.t2_us"),
            "{err}"
        );
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ScenarioConfig::default();
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn shipped_presets_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets");
        for name in PRESETS {
            let cfg = load_preset_from(&dir, name).unwrap();
            assert_eq!(cfg.name.as_deref(), Some(name));
        }
        assert!(load_preset_from(&dir, "nope").is_err());
        assert!(load_preset_from(&dir, "../x").is_err());
    }
}
