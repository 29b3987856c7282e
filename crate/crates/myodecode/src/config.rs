//! Line-oriented `key=value` configuration and session manifests.

use std::fmt::Write as _;
use std::path::Path;

use myodecode_core::protocol::Condition;
use myodecode_core::synth::SynthConfig;
use myodecode_core::{features::feature_count, CHANNELS, DEFAULT_SELECTION_K};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::format(
                origin,
                format!("line {}: expected key=value, got {line:?}", i + 1),
            ));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub dof: usize,
    pub selection_k: usize,
    /// Label only; the simulation treats both conditions alike.
    pub condition: Condition,
    pub participant: u32,
    pub baseline_uv: f64,
    pub gain_uv: f64,
    pub noise_band_hz: (f64, f64),
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default_for(3, 0);
        Self {
            seed: 0,
            dof: 3,
            selection_k: DEFAULT_SELECTION_K,
            condition: Condition::Banded,
            participant: 1,
            baseline_uv: synth.baseline_uv,
            gain_uv: synth.gain_uv,
            noise_band_hz: synth.noise_band_hz,
        }
    }
}

fn value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Usage(format!("invalid value {v:?} for {key}")))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        for (k, v) in parse_key_values(&text, path)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = value(key, v)?,
            "dof" => self.dof = value(key, v)?,
            "k" | "selection_k" => self.selection_k = value(key, v)?,
            "condition" => {
                self.condition = Condition::from_name(v)
                    .ok_or_else(|| Error::Usage(format!("unknown condition {v:?}")))?
            }
            "participant" => self.participant = value(key, v)?,
            "baseline_uv" => self.baseline_uv = value(key, v)?,
            "gain_uv" => self.gain_uv = value(key, v)?,
            "noise_lo_hz" => self.noise_band_hz.0 = value(key, v)?,
            "noise_hi_hz" => self.noise_band_hz.1 = value(key, v)?,
            _ => return Err(Error::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dof != 3 && self.dof != 6 {
            return Err(Error::Usage(format!(
                "--dof must be 3 or 6, got {}",
                self.dof
            )));
        }
        let max = feature_count(CHANNELS);
        if self.selection_k == 0 || self.selection_k > max {
            return Err(Error::Usage(format!(
                "--k must be in 1..={max}, got {}",
                self.selection_k
            )));
        }
        self.synth().validate()?;
        Ok(())
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            baseline_uv: self.baseline_uv,
            gain_uv: self.gain_uv,
            noise_band_hz: self.noise_band_hz,
            ..SynthConfig::default_for(self.dof, self.seed)
        }
    }

    /// Canonical `key=value` text; the config hash covers exactly this.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "dof={}", self.dof);
        let _ = writeln!(s, "selection_k={}", self.selection_k);
        let _ = writeln!(s, "condition={}", self.condition.name());
        let _ = writeln!(s, "participant={}", self.participant);
        let _ = writeln!(s, "baseline_uv={}", self.baseline_uv);
        let _ = writeln!(s, "gain_uv={}", self.gain_uv);
        let _ = writeln!(s, "noise_lo_hz={}", self.noise_band_hz.0);
        let _ = writeln!(s, "noise_hi_hz={}", self.noise_band_hz.1);
        s
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Ordered `key=value` provenance record written beside every output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            entries: parse_key_values(&text, path)?,
        })
    }

    /// Reads `path` if it exists, else starts empty.
    pub fn read_or_new(path: &Path) -> Result<Self> {
        if path.exists() {
            Self::read(path)
        } else {
            Ok(Self::new())
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k}={v}");
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    /// Sets `key`, replacing an existing value in place.
    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn record_config(&mut self, cfg: &RunConfig) -> &mut Self {
        for (k, v) in parse_key_values(&cfg.canonical(), Path::new("<config>"))
            .expect("canonical config parses")
        {
            self.set(&k, v);
        }
        self.set("config_hash", cfg.hash())
    }
}
