//! Flat `key=value` run configuration.

use std::path::{Path, PathBuf};

use ssformer::{EncoderConfig, FusionMode, ModelConfig, PldConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Tiny,
    Small,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scale: Scale,
    pub fusion: FusionMode,
    pub le: bool,
    pub sfa: bool,
    pub pld_dim: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub augment: bool,
    pub seed: u64,
    pub size: usize,
    pub dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub synthetic: bool,
    pub synth_train: usize,
    pub synth_val: usize,
    pub synth_seed: u64,
    /// The text the config was parsed from, echoed into run logs.
    pub source: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scale: Scale::Tiny,
            fusion: FusionMode::Cat,
            le: true,
            sfa: true,
            pld_dim: 64,
            epochs: 30,
            batch: 4,
            lr: 1e-4,
            weight_decay: 0.01,
            augment: true,
            seed: 0,
            size: 64,
            dir: None,
            val_dir: None,
            synthetic: true,
            synth_train: 200,
            synth_val: 50,
            synth_seed: 1,
            source: String::new(),
        }
    }
}

/// Every accepted key with its default, in documentation order.
pub const KEYS: &[(&str, &str)] = &[
    ("model.scale", "tiny"),
    ("pld.fusion", "cat"),
    ("pld.le", "on"),
    ("pld.sfa", "on"),
    ("pld.dim", "64"),
    ("train.epochs", "30"),
    ("train.batch", "4"),
    ("train.lr", "1e-4"),
    ("train.weight_decay", "0.01"),
    ("train.augment", "on"),
    ("train.seed", "0"),
    ("data.size", "64"),
    ("data.dir", "(unset)"),
    ("data.val_dir", "(unset)"),
    ("data.synthetic", "on"),
    ("data.synth_train", "200"),
    ("data.synth_val", "50"),
    ("data.synth_seed", "1"),
];

fn switch(v: &str) -> Result<bool, String> {
    match v {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(format!("expected on or off, got {v:?}")),
    }
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("invalid number {v:?}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig {
            source: text.to_string(),
            ..Default::default()
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError::Line { line, msg };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {content:?}")))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        cfg.validate().map_err(|msg| ConfigError::Line { line: 0, msg })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "model.scale" => {
                self.scale = match v {
                    "tiny" => Scale::Tiny,
                    "small" => Scale::Small,
                    _ => return Err(format!("model.scale must be tiny or small, got {v:?}")),
                }
            }
            "pld.fusion" => self.fusion = v.parse().map_err(|_| format!("pld.fusion must be cat or add, got {v:?}"))?,
            "pld.le" => self.le = switch(v)?,
            "pld.sfa" => self.sfa = switch(v)?,
            "pld.dim" => self.pld_dim = num(v)?,
            "train.epochs" => self.epochs = num(v)?,
            "train.batch" => self.batch = num(v)?,
            "train.lr" => self.lr = num(v)?,
            "train.weight_decay" => self.weight_decay = num(v)?,
            "train.augment" => self.augment = switch(v)?,
            "train.seed" => self.seed = num(v)?,
            "data.size" => self.size = num(v)?,
            "data.dir" => self.dir = Some(PathBuf::from(v)),
            "data.val_dir" => self.val_dir = Some(PathBuf::from(v)),
            "data.synthetic" => self.synthetic = switch(v)?,
            "data.synth_train" => self.synth_train = num(v)?,
            "data.synth_val" => self.synth_val = num(v)?,
            "data.synth_seed" => self.synth_seed = num(v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), String> {
        if self.size == 0 || !self.size.is_multiple_of(32) {
            return Err(format!("data.size {} is not a positive multiple of 32", self.size));
        }
        if self.batch == 0 || self.pld_dim == 0 {
            return Err("train.batch and pld.dim must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0 && self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err("train.lr and train.weight_decay must be finite and non-negative".into());
        }
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            encoder: match self.scale {
                Scale::Tiny => EncoderConfig::tiny(),
                Scale::Small => EncoderConfig::small(),
            },
            pld: PldConfig {
                unified_dim: self.pld_dim,
                fusion: self.fusion,
                le_enabled: self.le,
                sfa_enabled: self.sfa,
            },
        }
    }

    /// Seed of the synthetic validation set; disjoint from the training one.
    pub fn synth_val_seed(&self) -> u64 {
        self.synth_seed.wrapping_add(0x9e37_79b9)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = RunConfig::parse("# desk run\npld.fusion = add\n\ntrain.epochs=3 # short\npld.le=off\n").unwrap();
        assert_eq!(cfg.fusion, FusionMode::Add);
        assert_eq!(cfg.epochs, 3);
        assert!(!cfg.le && cfg.sfa);
        assert_eq!(cfg.size, 64);
        assert!(cfg.source.contains("# desk run"));
        assert_eq!(cfg.model().pld.unified_dim, 64);
    }

    #[test]
    fn errors_name_the_line() {
        for (text, line) in [("train.epochs=1\nbogus.key=1\n", 2), ("pld.le=maybe", 1), ("\n\nno equals sign", 3)] {
            match RunConfig::parse(text) {
                Err(ConfigError::Line { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{other:?}"),
            }
        }
        assert!(RunConfig::parse("data.size=48").is_err());
    }

    #[test]
    fn every_documented_key_parses() {
        for (key, default) in KEYS {
            let value = match *default {
                "(unset)" => "some/dir",
                d => d,
            };
            RunConfig::parse(&format!("{key}={value}")).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }
}
