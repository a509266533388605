//! Layered run configuration: built-in defaults, then a `key = value` file,
//! then `WGRANK_*` environment variables, then command-line flags.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::corpus::FreqMode;
use crate::error::{Error, Result};
use crate::graph::AdjacencyMode;
use crate::model::Hyper;
use crate::pipeline::{FeatureConfig, ModelConfig};
use crate::train::{AdamConfig, TrainConfig};

pub const ENV_PREFIX: &str = "WGRANK_";

/// Every recognised key with its default. An empty default means unset.
pub const KEYS: &[(&str, &str)] = &[
    ("corpus", ""),
    ("queries", ""),
    ("qrels", ""),
    ("embeddings", ""),
    ("index", ""),
    ("checkpoint", ""),
    ("run", ""),
    ("output", ""),
    ("log", ""),
    ("stopwords", ""),
    ("stemmer", "none"),
    ("min_freq", "10"),
    ("freq_mode", "corpus"),
    ("window", "5"),
    ("mode", "graph"),
    ("layers", "2"),
    ("k", "40"),
    ("m_max", "8"),
    ("shared_weights", "true"),
    ("lr", "0.001"),
    ("epochs", "300"),
    ("batch", "16"),
    ("steps_per_epoch", "32"),
    ("candidates", "100"),
    ("seed", "0"),
    ("folds", "5"),
    ("fold", ""),
    ("judged_only", "false"),
    ("scorer", "neural"),
    ("cutoffs", "20"),
    ("include_zero_idcg", "false"),
    ("depths", "0,1,2,3,4"),
    ("gradcheck_seeds", "10"),
    ("tolerance", "1e-5"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        match self.values.get_mut(&key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown setting `{key}`"))),
        }
    }

    /// `key = value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, text: &str, source: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{source}:{}: expected `key = value`", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("{source}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Applies `WGRANK_<KEY>` variables. `WGRANK_CONFIG` names the config
    /// file and is skipped here.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        for (name, value) in vars {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else { continue };
            if key == "CONFIG" {
                continue;
            }
            self.set(&key.to_ascii_lowercase(), &value)
                .map_err(|e| Error::Config(format!("environment variable {name}: {e}")))?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)
            .ok_or_else(|| Error::Config(format!("`{key}` is required (flag --{}, or {ENV_PREFIX}{})", key.replace('_', "-"), key.to_ascii_uppercase())))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key).unwrap_or("");
        raw.parse()
            .map_err(|_| Error::Config(format!("invalid value `{raw}` for `{key}`")))
    }

    pub fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.parse(key).map(Some),
        }
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.get(key).unwrap_or("") {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            other => Err(Error::Config(format!("invalid boolean `{other}` for `{key}`"))),
        }
    }

    pub fn list(&self, key: &str) -> Result<Vec<usize>> {
        self.get(key)
            .unwrap_or("")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("invalid list entry `{s}` for `{key}`")))
            })
            .collect()
    }

    pub fn freq_mode(&self) -> Result<FreqMode> {
        self.parse("freq_mode")
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let positive = |key: &str| -> Result<usize> {
            let v: usize = self.parse(key)?;
            if v == 0 {
                return Err(Error::Config(format!("`{key}` must be positive")));
            }
            Ok(v)
        };
        let lr: f64 = self.parse("lr")?;
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config("`lr` must be a positive number".into()));
        }
        let window: usize = self.parse("window")?;
        if window < 2 {
            return Err(Error::Config("`window` must be at least 2".into()));
        }
        let folds: usize = self.parse("folds")?;
        if folds < 2 {
            return Err(Error::Config("`folds` must be at least 2".into()));
        }
        Ok(ModelConfig {
            hyper: Hyper {
                layers: self.parse("layers")?,
                k: positive("k")?,
                m_max: positive("m_max")?,
                shared_weights: self.bool("shared_weights")?,
            },
            features: FeatureConfig {
                window,
                mode: self.parse::<AdjacencyMode>("mode")?,
            },
            train: TrainConfig {
                epochs: self.parse("epochs")?,
                batch_size: positive("batch")?,
                steps_per_epoch: positive("steps_per_epoch")?,
                adam: AdamConfig {
                    learning_rate: lr,
                    ..Default::default()
                },
                seed: self.parse("seed")?,
            },
            judged_only: self.bool("judged_only")?,
            folds,
        })
    }

    /// Values outside the ranges searched when tuning the model. They are
    /// allowed but reported.
    pub fn grid_warnings(&self) -> Result<Vec<String>> {
        let c = self.model_config()?;
        let mut out = Vec::new();
        let mut check = |name: &str, v: f64, lo: f64, hi: f64| {
            if v < lo || v > hi {
                out.push(format!("{name} = {v} is outside the tuned range [{lo}, {hi}]"));
            }
        };
        check("layers", c.hyper.layers as f64, 1.0, 4.0);
        check("k", c.hyper.k as f64, 10.0, 70.0);
        check("window", c.features.window as f64, 3.0, 9.0);
        check("lr", c.train.adam.learning_rate, 0.0001, 0.01);
        check("batch", c.train.batch_size as f64, 8.0, 64.0);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build_default_model() {
        let s = Settings::default();
        let c = s.model_config().unwrap();
        assert_eq!(c, ModelConfig::default());
        assert!(s.grid_warnings().unwrap().is_empty());
        assert_eq!(s.get("corpus"), None);
    }

    #[test]
    fn precedence_file_env_flag() {
        let mut s = Settings::default();
        s.apply_file("# comment\nepochs = 7\nseed=3 # trailing\n\nk = 12", "cfg").unwrap();
        assert_eq!(s.parse::<usize>("epochs").unwrap(), 7);
        s.apply_env(vec![
            ("WGRANK_EPOCHS".to_string(), "9".to_string()),
            ("WGRANK_CONFIG".to_string(), "x".to_string()),
            ("HOME".to_string(), "/".to_string()),
        ])
        .unwrap();
        assert_eq!(s.parse::<usize>("epochs").unwrap(), 9);
        s.set("epochs", "11").unwrap();
        assert_eq!(s.parse::<usize>("epochs").unwrap(), 11);
        assert_eq!(s.parse::<u64>("seed").unwrap(), 3);
        assert_eq!(s.parse::<usize>("k").unwrap(), 12);
    }

    #[test]
    fn bad_input() {
        let mut s = Settings::default();
        assert!(s.set("nope", "1").is_err());
        assert!(s.apply_file("epochs 3", "cfg").is_err());
        assert!(s
            .apply_env(vec![("WGRANK_BOGUS".to_string(), "1".to_string())])
            .is_err());
        s.set("lr", "-1").unwrap();
        assert!(s.model_config().is_err());
        s.set("lr", "0.001").unwrap();
        s.set("mode", "tree").unwrap();
        assert!(s.model_config().is_err());
    }

    #[test]
    fn out_of_grid_warns() {
        let mut s = Settings::default();
        s.set("layers", "0").unwrap();
        s.set("k", "5").unwrap();
        let w = s.grid_warnings().unwrap();
        assert_eq!(w.len(), 2);
        assert!(w[0].starts_with("layers"));
    }

    #[test]
    fn lists() {
        let mut s = Settings::default();
        assert_eq!(s.list("depths").unwrap(), vec![0, 1, 2, 3, 4]);
        s.set("cutoffs", "5, 10,20").unwrap();
        assert_eq!(s.list("cutoffs").unwrap(), vec![5, 10, 20]);
        s.set("cutoffs", "x").unwrap();
        assert!(s.list("cutoffs").is_err());
    }
}
