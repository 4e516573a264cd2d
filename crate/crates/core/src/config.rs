//! Flat `section.key = value` configuration with documented defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Ordered key-value pairs read from text. Lines are `key = value`; `#`
/// starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`", i + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            match entries.iter_mut().find(|(ek, _)| ek == k) {
                Some(e) => e.1 = v.to_string(),
                None => entries.push((k.to_string(), v.to_string())),
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.iter().find(|(k, _)| *k == key).map(|(_, v)| v)
    }
}

/// Every recognised key with its default value and a one-line description.
pub const DEFAULTS: &[(&str, &str, &str)] = &[
    ("run.seed", "0", "seed for every random choice"),
    ("run.threads", "0", "worker threads, 0 = all cores"),
    ("pipeline.mode", "full", "full | b1 | b2 | b3 | b4"),
    ("pipeline.frame_rate", "30", "F, frames per second"),
    ("pipeline.tau_s", "0.2", "tracking score threshold"),
    ("pipeline.tau_a", "0.6", "appearance affinity threshold"),
    ("pipeline.tau_o", "0.5", "mean overlap threshold"),
    ("pipeline.tau_d", "1.0", "gating distance in predicted box diagonals"),
    (
        "pipeline.overlap_window",
        "10",
        "L, tracked frames averaged for the overlap mean",
    ),
    ("pipeline.velocity_interval", "0.3", "K in units of F"),
    ("pipeline.init_frames", "0.2", "tau_i in units of F"),
    ("pipeline.terminate_frames", "2.0", "tau_t in units of F"),
    (
        "pipeline.tracklet_len",
        "8",
        "T, tracklet samples fed to the temporal network",
    ),
    (
        "pipeline.gallery_size",
        "100",
        "M, most recent observations kept per target",
    ),
    (
        "tracker.search_scale",
        "2.0",
        "search side length over target side length",
    ),
    (
        "tracker.template_area",
        "4096",
        "pixel area of the resampled search patch",
    ),
    ("tracker.scales", "0.98 1.0 1.02", "scale factors searched per frame"),
    ("tracker.cell_size", "4", "feature cell size in pixels"),
    ("tracker.hog_bins", "9", "unsigned orientation bins"),
    (
        "tracker.color_table",
        "prototype",
        "prototype | none | path to a color-name table",
    ),
    (
        "tracker.cost_sensitive",
        "true",
        "modulate the data term by the residual factor",
    ),
    ("tracker.learning_rate", "0.0125", "weight of each new sample"),
    ("tracker.memory_size", "20", "stored training samples"),
    ("tracker.init_cg_iter", "100", "CG iterations for the first frame"),
    ("tracker.update_cg_iter", "5", "CG iterations per update"),
    ("tracker.cg_tol", "1e-5", "relative residual tolerance"),
    ("tracker.w_min", "1e-3", "regularization at the patch center"),
    ("tracker.w_eta", "10", "regularization growth towards the border"),
    ("tracker.label_sigma", "0.1", "label width per sqrt of target cells"),
    ("dman.input_size", "64", "side of the square network input"),
    ("dman.channels", "16 32 32", "output channels of the three conv layers"),
    ("dman.combined_dim", "64", "d_c, combined feature size"),
    ("dman.hidden_dim", "32", "d_h, LSTM hidden size per direction"),
    ("train.learning_rate", "1e-4", "Adam step size"),
    ("train.batch_size", "16", "pairs or tracklets per step"),
    ("train.steps", "2000", "optimizer steps"),
    ("train.positive_ratio", "0.5", "fraction of positive pairs"),
    ("train.identities", "10", "synthetic identities for training data"),
    ("train.samples_per_identity", "24", "synthetic crops per identity"),
];

/// Resolved configuration: defaults, then a file, then overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            values: DEFAULTS
                .iter()
                .map(|(k, v, _)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl Config {
    /// Applies every pair of `kv`; unknown keys are rejected.
    pub fn merge(&mut self, kv: &KeyValues) -> Result<()> {
        for (k, v) in kv.iter() {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key {key:?}"))),
        }
    }

    /// Applies a `key=value` override.
    pub fn set_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v = self.get(key)?;
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| Error::Config(format!("{key} = {v:?} is not a finite number")))
    }

    pub fn positive(&self, key: &str) -> Result<f64> {
        let v = self.f64(key)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(Error::Config(format!("{key} must be positive, got {v}")))
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        let v = self.get(key)?;
        v.parse::<usize>()
            .map_err(|_| Error::Config(format!("{key} = {v:?} is not a nonnegative integer")))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        let v = self.get(key)?;
        v.parse::<u64>()
            .map_err(|_| Error::Config(format!("{key} = {v:?} is not a nonnegative integer")))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.get(key)? {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            v => Err(Error::Config(format!("{key} = {v:?} is not a boolean"))),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.get(key)?;
        v.split_whitespace()
            .map(|t| t.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<_>>>()
            .filter(|l| !l.is_empty())
            .ok_or_else(|| Error::Config(format!("{key} = {v:?} is not a list of numbers")))
    }

    /// The fully resolved configuration as loadable text.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, _, doc) in DEFAULTS {
            let _ = writeln!(out, "# {doc}\n{k} = {}", self.values[*k]);
        }
        out
    }
}
