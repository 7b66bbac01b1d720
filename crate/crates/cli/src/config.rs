//! Flat run configuration: `key = value` lines, `#` starts a comment.
//!
//! Values come from the built-in defaults, then the config file, then
//! `--key value` flags, each layer overriding the previous one.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::CliError;

pub struct Key {
    pub name: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn key(name: &'static str, default: Option<&'static str>, help: &'static str) -> Key {
    Key { name, default, help }
}

pub const KEYS: &[Key] = &[
    // data
    key("train", None, "labeled CoNLL file (the seed set for bootstrap and sweep)"),
    key("dev", None, "labeled CoNLL development file"),
    key("test", None, "labeled CoNLL test file"),
    key("unlabeled", None, "unlabeled corpus for bootstrap and sweep"),
    key("unlabeled_format", Some("raw"), "raw (one sentence per line) or conll (first column)"),
    key("corpus", None, "raw in-domain text for adapt"),
    key("heldout", None, "raw held-out text for adapt"),
    key("input", None, "sentences to tag for predict"),
    key("input_format", Some("conll"), "raw or conll"),
    key("types", None, "comma-separated entity types; inferred from the data when unset"),
    key("separator", Some("tab"), "CoNLL column separator: tab or space"),
    // outputs
    key("model", None, "model file (written by train and bootstrap, read by predict)"),
    key("embeddings", None, "embedding table file (input)"),
    key("adapted", None, "adapted embedding table file (written by adapt)"),
    key("output", None, "output file for synth and predict; stdout when unset"),
    key("seed_out", None, "seed set written by split"),
    key("rest_out", None, "remainder written by split"),
    key("rest_format", Some("raw"), "remainder format: raw, or conll to keep the gold tags"),
    key("history", None, "per-iteration report written by bootstrap"),
    key("sweep_report", None, "per-threshold report written by sweep"),
    key("scores_report", None, "scores report written by eval and train"),
    key("adapt_report", None, "per-epoch loss report written by adapt"),
    // split
    key("seed_ratio", Some("0.1"), "fraction of sentences kept as the labeled seed"),
    key("split_seed", Some("0"), "rng seed for the seed split"),
    // training
    key("scorer", Some("linear"), "emission scorer: linear or embedding"),
    key("hash_bits", Some("18"), "feature hash width for the linear scorer"),
    key("radius", Some("1"), "context radius for the embedding scorer"),
    key("epochs", Some("auto"), "CRF training epochs; auto picks 30/20/10 from seed_ratio"),
    key("learning_rate", Some("0.1"), "AdaGrad learning rate"),
    key("l2", Some("0.0001"), "L2 penalty"),
    key("train_seed", Some("0"), "rng seed for sentence shuffling"),
    key("shuffle", Some("true"), "shuffle sentences each epoch"),
    // adaptation
    key("dim", Some("32"), "dimension of a freshly initialised table"),
    key("init_seed", Some("0"), "rng seed for a freshly initialised table"),
    key("mask_rate", Some("0.15"), "fraction of tokens masked"),
    key("adapt_epochs", Some("1"), "passes over the adaptation corpus"),
    key("adapt_learning_rate", Some("0.1"), "AdaGrad learning rate for adaptation"),
    key("context_radius", Some("2"), "context radius of the masked-token predictor"),
    key("adapt_seed", Some("0"), "rng seed for masking and shuffling"),
    key("max_len", Some("64"), "sequences are truncated to this many tokens"),
    // bootstrapping
    key("theta", Some("0.7"), "confidence threshold below which tags become O"),
    key("iterations", Some("10"), "bootstrap rounds"),
    key("confidence", Some("softmax"), "softmax or marginal"),
    key("retrain", Some("scratch"), "scratch or previous"),
    key("patience", None, "stop after this many rounds without dev improvement"),
    key("min_delta", Some("0.001"), "smallest dev F1 gain that counts as improvement"),
    key("threads", Some("1"), "worker threads for tagging"),
    key("thetas", Some("0.5,0.6,0.7,0.8,0.9"), "thresholds tried by sweep"),
    // synthesis
    key("vocab_size", Some("1000"), "synthetic vocabulary size"),
    key("num_sentences", Some("700"), "synthetic sentence count"),
    key("entity_rate", Some("0.15"), "expected fraction of entity tokens"),
    key("trigger_rate", Some("0.8"), "probability that an entity follows a context word of its type"),
    key("ambiguity", Some("0"), "probability that an outside token is an entity word"),
    key("domain", Some("0"), "surface permutation; 0 keeps identity surfaces"),
    key("min_sentence", Some("6"), "shortest synthetic sentence"),
    key("max_sentence", Some("20"), "longest synthetic sentence"),
    key("synth_seed", Some("0"), "rng seed for synthesis"),
];

fn lookup(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

/// Parses config text into `(key, value)` pairs; errors name the line.
pub fn parse(text: &str) -> Result<Vec<(&'static str, String)>, CliError> {
    let mut out: Vec<(&'static str, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", n + 1)))?;
        let k = k.trim();
        let key = lookup(k).ok_or_else(|| CliError::Usage(format!("config line {}: unknown key {k:?}", n + 1)))?;
        if out.iter().any(|(name, _)| *name == key.name) {
            return Err(CliError::Usage(format!("config line {}: duplicate key {k:?}", n + 1)));
        }
        out.push((key.name, v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn defaults() -> Self {
        let values = KEYS
            .iter()
            .filter_map(|k| k.default.map(|d| (k.name, d.to_string())))
            .collect();
        RunConfig { values }
    }

    pub fn load(file: Option<&Path>, overrides: &[(&'static str, String)]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::defaults();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            for (k, v) in parse(&text)? {
                cfg.values.insert(k, v);
            }
        }
        for (k, v) in overrides {
            cfg.values.insert(k, v.clone());
        }
        Ok(cfg)
    }

    pub fn raw(&self, name: &str) -> Option<&str> {
        debug_assert!(lookup(name).is_some(), "unregistered key {name}");
        self.values.get(name).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T, CliError> {
        let v = self
            .raw(name)
            .ok_or_else(|| CliError::Usage(format!("missing required key `{name}`")))?;
        v.parse()
            .map_err(|_| CliError::Usage(format!("invalid value {v:?} for `{name}`")))
    }

    pub fn opt<T: FromStr>(&self, name: &str) -> Result<Option<T>, CliError> {
        self.raw(name).map(|_| self.get(name)).transpose()
    }

    pub fn list<T: FromStr>(&self, name: &str) -> Result<Vec<T>, CliError> {
        let Some(v) = self.raw(name) else {
            return Ok(Vec::new());
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::Usage(format!("invalid entry {s:?} in `{name}`")))
            })
            .collect()
    }

    /// One of `choices`, for enumerated keys.
    pub fn choice(&self, name: &str, choices: &[&str]) -> Result<String, CliError> {
        let v: String = self.get(name)?;
        if choices.contains(&v.as_str()) {
            Ok(v)
        } else {
            Err(CliError::Usage(format!("`{name}` must be one of {}, got {v:?}", choices.join(", "))))
        }
    }

    /// An input path that must already exist.
    pub fn input(&self, name: &str) -> Result<PathBuf, CliError> {
        let path = PathBuf::from(self.get::<String>(name)?);
        if !path.is_file() {
            return Err(CliError::Data(format!("{}: no such file (key `{name}`)", path.display())));
        }
        Ok(path)
    }

    pub fn opt_input(&self, name: &str) -> Result<Option<PathBuf>, CliError> {
        self.raw(name).map(|_| self.input(name)).transpose()
    }

    pub fn output(&self, name: &str) -> Result<PathBuf, CliError> {
        self.get::<String>(name).map(PathBuf::from)
    }

    pub fn opt_output(&self, name: &str) -> Option<PathBuf> {
        self.raw(name).map(PathBuf::from)
    }

    /// Canonical `key = value` text of every set key.
    pub fn canonical(&self) -> String {
        self.values
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of [`Self::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
