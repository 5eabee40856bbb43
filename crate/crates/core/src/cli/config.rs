//! `key = value` run configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::composition::CompositionMode;
use crate::error::{Error, Result};
use crate::pipeline::{DecodeStrategy, TrainConfig};

/// Every recognised key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("corpus", "", "TSV corpus to train or evaluate on"),
    ("model", "", "model archive to write (train) or read"),
    ("report", "", "metrics report path; stdout when unset"),
    ("seed", "0", "root seed for every random stream"),
    ("dim", "64", "latent and embedding dimension d"),
    ("margin", "1", "hinge margin m"),
    ("noise_k", "3", "noise samples per pair"),
    ("l2", "0.0001", "L2 weight on both embedding tables"),
    ("bicvm_lr", "0.05", "stage-one AdaGrad learning rate"),
    ("bicvm_epochs", "50", "stage-one epochs per round"),
    (
        "context_n",
        "3",
        "language model order n (history of n-1 tokens)",
    ),
    ("cnlm_lr", "0.05", "stage-two AdaGrad learning rate"),
    ("cnlm_epochs", "100", "stage-two epochs per round"),
    ("init_scale", "0.1", "uniform initialisation half-width"),
    (
        "compose_question",
        "additive",
        "question composition: additive or bigram",
    ),
    (
        "compose_query",
        "bigram",
        "query composition: additive or bigram",
    ),
    ("decode", "beam", "decoding strategy: beam or greedy"),
    ("beam", "5", "beam width"),
    ("max_len", "40", "maximum generated query length"),
    ("rounds", "1", "alternations of stage one and stage two"),
    (
        "autoencoder",
        "false",
        "condition stage two on g(Q) + h(R) while training",
    ),
    (
        "init_r_from_dr",
        "true",
        "start R from the trained query embeddings",
    ),
    (
        "min_count",
        "1",
        "minimum token frequency for the vocabularies",
    ),
    (
        "pretrained_question",
        "",
        "optional pretrained question embeddings",
    ),
    (
        "pretrained_query",
        "",
        "optional pretrained query embeddings",
    ),
];

/// Keys stored in a model archive: everything except file paths.
pub const MODEL_KEYS: &[&str] = &[
    "seed",
    "dim",
    "margin",
    "noise_k",
    "l2",
    "bicvm_lr",
    "bicvm_epochs",
    "context_n",
    "cnlm_lr",
    "cnlm_epochs",
    "init_scale",
    "compose_question",
    "compose_query",
    "decode",
    "beam",
    "max_len",
    "rounds",
    "autoencoder",
    "init_r_from_dr",
    "min_count",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub corpus: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
    explicit: BTreeSet<&'static str>,
}

fn canonical(key: &str) -> Option<&'static str> {
    KEYS.iter().map(|k| k.0).find(|k| *k == key)
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key `{key}`: cannot parse {value:?}")))
}

fn parse_real(key: &str, value: &str) -> Result<f64> {
    let x: f64 = parse_num(key, value)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Config(format!(
            "key `{key}`: {value:?} is not finite"
        )))
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "key `{key}`: expected true or false, got {value:?}"
        ))),
    }
}

fn parse_with<T: FromStr<Err = Error>>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|e: Error| Error::Config(format!("key `{key}`: {e}")))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

impl RunConfig {
    /// Applies one setting. Unknown keys are rejected by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let Some(key) = canonical(key) else {
            return Err(Error::Config(format!("unknown key `{key}`")));
        };
        let value = value.trim();
        let t = &mut self.train;
        match key {
            "corpus" => self.corpus = opt_path(value),
            "model" => self.model = opt_path(value),
            "report" => self.report = opt_path(value),
            "seed" => t.seed = parse_num(key, value)?,
            "dim" => {
                let d = parse_num(key, value)?;
                t.bicvm.dim = d;
                t.cnlm.dim = d;
            }
            "margin" => t.bicvm.margin = parse_real(key, value)?,
            "noise_k" => t.bicvm.noise_count = parse_num(key, value)?,
            "l2" => t.bicvm.l2 = parse_real(key, value)?,
            "bicvm_lr" => t.bicvm.learning_rate = parse_real(key, value)?,
            "bicvm_epochs" => t.bicvm.epochs = parse_num(key, value)?,
            "context_n" => t.cnlm.context = parse_num(key, value)?,
            "cnlm_lr" => t.cnlm.learning_rate = parse_real(key, value)?,
            "cnlm_epochs" => t.cnlm.epochs = parse_num(key, value)?,
            "init_scale" => {
                let s = parse_real(key, value)?;
                t.bicvm.init_scale = s;
                t.cnlm.init_scale = s;
            }
            "compose_question" => t.question_mode = parse_with::<CompositionMode>(key, value)?,
            "compose_query" => t.query_mode = parse_with::<CompositionMode>(key, value)?,
            "decode" => t.decode.strategy = parse_with::<DecodeStrategy>(key, value)?,
            "beam" => t.decode.width = parse_num(key, value)?,
            "max_len" => t.decode.max_len = parse_num(key, value)?,
            "rounds" => t.rounds = parse_num(key, value)?,
            "autoencoder" => t.autoencoder = parse_bool(key, value)?,
            "init_r_from_dr" => t.init_r_from_dr = parse_bool(key, value)?,
            "min_count" => t.min_count = parse_num(key, value)?,
            "pretrained_question" => t.pretrained_question = opt_path(value),
            "pretrained_query" => t.pretrained_query = opt_path(value),
            _ => unreachable!("every key in KEYS is handled"),
        }
        self.explicit.insert(key);
        Ok(())
    }

    /// Current value of `key` in the same textual form [`RunConfig::set`] accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let v = match canonical(key)? {
            "corpus" => path_str(&self.corpus),
            "model" => path_str(&self.model),
            "report" => path_str(&self.report),
            "seed" => t.seed.to_string(),
            "dim" => t.bicvm.dim.to_string(),
            "margin" => t.bicvm.margin.to_string(),
            "noise_k" => t.bicvm.noise_count.to_string(),
            "l2" => t.bicvm.l2.to_string(),
            "bicvm_lr" => t.bicvm.learning_rate.to_string(),
            "bicvm_epochs" => t.bicvm.epochs.to_string(),
            "context_n" => t.cnlm.context.to_string(),
            "cnlm_lr" => t.cnlm.learning_rate.to_string(),
            "cnlm_epochs" => t.cnlm.epochs.to_string(),
            "init_scale" => t.bicvm.init_scale.to_string(),
            "compose_question" => t.question_mode.to_string(),
            "compose_query" => t.query_mode.to_string(),
            "decode" => t.decode.strategy.to_string(),
            "beam" => t.decode.width.to_string(),
            "max_len" => t.decode.max_len.to_string(),
            "rounds" => t.rounds.to_string(),
            "autoencoder" => t.autoencoder.to_string(),
            "init_r_from_dr" => t.init_r_from_dr.to_string(),
            "min_count" => t.min_count.to_string(),
            "pretrained_question" => path_str(&t.pretrained_question),
            "pretrained_query" => path_str(&t.pretrained_query),
            _ => unreachable!("every key in KEYS is handled"),
        };
        Some(v)
    }

    /// Whether `key` was set from a file or flag rather than left at its default.
    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// Applies a `key = value` document. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    what: "config",
                    line: i + 1,
                    message: "expected `key = value`".into(),
                });
            };
            self.set(key.trim(), value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        config.apply_text(text)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::file(path))?;
        RunConfig::parse(&text)
    }

    /// `key = value` lines for `keys`, in the given order.
    pub fn render(&self, keys: &[&str]) -> String {
        let mut out = String::new();
        for key in keys {
            let value = self.get(key).expect("known key");
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn require_corpus(&self) -> Result<&Path> {
        self.corpus
            .as_deref()
            .ok_or_else(|| Error::Config("missing required key `corpus`".into()))
    }

    pub fn require_model(&self) -> Result<&Path> {
        self.model
            .as_deref()
            .ok_or_else(|| Error::Config("missing required key `model`".into()))
    }
}
