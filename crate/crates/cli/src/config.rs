//! Run configuration: a `key = value` text file, `--set` overrides and
//! defaults for every key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use relatt_core::graph::{AugmentOptions, NegativeSampling};
use relatt_core::model::{AttnNonlinearity, AttnSchedule, ModelConfig};
use relatt_core::numeric::AdamConfig;
use relatt_core::train::{Monitor, TrainConfig};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy)]
enum Kind {
    Real,
    Count,
    Seed,
    Bool,
    Choice(&'static [&'static str]),
}

impl Kind {
    fn expected(&self) -> String {
        match self {
            Kind::Real => "a real number".into(),
            Kind::Count => "a non-negative integer".into(),
            Kind::Seed => "an unsigned 64-bit integer".into(),
            Kind::Bool => "`true` or `false`".into(),
            Kind::Choice(opts) => format!("one of {}", opts.join(", ")),
        }
    }

    /// Checks `value` and returns its canonical spelling.
    fn canonical(&self, value: &str) -> Option<String> {
        match self {
            Kind::Real => value.parse::<f64>().ok().filter(|v| v.is_finite()).map(|v| v.to_string()),
            Kind::Count => value.parse::<usize>().ok().map(|v| v.to_string()),
            Kind::Seed => value.parse::<u64>().ok().map(|v| v.to_string()),
            Kind::Bool => match value {
                "true" => Some("true".into()),
                "false" => Some("false".into()),
                _ => None,
            },
            Kind::Choice(opts) => opts.contains(&value).then(|| value.to_string()),
        }
    }
}

struct Key {
    name: &'static str,
    kind: Kind,
    default: &'static str,
}

const fn key(name: &'static str, kind: Kind, default: &'static str) -> Key {
    Key { name, kind, default }
}

/// Every accepted key with its default.
const KEYS: &[Key] = &[
    key("lr", Kind::Real, "0.01"),
    key("beta1", Kind::Real, "0.9"),
    key("beta2", Kind::Real, "0.999"),
    key("eps", Kind::Real, "1e-8"),
    key("layers", Kind::Count, "2"),
    key("dim", Kind::Count, "100"),
    key("bases", Kind::Count, "2"),
    key("feature_dim", Kind::Count, "100"),
    key("attention", Kind::Bool, "true"),
    key("attn_nonlinearity", Kind::Choice(&["none", "leaky_relu"]), "none"),
    key("attn_schedule", Kind::Choice(&["per_layer", "first_layer"]), "per_layer"),
    key("shared_attn_vector", Kind::Bool, "false"),
    key("hidden_dropout", Kind::Real, "0"),
    key("attn_dropout", Kind::Real, "0"),
    key("add_inverse", Kind::Bool, "true"),
    key("add_self_loop", Kind::Bool, "true"),
    key("neg_ratio", Kind::Count, "10"),
    key("negative_sampling", Kind::Choice(&["unfiltered", "filtered"]), "unfiltered"),
    key("max_epochs", Kind::Count, "6000"),
    key("eval_interval", Kind::Count, "100"),
    key("patience", Kind::Count, "10"),
    key("monitor", Kind::Choice(&["valid", "train"]), "valid"),
    key("seed", Kind::Seed, "42"),
    key("split_train", Kind::Real, "0.8"),
    key("split_valid", Kind::Real, "0.1"),
    key("filtered", Kind::Bool, "true"),
    key("save_ranks", Kind::Bool, "false"),
];

fn lookup(name: &str) -> Result<&'static Key> {
    KEYS.iter()
        .find(|k| k.name == name)
        .with_context(|| format!("unknown config key `{name}`"))
}

/// Raw `key → values` pairs. More than one value (written `a | b`) marks a
/// grid axis.
pub type RawConfig = BTreeMap<String, Vec<String>>;

fn parse_values(key: &str, value: &str) -> Result<Vec<String>> {
    let k = lookup(key)?;
    value
        .split('|')
        .map(|v| {
            let v = v.trim();
            k.kind
                .canonical(v)
                .with_context(|| format!("config key `{key}`: expected {}, got `{v}`", k.kind.expected()))
        })
        .collect()
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_text(text: &str, origin: &str) -> Result<RawConfig> {
    let mut out = RawConfig::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .with_context(|| format!("{origin}:{}: expected `key = value`, got `{line}`", i + 1))?;
        let k = k.trim();
        let values = parse_values(k, v).with_context(|| format!("{origin}:{}", i + 1))?;
        if out.insert(k.to_string(), values).is_some() {
            bail!("{origin}:{}: config key `{k}` given twice", i + 1);
        }
    }
    Ok(out)
}

/// Reads the optional config file, then applies `--set key=value`
/// overrides, then an explicit seed (flag or `RELATT_SEED`, flag first).
pub fn load(path: Option<&Path>, sets: &[String], seed_flag: Option<u64>) -> Result<RawConfig> {
    let mut raw = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            parse_text(&text, &p.display().to_string())?
        }
        None => RawConfig::new(),
    };
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .with_context(|| format!("--set expects `key=value`, got `{s}`"))?;
        let k = k.trim();
        raw.insert(k.to_string(), parse_values(k, v)?);
    }
    let env_seed = match std::env::var("RELATT_SEED") {
        Ok(v) => Some(
            v.trim()
                .parse::<u64>()
                .with_context(|| format!("RELATT_SEED: expected an unsigned 64-bit integer, got `{v}`"))?,
        ),
        Err(_) => None,
    };
    if let Some(seed) = seed_flag.or(env_seed) {
        raw.insert("seed".into(), vec![seed.to_string()]);
    }
    Ok(raw)
}

/// Cartesian product over every key with several values, in key order.
pub fn expand_grid(raw: &RawConfig) -> Vec<BTreeMap<String, String>> {
    let mut runs = vec![BTreeMap::new()];
    for (k, values) in raw {
        runs = runs
            .into_iter()
            .flat_map(|run| {
                values.iter().map(move |v| {
                    let mut r = run.clone();
                    r.insert(k.clone(), v.clone());
                    r
                })
            })
            .collect();
    }
    runs
}

/// A single (non-grid) configuration.
pub fn single(raw: &RawConfig) -> Result<BTreeMap<String, String>> {
    if let Some((k, _)) = raw.iter().find(|(_, v)| v.len() > 1) {
        bail!("config key `{k}` lists several values; use `relatt grid` to run a grid");
    }
    Ok(expand_grid(raw).remove(0))
}

/// Fully resolved configuration: every key has a value.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn resolve(given: &BTreeMap<String, String>) -> Result<Self> {
        let mut values = BTreeMap::new();
        for k in KEYS {
            values.insert(k.name.to_string(), k.default.to_string());
        }
        for (k, v) in given {
            let canonical = parse_values(k, v)?.remove(0);
            values.insert(k.clone(), canonical);
        }
        let cfg = Self { values };
        cfg.train_config()?.validate().context("invalid configuration")?;
        let (t, v) = (cfg.real("split_train"), cfg.real("split_valid"));
        if !(0.0..=1.0).contains(&t) || !(0.0..=1.0).contains(&v) || t + v > 1.0 {
            bail!("config keys `split_train` and `split_valid` must be fractions summing to at most 1");
        }
        if cfg.count("feature_dim") == 0 {
            bail!("config key `feature_dim` must be at least 1");
        }
        Ok(cfg)
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    fn get(&self, k: &str) -> &str {
        &self.values[k]
    }

    pub fn real(&self, k: &str) -> f64 {
        self.get(k).parse().expect("validated at resolve")
    }

    pub fn count(&self, k: &str) -> usize {
        self.get(k).parse().expect("validated at resolve")
    }

    pub fn flag(&self, k: &str) -> bool {
        self.get(k) == "true"
    }

    pub fn seed(&self) -> u64 {
        self.get("seed").parse().expect("validated at resolve")
    }

    /// SHA-256 over the sorted `key=value` lines of the effective config.
    pub fn hash(&self) -> String {
        let mut text = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(text, "{k}={v}");
        }
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let model = ModelConfig {
            layers: self.count("layers"),
            dim: self.count("dim"),
            bases: self.count("bases"),
            attention: self.flag("attention"),
            attn_nonlinearity: match self.get("attn_nonlinearity") {
                "leaky_relu" => AttnNonlinearity::LeakyRelu,
                _ => AttnNonlinearity::None,
            },
            attn_schedule: match self.get("attn_schedule") {
                "first_layer" => AttnSchedule::FirstLayer,
                _ => AttnSchedule::PerLayer,
            },
            shared_attn_vector: self.flag("shared_attn_vector"),
            hidden_dropout: self.real("hidden_dropout"),
            attn_dropout: self.real("attn_dropout"),
            augment: AugmentOptions {
                add_inverse: self.flag("add_inverse"),
                add_self_loop: self.flag("add_self_loop"),
            },
        };
        Ok(TrainConfig {
            model,
            adam: AdamConfig {
                lr: self.real("lr"),
                beta1: self.real("beta1"),
                beta2: self.real("beta2"),
                eps: self.real("eps"),
            },
            neg_ratio: self.count("neg_ratio"),
            negative_sampling: match self.get("negative_sampling") {
                "filtered" => NegativeSampling::Filtered,
                _ => NegativeSampling::Unfiltered,
            },
            max_epochs: self.count("max_epochs"),
            patience: self.count("patience"),
            eval_interval: self.count("eval_interval"),
            monitor: match self.get("monitor") {
                "train" => Monitor::Train,
                _ => Monitor::Valid,
            },
            seed: self.seed(),
        })
    }
}

/// The documented defaults as config-file text.
pub fn defaults_text() -> String {
    KEYS.iter().map(|k| format!("{} = {}\n", k.name, k.default)).collect()
}
