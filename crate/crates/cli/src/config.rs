//! Flat `key=value` run configuration.
//!
//! Keys are the dotted paths of [`RunConfig`] fields, e.g. `train.batch_size`
//! or `corpus.n_items`. List values are comma separated. Precedence is
//! command line over file over profile defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gatesid_core::eval::EvalSettings;
use gatesid_core::model::{LossConfig, ModelConfig, TrainConfig, Variant};
use gatesid_core::rqvae::RqVaeConfig;
use gatesid_core::synthcorpus::CorpusConfig;
use gatesid_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Sized for one CPU core and a few minutes per model.
    Desk,
    /// Production-scale sizes; far too slow for the synthetic corpus on one core.
    Large,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus_dir: PathBuf,
    pub artifacts_dir: PathBuf,
    pub reports_dir: PathBuf,
}

/// Model hyperparameters that are not derived from the data or the SID table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelKnobs {
    pub d_token: usize,
    pub d_attn: usize,
    pub gate_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub use_user_embedding: bool,
    pub d_user: usize,
    pub init_std: f64,
    pub decay_embeddings: bool,
    pub gate_bias_init: f64,
    pub head_interactions: bool,
}

impl Default for ModelKnobs {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            d_token: m.d_token,
            d_attn: m.d_attn,
            gate_hidden: m.gate_hidden,
            head_hidden: m.head_hidden,
            use_user_embedding: m.use_user_embedding,
            d_user: m.d_user,
            init_std: m.init_std,
            decay_embeddings: m.decay_embeddings,
            gate_bias_init: m.gate_bias_init,
            head_interactions: m.head_interactions,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    /// Variant used by `train`, `eval`, `gate-curve` and `export-emb`.
    pub variant: Variant,
    pub paths: Paths,
    pub corpus: CorpusConfig,
    pub rqvae: RqVaeConfig,
    pub model: ModelKnobs,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub eval: EvalSettings,
    pub ablate: AblateConfig,
}

impl RunConfig {
    pub fn defaults(profile: Profile) -> Self {
        let mut c = Self {
            profile,
            seed: 7,
            variant: Variant::Full,
            paths: Paths {
                corpus_dir: "data/corpus".into(),
                artifacts_dir: "artifacts".into(),
                reports_dir: "reports".into(),
            },
            corpus: CorpusConfig::default(),
            rqvae: RqVaeConfig::default(),
            model: ModelKnobs::default(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            eval: EvalSettings::default(),
            ablate: AblateConfig {
                variants: vec![Variant::Full, Variant::NoGrca, Variant::NoGfsa, Variant::AvgFusion],
                seeds: vec![7, 8, 9],
            },
        };
        if profile == Profile::Large {
            c.rqvae.levels = 4;
            c.rqvae.codes_per_level = 256;
            c.rqvae.latent_dim = 64;
            c.rqvae.epochs = 10;
            c.rqvae.batch_size = 4096;
            c.train.batch_size = 4096;
            c.model.d_token = 32;
            c.model.head_hidden = vec![64, 32];
            c.loss.lambda = 0.1;
        }
        c
    }

    /// Resolves defaults, then `file`, then `overrides` (`key=value` each).
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let file_pairs = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                parse_lines(&text)?
            }
            None => Vec::new(),
        };
        let cli_pairs = overrides.iter().map(|s| split_pair(s)).collect::<Result<Vec<_>>>()?;
        Self::resolve(&file_pairs, &cli_pairs)
    }

    pub fn resolve(file_pairs: &[(String, String)], cli_pairs: &[(String, String)]) -> Result<Self> {
        let profile_raw = cli_pairs
            .iter()
            .chain(file_pairs)
            .rev()
            .find(|(k, _)| k == "profile")
            .map(|(_, v)| v.clone());
        let profile = match profile_raw.as_deref() {
            None | Some("desk") => Profile::Desk,
            Some("large") => Profile::Large,
            Some(other) => return Err(Error::Config(format!("unknown profile `{other}` (desk, large)"))),
        };
        let mut flat = BTreeMap::new();
        flatten("", &serde_json::to_value(Self::defaults(profile))?, &mut flat);
        for (key, raw) in file_pairs.iter().chain(cli_pairs) {
            let Some(slot) = flat.get_mut(key) else {
                return Err(Error::Config(format!("unknown key `{key}`")));
            };
            *slot = parse_value(key, raw, slot)?;
        }
        let config: Self = serde_json::from_value(unflatten(&flat))
            .map_err(|e| Error::Config(format!("invalid value: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Every key with its current value, in key order.
    pub fn to_pairs(&self) -> Result<Vec<(String, String)>> {
        let mut flat = BTreeMap::new();
        flatten("", &serde_json::to_value(self)?, &mut flat);
        Ok(flat.into_iter().map(|(k, v)| (k, render(&v))).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        self.corpus.validate().map_err(wrap)?;
        self.model_config(self.corpus.n_items, self.corpus.n_users).validate().map_err(wrap)?;
        self.loss.validate().map_err(wrap)?;
        self.eval.validate().map_err(wrap)?;
        if self.train.batch_size == 0 || self.train.epochs == 0 {
            return Err(Error::Config("train.batch_size and train.epochs must be positive".into()));
        }
        if self.ablate.variants.is_empty() || self.ablate.seeds.is_empty() {
            return Err(Error::Config("ablate.variants and ablate.seeds must be non-empty".into()));
        }
        Ok(())
    }

    /// Full model configuration; sizes come from the corpus and the SID levels.
    pub fn model_config(&self, n_items: usize, n_users: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            n_items,
            n_users,
            levels: self.rqvae.levels,
            codes_per_level: self.rqvae.codes_per_level,
            d_token: m.d_token,
            d_item: self.rqvae.levels * m.d_token,
            d_attn: m.d_attn,
            gate_hidden: m.gate_hidden.clone(),
            head_hidden: m.head_hidden.clone(),
            use_user_embedding: m.use_user_embedding,
            d_user: m.d_user,
            l_max: self.corpus.l_max,
            init_std: m.init_std,
            decay_embeddings: m.decay_embeddings,
            gate_bias_init: m.gate_bias_init,
            head_interactions: m.head_interactions,
        }
    }
}

fn split_pair(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got `{s}`")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// `key=value` lines; blank lines and lines starting with `#` are skipped.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(n, l)| split_pair(l).map_err(|e| Error::Config(format!("line {}: {e}", n + 1))))
        .collect()
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut node = &mut root;
        let mut parts = key.split('.').peekable();
        while let Some(part) = parts.next() {
            if parts.peek().is_none() {
                node.insert(part.to_string(), v.clone());
            } else {
                node = node
                    .entry(part.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("keys never collide with leaves");
            }
        }
    }
    Value::Object(root)
}

fn scalar(raw: &str, like: &Value) -> Option<Value> {
    match like {
        Value::String(_) => Some(Value::String(raw.to_string())),
        _ => serde_json::from_str(raw).ok().filter(|v: &Value| !v.is_object()),
    }
}

/// Parses `raw` to the JSON type of the current value at `key`.
fn parse_value(key: &str, raw: &str, current: &Value) -> Result<Value> {
    let bad = || Error::Config(format!("cannot parse `{raw}` for `{key}`"));
    match current {
        Value::Array(items) => {
            if raw.is_empty() {
                return Ok(Value::Array(Vec::new()));
            }
            let like = items.first().cloned().unwrap_or(Value::Null);
            raw.split(',')
                .map(|p| scalar(p.trim(), &like).ok_or_else(bad))
                .collect::<Result<Vec<_>>>()
                .map(Value::Array)
        }
        other => scalar(raw, other).ok_or_else(bad),
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(render).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}
