//! Flat `key = value` experiment configuration and bundled presets.
//!
//! Keys carry a section prefix (`data.`, `model.`, `train.`, `baseline.`,
//! `depth.`, `out.`). Blank lines and `#` comments are ignored. Unknown
//! and repeated keys are rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::graph::{convert_npz, load_bundle, sbm_generate, GraphBundle, SbmConfig};
use crate::model::ModelConfig;
use crate::tensor::SeededRng;
use crate::training::TrainConfig;

/// Presets shipped with the crate, addressable as `preset:<name>`.
pub const PRESETS: [(&str, &str); 14] = [
    ("computers", include_str!("../presets/computers.conf")),
    ("photo", include_str!("../presets/photo.conf")),
    ("coauthor_cs", include_str!("../presets/coauthor_cs.conf")),
    ("coauthor_physics", include_str!("../presets/coauthor_physics.conf")),
    ("wiki_cs", include_str!("../presets/wiki_cs.conf")),
    ("facebook", include_str!("../presets/facebook.conf")),
    ("actor", include_str!("../presets/actor.conf")),
    ("chameleon_fix_best", include_str!("../presets/chameleon_fix_best.conf")),
    ("squirrel_fix", include_str!("../presets/squirrel_fix.conf")),
    ("tolokers", include_str!("../presets/tolokers.conf")),
    ("roman_empire", include_str!("../presets/roman_empire.conf")),
    ("penn94", include_str!("../presets/penn94.conf")),
    ("sbm_separable", include_str!("../presets/sbm_separable.conf")),
    ("sbm_depth", include_str!("../presets/sbm_depth.conf")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|p| p.0 == name).map(|p| p.1)
}

/// Where the graph comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// A bundle directory written by [`crate::graph::save_bundle`].
    Bundle(PathBuf),
    /// An `.npz` archive with `node_features`, `node_labels` and `edges`.
    Npz(PathBuf),
    /// A freshly sampled stochastic block model.
    Sbm { config: SbmConfig, seed: u64 },
}

impl DataSource {
    /// Loads or samples the graph and makes sure every seed has a split.
    pub fn load(&self, seeds: &[u64]) -> Result<GraphBundle> {
        match self {
            DataSource::Bundle(path) => Ok(load_bundle(path)?.ensure_splits(seeds)),
            DataSource::Npz(path) => convert_npz(path, seeds),
            DataSource::Sbm { config, seed } => {
                let mut rng = SeededRng::seed_from_u64(*seed);
                sbm_generate(config, &mut rng)?.make_splits(seeds)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Layer count of the Transformer baselines.
    pub baseline_layers: usize,
    pub depths: Vec<usize>,
    pub out: Option<PathBuf>,
}

/// One `key = value` line and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub origin: String,
}

const KEYS: [&str; 24] = [
    "data.path",
    "data.npz",
    "data.sbm.n",
    "data.sbm.classes",
    "data.sbm.p_in",
    "data.sbm.p_out",
    "data.sbm.feat_dim",
    "data.sbm.feat_noise",
    "data.sbm.seed",
    "model.d_prime",
    "model.blocks",
    "model.propagator",
    "model.ffn",
    "model.residual",
    "model.dropout",
    "model.heads",
    "train.lr",
    "train.weight_decay",
    "train.max_epochs",
    "train.patience",
    "train.seeds",
    "baseline.layers",
    "depth.depths",
    "out.dir",
];

/// Splits config text into entries. `origin` names the source in errors.
pub fn parse_entries(text: &str, origin: &str) -> Result<Vec<Entry>> {
    let mut seen = BTreeMap::new();
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = format!("{origin}:{}", idx + 1);
        let entry = parse_assignment(line, &at)?;
        if let Some(first) = seen.insert(entry.key.clone(), at.clone()) {
            return Err(Error::Config(format!("{at}: {} already set at {first}", entry.key)));
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Parses one `key=value` assignment, checking the key.
pub fn parse_assignment(text: &str, origin: &str) -> Result<Entry> {
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("{origin}: expected key = value, got {text:?}")))?;
    let key = key.trim();
    if !KEYS.contains(&key) {
        return Err(Error::Config(format!("{origin}: unknown key {key:?}")));
    }
    Ok(Entry {
        key: key.to_string(),
        value: value.trim().to_string(),
        origin: origin.to_string(),
    })
}

/// Reads `preset:<name>` or a file path.
pub fn read_config_source(source: &str) -> Result<(String, String)> {
    if let Some(name) = source.strip_prefix("preset:") {
        let text = preset(name).ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
            Error::Config(format!("unknown preset {name:?}; available: {}", names.join(", ")))
        })?;
        return Ok((text.to_string(), source.to_string()));
    }
    let path = Path::new(source);
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {source}: {e}")))?;
    Ok((text, source.to_string()))
}

fn value<T: FromStr>(entry: &Entry) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    entry
        .value
        .parse()
        .map_err(|e| Error::Config(format!("{}: bad value {:?} for {}: {e}", entry.origin, entry.value, entry.key)))
}

/// Comma-separated list.
pub fn parse_list<T: FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad {what} {:?} in {text:?}", t.trim())))
        })
        .collect()
}

impl ExperimentConfig {
    /// Builds a config from entries, later entries overriding earlier ones
    /// with the same key. Does not validate ranges; see [`Self::validate`].
    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut map: BTreeMap<&str, &Entry> = BTreeMap::new();
        for e in entries {
            map.insert(e.key.as_str(), e);
        }
        let mut model = ModelConfig::default();
        let mut train = TrainConfig::default();
        let mut sbm = SbmConfig {
            n: 400,
            classes: 4,
            p_in: 0.05,
            p_out: 0.005,
            feat_dim: 16,
            feat_noise: 1.0,
        };
        let mut sbm_seed = 0;
        let mut baseline_layers = 1;
        let mut depths = vec![2, 4, 8, 16, 32];
        let mut out = None;
        let mut path = None;
        let mut npz = None;
        let mut uses_sbm = false;
        for (&key, e) in &map {
            match key {
                "data.path" => path = Some(PathBuf::from(&e.value)),
                "data.npz" => npz = Some(PathBuf::from(&e.value)),
                "data.sbm.n" => sbm.n = value(e)?,
                "data.sbm.classes" => sbm.classes = value(e)?,
                "data.sbm.p_in" => sbm.p_in = value(e)?,
                "data.sbm.p_out" => sbm.p_out = value(e)?,
                "data.sbm.feat_dim" => sbm.feat_dim = value(e)?,
                "data.sbm.feat_noise" => sbm.feat_noise = value(e)?,
                "data.sbm.seed" => sbm_seed = value(e)?,
                "model.d_prime" => model.d_prime = value(e)?,
                "model.blocks" => model.blocks = value(e)?,
                "model.propagator" => model.propagator = value(e)?,
                "model.ffn" => model.ffn = value(e)?,
                "model.residual" => model.residual = value(e)?,
                "model.dropout" => model.dropout = value(e)?,
                "model.heads" => model.heads = value(e)?,
                "train.lr" => train.lr = value(e)?,
                "train.weight_decay" => train.weight_decay = value(e)?,
                "train.max_epochs" => train.max_epochs = value(e)?,
                "train.patience" => train.patience = value(e)?,
                "train.seeds" => train.seeds = parse_list(&e.value, "seed")?,
                "baseline.layers" => baseline_layers = value(e)?,
                "depth.depths" => depths = parse_list(&e.value, "depth")?,
                "out.dir" => out = Some(PathBuf::from(&e.value)),
                other => return Err(Error::Config(format!("{}: unknown key {other:?}", e.origin))),
            }
            uses_sbm |= key.starts_with("data.sbm.");
        }
        let data = match (path, npz, uses_sbm) {
            (Some(p), None, false) => DataSource::Bundle(p),
            (None, Some(p), false) => DataSource::Npz(p),
            (None, None, true) => DataSource::Sbm {
                config: sbm,
                seed: sbm_seed,
            },
            (None, None, false) => {
                return Err(Error::Config(
                    "no data source; set data.path, data.npz or data.sbm.* keys".into(),
                ))
            }
            _ => return Err(Error::Config("data.path, data.npz and data.sbm.* are exclusive".into())),
        };
        Ok(ExperimentConfig {
            data,
            model,
            train,
            baseline_layers,
            depths,
            out,
        })
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        Self::from_entries(&parse_entries(text, origin)?)
    }

    /// Range and consistency checks for every section.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if let DataSource::Sbm { config, .. } = &self.data {
            config.validate()?;
        }
        if self.baseline_layers == 0 {
            return Err(Error::Config("baseline.layers must be positive".into()));
        }
        if self.depths.is_empty() || self.depths.contains(&0) {
            return Err(Error::Config("depth.depths must list positive block counts".into()));
        }
        Ok(())
    }
}
