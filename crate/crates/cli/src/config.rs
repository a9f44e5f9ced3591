//! Config resolution: built-in defaults, then the TOML file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use turngraph::train::{SamplerMode, TrainRunConfig};
use turngraph::Variant;

/// Keys accepted in the config file besides the training fields.
const IO_KEYS: &[&str] = &[
    "dialogues",
    "entities",
    "embeddings",
    "out_dir",
    "checkpoint",
    "split",
    "dim",
    "jobs",
    "top_k",
    "width",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    pub dialogues: Option<PathBuf>,
    pub entities: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub dim: Option<usize>,
    pub jobs: Option<usize>,
    pub top_k: Option<usize>,
    pub width: Option<usize>,
}

/// Everything a subcommand runs with, after all overrides.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Effective {
    pub command: String,
    #[serde(flatten)]
    pub io: IoConfig,
    pub train: TrainRunConfig,
    /// Whether the variant came from a flag or the file rather than the default.
    #[serde(skip)]
    pub variant_explicit: bool,
}

/// Flag values; `None` means "not given on the command line".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub io: IoConfig,
    pub variant: Option<Variant>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub ratio: Option<f64>,
    pub sampler: Option<SamplerMode>,
}

/// Parses a config file. The training fields sit at the top level next to
/// the I/O keys; anything else is rejected.
pub fn parse_file(text: &str) -> Result<(IoConfig, TrainRunConfig, bool)> {
    let table: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
    let (io, train): (toml::Table, toml::Table) = table.into_iter().partition(|(k, _)| IO_KEYS.contains(&k.as_str()));
    let io: IoConfig = io.try_into().context("invalid I/O setting in config")?;
    let has_variant = train.contains_key("variant");
    let train: TrainRunConfig = train.try_into().context("invalid training setting in config")?;
    Ok((io, train, has_variant))
}

pub fn load_file(path: &Path) -> Result<(IoConfig, TrainRunConfig, bool)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    parse_file(&text).with_context(|| format!("in config {}", path.display()))
}

pub fn resolve(command: &str, file: Option<&Path>, flags: Overrides) -> Result<Effective> {
    let (mut io, mut train, file_variant) = match file {
        Some(p) => load_file(p)?,
        None => (IoConfig::default(), TrainRunConfig::default(), false),
    };
    let variant_explicit = file_variant || flags.variant.is_some();
    macro_rules! take {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src {
                $dst = Some(v);
            }
        };
    }
    let f = flags.io;
    take!(io.dialogues, f.dialogues);
    take!(io.entities, f.entities);
    take!(io.embeddings, f.embeddings);
    take!(io.out_dir, f.out_dir);
    take!(io.checkpoint, f.checkpoint);
    take!(io.split, f.split);
    take!(io.dim, f.dim);
    take!(io.jobs, f.jobs);
    take!(io.top_k, f.top_k);
    take!(io.width, f.width);

    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = flags.$field {
                train.$field = v;
            }
        };
    }
    set!(variant);
    set!(seed);
    set!(runs);
    set!(epochs);
    set!(lr);
    set!(batch_size);
    set!(ratio);
    set!(sampler);
    train.validate()?;
    if io.dim == Some(0) {
        bail!("dim must be >= 1");
    }
    Ok(Effective {
        command: command.to_string(),
        io,
        train,
        variant_explicit,
    })
}
