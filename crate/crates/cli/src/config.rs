//! Application config: one TOML file plus `WMTOM_` environment overrides.
//!
//! Overrides address nested keys with double underscores, e.g.
//! `WMTOM_POLICY__K=5` or `WMTOM_PROVIDERS__DEFAULT__MODE=replay`. Values are
//! read as TOML scalars when they parse as one, otherwise as strings. API
//! keys never appear in the file; profiles name the variable that holds
//! them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use wmtom::analyzer::{EmbeddingHandle, DEFAULT_WINDOW};
use wmtom::orchestrator::WmMode;
use wmtom::provider::{ProviderHandle, ProviderMode};
use wmtom::trigger::InterventionPolicy;

pub const ENV_PREFIX: &str = "WMTOM_";
/// Variables with the prefix that are not config overrides.
const RESERVED: [&str; 1] = ["WMTOM_DENY_NETWORK"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Record/replay cache; defaults to `<out_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            cache_dir: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl Paths {
    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("cache"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Analysis {
    pub window: usize,
    pub embedding: EmbeddingHandle,
}

impl Default for Analysis {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            embedding: EmbeddingHandle::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub providers: BTreeMap<String, ProviderHandle>,
    /// Lexicon name to word-list file.
    pub lexicons: BTreeMap<String, PathBuf>,
    pub policy: InterventionPolicy,
    pub wm_mode: WmMode,
    pub paths: Paths,
    pub workers: usize,
    pub analysis: Analysis,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            providers: BTreeMap::new(),
            lexicons: BTreeMap::new(),
            policy: InterventionPolicy::default(),
            wm_mode: WmMode::default(),
            paths: Paths::default(),
            workers: 4,
            analysis: Analysis::default(),
        }
    }
}

impl AppConfig {
    /// Loads `path`, applying overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_env(path, std::env::vars())
    }

    pub fn load_with_env(
        path: &Path,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, env).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text)?;
        let mut overrides: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX) && !RESERVED.contains(&k.as_str()))
            .collect();
        overrides.sort();
        for (key, raw) in overrides {
            let path: Vec<String> = key[ENV_PREFIX.len()..]
                .split("__")
                .map(|p| p.to_ascii_lowercase())
                .collect();
            set_path(&mut value, &path, scalar(&raw)).with_context(|| format!("override {key}"))?;
        }
        let cfg: Self = value.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if self.analysis.window == 0 {
            bail!("analysis.window must be positive");
        }
        Ok(())
    }

    /// True when nothing configured can reach the network.
    pub fn offline(&self) -> bool {
        let offline = |m: ProviderMode| matches!(m, ProviderMode::Replay | ProviderMode::Scripted);
        let record_scripted =
            |p: &ProviderHandle| p.mode == ProviderMode::Record && p.script.is_some();
        self.providers
            .values()
            .all(|p| offline(p.mode) || record_scripted(p))
            && offline(self.analysis.embedding.mode)
    }
}

fn scalar(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, path: &[String], v: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().context("empty key")?;
    let mut cur = root;
    for p in parents {
        let table = cur
            .as_table_mut()
            .context("override path crosses a non-table value")?;
        cur = table
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    cur.as_table_mut()
        .context("override path crosses a non-table value")?
        .insert(last.clone(), v);
    Ok(())
}
