//! The TOML configuration file.
//!
//! ```toml
//! manifest = "kb/manifest.json"
//! output_dir = "runs"
//!
//! [retrieval]
//! chunk_tokens = 200
//!
//! [metrics]
//! synonyms_path = "synonyms.json"
//!
//! [models.gpt-4o-mini]
//! backend = "remote_http"
//! endpoint_url = "https://api.openai.com/v1/chat/completions"
//! api_key_env = "OPENAI_API_KEY"
//! ```
//!
//! Relative paths resolve against the config file's directory. API keys are
//! never read from the file, only from the named environment variable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use crossrag_core::llm::ProviderConfig;
use crossrag_core::metrics::MetricOptions;
use crossrag_core::retrieve_text::RetrievalConfig;
use serde::Deserialize;

pub const DEFAULT_CONFIG: &str = "crossrag.toml";

fn default_manifest() -> PathBuf {
    PathBuf::from("manifest.json")
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default = "default_manifest")]
    pub manifest: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub metrics: MetricOptions,
    #[serde(default)]
    pub models: BTreeMap<String, ProviderConfig>,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            manifest: default_manifest(),
            output_dir: default_output_dir(),
            retrieval: RetrievalConfig::default(),
            metrics: MetricOptions::default(),
            models: BTreeMap::new(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl CliConfig {
    /// Loads `path`, or the defaults when `path` is the implicit default
    /// file and it does not exist.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let (path, explicit) = match path {
            Some(p) => (p.to_owned(), true),
            None => (PathBuf::from(DEFAULT_CONFIG), false),
        };
        if !explicit && !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: CliConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("")).to_owned();
        resolve(&base, &mut config.manifest);
        resolve(&base, &mut config.output_dir);
        if let Some(p) = config.metrics.synonyms_path.as_mut() {
            resolve(&base, p);
        }
        for provider in config.models.values_mut() {
            for p in [provider.replay_path.as_mut(), provider.script_path.as_mut()]
                .into_iter()
                .flatten()
            {
                resolve(&base, p);
            }
        }
        config.check()?;
        Ok(config)
    }

    /// Validates values and the existence of referenced input files. The
    /// manifest is exempt because `kb add` creates it.
    pub fn check(&self) -> Result<()> {
        self.retrieval.validate().context("invalid [retrieval] section")?;
        if self.metrics.max_n == 0 {
            bail!("invalid [metrics] section: max_n must be at least 1");
        }
        if let Some(p) = &self.metrics.synonyms_path {
            if !p.exists() {
                bail!("synonym table {} does not exist", p.display());
            }
        }
        for (id, provider) in &self.models {
            provider.validate().with_context(|| format!("model {id}"))?;
            for p in [&provider.replay_path, &provider.script_path].into_iter().flatten() {
                if !p.exists() {
                    bail!("model {id}: {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }

    pub fn provider(&self, model_id: &str) -> Option<&ProviderConfig> {
        self.models.get(model_id)
    }
}
