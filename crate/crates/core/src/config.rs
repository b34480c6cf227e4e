//! Flat TOML configuration. Relative paths resolve against the config file's
//! directory; credentials only come from environment variables.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::captain::RunConfig;
use crate::embedding::{CachedEmbedder, Embedder, HashEmbedder, HttpEmbedder};
use crate::llm::{ChatProvider, LlmError, ModelTable, OpenAiClient, RetryPolicy, ScriptedProvider};
use crate::model::{ModelError, RetrievalConfig};
use crate::sandbox::SandboxConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Unreadable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path} is invalid: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("scripted provider needs a script file")]
    NoScript,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("embedding cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Scripted,
    Openai,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Hash,
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub provider: ProviderKind,
    pub script: Option<PathBuf>,
    pub base_url: String,
    pub api_key_env: String,
    pub model: String,
    pub model_captain: Option<String>,
    pub model_expert: Option<String>,
    pub model_selector: Option<String>,
    pub model_generator: Option<String>,
    pub model_compressor: Option<String>,
    pub model_manager: Option<String>,
    pub model_reflector: Option<String>,
    pub model_static_builder: Option<String>,
    pub temperature_captain: f64,
    pub temperature_expert: f64,
    pub max_tokens: u32,
    pub retry_cap: u32,
    pub timeout_secs: u64,

    pub agent_library: PathBuf,
    pub tool_manifest: Option<PathBuf>,
    pub tool_root: Option<PathBuf>,

    pub k1: usize,
    pub k2: usize,
    pub max_agent_number: usize,
    pub max_nested_rounds: usize,
    pub max_double_checks: usize,
    pub max_captain_turns: usize,

    pub embedding_provider: EmbeddingKind,
    pub embedding_dim: usize,
    pub embedding_seed: u64,
    pub embedding_model: Option<String>,
    pub embedding_base_url: Option<String>,
    pub embedding_api_key_env: Option<String>,
    pub embedding_cache_dir: Option<PathBuf>,

    pub sandbox_interpreter: String,
    pub sandbox_agent: Option<PathBuf>,
    pub sandbox_timeout_secs: u64,
    pub sandbox_output_cap: usize,
    pub sandbox_allow_network: bool,
}

impl Default for Config {
    fn default() -> Self {
        let retrieval = RetrievalConfig::default();
        let sandbox = SandboxConfig::default();
        Self {
            provider: ProviderKind::Scripted,
            script: None,
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            model: ModelTable::default().default_model,
            model_captain: None,
            model_expert: None,
            model_selector: None,
            model_generator: None,
            model_compressor: None,
            model_manager: None,
            model_reflector: None,
            model_static_builder: None,
            temperature_captain: 0.0,
            temperature_expert: 0.0,
            max_tokens: ModelTable::default().max_tokens,
            retry_cap: RetryPolicy::default().max_retries,
            timeout_secs: 120,
            agent_library: PathBuf::from("agent_library.json"),
            tool_manifest: None,
            tool_root: None,
            k1: retrieval.k1,
            k2: retrieval.k2,
            max_agent_number: retrieval.max_agent_number,
            max_nested_rounds: retrieval.max_nested_rounds,
            max_double_checks: retrieval.max_double_checks,
            max_captain_turns: RunConfig::default().max_captain_turns,
            embedding_provider: EmbeddingKind::Hash,
            embedding_dim: 256,
            embedding_seed: 0,
            embedding_model: None,
            embedding_base_url: None,
            embedding_api_key_env: None,
            embedding_cache_dir: None,
            sandbox_interpreter: sandbox.interpreter,
            sandbox_agent: None,
            sandbox_timeout_secs: sandbox.timeout_secs,
            sandbox_output_cap: sandbox.output_cap,
            sandbox_allow_network: sandbox.allow_network,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: Config = toml::from_str(&text).map_err(|e| ConfigError::Invalid {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.resolve_paths(&base);
        config.retrieval().validate().map_err(|e| ConfigError::Invalid {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.agent_library);
        for p in [
            &mut self.script,
            &mut self.tool_manifest,
            &mut self.tool_root,
            &mut self.embedding_cache_dir,
            &mut self.sandbox_agent,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
    }

    pub fn retrieval(&self) -> RetrievalConfig {
        RetrievalConfig {
            k1: self.k1,
            k2: self.k2,
            max_agent_number: self.max_agent_number,
            max_nested_rounds: self.max_nested_rounds,
            max_double_checks: self.max_double_checks,
        }
    }

    /// Module paths resolve against `tool_root`, else the manifest's directory.
    pub fn tool_root(&self) -> Option<PathBuf> {
        self.tool_root.clone().or_else(|| {
            self.tool_manifest
                .as_ref()
                .and_then(|m| m.parent().map(Path::to_path_buf))
        })
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            retrieval: self.retrieval(),
            sandbox: SandboxConfig {
                interpreter: self.sandbox_interpreter.clone(),
                agent_script: self.sandbox_agent.clone(),
                tool_root: self.tool_root(),
                timeout_secs: self.sandbox_timeout_secs,
                output_cap: self.sandbox_output_cap,
                allow_network: self.sandbox_allow_network,
                ..SandboxConfig::default()
            },
            max_captain_turns: self.max_captain_turns,
        }
    }

    pub fn model_table(&self) -> ModelTable {
        let mut table = ModelTable {
            default_model: self.model.clone(),
            max_tokens: self.max_tokens,
            ..ModelTable::default()
        };
        let sites = [
            ("captain", &self.model_captain),
            ("expert", &self.model_expert),
            ("selector", &self.model_selector),
            ("generator", &self.model_generator),
            ("compressor", &self.model_compressor),
            ("manager", &self.model_manager),
            ("reflector", &self.model_reflector),
            ("static_builder", &self.model_static_builder),
        ];
        for (site, model) in sites {
            if let Some(m) = model {
                table.models.insert(site.into(), m.clone());
            }
        }
        table.temperatures.insert("captain".into(), self.temperature_captain);
        table.temperatures.insert("expert".into(), self.temperature_expert);
        table
    }

    fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.retry_cap,
            ..RetryPolicy::default()
        }
    }

    /// The configured provider; `script` overrides the config's script file.
    pub fn provider(&self, script: Option<&Path>) -> Result<Arc<dyn ChatProvider>, ConfigError> {
        match self.provider {
            ProviderKind::Scripted => {
                let path = script.or(self.script.as_deref()).ok_or(ConfigError::NoScript)?;
                Ok(Arc::new(ScriptedProvider::from_file(path)?))
            }
            ProviderKind::Openai => Ok(Arc::new(OpenAiClient::from_env(
                &self.base_url,
                &self.api_key_env,
                Duration::from_secs(self.timeout_secs),
                self.retry(),
            )?)),
        }
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>, ConfigError> {
        let inner: Arc<dyn Embedder> = match self.embedding_provider {
            EmbeddingKind::Hash => {
                if self.embedding_dim == 0 {
                    return Err(ModelError::InvalidConfig("embedding_dim must be positive".into()).into());
                }
                Arc::new(HashEmbedder::new(self.embedding_dim, self.embedding_seed))
            }
            EmbeddingKind::Openai => {
                let env = self.embedding_api_key_env.as_deref().unwrap_or(&self.api_key_env);
                let key = std::env::var(env)
                    .ok()
                    .filter(|k| !k.is_empty())
                    .ok_or_else(|| LlmError::CredentialMissing(env.to_string()))?;
                Arc::new(HttpEmbedder::new(
                    self.embedding_base_url.as_deref().unwrap_or(&self.base_url),
                    key,
                    self.embedding_model.clone(),
                    Duration::from_secs(self.timeout_secs),
                    self.retry(),
                ))
            }
        };
        match &self.embedding_cache_dir {
            Some(dir) => Ok(Arc::new(
                CachedEmbedder::new(inner, dir).map_err(|e| ConfigError::Cache(e.to_string()))?,
            )),
            None => Ok(inner),
        }
    }
}
