//! Application configuration: one TOML document, fully validated at load
//! time. A bare config reproduces the reference settings (k=5, T=5, N=5,
//! development temperature 0.5, deployment temperature 0.7). The API key is
//! never stored in the file; it comes from the environment.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm_gateway::PriceTable;

pub const API_KEY_ENV: &str = "DSAGENT_API_KEY";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub provider: ProviderConfig,
    pub temperatures: TemperatureConfig,
    pub pipeline: PipelineConfig,
    pub prices: PriceConfig,
    pub sandbox: SandboxConfig,
    pub banks: BankConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub base_url: String,
    pub chat_model: String,
    pub embedding_model: String,
    /// "http" for the live provider, "mock" for the offline deterministic
    /// embedder.
    pub embedding: String,
    pub embed_truncate_chars: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemperatureConfig {
    pub development: f64,
    pub deployment: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Number of cases retrieved before the loop.
    pub k: usize,
    /// Development-loop iterations.
    pub iterations: usize,
    /// Maximum debugging attempts per iteration.
    pub max_debug_attempts: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceConfig {
    pub input_per_million: f64,
    pub output_per_million: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxConfig {
    pub timeout_secs: u64,
    pub interpreter: String,
    pub max_output_bytes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankConfig {
    pub insight: PathBuf,
    pub agent: PathBuf,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            base_url: "https://api.openai.com/v1".into(),
            chat_model: "gpt-3.5-turbo-16k".into(),
            embedding_model: "llm-embedder".into(),
            embedding: "http".into(),
            embed_truncate_chars: 8000,
        }
    }
}

impl Default for TemperatureConfig {
    fn default() -> Self {
        TemperatureConfig { development: 0.5, deployment: 0.7 }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { k: 5, iterations: 5, max_debug_attempts: 5 }
    }
}

impl Default for PriceConfig {
    fn default() -> Self {
        PriceConfig { input_per_million: 0.5, output_per_million: 1.5 }
    }
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig {
            timeout_secs: 3600,
            interpreter: "python3".into(),
            max_output_bytes: 1024 * 1024,
        }
    }
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig { insight: PathBuf::from("bank/insight"), agent: PathBuf::from("bank/agent") }
    }
}

impl AppConfig {
    /// Load and validate; `None` yields the validated defaults.
    pub fn load(path: Option<&Path>) -> Result<AppConfig> {
        let config = match path {
            None => AppConfig::default(),
            Some(p) => {
                let raw = std::fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                toml::from_str(&raw)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.provider.base_url.trim().is_empty() {
            return Err(Error::Config("provider.base_url is empty".into()));
        }
        if self.provider.chat_model.trim().is_empty() {
            return Err(Error::Config("provider.chat_model is empty".into()));
        }
        if self.provider.embedding_model.trim().is_empty() {
            return Err(Error::Config("provider.embedding_model is empty".into()));
        }
        match self.provider.embedding.as_str() {
            "http" | "mock" => {}
            other => {
                return Err(Error::Config(format!(
                    "provider.embedding must be \"http\" or \"mock\", got \"{other}\""
                )))
            }
        }
        if self.provider.embed_truncate_chars == 0 {
            return Err(Error::Config("provider.embed_truncate_chars must be >= 1".into()));
        }
        for (name, t) in [
            ("temperatures.development", self.temperatures.development),
            ("temperatures.deployment", self.temperatures.deployment),
        ] {
            if !t.is_finite() || !(0.0..=2.0).contains(&t) {
                return Err(Error::Config(format!("{name} must be within [0, 2], got {t}")));
            }
        }
        if self.pipeline.k == 0 {
            return Err(Error::Config("pipeline.k must be >= 1".into()));
        }
        if self.pipeline.iterations == 0 {
            return Err(Error::Config("pipeline.iterations must be >= 1".into()));
        }
        // max_debug_attempts of zero is allowed: debugging disabled.
        self.price_table()?;
        if self.sandbox.timeout_secs == 0 {
            return Err(Error::Config("sandbox.timeout_secs must be >= 1".into()));
        }
        if self.sandbox.interpreter.trim().is_empty() {
            return Err(Error::Config("sandbox.interpreter is empty".into()));
        }
        if self.sandbox.max_output_bytes == 0 {
            return Err(Error::Config("sandbox.max_output_bytes must be >= 1".into()));
        }
        Ok(())
    }

    pub fn price_table(&self) -> Result<PriceTable> {
        PriceTable::per_million(self.prices.input_per_million, self.prices.output_per_million)
    }

    pub fn sandbox_timeout(&self) -> Duration {
        Duration::from_secs(self.sandbox.timeout_secs)
    }

    pub fn api_key() -> Option<String> {
        std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty())
    }
}
