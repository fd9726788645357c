//! Provider wiring shared by the LLM-using commands.

use std::path::{Path, PathBuf};

use ds_core::config::AppConfig;
use ds_core::error::Result;
use ds_core::llm_gateway::{
    Cassette, ChatProvider, HttpChatProvider, RecordingProvider, ReplayProvider,
};
use ds_core::retrieval::{Embedder, HttpEmbedder, MockEmbedder};

/// Build the chat provider from the record/replay flags: strict replay from
/// a cassette, live + recording, or plain live HTTP.
pub fn chat_provider(
    config: &AppConfig,
    record: Option<PathBuf>,
    replay: Option<PathBuf>,
) -> Result<Box<dyn ChatProvider + Send>> {
    if let Some(path) = replay {
        let cassette = Cassette::load(&path)?;
        return Ok(Box::new(ReplayProvider::strict(cassette)));
    }
    let live = HttpChatProvider::new(&config.provider.base_url, AppConfig::api_key());
    match record {
        Some(path) => Ok(Box::new(RecordingProvider::create(live, &path)?)),
        None => Ok(Box::new(live)),
    }
}

pub fn embedder(config: &AppConfig) -> Box<dyn Embedder + Send> {
    match config.provider.embedding.as_str() {
        "mock" => Box::new(MockEmbedder::default()),
        _ => Box::new(
            HttpEmbedder::new(
                &config.provider.base_url,
                &config.provider.embedding_model,
                AppConfig::api_key(),
            )
            .with_truncation(config.provider.embed_truncate_chars),
        ),
    }
}

/// Resolve a bank argument: the two configured names, or a literal path.
pub fn bank_path(config: &AppConfig, bank: &str) -> PathBuf {
    match bank {
        "insight" => config.banks.insight.clone(),
        "agent" => config.banks.agent.clone(),
        other => PathBuf::from(other),
    }
}

/// Timestamped default run id; pid keeps parallel invocations apart.
pub fn run_id_or_default(run_id: Option<String>) -> String {
    run_id.unwrap_or_else(|| {
        format!(
            "run-{}-{}",
            chrono::Utc::now().format("%Y%m%d-%H%M%S"),
            std::process::id()
        )
    })
}

pub fn sandbox_settings(config: &AppConfig) -> ds_core::executor::SandboxSettings {
    ds_core::executor::SandboxSettings {
        timeout: config.sandbox_timeout(),
        interpreter: config.sandbox.interpreter.clone(),
        max_output_bytes: config.sandbox.max_output_bytes,
    }
}

pub fn progress(line: &str) {
    eprintln!("{line}");
}

/// True when `dir` exists and is a directory.
pub fn require_dir(dir: &Path, what: &str) -> Result<()> {
    if !dir.is_dir() {
        return Err(ds_core::Error::Config(format!("{what} not found: {}", dir.display())));
    }
    Ok(())
}
