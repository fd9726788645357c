//! `ds ingest`: turn technical reports and solution code into insight cases.
//!
//! `.md` reports are stored near-verbatim after whitespace cleaning; `.py`
//! files go through the solution-extractor prompt when `--summarize` is set
//! and are rejected otherwise.

use std::path::{Path, PathBuf};

use serde_json::json;

use ds_core::case_bank::{Case, CaseBank, CaseKind, Modality};
use ds_core::config::AppConfig;
use ds_core::error::{Error, Result};
use ds_core::llm_gateway::{complete, total_cost, ExchangeRole, LlmExchange, LlmParams};
use ds_core::prompt_kit::render_solution_extractor;

use crate::providers;

pub fn run(
    config: &AppConfig,
    reports_dir: &Path,
    bank: &str,
    summarize: bool,
    modality: &str,
    record: Option<PathBuf>,
    replay: Option<PathBuf>,
) -> Result<i32> {
    providers::require_dir(reports_dir, "reports directory")?;
    let modality: Modality = modality.parse()?;
    let mut bank = CaseBank::load_or_create(&providers::bank_path(config, bank))?;

    let mut entries: Vec<PathBuf> = std::fs::read_dir(reports_dir)?
        .flatten()
        .map(|e| e.path())
        .filter(|p| {
            matches!(p.extension().and_then(|e| e.to_str()), Some("md") | Some("py"))
        })
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::Config(format!(
            "no .md or .py files in {}",
            reports_dir.display()
        )));
    }
    let code_files: Vec<&PathBuf> =
        entries.iter().filter(|p| p.extension().is_some_and(|e| e == "py")).collect();
    if !code_files.is_empty() && !summarize {
        return Err(Error::Config(format!(
            "code files need --summarize to be converted into textual insights: {}",
            code_files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
        )));
    }

    let chat = providers::chat_provider(config, record, replay)?;
    let embedder = providers::embedder(config);
    let params = LlmParams::new(&config.provider.chat_model, config.temperatures.development);
    let prices = config.price_table()?;

    let mut ingested: Vec<(String, String)> = Vec::new(); // (file, case id)
    let mut exchanges: Vec<LlmExchange> = Vec::new();
    for path in &entries {
        let file_name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let raw = match std::fs::read_to_string(path) {
            Ok(r) => r,
            Err(e) => {
                providers::progress(&format!("warning: skipping unreadable {file_name}: {e}"));
                continue;
            }
        };
        let body = if path.extension().is_some_and(|e| e == "py") {
            if raw.trim().is_empty() {
                providers::progress(&format!("warning: skipping empty {file_name}"));
                continue;
            }
            let prompt = render_solution_extractor(&raw)?;
            match complete(chat.as_ref(), ExchangeRole::Extractor, &prompt, &params, &prices) {
                Ok(exchange) => {
                    let summary = exchange.response.trim().to_string();
                    exchanges.push(exchange);
                    if summary.is_empty() {
                        providers::progress(&format!(
                            "warning: empty summary for {file_name}, skipped"
                        ));
                        continue;
                    }
                    summary
                }
                Err(e) => {
                    providers::progress(&format!(
                        "warning: summarization failed for {file_name}: {e}"
                    ));
                    continue;
                }
            }
        } else {
            let cleaned = clean_whitespace(&raw);
            if cleaned.is_empty() {
                providers::progress(&format!("warning: skipping whitespace-only {file_name}"));
                continue;
            }
            cleaned
        };

        // Insight embeddings cover the whole case body, truncated to the
        // provider's limit with the truncation noted in the provenance.
        let truncated = embedder
            .truncation_limit()
            .is_some_and(|limit| body.chars().count() > limit);
        let embedding = match embedder.embed(&body) {
            Ok(e) => e,
            Err(e) => {
                providers::progress(&format!("warning: embedding failed for {file_name}: {e}"));
                continue;
            }
        };
        let mut source = file_name.clone();
        if truncated {
            source.push_str(";embedding-truncated");
        }
        let id = bank.next_id(CaseKind::Insight, "", &body);
        let id = bank.add_case(Case {
            id,
            kind: CaseKind::Insight,
            modality,
            task_desc: String::new(),
            body,
            embedding: embedding.values().to_vec(),
            source,
        })?;
        providers::progress(&format!("ingested {file_name} -> {id}"));
        ingested.push((file_name, id));
    }

    let report = json!({
        "ingested": ingested.iter().map(|(f, id)| json!({"file": f, "case_id": id})).collect::<Vec<_>>(),
        "chat_exchanges": exchanges.len(),
        "prompt_tokens": exchanges.iter().map(|e| e.prompt_tokens).sum::<u64>(),
        "completion_tokens": exchanges.iter().map(|e| e.completion_tokens).sum::<u64>(),
        "cost": total_cost(&exchanges).to_string(),
    });
    println!("{}", serde_json::to_string_pretty(&report).map_err(std::io::Error::other)?);
    Ok(0)
}

/// Trim trailing spaces, collapse 3+ blank lines to one blank line, and trim
/// outer blank lines.
fn clean_whitespace(raw: &str) -> String {
    let mut lines: Vec<&str> = raw.lines().map(|l| l.trim_end()).collect();
    while lines.first().is_some_and(|l| l.is_empty()) {
        lines.remove(0);
    }
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    let mut out: Vec<&str> = Vec::with_capacity(lines.len());
    let mut blank_run = 0usize;
    for line in lines {
        if line.is_empty() {
            blank_run += 1;
            if blank_run > 1 {
                continue;
            }
        } else {
            blank_run = 0;
        }
        out.push(line);
    }
    out.join("\n")
}
