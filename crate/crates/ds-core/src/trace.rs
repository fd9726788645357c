//! The run trace: an ordered JSONL record of every exchange, execution,
//! permutation, and retain decision. Field names are stable, and no
//! wall-clock data appears here, so a replayed run reproduces the file
//! byte for byte. Timestamps and durations live in the per-step artifacts
//! and the run report instead.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm_gateway::{ExchangeRole, LlmExchange, Money};

pub const TRACE_FILE: &str = "trace.jsonl";

fn is_zero(n: &u32) -> bool {
    *n == 0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    RunStart {
        task_id: String,
        stage: String,
        mode: String,
        k: usize,
        iterations: usize,
        max_debug: usize,
    },
    Embed {
        purpose: String,
        dim: usize,
    },
    Exchange {
        role: ExchangeRole,
        step: usize,
        fingerprint: String,
        prompt: String,
        response: String,
        prompt_tokens: u64,
        completion_tokens: u64,
        cost: Money,
        #[serde(default, skip_serializing_if = "is_zero")]
        retries: u32,
    },
    DegradedParse {
        step: usize,
        role: ExchangeRole,
        reason: String,
    },
    Permutation {
        step: usize,
        order: Vec<usize>,
        source: String,
    },
    Selection {
        step: usize,
        case_id: String,
    },
    Execution {
        step: usize,
        attempt: usize,
        exit_code: i32,
        timed_out: bool,
        stdout: String,
        stderr: String,
        metric: Option<f64>,
    },
    Retain {
        step: usize,
        retained: bool,
        metric: Option<f64>,
        best_metric: Option<f64>,
        insight_case_id: Option<String>,
        agent_case_id: Option<String>,
    },
    RunEnd {
        success: bool,
        best_metric: Option<f64>,
        total_cost: Money,
        chat_exchanges: usize,
        embed_exchanges: usize,
    },
}

impl TraceEvent {
    pub fn exchange(step: usize, e: &LlmExchange) -> TraceEvent {
        TraceEvent::Exchange {
            role: e.role,
            step,
            fingerprint: crate::llm_gateway::fingerprint(
                &e.params.model,
                e.params.temperature,
                &e.prompt,
            ),
            prompt: e.prompt.clone(),
            response: e.response.clone(),
            prompt_tokens: e.prompt_tokens,
            completion_tokens: e.completion_tokens,
            cost: e.cost,
            retries: e.retries,
        }
    }
}

/// Append-only JSONL writer with a monotone sequence number per record.
pub struct TraceWriter {
    path: PathBuf,
    file: BufWriter<File>,
    seq: u64,
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    seq: u64,
    #[serde(flatten)]
    event: &'a TraceEvent,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<TraceWriter> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::TraceIo { path: path.to_path_buf(), source: e })?;
        }
        let file = File::create(path)
            .map_err(|e| Error::TraceIo { path: path.to_path_buf(), source: e })?;
        Ok(TraceWriter { path: path.to_path_buf(), file: BufWriter::new(file), seq: 0 })
    }

    pub fn record(&mut self, event: &TraceEvent) -> Result<()> {
        self.seq += 1;
        let record = TraceRecord { seq: self.seq, event };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::TraceIo { path: self.path.clone(), source: std::io::Error::other(e) })?;
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.write_all(b"\n"))
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::TraceIo { path: self.path.clone(), source: e })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
