//! The deployment-stage controller: retrieve the most similar past solution
//! pair and adapt it to the new task in a single completion call, then run
//! the generated script once. No debugging, no bank mutation.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::case_bank::{Case, CaseBank, CaseKind};
use crate::error::{Error, Result};
use crate::executor::{self, detect_error, extract_metric, ExecutionResult, MetricPattern};
use crate::llm_gateway::{
    complete, total_cost, ExchangeRole, LlmExchange, LlmParams, Money,
};
use crate::prompt_kit::{extract_code, render_adapter, AdapterExample};
use crate::retrieval::top_k;
use crate::task::TaskSpec;
use crate::trace::{TraceEvent, TraceWriter, TRACE_FILE};

use crate::dev_pipeline::RunContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Top-n by task similarity.
    Retrieved,
    /// Seeded uniform draw without replacement (the one-shot baseline).
    Random,
    /// No examples at all (the zero-shot baseline).
    None,
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selection::Retrieved => write!(f, "retrieved"),
            Selection::Random => write!(f, "random"),
            Selection::None => write!(f, "none"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeployConfig {
    pub n_examples: usize,
    pub selection: Selection,
    pub temperature: f64,
    pub rng_seed: Option<u64>,
}

impl Default for DeployConfig {
    fn default() -> Self {
        DeployConfig {
            n_examples: 1,
            selection: Selection::Retrieved,
            temperature: 0.7,
            rng_seed: None,
        }
    }
}

impl DeployConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Config(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        match self.selection {
            Selection::None => {
                if self.n_examples != 0 {
                    return Err(Error::Config(
                        "selection=none requires n_examples=0".into(),
                    ));
                }
            }
            Selection::Random => {
                if self.n_examples == 0 {
                    return Err(Error::Config("selection=random requires n_examples >= 1".into()));
                }
                if self.rng_seed.is_none() {
                    return Err(Error::Config(
                        "selection=random requires an rng seed for reproducible runs".into(),
                    ));
                }
            }
            Selection::Retrieved => {
                if self.n_examples == 0 {
                    return Err(Error::Config(
                        "selection=retrieved requires n_examples >= 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeployReport {
    pub task_id: String,
    pub selected_case_ids: Vec<String>,
    pub script: String,
    pub result: ExecutionResult,
    /// Error-free on the single permitted trial.
    pub one_pass: bool,
    pub exchanges: Vec<LlmExchange>,
    pub embed_exchanges: usize,
    pub total_cost: Money,
}

/// Adapt one task from the agent bank and execute the generated script
/// once. The bank is read-only here: deployment never retains.
pub fn run_deployment(
    task: &TaskSpec,
    agent_bank: &CaseBank,
    cfg: &DeployConfig,
    ctx: &RunContext<'_>,
) -> Result<DeployReport> {
    cfg.validate()?;
    if cfg.selection != Selection::None && agent_bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    let metric_pattern = MetricPattern::new(&task.metric.pattern, task.metric.direction)?;
    std::fs::create_dir_all(&ctx.run_dir)?;
    let mut trace = TraceWriter::create(&ctx.run_dir.join(TRACE_FILE))?;
    trace.record(&TraceEvent::RunStart {
        task_id: task.id.clone(),
        stage: "deployment".into(),
        mode: cfg.selection.to_string(),
        k: cfg.n_examples,
        iterations: 1,
        max_debug: 0,
    })?;

    let mut exchanges: Vec<LlmExchange> = Vec::new();
    let mut embed_exchanges = 0usize;

    // Select example pairs.
    let selected: Vec<&Case> = match cfg.selection {
        Selection::None => Vec::new(),
        Selection::Retrieved => {
            if let Some(bad) = agent_bank.cases().iter().find(|c| c.kind != CaseKind::Solution) {
                return Err(Error::WrongBank(format!(
                    "agent bank contains non-solution case `{}`",
                    bad.id
                )));
            }
            let query = ctx.embedder.embed(&task.description)?;
            embed_exchanges += 1;
            trace.record(&TraceEvent::Embed { purpose: "retrieval_query".into(), dim: query.dim() })?;
            let scored = top_k(&query, agent_bank, cfg.n_examples)?;
            scored
                .iter()
                .map(|s| agent_bank.get(&s.case_id).expect("retrieved id exists"))
                .collect()
        }
        Selection::Random => {
            let seed = cfg.rng_seed.expect("validated above");
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = cfg.n_examples.min(agent_bank.len());
            let picks = rand::seq::index::sample(&mut rng, agent_bank.len(), n);
            picks.iter().map(|i| &agent_bank.cases()[i]).collect()
        }
    };
    let selected_case_ids: Vec<String> = selected.iter().map(|c| c.id.clone()).collect();
    for id in &selected_case_ids {
        trace.record(&TraceEvent::Selection { step: 1, case_id: id.clone() })?;
    }

    // The bank stores (task, solution) pairs; the example's train.py slot is
    // filled with the current task's scaffold, which shares the same shape.
    let examples: Vec<AdapterExample<'_>> = selected
        .iter()
        .map(|c| AdapterExample {
            task: &c.task_desc,
            scaffold: &task.scaffold,
            solution: &c.body,
        })
        .collect();
    let prompt = render_adapter(&examples, &task.description, &task.scaffold)?;
    let params = LlmParams::new(&ctx.model, cfg.temperature);

    let issue = |prompt: &str, exchanges: &mut Vec<LlmExchange>, trace: &mut TraceWriter| -> Result<String> {
        let exchange = complete(ctx.chat, ExchangeRole::Adapter, prompt, &params, &ctx.prices)?;
        trace.record(&TraceEvent::exchange(1, &exchange))?;
        let response = exchange.response.clone();
        exchanges.push(exchange);
        Ok(response)
    };

    let reply = issue(&prompt, &mut exchanges, &mut trace)?;
    let script = match extract_code(&reply) {
        Ok(code) => Some(code),
        Err(_) => {
            trace.record(&TraceEvent::DegradedParse {
                step: 1,
                role: ExchangeRole::Adapter,
                reason: "no python code block".into(),
            })?;
            let retry = issue(&prompt, &mut exchanges, &mut trace)?;
            extract_code(&retry).ok()
        }
    };

    let result = match &script {
        Some(code) => {
            let policy = ctx.sandbox.policy_for(&task.dir);
            let mut r = executor::run_script(code, &policy)?;
            r.metric = extract_metric(&r.stdout, &metric_pattern);
            trace.record(&TraceEvent::Execution {
                step: 1,
                attempt: 0,
                exit_code: r.exit_code,
                timed_out: r.timed_out,
                stdout: r.stdout.clone(),
                stderr: r.stderr.clone(),
                metric: r.metric,
            })?;
            r
        }
        None => {
            let r = ExecutionResult::synthetic_failure(
                "adapter reply contained no python code block after re-prompt",
            );
            trace.record(&TraceEvent::Execution {
                step: 1,
                attempt: 0,
                exit_code: r.exit_code,
                timed_out: false,
                stdout: String::new(),
                stderr: r.stderr.clone(),
                metric: None,
            })?;
            r
        }
    };

    let one_pass = !detect_error(&result);
    trace.record(&TraceEvent::RunEnd {
        success: one_pass,
        best_metric: result.metric,
        total_cost: total_cost(&exchanges),
        chat_exchanges: exchanges.len(),
        embed_exchanges,
    })?;

    let script = script.unwrap_or_default();
    let report = DeployReport {
        task_id: task.id.clone(),
        selected_case_ids,
        script: script.clone(),
        result,
        one_pass,
        total_cost: total_cost(&exchanges),
        exchanges,
        embed_exchanges,
    };
    persist_report(&ctx.run_dir, &report);
    ctx.progress(&format!(
        "deploy {}: one_pass={} metric={} cases=[{}]",
        task.id,
        if report.one_pass { "yes" } else { "no" },
        report.result.metric.map(|m| m.to_string()).unwrap_or_else(|| "none".into()),
        report.selected_case_ids.join(", "),
    ));
    Ok(report)
}

fn persist_report(run_dir: &Path, report: &DeployReport) {
    let write = || -> std::io::Result<()> {
        std::fs::write(run_dir.join("script.py"), &report.script)?;
        std::fs::write(run_dir.join("stdout.txt"), &report.result.stdout)?;
        std::fs::write(run_dir.join("stderr.txt"), &report.result.stderr)?;
        std::fs::write(run_dir.join("result.json"), serde_json::to_vec_pretty(&report.result)?)?;
        std::fs::write(run_dir.join("deploy_report.json"), serde_json::to_vec_pretty(report)?)?;
        Ok(())
    };
    let _ = write();
}

/// Per-task line of the batch summary file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeploySummaryEntry {
    pub task_id: String,
    pub one_pass: bool,
    pub metric: Option<f64>,
    pub cost: Money,
    pub selected_case_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeploySummary {
    pub one_pass_rate: f64,
    pub tasks: Vec<DeploySummaryEntry>,
}

/// Deploy a batch of tasks; individual failures are recorded, not fatal.
/// Writes `deploy_summary.json` into the batch run directory.
pub fn batch_deploy(
    tasks: &[TaskSpec],
    agent_bank: &CaseBank,
    cfg: &DeployConfig,
    ctx: &RunContext<'_>,
) -> Result<DeploySummary> {
    if tasks.is_empty() {
        return Err(Error::Config("batch_deploy requires at least one task".into()));
    }
    let mut entries = Vec::with_capacity(tasks.len());
    let mut passes = 0usize;
    for task in tasks {
        let task_ctx = RunContext {
            chat: ctx.chat,
            embedder: ctx.embedder,
            model: ctx.model.clone(),
            prices: ctx.prices,
            sandbox: ctx.sandbox.clone(),
            run_dir: ctx.run_dir.join(&task.id),
            progress: ctx.progress,
            scorer: ctx.scorer,
        };
        match run_deployment(task, agent_bank, cfg, &task_ctx) {
            Ok(report) => {
                if report.one_pass {
                    passes += 1;
                }
                entries.push(DeploySummaryEntry {
                    task_id: report.task_id.clone(),
                    one_pass: report.one_pass,
                    metric: report.result.metric,
                    cost: report.total_cost,
                    selected_case_ids: report.selected_case_ids.clone(),
                    error: None,
                });
            }
            Err(e) => {
                ctx.progress(&format!("deploy {}: error: {e}", task.id));
                entries.push(DeploySummaryEntry {
                    task_id: task.id.clone(),
                    one_pass: false,
                    metric: None,
                    cost: Money::ZERO,
                    selected_case_ids: Vec::new(),
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let summary =
        DeploySummary { one_pass_rate: passes as f64 / tasks.len() as f64, tasks: entries };
    std::fs::create_dir_all(&ctx.run_dir)?;
    std::fs::write(
        ctx.run_dir.join("deploy_summary.json"),
        serde_json::to_vec_pretty(&summary).map_err(std::io::Error::other)?,
    )?;
    Ok(summary)
}
