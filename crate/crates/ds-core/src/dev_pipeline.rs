//! The development-stage controller: retrieve once, then iterate
//! rerank → plan → program → execute (with bounded debugging) → log →
//! retain over a fixed number of steps, feeding each step's execution
//! feedback into the next.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::case_bank::{self, CaseBank};
use crate::error::{Error, ErrorClass, Result};
use crate::executor::{
    self, detect_error, extract_metric, ExecutionResult, MetricPattern, SandboxSettings,
};
use crate::llm_gateway::{
    complete, total_cost, ChatProvider, ExchangeRole, LlmExchange, LlmParams, Money, PriceTable,
};
use crate::prompt_kit::{
    append_log, code_diff, parse_decision, parse_permutation, render_debugger, render_logger,
    render_planner, render_planner_no_case, render_programmer, render_revise_rank, Plan,
    RankPermutation,
};
use crate::retrieval::{top_k, Embedder, ScoredCase};
use crate::task::{MetricDirection, TaskSpec};
use crate::trace::{TraceEvent, TraceWriter, TRACE_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevMode {
    Full,
    NoReviseRank,
    NoCbr,
}

impl fmt::Display for DevMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DevMode::Full => write!(f, "full"),
            DevMode::NoReviseRank => write!(f, "no_reviserank"),
            DevMode::NoCbr => write!(f, "no_cbr"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DevConfig {
    /// Cases retrieved before the loop.
    pub k: usize,
    /// Loop iterations (T).
    pub iterations: usize,
    /// Per-iteration budget for debugger rounds; extraction re-prompts draw
    /// from the same budget, which caps every iteration at
    /// rerank + plan + program + N + log exchanges.
    pub max_debug: usize,
    pub temperature: f64,
    pub mode: DevMode,
    pub metric_direction: MetricDirection,
}

impl Default for DevConfig {
    fn default() -> Self {
        DevConfig {
            k: 5,
            iterations: 5,
            max_debug: 5,
            temperature: 0.5,
            mode: DevMode::Full,
            metric_direction: MetricDirection::LowerBetter,
        }
    }
}

impl DevConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Config(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        Ok(())
    }
}

/// Providers and run-scoped environment shared by both pipelines.
pub struct RunContext<'a> {
    pub chat: &'a dyn ChatProvider,
    pub embedder: &'a dyn Embedder,
    pub model: String,
    pub prices: PriceTable,
    pub sandbox: SandboxSettings,
    pub run_dir: PathBuf,
    pub progress: Option<&'a dyn Fn(&str)>,
    /// Optional external scorer consulted after each execution, for setups
    /// where a held-out evaluator exists beyond the metric the script
    /// prints. Its value replaces the extracted one.
    pub scorer: Option<&'a (dyn Fn(&ExecutionResult) -> Option<f64> + Sync)>,
}

impl<'a> RunContext<'a> {
    pub fn progress(&self, line: &str) {
        if let Some(f) = self.progress {
            f(line);
        }
    }
}

/// One loop step: what was ranked, selected, planned, generated, observed,
/// logged, and whether the script was retained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub step: usize,
    pub permutation: Option<RankPermutation>,
    pub selected_case_id: Option<String>,
    pub plan: Plan,
    pub script: String,
    pub debug_attempts: usize,
    pub result: ExecutionResult,
    pub log_after: String,
    pub retained: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DevRunReport {
    pub task_id: String,
    pub mode: DevMode,
    pub records: Vec<IterationRecord>,
    pub best_metric: Option<f64>,
    pub best_script: Option<String>,
    /// At least one step executed without error.
    pub success: bool,
    pub exchanges: Vec<LlmExchange>,
    pub embed_exchanges: usize,
    pub total_cost: Money,
}

impl DevRunReport {
    pub fn chat_exchanges(&self) -> usize {
        self.exchanges.len()
    }

    pub fn rerank_exchanges(&self) -> usize {
        self.exchanges.iter().filter(|e| e.role == ExchangeRole::Rerank).count()
    }
}

/// Pick the case to reuse this iteration from the retrieved list.
pub fn select_case<'s>(
    scored: &'s [ScoredCase],
    permutation: &RankPermutation,
    mode: DevMode,
) -> Result<&'s ScoredCase> {
    match mode {
        DevMode::Full => {
            let idx = permutation.top();
            scored.get(idx - 1).ok_or_else(|| {
                Error::Config(format!("permutation names case {idx} of {}", scored.len()))
            })
        }
        DevMode::NoReviseRank => Ok(&scored[0]),
        DevMode::NoCbr => Err(Error::Config("no case is selected in no_cbr mode".into())),
    }
}

struct DevRun<'a, 'b> {
    task: &'a TaskSpec,
    cfg: &'a DevConfig,
    ctx: &'a RunContext<'b>,
    params: LlmParams,
    metric_pattern: MetricPattern,
    trace: TraceWriter,
    exchanges: Vec<LlmExchange>,
    embed_exchanges: usize,
}

impl<'a, 'b> DevRun<'a, 'b> {
    fn chat(&mut self, step: usize, role: ExchangeRole, prompt: &str) -> Result<String> {
        let exchange = complete(self.ctx.chat, role, prompt, &self.params, &self.ctx.prices)?;
        self.trace.record(&TraceEvent::exchange(step, &exchange))?;
        if exchange.truncated {
            self.ctx.progress(&format!("warning: {role} response truncated by token limit"));
        }
        let response = exchange.response.clone();
        self.exchanges.push(exchange);
        Ok(response)
    }

    fn embed(&mut self, purpose: &str, text: &str) -> Result<crate::retrieval::Embedding> {
        let embedding = self.ctx.embedder.embed(text)?;
        self.embed_exchanges += 1;
        self.trace.record(&TraceEvent::Embed { purpose: purpose.into(), dim: embedding.dim() })?;
        Ok(embedding)
    }

    fn execute(&mut self, step: usize, attempt: usize, script: &str) -> Result<ExecutionResult> {
        let policy = self.ctx.sandbox.policy_for(&self.task.dir);
        let mut result = executor::run_script(script, &policy)?;
        result.metric = match self.ctx.scorer {
            Some(scorer) => scorer(&result),
            None => extract_metric(&result.stdout, &self.metric_pattern),
        };
        self.trace.record(&TraceEvent::Execution {
            step,
            attempt,
            exit_code: result.exit_code,
            timed_out: result.timed_out,
            stdout: result.stdout.clone(),
            stderr: result.stderr.clone(),
            metric: result.metric,
        })?;
        Ok(result)
    }

    fn write_step_artifacts(&self, step: usize, plan: &Plan, script: &str, result: &ExecutionResult) {
        let dir = self.ctx.run_dir.join(format!("step_{step}"));
        let write = || -> std::io::Result<()> {
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("plan.md"), &plan.decision)?;
            std::fs::write(dir.join("script.py"), script)?;
            std::fs::write(dir.join("stdout.txt"), &result.stdout)?;
            std::fs::write(dir.join("stderr.txt"), &result.stderr)?;
            std::fs::write(dir.join("result.json"), serde_json::to_vec_pretty(result)?)?;
            Ok(())
        };
        if let Err(e) = write() {
            self.ctx.progress(&format!("warning: failed to write step artifacts: {e}"));
        }
    }
}

/// Run the full development loop for one task. Returns after exactly
/// `iterations` records unless a hard provider failure aborts the run, in
/// which case the partial report is persisted before the error propagates.
pub fn run_development(
    task: &TaskSpec,
    insight_bank: &mut CaseBank,
    agent_bank: &mut CaseBank,
    cfg: &DevConfig,
    ctx: &RunContext<'_>,
) -> Result<DevRunReport> {
    cfg.validate()?;
    if cfg.mode != DevMode::NoCbr && insight_bank.is_empty() {
        return Err(Error::Config(format!(
            "mode {} requires a non-empty insight bank",
            cfg.mode
        )));
    }
    let metric_pattern = MetricPattern::new(&task.metric.pattern, task.metric.direction)?;
    std::fs::create_dir_all(&ctx.run_dir)?;
    let trace = TraceWriter::create(&ctx.run_dir.join(TRACE_FILE))?;

    let mut run = DevRun {
        task,
        cfg,
        ctx,
        params: LlmParams::new(&ctx.model, cfg.temperature),
        metric_pattern,
        trace,
        exchanges: Vec::new(),
        embed_exchanges: 0,
    };
    run.trace.record(&TraceEvent::RunStart {
        task_id: task.id.clone(),
        stage: "development".into(),
        mode: cfg.mode.to_string(),
        k: cfg.k,
        iterations: cfg.iterations,
        max_debug: cfg.max_debug,
    })?;

    // Baseline: the scaffold must run clean before any model call.
    let baseline = run.execute(0, 0, &task.scaffold)?;
    if detect_error(&baseline) {
        return Err(Error::ScaffoldBaseline(format!(
            "exit code {}, stderr: {}",
            baseline.exit_code,
            baseline.stderr.lines().last().unwrap_or("")
        )));
    }

    // Retrieve once before the loop; reranking happens inside it.
    let scored: Vec<ScoredCase> = if cfg.mode == DevMode::NoCbr {
        Vec::new()
    } else {
        let query = run.embed("retrieval_query", &task.description)?;
        top_k(&query, insight_bank, cfg.k)?
    };
    let case_bodies: Vec<String> = scored
        .iter()
        .map(|s| insight_bank.get(&s.case_id).expect("retrieved id exists").body.clone())
        .collect();

    let mut records: Vec<IterationRecord> = Vec::new();
    let mut log = String::new();
    let mut last_script = task.scaffold.clone();
    let mut best_metric: Option<f64> = None;
    let mut best_script: Option<String> = None;

    let loop_result = (|| -> Result<()> {
        for step in 1..=cfg.iterations {
            let record = run_iteration(
                &mut run,
                step,
                &scored,
                &case_bodies,
                insight_bank,
                agent_bank,
                &mut log,
                &mut last_script,
                &mut best_metric,
                &mut best_script,
            )?;
            ctx.progress(&format!(
                "step {}/{} case={} debug={} metric={} retained={}",
                step,
                cfg.iterations,
                record.selected_case_id.as_deref().unwrap_or("none"),
                record.debug_attempts,
                record
                    .result
                    .metric
                    .map(|m| m.to_string())
                    .unwrap_or_else(|| "none".to_string()),
                if record.retained { "yes" } else { "no" },
            ));
            records.push(record);
        }
        Ok(())
    })();

    let success = records.iter().any(|r| !detect_error(&r.result));
    run.trace.record(&TraceEvent::RunEnd {
        success,
        best_metric,
        total_cost: total_cost(&run.exchanges),
        chat_exchanges: run.exchanges.len(),
        embed_exchanges: run.embed_exchanges,
    })?;
    let report = DevRunReport {
        task_id: task.id.clone(),
        mode: cfg.mode,
        records,
        best_metric,
        best_script,
        success,
        total_cost: total_cost(&run.exchanges),
        exchanges: run.exchanges,
        embed_exchanges: run.embed_exchanges,
    };
    persist_report(&ctx.run_dir, &report);
    match loop_result {
        Ok(()) => Ok(report),
        // Provider failures abort with the partial report already on disk.
        Err(e) => Err(e),
    }
}

fn persist_report(run_dir: &Path, report: &DevRunReport) {
    if let Ok(json) = serde_json::to_vec_pretty(report) {
        let _ = std::fs::write(run_dir.join("report.json"), json);
    }
}

#[allow(clippy::too_many_arguments)]
fn run_iteration(
    run: &mut DevRun<'_, '_>,
    step: usize,
    scored: &[ScoredCase],
    case_bodies: &[String],
    insight_bank: &mut CaseBank,
    agent_bank: &mut CaseBank,
    log: &mut String,
    last_script: &mut String,
    best_metric: &mut Option<f64>,
    best_script: &mut Option<String>,
) -> Result<IterationRecord> {
    let cfg = run.cfg;
    let task = run.task;

    // ReviseRank (or its ablations).
    let (permutation, selected_case_id, selected_body) = match cfg.mode {
        DevMode::Full => {
            let refs: Vec<&str> = case_bodies.iter().map(String::as_str).collect();
            let prompt = render_revise_rank(&task.description, log, &refs)?;
            let reply = run.chat(step, ExchangeRole::Rerank, &prompt)?;
            let perm = parse_permutation(&reply, scored.len());
            run.trace.record(&TraceEvent::Permutation {
                step,
                order: perm.order.clone(),
                source: "revise_rank".into(),
            })?;
            let chosen = select_case(scored, &perm, cfg.mode)?;
            (Some(perm.clone()), Some(chosen.case_id.clone()), Some(case_bodies[perm.top() - 1].clone()))
        }
        DevMode::NoReviseRank => {
            let perm = RankPermutation::identity(scored.len());
            run.trace.record(&TraceEvent::Permutation {
                step,
                order: perm.order.clone(),
                source: "similarity".into(),
            })?;
            let chosen = select_case(scored, &perm, cfg.mode)?;
            (Some(perm), Some(chosen.case_id.clone()), Some(case_bodies[0].clone()))
        }
        DevMode::NoCbr => (None, None, None),
    };
    if let Some(id) = &selected_case_id {
        run.trace.record(&TraceEvent::Selection { step, case_id: id.clone() })?;
    }

    // Plan.
    let planner_prompt = match &selected_body {
        Some(case) => render_planner(&task.description, log, last_script, case)?,
        None => render_planner_no_case(&task.description, log, last_script)?,
    };
    let planner_reply = run.chat(step, ExchangeRole::Planner, &planner_prompt)?;
    let plan = match parse_decision(&planner_reply) {
        Ok(plan) => plan,
        Err(_) => {
            run.trace.record(&TraceEvent::DegradedParse {
                step,
                role: ExchangeRole::Planner,
                reason: "missing [Decision] marker; using whole reply".into(),
            })?;
            Plan {
                decision: planner_reply.trim().to_string(),
                full_response: planner_reply.clone(),
            }
        }
    };

    // Program, execute, debug. Extraction re-prompts share the debug budget
    // so the iteration never exceeds rerank + plan + program + N + log calls.
    let mut budget = cfg.max_debug;
    let mut debug_attempts = 0usize;
    let mut script: Option<String> = None;
    let mut iteration_failed_reason: Option<&str> = None;

    let programmer_prompt = render_programmer(last_script, &plan.decision)?;
    let reply = run.chat(step, ExchangeRole::Programmer, &programmer_prompt)?;
    match crate::prompt_kit::extract_code(&reply) {
        Ok(code) => script = Some(code),
        Err(_) => {
            run.trace.record(&TraceEvent::DegradedParse {
                step,
                role: ExchangeRole::Programmer,
                reason: "no python code block".into(),
            })?;
            if budget > 0 {
                budget -= 1;
                let retry = run.chat(step, ExchangeRole::Programmer, &programmer_prompt)?;
                if let Ok(code) = crate::prompt_kit::extract_code(&retry) {
                    script = Some(code);
                } else {
                    iteration_failed_reason = Some("programmer reply contained no python code block after re-prompt");
                }
            } else {
                iteration_failed_reason = Some("programmer reply contained no python code block");
            }
        }
    }

    let mut result = match &script {
        Some(code) => run.execute(step, 0, code)?,
        None => {
            let r = ExecutionResult::synthetic_failure(
                iteration_failed_reason.unwrap_or("no script produced"),
            );
            run.trace.record(&TraceEvent::Execution {
                step,
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

    while script.is_some() && detect_error(&result) && budget > 0 {
        budget -= 1;
        debug_attempts += 1;
        let current = script.as_deref().expect("script present in debug loop");
        let debugger_prompt =
            render_debugger(last_script, &plan.decision, current, &result.render_log())?;
        let reply = run.chat(step, ExchangeRole::Debugger, &debugger_prompt)?;
        let fixed = match crate::prompt_kit::extract_code(&reply) {
            Ok(code) => Some(code),
            Err(_) => {
                run.trace.record(&TraceEvent::DegradedParse {
                    step,
                    role: ExchangeRole::Debugger,
                    reason: "no python code block".into(),
                })?;
                if budget > 0 {
                    budget -= 1;
                    let retry = run.chat(step, ExchangeRole::Debugger, &debugger_prompt)?;
                    crate::prompt_kit::extract_code(&retry).ok()
                } else {
                    None
                }
            }
        };
        match fixed {
            Some(code) => {
                result = run.execute(step, debug_attempts, &code)?;
                script = Some(code);
            }
            None => {
                result = ExecutionResult::synthetic_failure(
                    "debugger reply contained no python code block after re-prompt",
                );
                break;
            }
        }
    }

    let final_script = script.clone().unwrap_or_else(|| last_script.clone());

    // Log: the diff slot is empty when the script never changed.
    let diff = code_diff(last_script, &final_script);
    let exec_log = result.render_log();
    let logger_prompt = render_logger(&plan.decision, &exec_log, &diff, log)?;
    let new_log = match run.chat(step, ExchangeRole::Logger, &logger_prompt) {
        Ok(reply) => append_log(log, &reply),
        Err(e) if e.class() == ErrorClass::Provider => {
            // Logger failures are non-fatal; keep the loop fed with a
            // mechanical summary.
            run.trace.record(&TraceEvent::DegradedParse {
                step,
                role: ExchangeRole::Logger,
                reason: format!("logger exchange failed ({e}); mechanical summary"),
            })?;
            let summary = format!(
                "[Experiment Summary]: {}\n[Experiment Result]: exit code {}; metric {}",
                plan.decision,
                result.exit_code,
                result.metric.map(|m| m.to_string()).unwrap_or_else(|| "none".into()),
            );
            append_log(log, &summary)
        }
        Err(e) => return Err(e),
    };
    *log = new_log;

    // Retain on strict improvement of an error-free metric.
    let mut retained = false;
    let mut retain_ids: (Option<String>, Option<String>) = (None, None);
    if !detect_error(&result) {
        if let Some(metric) = result.metric {
            if cfg.metric_direction.improved(metric, *best_metric) {
                // retain() embeds the task description itself; count it.
                let (ins_id, ag_id) = case_bank::retain(
                    insight_bank,
                    agent_bank,
                    &task.description,
                    &final_script,
                    task.modality,
                    run.ctx.embedder,
                )?;
                run.embed_exchanges += 1;
                run.trace.record(&TraceEvent::Embed {
                    purpose: "retain".into(),
                    dim: insight_bank.dim().unwrap_or(0),
                })?;
                *best_metric = Some(metric);
                *best_script = Some(final_script.clone());
                retained = true;
                retain_ids = (Some(ins_id), Some(ag_id));
            }
        }
    }
    run.trace.record(&TraceEvent::Retain {
        step,
        retained,
        metric: result.metric,
        best_metric: *best_metric,
        insight_case_id: retain_ids.0.clone(),
        agent_case_id: retain_ids.1.clone(),
    })?;

    run.write_step_artifacts(step, &plan, &final_script, &result);
    if script.is_some() {
        *last_script = final_script.clone();
    }

    Ok(IterationRecord {
        step,
        permutation,
        selected_case_id,
        plan,
        script: final_script,
        debug_attempts,
        result,
        log_after: log.clone(),
        retained,
    })
}
