//! Prompt renderers for the agent roles and parsers for the structured
//! parts of model replies (rank permutations, decision sections, fenced
//! code blocks). Templates are versioned text assets with `{{slot}}`
//! markers; renderers fill every slot or fail.

mod diff;

pub use diff::code_diff;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REVISE_RANK_TEMPLATE: &str = include_str!("../../assets/templates/revise_rank.txt");
pub const PLANNER_TEMPLATE: &str = include_str!("../../assets/templates/planner.txt");
pub const PLANNER_NO_CASE_TEMPLATE: &str =
    include_str!("../../assets/templates/planner_no_case.txt");
pub const PROGRAMMER_TEMPLATE: &str = include_str!("../../assets/templates/programmer.txt");
pub const DEBUGGER_TEMPLATE: &str = include_str!("../../assets/templates/debugger.txt");
pub const LOGGER_TEMPLATE: &str = include_str!("../../assets/templates/logger.txt");
pub const ADAPTER_TEMPLATE: &str = include_str!("../../assets/templates/adapter.txt");
pub const ADAPTER_EXAMPLE_TEMPLATE: &str =
    include_str!("../../assets/templates/adapter_example.txt");
pub const ADAPTER_ZERO_SHOT_TEMPLATE: &str =
    include_str!("../../assets/templates/adapter_zero_shot.txt");
pub const SOLUTION_EXTRACTOR_TEMPLATE: &str =
    include_str!("../../assets/templates/solution_extractor.txt");

/// Fill `{{slot}}` markers in a template. Every marker must have a binding
/// and every binding must be used; slot values are inserted verbatim and
/// never re-scanned.
fn render(name: &'static str, template: &str, slots: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut used = vec![false; slots.len()];
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            return Err(Error::Config(format!("template `{name}` has an unterminated slot")));
        };
        let key = &after[..end];
        match slots.iter().position(|(k, _)| *k == key) {
            Some(i) => {
                out.push_str(slots[i].1);
                used[i] = true;
            }
            None => {
                return Err(Error::MissingSlot { template: name, slot: key.to_string() });
            }
        }
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(Error::UnknownSlot { template: name, slot: slots[i].0.to_string() });
    }
    Ok(out)
}

/// A ranking of the k presented cases, 1-based, as parsed from a reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankPermutation {
    pub order: Vec<usize>,
}

impl RankPermutation {
    pub fn identity(k: usize) -> Self {
        RankPermutation { order: (1..=k).collect() }
    }

    pub fn top(&self) -> usize {
        self.order[0]
    }
}

/// An experiment plan: the final decision section plus the full reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub decision: String,
    pub full_response: String,
}

/// The case-ranking prompt: task, experiment log, and each case under a
/// bracketed identifier, ending with the ranking instruction.
pub fn render_revise_rank(task: &str, experiment_log: &str, cases: &[&str]) -> Result<String> {
    if cases.is_empty() {
        return Err(Error::EmptyInput("cases"));
    }
    let mut block = String::new();
    for (i, case) in cases.iter().enumerate() {
        block.push_str(&format!("[{}] ```\n{}\n```\n", i + 1, case));
    }
    let k = cases.len().to_string();
    render(
        "revise_rank",
        REVISE_RANK_TEMPLATE,
        &[("task", task), ("log", experiment_log), ("cases", &block), ("k", &k)],
    )
}

/// Parse a ranking reply into a total permutation of {1..k}. Identifiers are
/// taken in order of first appearance; duplicates and out-of-range entries
/// are dropped; missing identifiers are appended in ascending order, which
/// preserves the similarity prior the cases were presented in. Any reply at
/// all therefore yields a usable permutation.
pub fn parse_permutation(reply: &str, k: usize) -> RankPermutation {
    let mut order: Vec<usize> = Vec::with_capacity(k);
    let mut rest = reply;
    while let Some(open) = rest.find('[') {
        rest = &rest[open + 1..];
        let Some(close) = rest.find(']') else { break };
        let inner = &rest[..close];
        if let Ok(n) = inner.trim().parse::<usize>() {
            if (1..=k).contains(&n) && !order.contains(&n) {
                order.push(n);
            }
        }
        rest = &rest[close + 1..];
    }
    for n in 1..=k {
        if !order.contains(&n) {
            order.push(n);
        }
    }
    RankPermutation { order }
}

/// The inverse of `parse_permutation` for well-formed rankings.
pub fn format_permutation(perm: &RankPermutation) -> String {
    perm.order.iter().map(|n| format!("[{n}]")).collect::<Vec<_>>().join(" > ")
}

pub fn render_planner(
    task: &str,
    experiment_log: &str,
    last_script: &str,
    case: &str,
) -> Result<String> {
    if case.trim().is_empty() {
        return Err(Error::EmptyInput("case"));
    }
    render(
        "planner",
        PLANNER_TEMPLATE,
        &[("task", task), ("log", experiment_log), ("script", last_script), ("case", case)],
    )
}

/// Planner variant with no case block, used when the run is configured to
/// plan purely from the model's own knowledge.
pub fn render_planner_no_case(
    task: &str,
    experiment_log: &str,
    last_script: &str,
) -> Result<String> {
    render(
        "planner_no_case",
        PLANNER_NO_CASE_TEMPLATE,
        &[("task", task), ("log", experiment_log), ("script", last_script)],
    )
}

/// Extract the decision section: everything after the last `[Decision]`
/// marker, trimmed. Replies without the marker are a parse error; callers
/// fall back to the whole reply and record the degraded parse.
pub fn parse_decision(reply: &str) -> Result<Plan> {
    let marker = "[Decision]";
    let Some(pos) = reply.rfind(marker) else {
        return Err(Error::DecisionMissing);
    };
    let tail = &reply[pos + marker.len()..];
    let decision = tail.strip_prefix(':').unwrap_or(tail).trim();
    if decision.is_empty() {
        return Err(Error::DecisionMissing);
    }
    Ok(Plan { decision: decision.to_string(), full_response: reply.to_string() })
}

pub fn render_programmer(script: &str, plan: &str) -> Result<String> {
    if plan.trim().is_empty() {
        return Err(Error::EmptyInput("plan"));
    }
    render("programmer", PROGRAMMER_TEMPLATE, &[("script", script), ("plan", plan)])
}

pub fn render_debugger(
    original_script: &str,
    plan: &str,
    buggy_script: &str,
    exec_log: &str,
) -> Result<String> {
    if exec_log.trim().is_empty() {
        return Err(Error::EmptyInput("exec_log"));
    }
    render(
        "debugger",
        DEBUGGER_TEMPLATE,
        &[
            ("original_script", original_script),
            ("plan", plan),
            ("buggy_script", buggy_script),
            ("exec_log", exec_log),
        ],
    )
}

/// The contents of the LAST fenced code block opened with a python tag,
/// fence lines excluded, outer whitespace trimmed. A block still open at
/// end of reply is accepted as running to the end.
pub fn extract_code(reply: &str) -> Result<String> {
    let mut last_block: Option<String> = None;
    let mut current: Option<Vec<&str>> = None;
    for line in reply.split('\n') {
        let trimmed = line.trim();
        match &mut current {
            None => {
                if is_python_fence(trimmed) {
                    current = Some(Vec::new());
                }
            }
            Some(lines) => {
                if is_closing_fence(trimmed) {
                    last_block = Some(lines.join("\n"));
                    current = None;
                } else {
                    lines.push(line);
                }
            }
        }
    }
    if let Some(lines) = current {
        last_block = Some(lines.join("\n"));
    }
    match last_block {
        Some(block) => Ok(block.trim().to_string()),
        None => Err(Error::CodeBlockMissing),
    }
}

fn is_python_fence(trimmed: &str) -> bool {
    let ticks = trimmed.chars().take_while(|c| *c == '`').count();
    if ticks < 3 {
        return false;
    }
    let tag = trimmed[ticks..].trim();
    tag.eq_ignore_ascii_case("python") || tag.eq_ignore_ascii_case("python3")
}

fn is_closing_fence(trimmed: &str) -> bool {
    trimmed.len() >= 3 && trimmed.chars().all(|c| c == '`')
}

pub fn render_logger(
    plan: &str,
    exec_log: &str,
    diff: &str,
    running_log: &str,
) -> Result<String> {
    render(
        "logger",
        LOGGER_TEMPLATE,
        &[("plan", plan), ("exec_log", exec_log), ("diff", diff), ("running_log", running_log)],
    )
}

/// Append a logger reply to the running log under a fresh step header. The
/// reply is kept verbatim: the log's only consumer is the next prompt.
pub fn append_log(running_log: &str, reply: &str) -> String {
    let step = running_log
        .lines()
        .filter(|l| {
            l.strip_prefix("======Step ")
                .and_then(|r| r.strip_suffix("======"))
                .is_some_and(|n| n.chars().all(|c| c.is_ascii_digit()) && !n.is_empty())
        })
        .count()
        + 1;
    let header = format!("======Step {step}======");
    if running_log.is_empty() {
        format!("{header}\n\n{reply}")
    } else {
        format!("{running_log}\n\n{header}\n\n{reply}")
    }
}

/// One example (task, scaffold, solution) triple for the adapter prompt.
#[derive(Debug, Clone)]
pub struct AdapterExample<'a> {
    pub task: &'a str,
    pub scaffold: &'a str,
    pub solution: &'a str,
}

/// The deployment adaptation prompt: zero or more example case pairs in
/// retrieval order, then the target task. With no examples the preamble is
/// omitted entirely.
pub fn render_adapter(
    examples: &[AdapterExample<'_>],
    task: &str,
    scaffold: &str,
) -> Result<String> {
    if task.trim().is_empty() || scaffold.trim().is_empty() {
        return Err(Error::EmptyInput("task/scaffold"));
    }
    if examples.is_empty() {
        return render(
            "adapter_zero_shot",
            ADAPTER_ZERO_SHOT_TEMPLATE,
            &[("task", task), ("scaffold", scaffold)],
        );
    }
    let mut block = String::new();
    for ex in examples {
        if ex.task.trim().is_empty() || ex.scaffold.trim().is_empty() || ex.solution.trim().is_empty()
        {
            return Err(Error::EmptyInput("adapter example"));
        }
        block.push_str(&render(
            "adapter_example",
            ADAPTER_EXAMPLE_TEMPLATE,
            &[
                ("example_task", ex.task),
                ("example_scaffold", ex.scaffold),
                ("example_solution", ex.solution),
            ],
        )?);
    }
    render(
        "adapter",
        ADAPTER_TEMPLATE,
        &[("examples", &block), ("task", task), ("scaffold", scaffold)],
    )
}

/// The code-summarization prompt: six questions, then the code in a fenced
/// block. The fence grows past any backtick run inside the code so the
/// block always survives re-parsing.
pub fn render_solution_extractor(code: &str) -> Result<String> {
    if code.trim().is_empty() {
        return Err(Error::EmptyInput("code"));
    }
    let longest_run = code
        .split('\n')
        .map(|l| {
            let t = l.trim_start();
            t.chars().take_while(|c| *c == '`').count()
        })
        .max()
        .unwrap_or(0);
    let fence = "`".repeat(longest_run.max(2) + 1);
    let block = format!("{fence}python\n{code}\n{fence}");
    render("solution_extractor", SOLUTION_EXTRACTOR_TEMPLATE, &[("code_block", &block)])
}
