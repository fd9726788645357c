//! `ds develop`: the iterative development loop on one task.

use std::path::{Path, PathBuf};

use ds_core::case_bank::CaseBank;
use ds_core::config::AppConfig;
use ds_core::dev_pipeline::{run_development, DevConfig, DevMode, RunContext};
use ds_core::error::{Error, Result};

use crate::providers;

pub fn run(
    config: &AppConfig,
    task_dir: &Path,
    mode: &str,
    record: Option<PathBuf>,
    replay: Option<PathBuf>,
    run_id: Option<String>,
    runs_dir: &Path,
) -> Result<i32> {
    let mode = parse_mode(mode)?;
    let task = ds_core::task::TaskSpec::load(task_dir)?;
    let mut insight = CaseBank::load_or_create(&providers::bank_path(config, "insight"))?;
    let mut agent = CaseBank::load_or_create(&providers::bank_path(config, "agent"))?;

    let chat = providers::chat_provider(config, record, replay)?;
    let embedder = providers::embedder(config);
    let run_id = providers::run_id_or_default(run_id);
    let run_dir = runs_dir.join(&run_id);

    let dev_cfg = DevConfig {
        k: config.pipeline.k,
        iterations: config.pipeline.iterations,
        max_debug: config.pipeline.max_debug_attempts,
        temperature: config.temperatures.development,
        mode,
        metric_direction: task.metric.direction,
    };
    if mode == DevMode::NoCbr {
        providers::progress("cases: none");
    }
    let progress = providers::progress;
    let ctx = RunContext {
        chat: chat.as_ref(),
        embedder: embedder.as_ref(),
        model: config.provider.chat_model.clone(),
        prices: config.price_table()?,
        sandbox: providers::sandbox_settings(config),
        run_dir: run_dir.clone(),
        progress: Some(&progress),
        scorer: None,
    };

    let report = run_development(&task, &mut insight, &mut agent, &dev_cfg, &ctx)?;
    providers::progress(&format!(
        "development finished: success={} best_metric={} cost={} report={}",
        report.success,
        report.best_metric.map(|m| m.to_string()).unwrap_or_else(|| "none".into()),
        report.total_cost,
        run_dir.join("report.json").display(),
    ));
    println!("{}", run_dir.join("report.json").display());
    Ok(if report.success { 0 } else { 1 })
}

fn parse_mode(mode: &str) -> Result<DevMode> {
    match mode {
        "full" => Ok(DevMode::Full),
        "no-reviserank" | "no_reviserank" => Ok(DevMode::NoReviseRank),
        "no-cbr" | "no_cbr" => Ok(DevMode::NoCbr),
        other => Err(Error::Config(format!(
            "unknown mode `{other}` (expected full, no-reviserank, or no-cbr)"
        ))),
    }
}
