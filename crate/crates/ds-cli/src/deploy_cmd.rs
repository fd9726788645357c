//! `ds deploy`: single-call adaptation of past solutions, singly or batched.

use std::path::{Path, PathBuf};

use ds_core::case_bank::CaseBank;
use ds_core::config::AppConfig;
use ds_core::deploy_pipeline::{batch_deploy, DeployConfig, Selection};
use ds_core::dev_pipeline::RunContext;
use ds_core::error::{Error, Result};
use ds_core::task::TaskSpec;

use crate::providers;

#[allow(clippy::too_many_arguments)]
pub fn run(
    config: &AppConfig,
    task_dirs: &[PathBuf],
    examples: usize,
    random: bool,
    zero_shot: bool,
    seed: Option<u64>,
    bank: &str,
    record: Option<PathBuf>,
    replay: Option<PathBuf>,
    run_id: Option<String>,
    runs_dir: &Path,
) -> Result<i32> {
    let selection = if zero_shot {
        Selection::None
    } else if random {
        Selection::Random
    } else {
        Selection::Retrieved
    };
    let deploy_cfg = DeployConfig {
        n_examples: if zero_shot { 0 } else { examples },
        selection,
        temperature: config.temperatures.deployment,
        rng_seed: seed,
    };
    deploy_cfg.validate()?;

    let agent_bank = CaseBank::load(&providers::bank_path(config, bank))?;
    let tasks: Vec<TaskSpec> = task_dirs.iter().map(|d| TaskSpec::load(d)).collect::<Result<_>>()?;
    if tasks.is_empty() {
        return Err(Error::Config("deploy requires at least one task directory".into()));
    }

    let chat = providers::chat_provider(config, record, replay)?;
    let embedder = providers::embedder(config);
    let run_id = providers::run_id_or_default(run_id);
    let run_dir = runs_dir.join(&run_id);
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

    let summary = batch_deploy(&tasks, &agent_bank, &deploy_cfg, &ctx)?;
    providers::progress(&format!(
        "deployment finished: one_pass_rate={} summary={}",
        summary.one_pass_rate,
        run_dir.join("deploy_summary.json").display(),
    ));
    println!("{}", run_dir.join("deploy_summary.json").display());
    Ok(if summary.one_pass_rate == 1.0 { 0 } else { 1 })
}
