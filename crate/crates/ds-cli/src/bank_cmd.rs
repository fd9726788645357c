//! `ds bank`: inspection of case banks.

use ds_core::case_bank::{CaseBank, CaseKind};
use ds_core::config::AppConfig;
use ds_core::error::{Error, Result};

use crate::providers;

pub fn ls(config: &AppConfig, bank: &str) -> Result<i32> {
    let bank = CaseBank::load(&providers::bank_path(config, bank))?;
    println!("{:<20} {:<9} {:<12}", "ID", "KIND", "MODALITY");
    for case in bank.cases() {
        println!("{:<20} {:<9} {:<12}", case.id, case.kind, case.modality);
    }
    Ok(0)
}

pub fn show(config: &AppConfig, bank: &str, id: &str) -> Result<i32> {
    let bank = CaseBank::load(&providers::bank_path(config, bank))?;
    let case = bank
        .get(id)
        .ok_or_else(|| Error::Config(format!("case `{id}` not found in bank")))?;
    println!("id:        {}", case.id);
    println!("kind:      {}", case.kind);
    println!("modality:  {}", case.modality);
    println!("source:    {}", case.source);
    println!("embedding: {} dims", case.embedding.len());
    if !case.task_desc.is_empty() {
        println!("task_desc:\n{}", case.task_desc);
    }
    println!("body:\n{}", case.body);
    Ok(0)
}

pub fn stats(config: &AppConfig, bank: &str) -> Result<i32> {
    let bank = CaseBank::load(&providers::bank_path(config, bank))?;
    let insights = bank.cases().iter().filter(|c| c.kind == CaseKind::Insight).count();
    let solutions = bank.cases().iter().filter(|c| c.kind == CaseKind::Solution).count();
    println!("cases:     {}", bank.len());
    println!("insight:   {insights}");
    println!("solution:  {solutions}");
    println!(
        "dim:       {}",
        bank.dim().map(|d| d.to_string()).unwrap_or_else(|| "undetermined".into())
    );
    Ok(0)
}
