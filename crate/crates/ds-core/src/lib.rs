//! Core library for a case-based-reasoning data science agent.
//!
//! The development pipeline drives an LLM through retrieve → rerank → reuse
//! → execute → log → retain over a fixed number of iterations, learning
//! from execution feedback and archiving improved solutions into case
//! banks. The deployment pipeline adapts the single most similar past
//! solution to a new task in one completion call.

pub mod case_bank;
pub mod config;
pub mod deploy_pipeline;
pub mod dev_pipeline;
pub mod error;
pub mod executor;
pub mod llm_gateway;
pub mod prompt_kit;
pub mod retrieval;
pub mod task;
pub mod trace;

pub use error::{Error, ErrorClass, Result};
