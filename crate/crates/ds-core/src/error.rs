//! Crate-wide error type and exit-code classification.

use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Broad failure class used by the CLI to pick a stable exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad configuration, task layout, or precondition — exit 2.
    Config,
    /// The task itself failed (script never ran clean, no one-pass) — exit 1.
    Task,
    /// Embedding or chat provider failure — exit 3.
    Provider,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Task => 1,
            ErrorClass::Config => 2,
            ErrorClass::Provider => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    // -- case bank --
    #[error("embedding dimension mismatch: bank has {expected}, case has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate case id `{0}`")]
    DuplicateId(String),
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error("{path}: parse error at line {line}: {msg}")]
    BankParse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("bank i/o on {path}: {source}")]
    BankIo {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    // -- retrieval --
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding has zero norm")]
    ZeroVector,
    #[error("embedding contains non-finite values")]
    NonFiniteEmbedding,
    #[error("bank is empty")]
    EmptyBank,
    #[error("wrong bank: {0}")]
    WrongBank(String),
    #[error("embedding dimension drift: provider returned {got}, previously {expected}")]
    DimensionDrift { expected: usize, got: usize },

    // -- llm gateway --
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("transport failure after {attempts} attempt(s): {msg}")]
    Transport { attempts: u32, msg: String },
    #[error("provider returned status {status}: {body}")]
    ProviderStatus { status: u16, body: String },
    #[error("provider response malformed: {0}")]
    ProviderResponse(String),
    #[error("replay miss: no cassette entry for fingerprint {fingerprint}")]
    ReplayMiss { fingerprint: String },
    #[error("{path}: cassette parse error at line {line}: {msg}")]
    CassetteParse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("scripted provider exhausted after {0} response(s)")]
    ScriptExhausted(usize),

    // -- prompt kit --
    #[error("template `{template}` slot `{slot}` left unfilled")]
    MissingSlot {
        template: &'static str,
        slot: String,
    },
    #[error("template `{template}` has no slot `{slot}`")]
    UnknownSlot {
        template: &'static str,
        slot: String,
    },
    #[error("reply contains no [Decision] section")]
    DecisionMissing,
    #[error("reply contains no python code block")]
    CodeBlockMissing,
    #[error("empty input for `{0}`")]
    EmptyInput(&'static str),

    // -- executor --
    #[error("workdir does not exist: {0}")]
    WorkdirMissing(PathBuf),
    #[error("workdir is locked by another run: {0}")]
    WorkdirLocked(PathBuf),
    #[error("failed to spawn `{interpreter}`: {source}")]
    Spawn {
        interpreter: String,
        #[source]
        source: io::Error,
    },
    #[error("metric pattern invalid: {0}")]
    MetricPattern(String),

    // -- config / task / pipeline --
    #[error("configuration error: {0}")]
    Config(String),
    #[error("task layout error: {0}")]
    TaskLayout(String),
    #[error("scaffold failed its baseline execution: {0}")]
    ScaffoldBaseline(String),
    #[error("trace i/o on {path}: {source}")]
    TraceIo {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Classify for the CLI exit-code contract (1 task, 2 config, 3 provider).
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Transport { .. }
            | ProviderStatus { .. }
            | ProviderResponse(_)
            | ReplayMiss { .. }
            | ScriptExhausted(_)
            | DimensionDrift { .. } => ErrorClass::Provider,
            DimensionMismatch { .. }
            | DuplicateId(_)
            | InvalidCase(_)
            | BankParse { .. }
            | BankIo { .. }
            | EmptyText
            | ZeroVector
            | NonFiniteEmbedding
            | EmptyBank
            | WrongBank(_)
            | EmptyPrompt
            | CassetteParse { .. }
            | MissingSlot { .. }
            | UnknownSlot { .. }
            | EmptyInput(_)
            | WorkdirMissing(_)
            | WorkdirLocked(_)
            | MetricPattern(_)
            | Config(_)
            | TaskLayout(_)
            | ScaffoldBaseline(_) => ErrorClass::Config,
            DecisionMissing | CodeBlockMissing => ErrorClass::Task,
            Spawn { .. } | TraceIo { .. } | Io(_) => ErrorClass::Task,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
