use std::fmt;
use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::codec::CodecError;
use crate::graph::{TaskId, TaskState};
use crate::value::Value;

/// Failure raised by a task function. Carries only a message so it can cross
/// the worker control channel unchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskError {
    message: String,
}

impl TaskError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }

    pub(crate) fn type_mismatch(expected: &str, got: &Value) -> Self {
        Self::new(format!("expected {expected} argument, got {}", got.kind()))
    }

    pub fn message(&self) -> &str {
        &self.message
    }
}

impl fmt::Display for TaskError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for TaskError {}

impl From<CodecError> for TaskError {
    fn from(e: CodecError) -> Self {
        TaskError::new(format!("decode error: {e}"))
    }
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("scratch directory {path} is not writable: {source}")]
    ScratchUnwritable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("failed to spawn workers{}: {reason}", node.map(|n| format!(" on virtual node {n}")).unwrap_or_default())]
    WorkerSpawnFailure { node: Option<usize>, reason: String },

    #[error("task function `{0}` is already registered")]
    DuplicateRegistration(String),

    #[error("no task function named `{0}` is available to this session")]
    UnknownFunction(String),

    #[error("`{function_id}` takes {expected} argument(s), got {got}")]
    ArityMismatch {
        function_id: String,
        expected: usize,
        got: usize,
    },

    #[error("runtime session is not active")]
    SessionStopped,

    #[error("task {task_id} failed: {}", chain.join(" <- "))]
    TaskFailed { task_id: TaskId, chain: Vec<String> },

    #[error("unknown data handle: {0}")]
    UnknownHandle(String),

    #[error("task {task_id}: illegal transition {from:?} -> {to:?}")]
    IllegalTransition {
        task_id: TaskId,
        from: TaskState,
        to: TaskState,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Algorithm(#[from] crate::algorithms::AlgoError),

    /// A task returned a value of the wrong kind.
    #[error("unexpected task result: {0}")]
    UnexpectedResult(String),

    #[error(transparent)]
    Codec(#[from] CodecError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = RuntimeError> = std::result::Result<T, E>;
