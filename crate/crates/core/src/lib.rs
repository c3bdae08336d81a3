//! Task-based dataflow runtime.
//!
//! Application code registers ordinary functions as tasks and calls them
//! through a [`RuntimeSession`]. Each call returns a [`FutureHandle`] at once;
//! passing handles into later calls builds a task graph whose edges are the
//! data dependencies, and the scheduler runs ready tasks on a pool of threads
//! or persistent worker processes.

pub mod algorithms;
pub mod catalog;
pub mod clock;
pub mod codec;
pub mod error;
pub mod executor;
pub mod graph;
pub mod runtime;
pub mod scheduler;
pub mod trace;
pub mod value;

pub use catalog::{FunctionCatalog, TaskFn};
pub use error::{Result, RuntimeError, TaskError};
pub use graph::{DataHandle, TaskGraph, TaskId, TaskState};
pub use runtime::{Arg, Backend, FutureHandle, RuntimeConfig, RuntimeSession, SessionReport, TaskRegistration};
pub use scheduler::SchedulerPolicy;
pub use trace::{EventKind, TraceEvent, TraceSummary};
pub use value::{Matrix, Value};
