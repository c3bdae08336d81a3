use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RuntimeError};
use crate::executor::WorkerProgram;
use crate::scheduler::SchedulerPolicy;
use crate::trace::DEFAULT_CAPACITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Backend {
    /// Executor threads inside the master process.
    #[default]
    #[serde(rename = "threads")]
    ThreadPool,
    /// Persistent worker processes grouped into virtual nodes.
    #[serde(rename = "procs")]
    MultiProcess,
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "threads" | "thread-pool" => Ok(Self::ThreadPool),
            "procs" | "multi-process" => Ok(Self::MultiProcess),
            other => Err(format!("unknown backend `{other}` (expected threads|procs)")),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ThreadPool => "threads",
            Self::MultiProcess => "procs",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    pub backend: Backend,
    pub worker_count: usize,
    /// Number of virtual nodes; only the multi-process backend uses more
    /// than one.
    pub virtual_node_count: usize,
    pub scheduler_policy: SchedulerPolicy,
    pub max_retries: u32,
    pub scratch_dir: PathBuf,
    /// Where traces and DOT files go; defaults to `scratch_dir`.
    pub output_dir: Option<PathBuf>,
    /// Prefix for output files (`<app>_graph.dot`, `<app>_trace.csv`).
    pub app_name: String,
    pub trace_enabled: bool,
    pub trace_capacity: usize,
    pub graph_export_enabled: bool,
    pub base_seed: u64,
    /// Worker command for the multi-process backend; located automatically
    /// when unset.
    pub worker_program: Option<WorkerProgram>,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            backend: Backend::ThreadPool,
            worker_count: 4,
            virtual_node_count: 1,
            scheduler_policy: SchedulerPolicy::Fifo,
            max_retries: 1,
            scratch_dir: PathBuf::from("tfrt-scratch"),
            output_dir: None,
            app_name: "app".into(),
            trace_enabled: false,
            trace_capacity: DEFAULT_CAPACITY,
            graph_export_enabled: false,
            base_seed: 0,
            worker_program: None,
        }
    }
}

impl RuntimeConfig {
    pub fn threads(workers: usize) -> Self {
        Self {
            worker_count: workers,
            ..Self::default()
        }
    }

    pub fn processes(nodes: usize, workers: usize) -> Self {
        Self {
            backend: Backend::MultiProcess,
            worker_count: workers,
            virtual_node_count: nodes,
            ..Self::default()
        }
    }

    /// Loads a TOML or JSON file (by extension; TOML otherwise).
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| RuntimeError::Config(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| RuntimeError::Config(e.to_string()))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn output_dir(&self) -> &Path {
        self.output_dir.as_deref().unwrap_or(&self.scratch_dir)
    }

    /// Number of virtual nodes the session actually creates.
    pub fn effective_nodes(&self) -> usize {
        match self.backend {
            Backend::ThreadPool => 1,
            Backend::MultiProcess => self.virtual_node_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(RuntimeError::WorkerSpawnFailure { node: None, reason })
        };
        if self.worker_count == 0 {
            return fail("worker_count must be at least 1".into());
        }
        if self.virtual_node_count == 0 {
            return fail("virtual_node_count must be at least 1".into());
        }
        if self.backend == Backend::MultiProcess && self.worker_count % self.virtual_node_count != 0 {
            return fail(format!(
                "{} workers cannot be split evenly across {} virtual nodes",
                self.worker_count, self.virtual_node_count
            ));
        }
        if self.trace_enabled && self.trace_capacity == 0 {
            return Err(RuntimeError::Config("trace_capacity must be positive".into()));
        }
        if self.app_name.is_empty() || self.app_name.contains(['/', '\\']) {
            return Err(RuntimeError::Config(format!("invalid app name `{}`", self.app_name)));
        }
        Ok(())
    }
}
