//! The application-facing session: start, register, invoke, wait, barrier,
//! stop.
//!
//! Calls to [`RuntimeSession::invoke`] only append to the task graph and
//! notify the scheduler thread; execution happens on executor threads or
//! worker processes. [`RuntimeSession::wait_on`] and
//! [`RuntimeSession::barrier`] block on a condition variable that the
//! scheduler signals after each event.

pub mod config;
mod engine;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Serialize;

pub use config::{Backend, RuntimeConfig};
pub use engine::Transfer;

use crate::catalog::FunctionCatalog;
use crate::clock::Clock;
use crate::codec;
use crate::error::{Result, RuntimeError, TaskError};
use crate::executor::local::ThreadPool;
use crate::executor::remote::{node_dir, prepare_node_dir, ProcessPool};
use crate::executor::{Event, VirtualNode, WorkerProgram};
use crate::graph::{DataHandle, TaskGraph, TaskId, TaskInput, TaskState};
use crate::scheduler::{ExecutorSlot, SlotId};
use crate::trace::{self, TraceEvent, TraceRecorder, TraceSummary};
use crate::value::{Matrix, Value};
use engine::{Engine, Executors, Shared};

static NEXT_SESSION: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRegistration {
    session: u64,
    pub function_id: String,
    pub arity: usize,
    pub returns_value: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum HandleKind {
    Immediate(Arc<Value>),
    Data { data: DataHandle, producer: TaskId },
    Completion { producer: TaskId },
}

/// Reference to a value that may not exist yet.
#[derive(Debug, Clone, PartialEq)]
pub struct FutureHandle {
    session: u64,
    kind: HandleKind,
}

impl FutureHandle {
    pub fn data(&self) -> Option<DataHandle> {
        match self.kind {
            HandleKind::Data { data, .. } => Some(data),
            _ => None,
        }
    }

    pub fn producing_task(&self) -> Option<TaskId> {
        match self.kind {
            HandleKind::Data { producer, .. } | HandleKind::Completion { producer } => Some(producer),
            HandleKind::Immediate(_) => None,
        }
    }
}

/// One argument of a task call.
#[derive(Debug, Clone)]
pub enum Arg {
    Future(FutureHandle),
    Value(Value),
}

impl From<FutureHandle> for Arg {
    fn from(h: FutureHandle) -> Self {
        Self::Future(h)
    }
}

impl From<&FutureHandle> for Arg {
    fn from(h: &FutureHandle) -> Self {
        Self::Future(h.clone())
    }
}

macro_rules! arg_from_value {
    ($($t:ty),*) => {$(
        impl From<$t> for Arg {
            fn from(v: $t) -> Self {
                Self::Value(v.into())
            }
        }
    )*};
}
arg_from_value!(Value, i64, f64, Vec<f64>, Vec<i64>, Matrix, Vec<u8>);

#[derive(Debug, Clone, Serialize)]
pub struct SessionReport {
    pub submitted: usize,
    pub completed: usize,
    pub failed: usize,
    pub wall_time: Duration,
    pub trace_path: Option<PathBuf>,
    pub trace_summary: Option<TraceSummary>,
    pub trace_truncated: bool,
    /// Set when the trace could not be written; the session still stops.
    pub trace_error: Option<String>,
    pub graph_path: Option<PathBuf>,
    pub graph_error: Option<String>,
    pub transfers: usize,
    pub transfer_bytes: u64,
    pub worker_respawns: usize,
}

pub struct RuntimeSession {
    id: u64,
    config: RuntimeConfig,
    catalog: FunctionCatalog,
    registrations: HashMap<String, TaskRegistration>,
    shared: Arc<Shared>,
    events: Sender<Event>,
    engine: Option<JoinHandle<()>>,
    recorder: Arc<TraceRecorder>,
    slots: Vec<ExecutorSlot>,
    started: Instant,
}

impl std::fmt::Debug for RuntimeSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RuntimeSession")
            .field("id", &self.id)
            .field("config", &self.config)
            .field("active", &self.is_active())
            .finish()
    }
}

fn check_scratch(dir: &std::path::Path) -> Result<()> {
    let unwritable = |source| RuntimeError::ScratchUnwritable {
        path: dir.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(unwritable)?;
    let probe = dir.join(format!(".tfrt-probe-{}", std::process::id()));
    fs::write(&probe, b"ok").map_err(unwritable)?;
    let _ = fs::remove_file(probe);
    Ok(())
}

impl RuntimeSession {
    /// Starts a session using the builtin function catalog.
    pub fn start(config: RuntimeConfig) -> Result<Self> {
        Self::start_with_catalog(config, FunctionCatalog::builtin())
    }

    /// Starts a session whose thread-pool tasks resolve against `catalog`.
    /// Worker processes always use the builtin catalog.
    pub fn start_with_catalog(config: RuntimeConfig, catalog: FunctionCatalog) -> Result<Self> {
        config.validate()?;
        check_scratch(&config.scratch_dir)?;
        if config.output_dir() != config.scratch_dir {
            check_scratch(config.output_dir())?;
        }

        let clock = Clock::start();
        let recorder = Arc::new(TraceRecorder::new(config.trace_enabled, config.trace_capacity, clock));
        let (tx, rx) = mpsc::channel();
        let nodes = config.effective_nodes();
        let per_node = config.worker_count / nodes;
        let slots: Vec<ExecutorSlot> = (0..config.worker_count)
            .map(|s| ExecutorSlot {
                slot_id: s,
                virtual_node: s / per_node,
                current_task: None,
            })
            .collect();

        let executors = match config.backend {
            Backend::ThreadPool => Executors::Local(
                ThreadPool::spawn(config.worker_count, clock, tx.clone()).map_err(|e| {
                    RuntimeError::WorkerSpawnFailure {
                        node: Some(0),
                        reason: e.to_string(),
                    }
                })?,
            ),
            Backend::MultiProcess => {
                let program = config
                    .worker_program
                    .clone()
                    .or_else(WorkerProgram::locate)
                    .ok_or_else(|| RuntimeError::WorkerSpawnFailure {
                        node: None,
                        reason: "cannot locate the tfrt-worker executable".into(),
                    })?;
                let mut vnodes = Vec::with_capacity(nodes);
                for k in 0..nodes {
                    let dir = node_dir(&config.scratch_dir, k);
                    prepare_node_dir(&dir).map_err(|source| RuntimeError::ScratchUnwritable {
                        path: dir.clone(),
                        source,
                    })?;
                    vnodes.push(VirtualNode {
                        node_id: k,
                        scratch_dir: dir,
                        executor_count: per_node,
                    });
                }
                Executors::Remote(
                    ProcessPool::spawn(program, vnodes, clock, tx.clone())
                        .map_err(|(node, reason)| RuntimeError::WorkerSpawnFailure { node: Some(node), reason })?,
                )
            }
        };

        let shared = Arc::new(Shared::new());
        let engine = Engine {
            shared: shared.clone(),
            events: rx,
            executors,
            slots: slots.clone(),
            policy: config.scheduler_policy,
            max_retries: config.max_retries,
            recorder: recorder.clone(),
            scratch_dir: config.scratch_dir.clone(),
        };
        let handle = std::thread::Builder::new()
            .name("tfrt-scheduler".into())
            .spawn(move || engine.run())?;

        log::info!(
            "session started: backend={} workers={} nodes={} policy={}",
            config.backend,
            config.worker_count,
            nodes,
            config.scheduler_policy
        );
        Ok(Self {
            id: NEXT_SESSION.fetch_add(1, Ordering::Relaxed),
            config,
            catalog,
            registrations: HashMap::new(),
            shared,
            events: tx,
            engine: Some(handle),
            recorder,
            slots,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.config
    }

    pub fn is_active(&self) -> bool {
        self.engine.is_some()
    }

    fn ensure_active(&self) -> Result<()> {
        if self.is_active() {
            Ok(())
        } else {
            Err(RuntimeError::SessionStopped)
        }
    }

    /// Registers a function from the session catalog as a task.
    pub fn register_task(&mut self, function_id: &str, arity: usize, returns_value: bool) -> Result<TaskRegistration> {
        self.ensure_active()?;
        if self.registrations.contains_key(function_id) {
            return Err(RuntimeError::DuplicateRegistration(function_id.into()));
        }
        let known = match self.config.backend {
            Backend::ThreadPool => self.catalog.get(function_id),
            Backend::MultiProcess => FunctionCatalog::builtin().get(function_id),
        };
        let Some(func) = known else {
            return Err(RuntimeError::UnknownFunction(function_id.into()));
        };
        self.shared.lock().functions.insert(function_id.into(), func);
        let reg = TaskRegistration {
            session: self.id,
            function_id: function_id.into(),
            arity,
            returns_value,
        };
        self.registrations.insert(function_id.into(), reg.clone());
        Ok(reg)
    }

    /// Registers a closure as a task. Only the thread-pool backend can run
    /// closures; worker processes need compiled-in functions.
    pub fn register_fn<F>(&mut self, function_id: &str, arity: usize, returns_value: bool, f: F) -> Result<TaskRegistration>
    where
        F: Fn(&[Arc<Value>]) -> std::result::Result<Value, TaskError> + Send + Sync + 'static,
    {
        self.ensure_active()?;
        if self.config.backend != Backend::ThreadPool {
            return Err(RuntimeError::UnknownFunction(format!(
                "{function_id} (closures need the thread-pool backend)"
            )));
        }
        if self.registrations.contains_key(function_id) {
            return Err(RuntimeError::DuplicateRegistration(function_id.into()));
        }
        self.catalog.insert(function_id, f);
        self.register_task(function_id, arity, returns_value)
    }

    /// Returns the existing registration for `function_id` or registers it.
    pub fn task(&mut self, function_id: &str, arity: usize, returns_value: bool) -> Result<TaskRegistration> {
        match self.registrations.get(function_id) {
            Some(r) if r.arity == arity && r.returns_value == returns_value => Ok(r.clone()),
            Some(r) => Err(RuntimeError::ArityMismatch {
                function_id: function_id.into(),
                expected: r.arity,
                got: arity,
            }),
            None => self.register_task(function_id, arity, returns_value),
        }
    }

    /// Wraps a value as an already-resolved handle.
    pub fn immediate(&self, value: impl Into<Value>) -> FutureHandle {
        FutureHandle {
            session: self.id,
            kind: HandleKind::Immediate(Arc::new(value.into())),
        }
    }

    /// Submits one task and returns at once.
    pub fn invoke<I, A>(&self, reg: &TaskRegistration, args: I) -> Result<FutureHandle>
    where
        I: IntoIterator<Item = A>,
        A: Into<Arg>,
    {
        self.ensure_active()?;
        if reg.session != self.id {
            return Err(RuntimeError::UnknownFunction(reg.function_id.clone()));
        }
        let args: Vec<Arg> = args.into_iter().map(Into::into).collect();
        if args.len() != reg.arity {
            return Err(RuntimeError::ArityMismatch {
                function_id: reg.function_id.clone(),
                expected: reg.arity,
                got: args.len(),
            });
        }
        let mut inputs = Vec::with_capacity(args.len());
        for arg in args {
            inputs.push(match arg {
                Arg::Value(v) => TaskInput::Immediate(Arc::new(v)),
                Arg::Future(h) => {
                    if h.session != self.id {
                        return Err(RuntimeError::UnknownHandle("handle from another session".into()));
                    }
                    match h.kind {
                        HandleKind::Immediate(v) => TaskInput::Immediate(v),
                        HandleKind::Data { data, .. } => TaskInput::Data(data),
                        HandleKind::Completion { producer } => {
                            return Err(RuntimeError::UnknownHandle(format!(
                                "task {producer} returns no value"
                            )))
                        }
                    }
                }
            });
        }
        let handle = {
            let mut st = self.shared.lock();
            let node = st.graph.add_task(&reg.function_id, inputs, reg.returns_value)?;
            let task_id = node.task_id;
            let kind = match node.output {
                Some(data) => HandleKind::Data { data, producer: task_id },
                None => HandleKind::Completion { producer: task_id },
            };
            self.recorder.record(TraceEvent::new(
                self.recorder.now(),
                task_id,
                &reg.function_id,
                trace::EventKind::Submit,
            ));
            FutureHandle { session: self.id, kind }
        };
        self.events
            .send(Event::Submitted)
            .map_err(|_| RuntimeError::SessionStopped)?;
        Ok(handle)
    }

    /// Blocks until the handle's producer finishes and returns its value.
    /// Completion-only handles resolve to [`Value::Unit`].
    pub fn wait_on(&self, handle: &FutureHandle) -> Result<Value> {
        self.ensure_active()?;
        if handle.session != self.id {
            return Err(RuntimeError::UnknownHandle("handle from another session".into()));
        }
        let (producer, data) = match &handle.kind {
            HandleKind::Immediate(v) => return Ok((**v).clone()),
            HandleKind::Data { data, producer } => (*producer, Some(*data)),
            HandleKind::Completion { producer } => (*producer, None),
        };
        let mut st = self.shared.lock();
        st.graph.add_sync_target(producer);
        loop {
            if let Some(msg) = &st.fatal {
                return Err(RuntimeError::WorkerSpawnFailure {
                    node: None,
                    reason: msg.clone(),
                });
            }
            let node = st
                .graph
                .node(producer)
                .ok_or_else(|| RuntimeError::UnknownHandle(format!("task {producer}")))?;
            match (node.state, &node.failure) {
                (TaskState::Completed, _) => break,
                (TaskState::Failed, Some(cause)) => {
                    return Err(RuntimeError::TaskFailed {
                        task_id: cause.origin,
                        chain: cause.chain.clone(),
                    })
                }
                _ => st = self.shared.changed.wait(st).unwrap_or_else(|e| e.into_inner()),
            }
        }
        let Some(data) = data else {
            return Ok(Value::Unit);
        };
        if let Some(v) = st.values.get(&data) {
            return Ok((**v).clone());
        }
        let node = *st
            .residency
            .get(&data)
            .and_then(|s| s.iter().next())
            .ok_or_else(|| RuntimeError::UnknownHandle(data.to_string()))?;
        drop(st);
        let path = node_dir(&self.config.scratch_dir, node).join(data.file_name());
        let value = match codec::read_payload_file(&path) {
            Ok(v) => v,
            Err(codec::ReadPayloadError::Io { source, .. }) => return Err(source.into()),
            Err(codec::ReadPayloadError::Decode { source, .. }) => return Err(source.into()),
        };
        self.shared.lock().values.insert(data, Arc::new(value.clone()));
        Ok(value)
    }

    /// Blocks until every task submitted so far is Completed or Failed.
    pub fn barrier(&self) -> Result<()> {
        self.ensure_active()?;
        let mut st = self.shared.lock();
        let upto = st.graph.len();
        let mut next = 0;
        loop {
            if let Some(msg) = &st.fatal {
                return Err(RuntimeError::WorkerSpawnFailure {
                    node: None,
                    reason: msg.clone(),
                });
            }
            while next < upto && st.graph.nodes()[next].is_terminal() {
                next += 1;
            }
            if next == upto {
                return Ok(());
            }
            st = self.shared.changed.wait(st).unwrap_or_else(|e| e.into_inner());
        }
    }

    /// Implicit barrier, worker shutdown, then trace and graph output.
    pub fn stop(&mut self) -> Result<SessionReport> {
        self.ensure_active()?;
        let waited = self.barrier();
        self.shutdown();
        waited?;

        let st = self.shared.lock();
        let out = self.config.output_dir().to_path_buf();
        let mut report = SessionReport {
            submitted: st.graph.len(),
            completed: st.graph.completed_count(),
            failed: st.graph.failed_count(),
            wall_time: self.started.elapsed(),
            trace_path: None,
            trace_summary: None,
            trace_truncated: self.recorder.truncated(),
            trace_error: None,
            graph_path: None,
            graph_error: None,
            transfers: st.transfers.len(),
            transfer_bytes: st.transfers.iter().map(|t| t.bytes).sum(),
            worker_respawns: st.respawns,
        };
        if self.config.graph_export_enabled {
            let path = out.join(format!("{}_graph.dot", self.config.app_name));
            match st.graph.export_dot(&path) {
                Ok(()) => report.graph_path = Some(path),
                Err(e) => report.graph_error = Some(e.to_string()),
            }
        }
        drop(st);
        if self.config.trace_enabled {
            let events = self.recorder.snapshot();
            let csv = out.join(format!("{}_trace.csv", self.config.app_name));
            let json = out.join(format!("{}_trace.json", self.config.app_name));
            match trace::export_trace(&events, &csv).and_then(|mut s| {
                s.truncated = self.recorder.truncated();
                trace::write_summary_json(&s, &json).map(|_| s)
            }) {
                Ok(summary) => {
                    report.trace_path = Some(csv);
                    report.trace_summary = Some(summary);
                }
                Err(e) => {
                    log::warn!("trace flush failed: {e}");
                    report.trace_error = Some(e.to_string());
                }
            }
        }
        log::info!(
            "session stopped: {} completed, {} failed in {:.3}s",
            report.completed,
            report.failed,
            report.wall_time.as_secs_f64()
        );
        Ok(report)
    }

    fn shutdown(&mut self) {
        if let Some(h) = self.engine.take() {
            let _ = self.events.send(Event::Shutdown);
            let _ = h.join();
        }
    }

    /// Snapshot of the task graph.
    pub fn graph(&self) -> TaskGraph {
        self.shared.lock().graph.clone()
    }

    /// Trace events recorded so far, sorted by timestamp.
    pub fn trace_events(&self) -> Vec<TraceEvent> {
        self.recorder.snapshot()
    }

    pub fn transfers(&self) -> Vec<Transfer> {
        self.shared.lock().transfers.clone()
    }

    /// Process ids that executed at least one task, per slot.
    pub fn worker_pids(&self) -> BTreeMap<SlotId, BTreeSet<u32>> {
        self.shared.lock().pids.clone()
    }

    pub fn slots(&self) -> &[ExecutorSlot] {
        &self.slots
    }

    /// Nodes holding a copy of the handle's payload.
    pub fn residency(&self, handle: &FutureHandle) -> BTreeSet<usize> {
        handle
            .data()
            .and_then(|d| self.shared.lock().residency.get(&d).cloned())
            .unwrap_or_default()
    }
}

impl Drop for RuntimeSession {
    fn drop(&mut self) {
        self.shutdown();
    }
}
