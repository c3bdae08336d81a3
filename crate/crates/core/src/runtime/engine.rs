//! The scheduler loop. A single thread consumes submission and completion
//! events in order, updates the graph, and dispatches ready tasks to free
//! executor slots.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::mpsc::Receiver;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};

use crate::catalog::TaskFn;
use crate::codec;
use crate::executor::local::{Job, ThreadPool};
use crate::executor::protocol::ExecuteRequest;
use crate::executor::remote::{copy_payload, node_dir, ProcessPool};
use crate::executor::{Event, Output};
use crate::graph::{DataHandle, NodeId, TaskGraph, TaskId, TaskInput};
use crate::scheduler::{self, ExecutorSlot, FailureOutcome, FreeSlot, ReadyTask, SchedulerPolicy, SlotId};
use crate::trace::{EventKind, TraceEvent, TraceRecorder};
use crate::value::Value;

/// One inter-node payload copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transfer {
    pub data: DataHandle,
    pub from: NodeId,
    pub to: NodeId,
    pub bytes: u64,
}

#[derive(Default)]
pub(crate) struct State {
    pub graph: TaskGraph,
    pub functions: HashMap<String, TaskFn>,
    /// In-memory outputs (thread pool) or values resolved by `wait_on`.
    pub values: HashMap<DataHandle, Arc<Value>>,
    pub sizes: HashMap<DataHandle, u64>,
    pub residency: HashMap<DataHandle, BTreeSet<NodeId>>,
    pub transfers: Vec<Transfer>,
    /// Worker process id observed for each executed attempt, per slot.
    pub pids: BTreeMap<SlotId, BTreeSet<u32>>,
    pub respawns: usize,
    pub fatal: Option<String>,
}

pub(crate) struct Shared {
    pub state: Mutex<State>,
    pub changed: Condvar,
}

impl Shared {
    pub fn new() -> Self {
        Self {
            state: Mutex::new(State::default()),
            changed: Condvar::new(),
        }
    }

    pub fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub(crate) enum Executors {
    Local(ThreadPool),
    Remote(ProcessPool),
}

struct Running {
    task_id: TaskId,
    attempt: u32,
    function_id: String,
    started: bool,
}

pub(crate) struct Engine {
    pub shared: Arc<Shared>,
    pub events: Receiver<Event>,
    pub executors: Executors,
    pub slots: Vec<ExecutorSlot>,
    pub policy: SchedulerPolicy,
    pub max_retries: u32,
    pub recorder: Arc<TraceRecorder>,
    pub scratch_dir: PathBuf,
}

impl Engine {
    pub fn run(mut self) {
        let mut running: Vec<Option<Running>> = self.slots.iter().map(|_| None).collect();
        let mut alive = vec![true; self.slots.len()];
        let shared = self.shared.clone();
        while let Ok(event) = self.events.recv() {
            if matches!(event, Event::Shutdown) {
                break;
            }
            {
                let mut st = shared.lock();
                self.handle(&mut st, &mut running, &mut alive, event);
                self.dispatch(&mut st, &mut running, &alive);
            }
            shared.changed.notify_all();
        }
        match self.executors {
            Executors::Local(pool) => pool.shutdown(),
            Executors::Remote(mut pool) => pool.shutdown(),
        }
    }

    fn node_of(&self, slot: SlotId) -> NodeId {
        self.slots[slot].virtual_node
    }

    fn record(&self, ts: u64, slot: Option<SlotId>, task_id: TaskId, function_id: &str, kind: EventKind) {
        let mut ev = TraceEvent::new(ts, task_id, function_id, kind);
        if let Some(s) = slot {
            ev = ev.on(self.node_of(s), s);
        }
        self.recorder.record(ev);
    }

    fn pid_of(&self, slot: SlotId) -> Option<u32> {
        match &self.executors {
            Executors::Local(_) => Some(std::process::id()),
            Executors::Remote(pool) => pool.pid(slot),
        }
    }

    fn generation_ok(&self, slot: SlotId, generation: u64) -> bool {
        match &self.executors {
            Executors::Local(_) => true,
            Executors::Remote(pool) => pool.generation(slot) == generation,
        }
    }

    fn handle(
        &mut self,
        st: &mut State,
        running: &mut [Option<Running>],
        alive: &mut [bool],
        event: Event,
    ) {
        match event {
            Event::Submitted | Event::Shutdown => {}
            Event::Started {
                slot,
                generation,
                task_id,
                attempt,
                ts_ns,
            } => {
                if !self.generation_ok(slot, generation) {
                    return;
                }
                if let Some(r) = running[slot].as_mut().filter(|r| r.task_id == task_id && r.attempt == attempt) {
                    r.started = true;
                    let f = r.function_id.clone();
                    self.record(ts_ns, Some(slot), task_id, &f, EventKind::Start);
                    if let Some(pid) = self.pid_of(slot) {
                        st.pids.entry(slot).or_default().insert(pid);
                    }
                }
            }
            Event::Finished {
                slot,
                generation,
                task_id,
                attempt,
                start_ns,
                end_ns,
                result,
            } => {
                if !self.generation_ok(slot, generation) {
                    return;
                }
                let matches = running[slot]
                    .as_ref()
                    .is_some_and(|r| r.task_id == task_id && r.attempt == attempt);
                if !matches {
                    log::warn!("stale completion of task {task_id} on slot {slot}");
                    return;
                }
                let r = running[slot].take().expect("checked above");
                if !r.started {
                    self.record(start_ns, Some(slot), task_id, &r.function_id, EventKind::Start);
                    if let Some(pid) = self.pid_of(slot) {
                        st.pids.entry(slot).or_default().insert(pid);
                    }
                }
                self.slots[slot].current_task = None;
                let kind = if result.is_ok() { EventKind::End } else { EventKind::Fail };
                self.record(end_ns.max(start_ns), Some(slot), task_id, &r.function_id, kind);
                match result {
                    Ok(output) => self.complete(st, slot, task_id, output),
                    Err(msg) => self.fail(st, task_id, &msg),
                }
            }
            Event::WorkerExited { slot, generation } => {
                if !self.generation_ok(slot, generation) {
                    return;
                }
                let pid = self.pid_of(slot);
                if let Some(r) = running[slot].take() {
                    self.slots[slot].current_task = None;
                    if r.started {
                        let now = self.recorder.now();
                        self.record(now, Some(slot), r.task_id, &r.function_id, EventKind::Fail);
                    }
                    let msg = format!(
                        "worker process {} on slot {slot} exited",
                        pid.map_or("?".into(), |p| p.to_string())
                    );
                    self.fail(st, r.task_id, &msg);
                }
                let Executors::Remote(pool) = &mut self.executors else {
                    return;
                };
                match pool.respawn(slot) {
                    Ok(new_pid) => {
                        st.respawns += 1;
                        log::info!("slot {slot}: respawned worker as pid {new_pid}");
                    }
                    Err(e) => {
                        log::error!("slot {slot}: cannot respawn worker: {e}");
                        alive[slot] = false;
                        if !alive.iter().any(|&a| a) {
                            st.fatal = Some(format!("all worker processes died; last error: {e}"));
                        }
                    }
                }
            }
        }
    }

    fn complete(&mut self, st: &mut State, slot: SlotId, task_id: TaskId, output: Output) {
        let node = self.node_of(slot);
        let handle = st.graph.node(task_id).and_then(|n| n.output);
        if let Some(h) = handle {
            match output {
                Output::Memory(v) => {
                    st.sizes.insert(h, codec::encoded_len(&v).unwrap_or(0) as u64);
                    st.values.insert(h, Arc::new(v));
                }
                Output::File { bytes: 0 } => {
                    st.values.insert(h, Arc::new(Value::Unit));
                }
                Output::File { bytes } => {
                    st.sizes.insert(h, bytes);
                }
            }
            st.residency.entry(h).or_default().insert(node);
        }
        if let Err(e) = st.graph.mark_completed(task_id) {
            st.fatal = Some(e.to_string());
        }
    }

    fn fail(&mut self, st: &mut State, task_id: TaskId, msg: &str) {
        match scheduler::handle_failure(&mut st.graph, task_id, msg, self.max_retries) {
            Ok(FailureOutcome::Resubmitted) => log::debug!("task {task_id} resubmitted after: {msg}"),
            Ok(FailureOutcome::FailedFinal(desc)) => log::warn!(
                "task {task_id} failed for good ({msg}); {} descendant(s) cancelled",
                desc.len()
            ),
            Err(e) => st.fatal = Some(e.to_string()),
        }
    }

    fn dispatch(&mut self, st: &mut State, running: &mut [Option<Running>], alive: &[bool]) {
        loop {
            let free: Vec<FreeSlot> = self
                .slots
                .iter()
                .filter(|s| alive[s.slot_id] && !s.busy())
                .map(|s| FreeSlot {
                    slot_id: s.slot_id,
                    node: s.virtual_node,
                })
                .collect();
            if free.is_empty() {
                return;
            }
            let ready: Vec<ReadyTask> = st
                .graph
                .ready_tasks()
                .map(|id| {
                    let mut t = ReadyTask::new(id);
                    if self.policy == SchedulerPolicy::Locality {
                        let node = st.graph.node(id).expect("ready task exists");
                        for h in node.input_handles() {
                            let bytes = st.sizes.get(&h).copied().unwrap_or(0);
                            for &n in st.residency.get(&h).into_iter().flatten() {
                                *t.resident_bytes.entry(n).or_default() += bytes;
                            }
                        }
                    }
                    t
                })
                .collect();
            if ready.is_empty() {
                return;
            }
            for (task_id, slot) in scheduler::dispatch(self.policy, &ready, &free) {
                self.launch(st, running, task_id, slot);
            }
        }
    }

    fn launch(&mut self, st: &mut State, running: &mut [Option<Running>], task_id: TaskId, slot: SlotId) {
        let node = self.node_of(slot);
        if let Err(e) = st.graph.mark_running(task_id, node) {
            st.fatal = Some(e.to_string());
            return;
        }
        let task = st.graph.node(task_id).expect("task exists").clone();
        self.record(self.recorder.now(), Some(slot), task_id, &task.function_id, EventKind::Dispatch);
        running[slot] = Some(Running {
            task_id,
            attempt: task.attempt,
            function_id: task.function_id.clone(),
            started: false,
        });
        self.slots[slot].current_task = Some(task_id);

        let sent = match &mut self.executors {
            Executors::Local(pool) => {
                let func = st.functions.get(&task.function_id).cloned();
                let args: Option<Vec<Arc<Value>>> = task
                    .inputs
                    .iter()
                    .map(|i| match i {
                        TaskInput::Data(h) => st.values.get(h).cloned(),
                        TaskInput::Immediate(v) => Some(v.clone()),
                    })
                    .collect();
                match (func, args) {
                    (Some(func), Some(args)) => pool.launch(
                        slot,
                        Job {
                            task_id,
                            attempt: task.attempt,
                            func,
                            args,
                        },
                    ),
                    (None, _) => Err(format!("no function `{}`", task.function_id)),
                    (_, None) => Err("input value missing".into()),
                }
            }
            Executors::Remote(_) => self
                .stage_inputs(st, slot, &task)
                .and_then(|req| match &mut self.executors {
                    Executors::Remote(pool) => pool.execute(slot, &req).map_err(|e| e.to_string()),
                    Executors::Local(_) => unreachable!(),
                }),
        };
        if let Err(msg) = sent {
            running[slot] = None;
            self.slots[slot].current_task = None;
            self.fail(st, task_id, &format!("launch failed: {msg}"));
        }
    }

    /// Makes every input available as a file in the slot's node directory,
    /// copying payloads from other nodes when needed.
    fn stage_inputs(&self, st: &mut State, slot: SlotId, task: &crate::graph::TaskNode) -> Result<ExecuteRequest, String> {
        let node = self.node_of(slot);
        let dir = node_dir(&self.scratch_dir, node);
        let mut inputs = Vec::with_capacity(task.inputs.len());
        for (i, input) in task.inputs.iter().enumerate() {
            match input {
                TaskInput::Data(h) => {
                    let path = dir.join(h.file_name());
                    let holders = st.residency.get(h).cloned().unwrap_or_default();
                    if !holders.contains(&node) {
                        let &from = holders
                            .iter()
                            .next()
                            .ok_or_else(|| format!("{h} is not resident anywhere"))?;
                        let src = node_dir(&self.scratch_dir, from).join(h.file_name());
                        let size = st.sizes.get(h).copied().unwrap_or(0);
                        self.record_transfer(slot, task.task_id, *h, EventKind::TransferStart, size);
                        let bytes = copy_payload(&src, &path).map_err(|e| format!("copy {h}: {e}"))?;
                        self.record_transfer(slot, task.task_id, *h, EventKind::TransferEnd, bytes);
                        st.residency.entry(*h).or_default().insert(node);
                        st.transfers.push(Transfer {
                            data: *h,
                            from,
                            to: node,
                            bytes,
                        });
                    }
                    inputs.push(path);
                }
                TaskInput::Immediate(v) => {
                    let path = dir.join(format!("imm_t{}_a{i}.bin", task.task_id));
                    codec::write_payload_file(&path, v).map_err(|e| format!("immediate argument {i}: {e}"))?;
                    inputs.push(path);
                }
            }
        }
        Ok(ExecuteRequest {
            task_id: task.task_id,
            attempt: task.attempt,
            function_id: task.function_id.clone(),
            inputs,
            output: task.output.map(|h| dir.join(h.file_name())),
        })
    }

    fn record_transfer(&self, slot: SlotId, task_id: TaskId, data: DataHandle, kind: EventKind, bytes: u64) {
        let ev = TraceEvent::new(self.recorder.now(), task_id, &data.to_string(), kind)
            .on(self.node_of(slot), slot)
            .with_bytes(bytes);
        self.recorder.record(ev);
    }
}
