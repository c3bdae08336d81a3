//! The dynamic task graph: data versioning, read-after-write edges, the task
//! state machine and DOT export.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RuntimeError};
use crate::value::Value;

pub type TaskId = u64;
pub type NodeId = usize;

/// Identity and version of a datum, rendered as `dXvY`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DataHandle {
    pub data_id: u64,
    pub version: u32,
}

impl DataHandle {
    /// Payload file name, `d<data_id>_v<version>.bin`.
    pub fn file_name(&self) -> String {
        format!("d{}_v{}.bin", self.data_id, self.version)
    }
}

impl fmt::Display for DataHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}v{}", self.data_id, self.version)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskState {
    Pending,
    Ready,
    Running,
    Completed,
    Failed,
    Resubmitted,
}

#[derive(Debug, Clone)]
pub enum TaskInput {
    Data(DataHandle),
    Immediate(Arc<Value>),
}

/// Why a task ended in the final failed state. `origin` is the task whose
/// function actually failed; descendants share its chain with one extra
/// leading entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureCause {
    pub origin: TaskId,
    pub chain: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TaskNode {
    pub task_id: TaskId,
    pub function_id: String,
    pub inputs: Vec<TaskInput>,
    pub output: Option<DataHandle>,
    pub state: TaskState,
    pub attempt: u32,
    pub assigned_node: Option<NodeId>,
    /// One message per failed attempt.
    pub attempt_errors: Vec<String>,
    pub failure: Option<FailureCause>,
}

impl TaskNode {
    pub fn input_handles(&self) -> impl Iterator<Item = DataHandle> + '_ {
        self.inputs.iter().filter_map(|i| match i {
            TaskInput::Data(h) => Some(*h),
            TaskInput::Immediate(_) => None,
        })
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.state, TaskState::Completed | TaskState::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub producer: TaskId,
    pub consumer: TaskId,
    pub data: DataHandle,
}

#[derive(Debug, Clone, Default)]
pub struct TaskGraph {
    nodes: Vec<TaskNode>,
    edges: Vec<Edge>,
    edge_set: HashSet<Edge>,
    producer_of: HashMap<DataHandle, TaskId>,
    consumers: Vec<Vec<TaskId>>,
    unfinished_producers: Vec<usize>,
    ready: BTreeSet<TaskId>,
    next_data_id: u64,
    completed_count: usize,
    failed_count: usize,
    sync_targets: BTreeSet<TaskId>,
}

fn idx(task_id: TaskId) -> usize {
    (task_id - 1) as usize
}

impl TaskGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[TaskNode] {
        &self.nodes
    }

    pub fn node(&self, task_id: TaskId) -> Option<&TaskNode> {
        task_id
            .checked_sub(1)
            .and_then(|i| self.nodes.get(i as usize))
    }

    fn node_mut(&mut self, task_id: TaskId) -> Result<&mut TaskNode> {
        task_id
            .checked_sub(1)
            .and_then(|i| self.nodes.get_mut(i as usize))
            .ok_or_else(|| RuntimeError::UnknownHandle(format!("task {task_id}")))
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn completed_count(&self) -> usize {
        self.completed_count
    }

    pub fn failed_count(&self) -> usize {
        self.failed_count
    }

    pub fn producer_of(&self, handle: DataHandle) -> Option<TaskId> {
        self.producer_of.get(&handle).copied()
    }

    pub fn consumers_of(&self, task_id: TaskId) -> &[TaskId] {
        &self.consumers[idx(task_id)]
    }

    /// Ready tasks in ascending id order.
    pub fn ready_tasks(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.ready.iter().copied()
    }

    pub fn sync_targets(&self) -> &BTreeSet<TaskId> {
        &self.sync_targets
    }

    /// Marks a task as the target of a `wait_on`, for DOT rendering only.
    pub fn add_sync_target(&mut self, task_id: TaskId) {
        self.sync_targets.insert(task_id);
    }

    /// Appends a task. Each [`TaskInput::Data`] adds one read-after-write edge
    /// from its producer; the task starts `Ready` when every producer has
    /// completed and `Pending` otherwise. If a producer already failed for
    /// good, the new task is failed immediately.
    pub fn add_task(
        &mut self,
        function_id: &str,
        inputs: Vec<TaskInput>,
        returns_value: bool,
    ) -> Result<&TaskNode> {
        let task_id = self.nodes.len() as TaskId + 1;
        let mut producers = BTreeSet::new();
        let mut new_edges = Vec::new();
        for input in &inputs {
            if let TaskInput::Data(h) = input {
                let producer = self
                    .producer_of(*h)
                    .ok_or_else(|| RuntimeError::UnknownHandle(h.to_string()))?;
                assert!(producer < task_id, "edge {producer}->{task_id} breaks submission order");
                producers.insert(producer);
                new_edges.push(Edge {
                    producer,
                    consumer: task_id,
                    data: *h,
                });
            }
        }

        let output = returns_value.then(|| {
            self.next_data_id += 1;
            DataHandle {
                data_id: self.next_data_id,
                version: 1,
            }
        });
        if let Some(h) = output {
            self.producer_of.insert(h, task_id);
        }

        for e in new_edges {
            if self.edge_set.insert(e) {
                self.edges.push(e);
            }
        }
        let mut unfinished = 0;
        let mut failed_producer = None;
        for &p in &producers {
            self.consumers[idx(p)].push(task_id);
            let pn = &self.nodes[idx(p)];
            match pn.state {
                TaskState::Completed => {}
                TaskState::Failed => {
                    failed_producer.get_or_insert(p);
                }
                _ => unfinished += 1,
            }
        }

        let mut node = TaskNode {
            task_id,
            function_id: function_id.to_owned(),
            inputs,
            output,
            state: TaskState::Pending,
            attempt: 1,
            assigned_node: None,
            attempt_errors: Vec::new(),
            failure: None,
        };
        if let Some(p) = failed_producer {
            node.state = TaskState::Failed;
            node.failure = Some(derived_cause(&self.nodes[idx(p)], task_id, function_id));
            self.failed_count += 1;
        } else if unfinished == 0 {
            node.state = TaskState::Ready;
            self.ready.insert(task_id);
        }
        self.nodes.push(node);
        self.consumers.push(Vec::new());
        self.unfinished_producers.push(unfinished);
        Ok(&self.nodes[idx(task_id)])
    }

    fn transition(&mut self, task_id: TaskId, from: &[TaskState], to: TaskState) -> Result<()> {
        let node = self.node_mut(task_id)?;
        if !from.contains(&node.state) {
            return Err(RuntimeError::IllegalTransition {
                task_id,
                from: node.state,
                to,
            });
        }
        node.state = to;
        Ok(())
    }

    /// Ready → Running on `node`.
    pub fn mark_running(&mut self, task_id: TaskId, node: NodeId) -> Result<()> {
        self.transition(task_id, &[TaskState::Ready], TaskState::Running)?;
        self.ready.remove(&task_id);
        self.nodes[idx(task_id)].assigned_node = Some(node);
        Ok(())
    }

    /// Running → Completed. Returns exactly the consumers that became Ready.
    pub fn mark_completed(&mut self, task_id: TaskId) -> Result<Vec<TaskId>> {
        self.transition(task_id, &[TaskState::Running], TaskState::Completed)?;
        self.completed_count += 1;
        let mut newly_ready = Vec::new();
        for i in 0..self.consumers[idx(task_id)].len() {
            let c = self.consumers[idx(task_id)][i];
            let remaining = &mut self.unfinished_producers[idx(c)];
            *remaining -= 1;
            if *remaining == 0 && self.nodes[idx(c)].state == TaskState::Pending {
                self.nodes[idx(c)].state = TaskState::Ready;
                self.ready.insert(c);
                newly_ready.push(c);
            }
        }
        Ok(newly_ready)
    }

    /// Running → Failed for one attempt; the failure is not final until
    /// [`TaskGraph::fail_final`] is called.
    pub fn fail_attempt(&mut self, task_id: TaskId, message: &str) -> Result<()> {
        self.transition(task_id, &[TaskState::Running], TaskState::Failed)?;
        let node = &mut self.nodes[idx(task_id)];
        let attempt = node.attempt;
        node.attempt_errors
            .push(format!("attempt {attempt}: {message}"));
        Ok(())
    }

    /// Failed → Resubmitted → Ready with the attempt counter bumped.
    pub fn resubmit(&mut self, task_id: TaskId) -> Result<()> {
        self.transition(task_id, &[TaskState::Failed], TaskState::Resubmitted)?;
        let node = &mut self.nodes[idx(task_id)];
        node.attempt += 1;
        node.assigned_node = None;
        self.transition(task_id, &[TaskState::Resubmitted], TaskState::Ready)?;
        self.ready.insert(task_id);
        Ok(())
    }

    /// Makes the failure of `task_id` final and fails every transitive
    /// consumer with a cause chain that points back to it. Returns the ids of
    /// the failed descendants.
    pub fn fail_final(&mut self, task_id: TaskId) -> Result<Vec<TaskId>> {
        let node = self.node_mut(task_id)?;
        if node.state != TaskState::Failed || node.failure.is_some() {
            return Err(RuntimeError::IllegalTransition {
                task_id,
                from: node.state,
                to: TaskState::Failed,
            });
        }
        let mut chain = vec![format!(
            "task {task_id} ({}) failed after {} attempt(s)",
            node.function_id, node.attempt
        )];
        chain.extend(node.attempt_errors.iter().cloned());
        node.failure = Some(FailureCause {
            origin: task_id,
            chain,
        });
        self.failed_count += 1;
        self.ready.remove(&task_id);

        let mut failed = Vec::new();
        let mut queue = VecDeque::from([task_id]);
        while let Some(p) = queue.pop_front() {
            for i in 0..self.consumers[idx(p)].len() {
                let c = self.consumers[idx(p)][i];
                if self.nodes[idx(c)].is_terminal() {
                    continue;
                }
                let cause = derived_cause(&self.nodes[idx(p)], c, &self.nodes[idx(c)].function_id);
                let cn = &mut self.nodes[idx(c)];
                cn.state = TaskState::Failed;
                cn.failure = Some(cause);
                self.ready.remove(&c);
                self.failed_count += 1;
                failed.push(c);
                queue.push_back(c);
            }
        }
        Ok(failed)
    }

    /// Longest path length in edges. Ids are a topological order, so one
    /// forward pass suffices.
    pub fn critical_path_length(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        for e in &self.edges {
            // edges are appended in consumer order
            depth[idx(e.consumer)] = depth[idx(e.consumer)].max(depth[idx(e.producer)] + 1);
        }
        depth.into_iter().max().unwrap_or(0)
    }

    /// Renders the graph in DOT: a `main` source feeding tasks with no
    /// producers, one node per task labeled `id:function`, `dXvY`-labeled
    /// dependency edges, and a `sync` sink per `wait_on` target.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph tfrt {\n  rankdir=TB;\n");
        s.push_str("  main [label=\"main\", shape=box];\n");
        for n in &self.nodes {
            let _ = writeln!(
                s,
                "  {} [label=\"{}:{}\", shape=circle];",
                n.task_id, n.task_id, n.function_id
            );
        }
        let sync_id = |t: TaskId| {
            if self.sync_targets.len() == 1 {
                "sync".to_owned()
            } else {
                format!("sync_{t}")
            }
        };
        for &t in &self.sync_targets {
            let _ = writeln!(s, "  {} [label=\"sync\", shape=octagon];", sync_id(t));
        }
        let mut has_producer = vec![false; self.nodes.len()];
        for e in &self.edges {
            has_producer[idx(e.consumer)] = true;
        }
        for n in &self.nodes {
            if !has_producer[idx(n.task_id)] {
                let _ = writeln!(s, "  main -> {};", n.task_id);
            }
        }
        for e in &self.edges {
            let _ = writeln!(s, "  {} -> {} [label=\"{}\"];", e.producer, e.consumer, e.data);
        }
        for &t in &self.sync_targets {
            let label = self.nodes[idx(t)]
                .output
                .map(|h| format!(" [label=\"{h}\"]"))
                .unwrap_or_default();
            let _ = writeln!(s, "  {t} -> {}{label};", sync_id(t));
        }
        s.push_str("}\n");
        s
    }

    pub fn export_dot(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_dot())?;
        Ok(())
    }
}

fn derived_cause(failed_producer: &TaskNode, consumer: TaskId, function_id: &str) -> FailureCause {
    let upstream = failed_producer
        .failure
        .as_ref()
        .expect("producer failure recorded before propagation");
    let mut chain = vec![format!(
        "task {consumer} ({function_id}) not run: input from task {} failed",
        failed_producer.task_id
    )];
    chain.extend(upstream.chain.iter().cloned());
    FailureCause {
        origin: upstream.origin,
        chain,
    }
}
