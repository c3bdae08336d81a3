//! Dispatch policies and retry-based fault handling.
//!
//! Dispatch runs only when a task is submitted or a task finishes. Each
//! decision is a pure function of the ready set and the free slots, so it is
//! reproducible given the same inputs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{NodeId, TaskGraph, TaskId};

pub type SlotId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerPolicy {
    /// Ascending task id.
    #[default]
    Fifo,
    /// Descending task id among the currently ready tasks.
    Lifo,
    /// Per free slot, the ready task with the most input bytes already on the
    /// slot's virtual node; ties go to the lower task id.
    Locality,
}

impl FromStr for SchedulerPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fifo" => Ok(Self::Fifo),
            "lifo" => Ok(Self::Lifo),
            "locality" => Ok(Self::Locality),
            other => Err(format!("unknown policy `{other}` (expected fifo|lifo|locality)")),
        }
    }
}

impl fmt::Display for SchedulerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fifo => "fifo",
            Self::Lifo => "lifo",
            Self::Locality => "locality",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutorSlot {
    pub slot_id: SlotId,
    pub virtual_node: NodeId,
    pub current_task: Option<TaskId>,
}

impl ExecutorSlot {
    pub fn busy(&self) -> bool {
        self.current_task.is_some()
    }
}

/// A dispatch candidate together with how many of its input bytes are
/// resident on each virtual node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReadyTask {
    pub task_id: TaskId,
    pub resident_bytes: BTreeMap<NodeId, u64>,
}

impl ReadyTask {
    pub fn new(task_id: TaskId) -> Self {
        Self {
            task_id,
            resident_bytes: BTreeMap::new(),
        }
    }

    fn bytes_on(&self, node: NodeId) -> u64 {
        self.resident_bytes.get(&node).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeSlot {
    pub slot_id: SlotId,
    pub node: NodeId,
}

/// Matches ready tasks to free slots. The result has
/// `min(ready.len(), free.len())` pairs and no task or slot appears twice.
pub fn dispatch(
    policy: SchedulerPolicy,
    ready: &[ReadyTask],
    free: &[FreeSlot],
) -> Vec<(TaskId, SlotId)> {
    let mut slots = free.to_vec();
    slots.sort_by_key(|s| s.slot_id);
    let mut tasks: Vec<&ReadyTask> = ready.iter().collect();
    tasks.sort_by_key(|t| t.task_id);

    match policy {
        SchedulerPolicy::Fifo => tasks
            .iter()
            .zip(&slots)
            .map(|(t, s)| (t.task_id, s.slot_id))
            .collect(),
        SchedulerPolicy::Lifo => tasks
            .iter()
            .rev()
            .zip(&slots)
            .map(|(t, s)| (t.task_id, s.slot_id))
            .collect(),
        SchedulerPolicy::Locality => {
            let mut out = Vec::with_capacity(slots.len().min(tasks.len()));
            for slot in &slots {
                if tasks.is_empty() {
                    break;
                }
                // max_by_key keeps the last maximum, so scan for the first.
                let mut best = 0;
                for (i, t) in tasks.iter().enumerate().skip(1) {
                    if t.bytes_on(slot.node) > tasks[best].bytes_on(slot.node) {
                        best = i;
                    }
                }
                out.push((tasks.remove(best).task_id, slot.slot_id));
            }
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FailureOutcome {
    Resubmitted,
    /// Final failure; carries the descendants failed along with it.
    FailedFinal(Vec<TaskId>),
}

/// Records a failed attempt of a running task. While `attempt <= max_retries`
/// the task goes back to the ready set with its attempt counter bumped;
/// afterwards it fails for good and takes its transitive consumers with it.
pub fn handle_failure(
    graph: &mut TaskGraph,
    task_id: TaskId,
    error: &str,
    max_retries: u32,
) -> Result<FailureOutcome> {
    graph.fail_attempt(task_id, error)?;
    let attempt = graph.node(task_id).map_or(0, |n| n.attempt);
    if attempt <= max_retries {
        graph.resubmit(task_id)?;
        Ok(FailureOutcome::Resubmitted)
    } else {
        Ok(FailureOutcome::FailedFinal(graph.fail_final(task_id)?))
    }
}

/// `max(critical path duration, total work / slot_count)`. `durations` is
/// indexed by `task_id - 1`.
pub fn makespan_lower_bound(graph: &TaskGraph, durations: &[Duration], slot_count: usize) -> Duration {
    assert_eq!(durations.len(), graph.len(), "one duration per task");
    assert!(slot_count > 0);
    let mut finish = durations.to_vec();
    for e in graph.edges() {
        let c = (e.consumer - 1) as usize;
        let p = (e.producer - 1) as usize;
        finish[c] = finish[c].max(finish[p] + durations[c]);
    }
    let path = finish.into_iter().max().unwrap_or_default();
    let work: Duration = durations.iter().sum();
    path.max(work / slot_count as u32)
}
