//! Task execution backends.
//!
//! * [`local`]: an in-process pool of executor threads sharing memory.
//! * [`remote`]: persistent worker processes grouped into virtual nodes,
//!   exchanging parameters through payload files in per-node scratch
//!   directories.

use std::any::Any;

use crate::graph::TaskId;
use crate::scheduler::SlotId;
use crate::value::Value;

pub mod local;
pub mod protocol;
pub mod remote;
pub mod worker;

pub use local::{execute_local, Job, LocalOutcome};
pub use remote::{VirtualNode, WorkerProgram};

/// Where a finished task left its output.
#[derive(Debug)]
pub(crate) enum Output {
    Memory(Value),
    File { bytes: u64 },
}

/// Messages delivered to the scheduler loop, in arrival order.
#[derive(Debug)]
pub(crate) enum Event {
    Submitted,
    Started {
        slot: SlotId,
        generation: u64,
        task_id: TaskId,
        attempt: u32,
        ts_ns: u64,
    },
    Finished {
        slot: SlotId,
        generation: u64,
        task_id: TaskId,
        attempt: u32,
        start_ns: u64,
        end_ns: u64,
        result: Result<Output, String>,
    },
    WorkerExited {
        slot: SlotId,
        generation: u64,
    },
    Shutdown,
}

pub(crate) fn panic_message(payload: &(dyn Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_owned()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic payload".to_owned()
    }
}
