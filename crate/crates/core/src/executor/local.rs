use std::io;
use std::panic::{self, AssertUnwindSafe};
use std::sync::mpsc::{self, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use crate::catalog::TaskFn;
use crate::clock::Clock;
use crate::error::TaskError;
use crate::executor::{panic_message, Event, Output};
use crate::graph::TaskId;
use crate::scheduler::SlotId;
use crate::value::Value;

/// A task attempt handed to an executor thread.
pub struct Job {
    pub task_id: TaskId,
    pub attempt: u32,
    pub func: TaskFn,
    pub args: Vec<Arc<Value>>,
}

#[derive(Debug)]
pub struct LocalOutcome {
    pub start_ns: u64,
    pub end_ns: u64,
    pub result: Result<Value, TaskError>,
}

/// Runs one job on the calling thread. A panicking task becomes a failed
/// outcome; the thread survives.
pub fn execute_local(job: &Job, clock: &Clock) -> LocalOutcome {
    let start_ns = clock.now();
    let result = match panic::catch_unwind(AssertUnwindSafe(|| (job.func)(&job.args))) {
        Ok(r) => r,
        Err(payload) => Err(TaskError::new(format!(
            "task panicked: {}",
            panic_message(&*payload)
        ))),
    };
    LocalOutcome {
        start_ns,
        end_ns: clock.now(),
        result,
    }
}

pub(crate) struct ThreadPool {
    slots: Vec<(Sender<Job>, JoinHandle<()>)>,
}

impl ThreadPool {
    pub(crate) fn spawn(count: usize, clock: Clock, events: Sender<Event>) -> io::Result<Self> {
        let mut slots = Vec::with_capacity(count);
        for slot in 0..count {
            let (tx, rx) = mpsc::channel::<Job>();
            let events = events.clone();
            let handle = thread::Builder::new()
                .name(format!("tfrt-exec-{slot}"))
                .spawn(move || {
                    for job in rx {
                        let out = execute_local(&job, &clock);
                        let event = Event::Finished {
                            slot,
                            generation: 0,
                            task_id: job.task_id,
                            attempt: job.attempt,
                            start_ns: out.start_ns,
                            end_ns: out.end_ns,
                            result: out.result.map(Output::Memory).map_err(|e| e.to_string()),
                        };
                        if events.send(event).is_err() {
                            break;
                        }
                    }
                })?;
            slots.push((tx, handle));
        }
        Ok(Self { slots })
    }

    pub(crate) fn launch(&self, slot: SlotId, job: Job) -> Result<(), String> {
        self.slots[slot]
            .0
            .send(job)
            .map_err(|_| format!("executor thread {slot} is gone"))
    }

    pub(crate) fn shutdown(self) {
        let handles: Vec<_> = self.slots.into_iter().map(|(tx, h)| {
            drop(tx);
            h
        }).collect();
        for h in handles {
            let _ = h.join();
        }
    }
}
