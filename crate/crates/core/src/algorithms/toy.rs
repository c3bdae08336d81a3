//! Small programs: the four-number addition and synthetic sleep and no-op
//! workloads for scheduler measurements.

use crate::error::{Result, RuntimeError};
use crate::runtime::{Arg, RuntimeSession};
use crate::value::Value;

/// `add(add(4, 5), add(6, 7))`.
pub fn run_toy(session: &mut RuntimeSession) -> Result<i64> {
    let add = session.task("add", 2, true)?;
    let f1 = session.invoke(&add, [4i64, 5])?;
    let f2 = session.invoke(&add, [6i64, 7])?;
    let f3 = session.invoke(&add, [f1, f2])?;
    session
        .wait_on(&f3)?
        .as_i64()
        .map_err(|e| RuntimeError::UnexpectedResult(e.to_string()))
}

/// `tasks` independent sleeps of `ms` milliseconds, then a barrier.
pub fn run_sleep(session: &mut RuntimeSession, tasks: usize, ms: u64) -> Result<()> {
    let sleep = session.task("sleep_ms", 2, true)?;
    for i in 0..tasks {
        session.invoke(&sleep, [Arg::from(ms as i64), Arg::from(i as i64)])?;
    }
    session.barrier()
}

/// `tasks` independent no-op tasks, then a barrier.
pub fn run_noop(session: &mut RuntimeSession, tasks: usize) -> Result<()> {
    let noop = session.task("noop", 0, false)?;
    for _ in 0..tasks {
        session.invoke(&noop, Vec::<Value>::new())?;
    }
    session.barrier()
}
