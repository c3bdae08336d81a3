//! Persistent worker process main loop.
//!
//! A worker is spawned once per executor slot and lives for the whole
//! session. It reads requests from stdin, loads inputs from payload files,
//! runs the task function and writes the output file before reporting back
//! on stdout.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;

use crate::catalog::FunctionCatalog;
use crate::clock::Clock;
use crate::codec;
use crate::executor::protocol::{self, ExecuteRequest, FromWorker, ToWorker, WorkerResult};
use crate::executor::panic_message;
use crate::value::Value;

/// Serves requests until `Shutdown` or end of input.
pub fn serve<R: Read, W: Write>(input: R, output: W, catalog: &FunctionCatalog) -> io::Result<()> {
    let mut input = BufReader::new(input);
    let mut output = BufWriter::new(output);
    let clock = match protocol::recv::<_, ToWorker>(&mut input)? {
        Some(ToWorker::Init { origin_ns, .. }) => Clock::from_origin(origin_ns),
        Some(other) => {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("expected Init, got {other:?}"),
            ))
        }
        None => return Ok(()),
    };
    protocol::send(
        &mut output,
        &FromWorker::Ready {
            pid: std::process::id(),
        },
    )?;

    while let Some(msg) = protocol::recv::<_, ToWorker>(&mut input)? {
        match msg {
            ToWorker::Execute(req) => {
                protocol::send(
                    &mut output,
                    &FromWorker::Started {
                        task_id: req.task_id,
                        attempt: req.attempt,
                        ts_ns: clock.now(),
                    },
                )?;
                let start_ns = clock.now();
                let result = run_request(&req, catalog);
                let end_ns = clock.now();
                protocol::send(
                    &mut output,
                    &FromWorker::Finished {
                        task_id: req.task_id,
                        attempt: req.attempt,
                        start_ns,
                        end_ns,
                        result,
                    },
                )?;
            }
            ToWorker::Shutdown => break,
            ToWorker::Init { .. } => {
                return Err(io::Error::new(io::ErrorKind::InvalidData, "duplicate Init"));
            }
        }
    }
    Ok(())
}

fn run_request(req: &ExecuteRequest, catalog: &FunctionCatalog) -> WorkerResult {
    let err = |message: String| WorkerResult::Err { message };
    let Some(func) = catalog.get(&req.function_id) else {
        return err(format!("unknown task function `{}`", req.function_id));
    };
    let mut args = Vec::with_capacity(req.inputs.len());
    for path in &req.inputs {
        match codec::read_payload_file(path) {
            Ok(v) => args.push(Arc::new(v)),
            Err(e) => return err(e.to_string()),
        }
    }
    let value = match panic::catch_unwind(AssertUnwindSafe(|| func(&args))) {
        Ok(Ok(v)) => v,
        Ok(Err(e)) => return err(e.to_string()),
        Err(payload) => return err(format!("task panicked: {}", panic_message(&*payload))),
    };
    match (&req.output, value) {
        (None, _) | (Some(_), Value::Unit) => WorkerResult::Ok { output_bytes: 0 },
        (Some(path), value) => match codec::write_payload_file(path, &value) {
            Ok(output_bytes) => WorkerResult::Ok { output_bytes },
            Err(e) => err(format!("writing {}: {e}", path.display())),
        },
    }
}

/// Entry point for worker binaries: serves the builtin catalog over
/// stdin/stdout and returns the process exit code.
pub fn main_with_builtins() -> i32 {
    // panics are reported over the channel; keep stderr quiet
    panic::set_hook(Box::new(|_| {}));
    let catalog = FunctionCatalog::builtin();
    match serve(io::stdin().lock(), io::stdout().lock(), &catalog) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("tfrt worker: {e}");
            1
        }
    }
}
