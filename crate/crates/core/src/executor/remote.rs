//! Master side of the multi-process backend.
//!
//! Every executor slot is backed by one persistent worker process. Slots are
//! grouped into virtual nodes; node `k` owns the scratch directory
//! `<scratch_dir>/node<k>/` and only sees payload files placed there. Moving
//! a payload between nodes is an explicit file copy performed by the master.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::Sender;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::catalog::WORKER_ENV;
use crate::clock::Clock;
use crate::executor::protocol::{self, ExecuteRequest, FromWorker, ToWorker, WorkerResult};
use crate::executor::{Event, Output};
use crate::graph::NodeId;
use crate::scheduler::SlotId;

pub const WORKER_EXE_ENV: &str = "TFRT_WORKER_EXE";
const WORKER_BIN: &str = "tfrt-worker";

/// Command used to start a worker process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerProgram {
    pub path: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

impl WorkerProgram {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            args: Vec::new(),
        }
    }

    pub fn with_args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.args = args.into_iter().map(Into::into).collect();
        self
    }

    /// `$TFRT_WORKER_EXE`, else a `tfrt-worker` binary next to the current
    /// executable or one directory up (test binaries live in `deps/`).
    pub fn locate() -> Option<Self> {
        if let Some(p) = std::env::var_os(WORKER_EXE_ENV) {
            return Some(Self::new(p));
        }
        let exe = std::env::current_exe().ok()?;
        let dir = exe.parent()?;
        let name = format!("{WORKER_BIN}{}", std::env::consts::EXE_SUFFIX);
        [dir.join(&name), dir.parent()?.join(&name)]
            .into_iter()
            .find(|p| p.is_file())
            .map(Self::new)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VirtualNode {
    pub node_id: NodeId,
    pub scratch_dir: PathBuf,
    pub executor_count: usize,
}

pub fn node_dir(scratch: &Path, node: NodeId) -> PathBuf {
    scratch.join(format!("node{node}"))
}

fn is_runtime_file(name: &str) -> bool {
    (name.starts_with('d') || name.starts_with("imm_")) && (name.ends_with(".bin") || name.contains(".tmp"))
}

/// Creates the node directory and removes payload files left by an earlier
/// session.
pub(crate) fn prepare_node_dir(dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() && is_runtime_file(&entry.file_name().to_string_lossy()) {
            fs::remove_file(entry.path())?;
        }
    }
    Ok(())
}

/// Copies a payload file into another node's directory through a temporary
/// name and a rename. Returns the number of bytes copied.
pub fn copy_payload(src: &Path, dst: &Path) -> io::Result<u64> {
    let mut tmp: OsString = dst.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let n = fs::copy(src, &tmp)?;
    fs::rename(&tmp, dst)?;
    Ok(n)
}

struct WorkerHandle {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    pid: u32,
    reader: Option<JoinHandle<()>>,
}

pub(crate) struct ProcessPool {
    program: WorkerProgram,
    nodes: Vec<VirtualNode>,
    workers: Vec<Option<WorkerHandle>>,
    generations: Vec<u64>,
    clock: Clock,
    events: Sender<Event>,
}

impl ProcessPool {
    pub(crate) fn spawn(
        program: WorkerProgram,
        nodes: Vec<VirtualNode>,
        clock: Clock,
        events: Sender<Event>,
    ) -> Result<Self, (NodeId, String)> {
        let slot_count = nodes.iter().map(|n| n.executor_count).sum();
        let mut pool = Self {
            program,
            nodes,
            workers: (0..slot_count).map(|_| None).collect(),
            generations: vec![0; slot_count],
            clock,
            events,
        };
        for slot in 0..slot_count {
            if let Err(e) = pool.start_worker(slot) {
                let node = pool.node_of(slot);
                pool.shutdown();
                return Err((node, e));
            }
        }
        Ok(pool)
    }

    pub(crate) fn node_of(&self, slot: SlotId) -> NodeId {
        let mut first = 0;
        for n in &self.nodes {
            if slot < first + n.executor_count {
                return n.node_id;
            }
            first += n.executor_count;
        }
        panic!("slot {slot} out of range");
    }

    pub(crate) fn pid(&self, slot: SlotId) -> Option<u32> {
        self.workers[slot].as_ref().map(|w| w.pid)
    }

    pub(crate) fn generation(&self, slot: SlotId) -> u64 {
        self.generations[slot]
    }

    fn start_worker(&mut self, slot: SlotId) -> Result<(), String> {
        let node = self.node_of(slot);
        let mut child = Command::new(&self.program.path)
            .args(&self.program.args)
            .env(WORKER_ENV, "1")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| format!("{}: {e}", self.program.path.display()))?;
        let mut stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let mut stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let init = ToWorker::Init {
            origin_ns: self.clock.origin_ns(),
            node_id: node,
            slot_id: slot,
        };
        let handshake = protocol::send(&mut stdin, &init)
            .and_then(|_| protocol::recv::<_, FromWorker>(&mut stdout));
        let pid = match handshake {
            Ok(Some(FromWorker::Ready { pid })) => pid,
            other => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(format!("worker handshake failed: {other:?}"));
            }
        };

        self.generations[slot] += 1;
        let generation = self.generations[slot];
        let events = self.events.clone();
        let reader = thread::Builder::new()
            .name(format!("tfrt-worker-{slot}"))
            .spawn(move || {
                loop {
                    let event = match protocol::recv::<_, FromWorker>(&mut stdout) {
                        Ok(Some(FromWorker::Started { task_id, attempt, ts_ns })) => Event::Started {
                            slot,
                            generation,
                            task_id,
                            attempt,
                            ts_ns,
                        },
                        Ok(Some(FromWorker::Finished {
                            task_id,
                            attempt,
                            start_ns,
                            end_ns,
                            result,
                        })) => Event::Finished {
                            slot,
                            generation,
                            task_id,
                            attempt,
                            start_ns,
                            end_ns,
                            result: match result {
                                WorkerResult::Ok { output_bytes } => Ok(Output::File { bytes: output_bytes }),
                                WorkerResult::Err { message } => Err(message),
                            },
                        },
                        Ok(Some(FromWorker::Ready { .. })) => continue,
                        Ok(None) | Err(_) => {
                            let _ = events.send(Event::WorkerExited { slot, generation });
                            break;
                        }
                    };
                    if events.send(event).is_err() {
                        break;
                    }
                }
            })
            .map_err(|e| e.to_string())?;
        log::debug!("slot {slot} on node {node}: worker pid {pid}");
        self.workers[slot] = Some(WorkerHandle {
            child,
            stdin,
            pid,
            reader: Some(reader),
        });
        Ok(())
    }

    pub(crate) fn execute(&mut self, slot: SlotId, req: &ExecuteRequest) -> io::Result<()> {
        let w = self.workers[slot]
            .as_mut()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotConnected, "no worker"))?;
        protocol::send(&mut w.stdin, &ToWorker::Execute(req.clone()))
    }

    /// Reaps a dead worker and starts a replacement on the same slot.
    pub(crate) fn respawn(&mut self, slot: SlotId) -> Result<u32, String> {
        if let Some(mut w) = self.workers[slot].take() {
            let _ = w.child.kill();
            let _ = w.child.wait();
            if let Some(r) = w.reader.take() {
                let _ = r.join();
            }
        }
        self.start_worker(slot)?;
        Ok(self.pid(slot).expect("just started"))
    }

    pub(crate) fn shutdown(&mut self) {
        for w in self.workers.iter_mut().flatten() {
            let _ = protocol::send(&mut w.stdin, &ToWorker::Shutdown);
        }
        let deadline = Instant::now() + Duration::from_secs(5);
        for w in self.workers.iter_mut().filter_map(Option::take) {
            let WorkerHandle {
                mut child, reader, ..
            } = w;
            loop {
                match child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(2)),
                    _ => {
                        let _ = child.kill();
                        let _ = child.wait();
                        break;
                    }
                }
            }
            if let Some(r) = reader {
                let _ = r.join();
            }
        }
    }
}

impl Drop for ProcessPool {
    fn drop(&mut self) {
        self.shutdown();
    }
}
