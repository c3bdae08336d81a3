//! Master/worker control channel.
//!
//! Each frame is a little-endian `u32` byte length followed by that many
//! bytes of JSON-encoded message.

use std::io::{self, Read, Write};
use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::graph::{NodeId, TaskId};
use crate::scheduler::SlotId;

pub const MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecuteRequest {
    pub task_id: TaskId,
    pub attempt: u32,
    pub function_id: String,
    pub inputs: Vec<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum ToWorker {
    /// First message after spawn; carries the session time origin.
    Init {
        origin_ns: u64,
        node_id: NodeId,
        slot_id: SlotId,
    },
    Execute(ExecuteRequest),
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum WorkerResult {
    Ok { output_bytes: u64 },
    Err { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum FromWorker {
    Ready {
        pid: u32,
    },
    Started {
        task_id: TaskId,
        attempt: u32,
        ts_ns: u64,
    },
    Finished {
        task_id: TaskId,
        attempt: u32,
        start_ns: u64,
        end_ns: u64,
        result: WorkerResult,
    },
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|&l| l as usize <= MAX_FRAME)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream before the
/// length prefix.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

pub fn send<W: Write, T: Serialize>(w: &mut W, msg: &T) -> io::Result<()> {
    let bytes = serde_json::to_vec(msg).map_err(io::Error::other)?;
    write_frame(w, &bytes)
}

pub fn recv<R: Read, T: DeserializeOwned>(r: &mut R) -> io::Result<Option<T>> {
    match read_frame(r)? {
        None => Ok(None),
        Some(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framing_is_length_prefixed() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"hello").unwrap();
        assert_eq!(&buf[..4], &5u32.to_le_bytes());
        assert_eq!(&buf[4..], b"hello");
        let mut r = &buf[..];
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"hello");
        assert_eq!(read_frame(&mut r).unwrap(), None);
    }

    #[test]
    fn truncated_frame_is_an_error() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"hello").unwrap();
        let mut r = &buf[..6];
        assert!(read_frame(&mut r).is_err());
        let mut r = &buf[..2];
        assert!(read_frame(&mut r).is_err());
    }

    #[test]
    fn messages_roundtrip() {
        let msg = ToWorker::Execute(ExecuteRequest {
            task_id: 3,
            attempt: 1,
            function_id: "add".into(),
            inputs: vec!["/s/node0/d1_v1.bin".into(), "/s/node0/d2_v1.bin".into()],
            output: Some("/s/node0/d3_v1.bin".into()),
        });
        let mut buf = Vec::new();
        send(&mut buf, &msg).unwrap();
        send(&mut buf, &ToWorker::Shutdown).unwrap();
        let mut r = &buf[..];
        assert_eq!(recv::<_, ToWorker>(&mut r).unwrap(), Some(msg));
        assert_eq!(recv::<_, ToWorker>(&mut r).unwrap(), Some(ToWorker::Shutdown));
        assert_eq!(recv::<_, ToWorker>(&mut r).unwrap(), None);
    }
}
