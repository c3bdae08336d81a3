//! Monotonic session clock shared by the master and worker processes.
//!
//! Timestamps come from `CLOCK_MONOTONIC`, which is system-wide, so a worker
//! process that knows the session origin produces values comparable with the
//! master's.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Clock {
    origin_ns: u64,
}

/// Raw `CLOCK_MONOTONIC` reading in nanoseconds.
pub fn monotonic_ns() -> u64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    // SAFETY: `ts` is a valid, writable timespec.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
    assert_eq!(rc, 0, "CLOCK_MONOTONIC unavailable");
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

impl Clock {
    pub fn start() -> Self {
        Self {
            origin_ns: monotonic_ns(),
        }
    }

    pub fn from_origin(origin_ns: u64) -> Self {
        Self { origin_ns }
    }

    pub fn origin_ns(&self) -> u64 {
        self.origin_ns
    }

    /// Nanoseconds since the origin.
    pub fn now(&self) -> u64 {
        monotonic_ns().saturating_sub(self.origin_ns)
    }
}
