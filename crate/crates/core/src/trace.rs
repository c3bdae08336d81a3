//! Task lifecycle tracing and post-mortem timeline analysis.
//!
//! Executors append [`TraceEvent`]s to a bounded in-memory buffer while the
//! session runs. After the session stops, the buffer is sorted by timestamp
//! and written as CSV with the header `ts_ns,node,slot,task,function,kind,bytes`.
//! [`TraceSummary`] condenses the same events into per-function durations and
//! per-slot utilisation, and [`analysis`] re-checks scheduler invariants from
//! the timeline alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::error::Result;
use crate::graph::{NodeId, TaskId};
use crate::scheduler::SlotId;

pub const CSV_HEADER: &str = "ts_ns,node,slot,task,function,kind,bytes";
pub const DEFAULT_CAPACITY: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    Submit,
    Dispatch,
    Start,
    End,
    Fail,
    TransferStart,
    TransferEnd,
}

/// One timeline entry. Transfer events name the copied payload (`dXvY`) in
/// `function_id`, carry the consuming task in `task_id` and the destination
/// in `node_id`/`slot_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    #[serde(rename = "ts_ns")]
    pub timestamp_ns: u64,
    #[serde(rename = "node")]
    pub node_id: Option<NodeId>,
    #[serde(rename = "slot")]
    pub slot_id: Option<SlotId>,
    #[serde(rename = "task")]
    pub task_id: TaskId,
    #[serde(rename = "function")]
    pub function_id: String,
    pub kind: EventKind,
    pub bytes: u64,
}

impl TraceEvent {
    pub fn new(timestamp_ns: u64, task_id: TaskId, function_id: &str, kind: EventKind) -> Self {
        Self {
            timestamp_ns,
            node_id: None,
            slot_id: None,
            task_id,
            function_id: function_id.to_owned(),
            kind,
            bytes: 0,
        }
    }

    pub fn on(mut self, node: NodeId, slot: SlotId) -> Self {
        self.node_id = Some(node);
        self.slot_id = Some(slot);
        self
    }

    pub fn with_bytes(mut self, bytes: u64) -> Self {
        self.bytes = bytes;
        self
    }
}

/// Bounded event buffer. Appends past the capacity are dropped and counted.
#[derive(Debug)]
pub struct TraceRecorder {
    enabled: bool,
    capacity: usize,
    clock: Clock,
    events: Mutex<Vec<TraceEvent>>,
    dropped: AtomicU64,
}

impl TraceRecorder {
    pub fn new(enabled: bool, capacity: usize, clock: Clock) -> Self {
        Self {
            enabled,
            capacity,
            clock,
            events: Mutex::new(Vec::new()),
            dropped: AtomicU64::new(0),
        }
    }

    pub fn disabled() -> Self {
        Self::new(false, 0, Clock::start())
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn record(&self, event: TraceEvent) {
        if !self.enabled {
            return;
        }
        let mut events = self.events.lock().unwrap_or_else(|e| e.into_inner());
        if events.len() < self.capacity {
            events.push(event);
        } else {
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn truncated(&self) -> bool {
        self.dropped.load(Ordering::Relaxed) > 0
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.events.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy of the buffer sorted by timestamp.
    pub fn snapshot(&self) -> Vec<TraceEvent> {
        let mut events = self
            .events
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone();
        sort_events(&mut events);
        events
    }
}

/// Stable sort by timestamp, keeping lifecycle order for equal timestamps.
pub fn sort_events(events: &mut [TraceEvent]) {
    events.sort_by_key(|e| (e.timestamp_ns, e.kind));
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FunctionStats {
    pub count: usize,
    pub total_ns: u64,
    pub mean_ns: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotStats {
    pub node: Option<NodeId>,
    pub tasks: usize,
    pub busy_ns: u64,
    pub busy_fraction: f64,
    pub idle_gaps: usize,
    pub idle_gap_ns: u64,
    pub max_idle_gap_ns: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub events: usize,
    pub span_ns: u64,
    pub functions: BTreeMap<String, FunctionStats>,
    pub slots: BTreeMap<SlotId, SlotStats>,
    pub transfers: usize,
    pub transfer_bytes: u64,
    pub truncated: bool,
}

impl TraceSummary {
    pub fn from_events(events: &[TraceEvent]) -> Self {
        let runs = analysis::runs(events);
        let mut summary = TraceSummary {
            events: events.len(),
            ..Default::default()
        };
        let first = runs.iter().map(|r| r.start).min();
        let last = runs.iter().map(|r| r.end).max();
        if let (Some(a), Some(b)) = (first, last) {
            summary.span_ns = b - a;
        }
        for r in &runs {
            let f = summary.functions.entry(r.function_id.clone()).or_default();
            f.count += 1;
            f.total_ns += r.end - r.start;
        }
        for f in summary.functions.values_mut() {
            f.mean_ns = f.total_ns as f64 / f.count as f64;
        }
        for (slot, intervals) in analysis::busy_intervals(events) {
            let mut s = SlotStats {
                node: runs.iter().find(|r| r.slot == slot).map(|r| r.node),
                tasks: intervals.len(),
                ..Default::default()
            };
            s.busy_ns = intervals.iter().map(|iv| iv.1 - iv.0).sum();
            for w in intervals.windows(2) {
                let gap = w[1].0.saturating_sub(w[0].1);
                if gap > 0 {
                    s.idle_gaps += 1;
                    s.idle_gap_ns += gap;
                    s.max_idle_gap_ns = s.max_idle_gap_ns.max(gap);
                }
            }
            if summary.span_ns > 0 {
                s.busy_fraction = s.busy_ns as f64 / summary.span_ns as f64;
            }
            summary.slots.insert(slot, s);
        }
        for e in events.iter().filter(|e| e.kind == EventKind::TransferEnd) {
            summary.transfers += 1;
            summary.transfer_bytes += e.bytes;
        }
        summary
    }

    /// Aligned text rendering.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28} {:>7} {:>14} {:>14}", "function", "count", "total_ms", "mean_ms");
        for (name, f) in &self.functions {
            let _ = writeln!(
                s,
                "{:<28} {:>7} {:>14.3} {:>14.3}",
                name,
                f.count,
                f.total_ns as f64 / 1e6,
                f.mean_ns / 1e6
            );
        }
        let _ = writeln!(s, "{:<6} {:>5} {:>7} {:>12} {:>8} {:>10}", "slot", "node", "tasks", "busy_ms", "busy", "idle_gaps");
        for (slot, st) in &self.slots {
            let _ = writeln!(
                s,
                "{:<6} {:>5} {:>7} {:>12.3} {:>7.1}% {:>10}",
                slot,
                st.node.map_or("-".into(), |n| n.to_string()),
                st.tasks,
                st.busy_ns as f64 / 1e6,
                st.busy_fraction * 100.0,
                st.idle_gaps
            );
        }
        let _ = writeln!(
            s,
            "span {:.3} ms, {} transfers ({} bytes){}",
            self.span_ns as f64 / 1e6,
            self.transfers,
            self.transfer_bytes,
            if self.truncated { ", TRUNCATED" } else { "" }
        );
        s
    }
}

/// Writes the CSV trace (sorted by timestamp) and returns its summary.
pub fn export_trace(events: &[TraceEvent], path: &Path) -> Result<TraceSummary> {
    let mut sorted = events.to_vec();
    sort_events(&mut sorted);
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    // serde writes the header from field names; an empty trace still needs one
    if sorted.is_empty() {
        w.write_record(CSV_HEADER.split(',')).map_err(csv_io)?;
    }
    for e in &sorted {
        w.serialize(e).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(TraceSummary::from_events(&sorted))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceEvent>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_io)?;
    r.deserialize().map(|e| e.map_err(csv_io)).collect()
}

pub fn write_summary_json(summary: &TraceSummary, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(summary).map_err(std::io::Error::other)?;
    fs::write(path, json)?;
    Ok(())
}

fn csv_io(e: csv::Error) -> crate::error::RuntimeError {
    std::io::Error::other(e).into()
}

/// Checks that re-derive scheduler and executor invariants from a trace.
pub mod analysis {
    use std::collections::{BTreeMap, BTreeSet, HashMap};

    use super::{EventKind, TraceEvent};
    use crate::graph::{Edge, NodeId, TaskId};
    use crate::scheduler::SlotId;

    /// One execution attempt: a Start paired with the End or Fail after it.
    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct Run {
        pub task_id: TaskId,
        pub function_id: String,
        pub node: NodeId,
        pub slot: SlotId,
        pub start: u64,
        pub end: u64,
        pub failed: bool,
    }

    fn by_task(events: &[TraceEvent]) -> BTreeMap<TaskId, Vec<&TraceEvent>> {
        let mut map: BTreeMap<TaskId, Vec<&TraceEvent>> = BTreeMap::new();
        for e in events {
            map.entry(e.task_id).or_default().push(e);
        }
        for v in map.values_mut() {
            v.sort_by_key(|e| (e.timestamp_ns, e.kind));
        }
        map
    }

    pub fn runs(events: &[TraceEvent]) -> Vec<Run> {
        let mut out = Vec::new();
        for (task_id, evs) in by_task(events) {
            let mut open: Option<&TraceEvent> = None;
            for e in evs {
                match e.kind {
                    EventKind::Start => open = Some(e),
                    EventKind::End | EventKind::Fail => {
                        if let Some(s) = open.take() {
                            out.push(Run {
                                task_id,
                                function_id: s.function_id.clone(),
                                node: s.node_id.unwrap_or(0),
                                slot: s.slot_id.unwrap_or(0),
                                start: s.timestamp_ns,
                                end: e.timestamp_ns.max(s.timestamp_ns),
                                failed: e.kind == EventKind::Fail,
                            });
                        }
                    }
                    _ => {}
                }
            }
        }
        out
    }

    /// Per-slot `[start, end]` busy intervals sorted by start.
    pub fn busy_intervals(events: &[TraceEvent]) -> BTreeMap<SlotId, Vec<(u64, u64, TaskId)>> {
        let mut map: BTreeMap<SlotId, Vec<(u64, u64, TaskId)>> = BTreeMap::new();
        for r in runs(events) {
            map.entry(r.slot).or_default().push((r.start, r.end, r.task_id));
        }
        for v in map.values_mut() {
            v.sort();
        }
        map
    }

    fn count(events: &[TraceEvent], kind: EventKind) -> usize {
        events.iter().filter(|e| e.kind == kind).count()
    }

    /// Returns a description of every violated trace invariant:
    /// event-count conservation, per-task lifecycle ordering, per-slot busy
    /// interval disjointness, and `End(producer) <= Start(consumer)` for every
    /// edge.
    pub fn check_integrity(events: &[TraceEvent], edges: &[Edge]) -> Vec<String> {
        let mut errs = Vec::new();
        let (starts, ends, fails, dispatches) = (
            count(events, EventKind::Start),
            count(events, EventKind::End),
            count(events, EventKind::Fail),
            count(events, EventKind::Dispatch),
        );
        if starts != ends + fails {
            errs.push(format!("start count {starts} != end {ends} + fail {fails}"));
        }
        if dispatches < starts {
            errs.push(format!("dispatch count {dispatches} < start count {starts}"));
        }

        let tasks = by_task(events);
        for (task, evs) in &tasks {
            let first = |k: EventKind| evs.iter().find(|e| e.kind == k).map(|e| e.timestamp_ns);
            let order = [
                first(EventKind::Submit),
                first(EventKind::Dispatch),
                first(EventKind::Start),
            ];
            let present: Vec<u64> = order.iter().flatten().copied().collect();
            if present.windows(2).any(|w| w[0] > w[1]) {
                errs.push(format!("task {task}: Submit/Dispatch/Start out of order"));
            }
            for e in evs.iter().filter(|e| matches!(e.kind, EventKind::Start | EventKind::End)) {
                if e.slot_id.is_none() {
                    errs.push(format!("task {task}: {:?} without slot", e.kind));
                }
            }
        }

        for (slot, iv) in busy_intervals(events) {
            for w in iv.windows(2) {
                if w[1].0 < w[0].1 {
                    errs.push(format!(
                        "slot {slot}: task {} starts at {} before task {} ends at {}",
                        w[1].2, w[1].0, w[0].2, w[0].1
                    ));
                }
            }
        }

        let last_end: HashMap<TaskId, u64> = runs(events)
            .into_iter()
            .filter(|r| !r.failed)
            .map(|r| (r.task_id, r.end))
            .collect();
        for e in edges {
            let Some(&pend) = last_end.get(&e.producer) else {
                continue;
            };
            if let Some(evs) = tasks.get(&e.consumer) {
                for s in evs.iter().filter(|x| x.kind == EventKind::Start) {
                    if s.timestamp_ns < pend {
                        errs.push(format!(
                            "edge {}->{}: consumer started at {} before producer ended at {pend}",
                            e.producer, e.consumer, s.timestamp_ns
                        ));
                    }
                }
            }
        }
        errs
    }

    /// Finds moments where a slot sat idle while some task was ready, longer
    /// than `tolerance_ns`. A task is ready from the later of its Submit and
    /// its producers' End (or from its previous Fail when retried) until its
    /// Dispatch; a slot is idle from its last End/Fail (or time 0) until its
    /// next Dispatch.
    pub fn work_conservation_violations(
        events: &[TraceEvent],
        edges: &[Edge],
        slots: &BTreeSet<SlotId>,
        tolerance_ns: u64,
    ) -> Vec<String> {
        let tasks = by_task(events);
        let last_end: HashMap<TaskId, u64> = runs(events)
            .into_iter()
            .filter(|r| !r.failed)
            .map(|r| (r.task_id, r.end))
            .collect();
        let mut producers: HashMap<TaskId, Vec<TaskId>> = HashMap::new();
        for e in edges {
            producers.entry(e.consumer).or_default().push(e.producer);
        }

        let mut waits = Vec::new();
        for (task, evs) in &tasks {
            let submit = evs
                .iter()
                .find(|e| e.kind == EventKind::Submit)
                .map_or(0, |e| e.timestamp_ns);
            let deps_done = producers
                .get(task)
                .into_iter()
                .flatten()
                .filter_map(|p| last_end.get(p))
                .max()
                .copied()
                .unwrap_or(0);
            let mut ready_at = submit.max(deps_done);
            for e in evs.iter() {
                match e.kind {
                    EventKind::Dispatch => {
                        waits.push((*task, ready_at, e.timestamp_ns));
                        ready_at = u64::MAX;
                    }
                    EventKind::Fail => ready_at = e.timestamp_ns,
                    _ => {}
                }
            }
        }

        let mut idle: BTreeMap<SlotId, Vec<(u64, u64)>> =
            slots.iter().map(|&s| (s, Vec::new())).collect();
        let mut per_slot: BTreeMap<SlotId, Vec<&TraceEvent>> = BTreeMap::new();
        for e in events {
            if let (Some(slot), EventKind::Dispatch | EventKind::End | EventKind::Fail) = (e.slot_id, e.kind) {
                per_slot.entry(slot).or_default().push(e);
            }
        }
        for slot in slots {
            let mut evs = per_slot.remove(slot).unwrap_or_default();
            evs.sort_by_key(|e| (e.timestamp_ns, e.kind));
            let mut idle_since = Some(0u64);
            let list = idle.get_mut(slot).unwrap();
            for e in evs {
                match e.kind {
                    EventKind::Dispatch => {
                        if let Some(a) = idle_since.take() {
                            list.push((a, e.timestamp_ns));
                        }
                    }
                    _ => idle_since = Some(e.timestamp_ns),
                }
            }
            if let Some(a) = idle_since {
                list.push((a, u64::MAX));
            }
        }

        let mut out = Vec::new();
        for &(task, ready, dispatched) in &waits {
            if dispatched <= ready {
                continue;
            }
            for (slot, list) in &idle {
                for &(a, b) in list {
                    let lo = a.max(ready);
                    let hi = b.min(dispatched);
                    if hi > lo && hi - lo > tolerance_ns {
                        out.push(format!(
                            "slot {slot} idle for {} ns while task {task} was ready",
                            hi - lo
                        ));
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(ts: u64, task: TaskId, kind: EventKind, slot: SlotId) -> TraceEvent {
        TraceEvent::new(ts, task, "f", kind).on(0, slot)
    }

    #[test]
    fn disabled_recorder_is_noop() {
        let r = TraceRecorder::disabled();
        r.record(ev(1, 1, EventKind::Start, 0));
        assert!(r.is_empty());
        assert!(!r.truncated());
    }

    #[test]
    fn overflow_sets_truncation() {
        let r = TraceRecorder::new(true, 2, Clock::start());
        for i in 0..5 {
            r.record(ev(i, 1, EventKind::Submit, 0));
        }
        assert_eq!(r.len(), 2);
        assert_eq!(r.dropped(), 3);
        assert!(r.truncated());
    }

    #[test]
    fn empty_trace_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let s = export_trace(&[], &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().trim(), CSV_HEADER);
        assert_eq!(s, TraceSummary::default());
        assert!(read_trace(&path).unwrap().is_empty());
    }

    #[test]
    fn csv_is_sorted_and_parses_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let events = vec![
            ev(30, 1, EventKind::End, 0),
            TraceEvent::new(5, 1, "f", EventKind::Submit),
            ev(10, 1, EventKind::Dispatch, 0),
            ev(12, 1, EventKind::Start, 0),
        ];
        let summary = export_trace(&events, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert!(text.contains("5,,,1,f,Submit,0"));
        let back = read_trace(&path).unwrap();
        assert_eq!(back.iter().map(|e| e.timestamp_ns).collect::<Vec<_>>(), [5, 10, 12, 30]);
        assert_eq!(summary.functions["f"].count, 1);
        assert_eq!(summary.functions["f"].total_ns, 18);
        assert_eq!(summary.slots[&0].busy_fraction, 1.0);
    }

    #[test]
    fn integrity_catches_overlap_and_order() {
        let events = vec![
            ev(0, 1, EventKind::Dispatch, 0),
            ev(1, 1, EventKind::Start, 0),
            ev(0, 2, EventKind::Dispatch, 0),
            ev(5, 2, EventKind::Start, 0),
            ev(10, 1, EventKind::End, 0),
            ev(12, 2, EventKind::End, 0),
        ];
        let edge = crate::graph::Edge {
            producer: 1,
            consumer: 2,
            data: crate::graph::DataHandle {
                data_id: 1,
                version: 1,
            },
        };
        let errs = analysis::check_integrity(&events, &[edge]);
        assert!(errs.iter().any(|e| e.contains("slot 0")), "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("edge 1->2")), "{errs:?}");
    }

    #[test]
    fn idle_slot_with_waiting_task_is_flagged() {
        let slots = [0, 1].into_iter().collect();
        let events = vec![
            TraceEvent::new(0, 1, "f", EventKind::Submit),
            TraceEvent::new(0, 2, "f", EventKind::Submit),
            ev(1, 1, EventKind::Dispatch, 0),
            ev(2, 1, EventKind::Start, 0),
            ev(100, 1, EventKind::End, 0),
            // task 2 waits for slot 0 although slot 1 is free the whole time
            ev(101, 2, EventKind::Dispatch, 0),
            ev(102, 2, EventKind::Start, 0),
            ev(200, 2, EventKind::End, 0),
        ];
        let v = analysis::work_conservation_violations(&events, &[], &slots, 10);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].starts_with("slot 1"));
        assert!(analysis::work_conservation_violations(&events, &[], &slots, 1000).is_empty());
    }
}
