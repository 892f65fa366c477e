//! Per-event metric records and their aggregates.
//!
//! Every aggregate is recomputed from the records on demand — there is no
//! hidden accumulator that could drift from the CSV on disk. Each record
//! carries both simulation timestamps (deterministic, compared across
//! runs) and wall-clock milliseconds (informational, excluded from
//! determinism checks).

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use iovtwin_core::events::EventType;

use crate::config::Mode;
use crate::ExperimentError;

/// One event's journey through the service layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_type: EventType,
    pub entity_id: String,
    /// Simulation time the event was emitted (its report instant).
    pub emit_ts: f64,
    /// Simulation time the wire delivered it to the service layer.
    pub receipt_ts: f64,
    /// Simulation time its twin was committed; `None` if the event was
    /// evicted or rejected before reaching a twin.
    pub commit_ts: Option<f64>,
    /// Completion time of the feedback decision taken by the window this
    /// event was committed in, when that window produced one.
    pub feedback_ts: Option<f64>,
    /// Wall-clock instants (ms since run start) for the same milestones.
    pub emit_wall_ms: f64,
    pub receipt_wall_ms: f64,
    pub commit_wall_ms: Option<f64>,
}

impl EventRecord {
    /// Processing time in simulated milliseconds: twin commit minus emit.
    pub fn processing_ms(&self) -> Option<f64> {
        self.commit_ts.map(|c| (c - self.emit_ts) * 1000.0)
    }

    /// Latency in simulated milliseconds: wire receipt minus emit.
    pub fn latency_ms(&self) -> f64 {
        (self.receipt_ts - self.emit_ts) * 1000.0
    }
}

/// Drop ledger: every way an event can fail to become a twin commit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DropCounts {
    /// Emitted while the server's STREAM flag was off (never left the
    /// physical side).
    pub server_not_streaming: u64,
    /// Relay refused: the publisher's STREAM flag was off.
    pub publisher: u64,
    /// Rejected by the broker while recovering from a fault.
    pub rejected_during_recovery: u64,
    /// Evicted from a full queue to admit a newer event.
    pub queue_overflow: u64,
    /// Out-of-order report discarded by the twin layer.
    pub stale: u64,
}

impl DropCounts {
    pub fn total(&self) -> u64 {
        self.server_not_streaming
            + self.publisher
            + self.rejected_during_recovery
            + self.queue_overflow
            + self.stale
    }
}

/// Everything one experiment run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sensors: usize,
    pub mode: Mode,
    pub seed: u64,
    pub duration_s: f64,
    pub records: Vec<EventRecord>,
    pub drops: DropCounts,
    pub feedback_count: u64,
    /// Completed fault/recovery cycles.
    pub recoveries: u64,
    pub frames_sent: u64,
    pub bytes_sent: u64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0u64;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Nearest-rank p95 (the value at ceil(0.95 n) in sorted order).
fn p95(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let rank = ((values.len() as f64) * 0.95).ceil() as usize;
    Some(values[rank.saturating_sub(1)])
}

impl MetricsReport {
    /// Events that made it to a twin.
    pub fn committed(&self) -> usize {
        self.records.iter().filter(|r| r.commit_ts.is_some()).count()
    }

    pub fn received(&self) -> usize {
        self.records.len()
    }

    pub fn mean_processing_ms(&self) -> Option<f64> {
        mean(self.records.iter().filter_map(EventRecord::processing_ms))
    }

    pub fn mean_latency_ms(&self) -> Option<f64> {
        mean(self.records.iter().map(EventRecord::latency_ms))
    }

    pub fn p95_processing_ms(&self) -> Option<f64> {
        p95(self.records.iter().filter_map(EventRecord::processing_ms).collect())
    }

    pub fn p95_latency_ms(&self) -> Option<f64> {
        p95(self.records.iter().map(EventRecord::latency_ms).collect())
    }

    pub const CSV_HEADER: &'static str = "event_type,entity_id,emit_ts,receipt_ts,commit_ts,\
                                          feedback_ts,emit_wall_ms,receipt_wall_ms,commit_wall_ms";

    /// Renders the per-event records. Identical reports yield bit-identical
    /// CSV; an empty report is header-only.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            out.push_str(&format!(
                "{:?},{},{},{},{},{},{},{},{}\n",
                r.event_type,
                r.entity_id,
                r.emit_ts,
                r.receipt_ts,
                fmt_opt(r.commit_ts),
                fmt_opt(r.feedback_ts),
                r.emit_wall_ms,
                r.receipt_wall_ms,
                fmt_opt(r.commit_wall_ms),
            ));
        }
        out
    }

    /// Human-readable aggregate block; every number is recomputed from the
    /// records above.
    pub fn summary(&self) -> String {
        let fmt = |v: Option<f64>| {
            v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into())
        };
        format!(
            "run: mode={} sensors={} seed={} duration={}s\n\
             events: received={} committed={} dropped={} (server={} publisher={} recovery={} \
             overflow={} stale={})\n\
             processing ms: mean={} p95={}\n\
             latency ms: mean={} p95={}\n\
             feedback commands={} recoveries={} frames={} bytes={}\n",
            self.mode,
            self.sensors,
            self.seed,
            self.duration_s,
            self.received(),
            self.committed(),
            self.drops.total(),
            self.drops.server_not_streaming,
            self.drops.publisher,
            self.drops.rejected_during_recovery,
            self.drops.queue_overflow,
            self.drops.stale,
            fmt(self.mean_processing_ms()),
            fmt(self.p95_processing_ms()),
            fmt(self.mean_latency_ms()),
            fmt(self.p95_latency_ms()),
            self.feedback_count,
            self.recoveries,
            self.frames_sent,
            self.bytes_sent,
        )
    }
}

/// Writes the per-event CSV to `path` and the aggregate summary next to it
/// (same stem, `.txt`).
pub fn write_report(report: &MetricsReport, path: &Path) -> Result<(), ExperimentError> {
    let io = |e: std::io::Error| ExperimentError::Io { path: path.display().to_string(), source: e };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
    }
    let mut file = std::fs::File::create(path).map_err(io)?;
    file.write_all(report.to_csv().as_bytes()).map_err(io)?;
    let summary_path = path.with_extension("txt");
    std::fs::write(&summary_path, report.summary()).map_err(|e| ExperimentError::Io {
        path: summary_path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(emit: f64, receipt: f64, commit: Option<f64>) -> EventRecord {
        EventRecord {
            event_type: EventType::E1,
            entity_id: "veh-000001".into(),
            emit_ts: emit,
            receipt_ts: receipt,
            commit_ts: commit,
            feedback_ts: None,
            emit_wall_ms: 1.0,
            receipt_wall_ms: 2.0,
            commit_wall_ms: commit.map(|_| 3.0),
        }
    }

    fn empty_report() -> MetricsReport {
        MetricsReport {
            sensors: 5,
            mode: Mode::DtNative,
            seed: 1,
            duration_s: 60.0,
            records: vec![],
            drops: DropCounts::default(),
            feedback_count: 0,
            recoveries: 0,
            frames_sent: 0,
            bytes_sent: 0,
        }
    }

    #[test]
    fn aggregates_recompute_from_records() {
        let mut r = empty_report();
        r.records = vec![
            record(0.0, 0.01, Some(5.0)),
            record(2.0, 2.02, Some(6.0)),
            record(4.0, 4.03, None),
        ];
        assert_eq!(r.received(), 3);
        assert_eq!(r.committed(), 2);
        // Processing over committed only: (5000 + 4000) / 2.
        assert_eq!(r.mean_processing_ms().unwrap(), 4500.0);
        // Latency over all: (10 + 20 + 30) / 3.
        assert!((r.mean_latency_ms().unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(r.p95_processing_ms().unwrap(), 5000.0);
    }

    #[test]
    fn empty_report_writes_header_only_csv() {
        let r = empty_report();
        assert_eq!(r.to_csv(), format!("{}\n", MetricsReport::CSV_HEADER));
        assert!(r.mean_processing_ms().is_none());
    }

    #[test]
    fn identical_reports_write_identical_bytes() {
        let mut r = empty_report();
        r.records = vec![record(0.0, 0.25, Some(10.0)), record(1.0, 1.5, None)];
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        write_report(&r, &p1).unwrap();
        write_report(&r.clone(), &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let body = std::fs::read_to_string(&p1).unwrap();
        assert!(body.contains("E1,veh-000001,0,0.25,10,"));
        assert!(std::fs::read_to_string(p1.with_extension("txt")).unwrap().contains("received=2"));
    }

    #[test]
    fn unwritable_path_reports_io_failure_with_path() {
        let r = empty_report();
        let err = write_report(&r, Path::new("/proc/definitely/not/writable.csv")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("/proc/definitely"), "{msg}");
    }

    #[test]
    fn commit_never_precedes_emit_in_sane_records() {
        let r = record(1.0, 1.01, Some(3.0));
        assert!(r.commit_ts.unwrap() >= r.emit_ts);
        assert!(r.processing_ms().unwrap() > 0.0);
    }
}
