//! CSV metrics files.
//!
//! | file | columns |
//! |---|---|
//! | `tasks.csv` | run_id, node, phase, t_start, t_end, bytes_read, bytes_written, flops, worker |
//! | `workers.csv` | worker, launched, ended, exit, tasks, bytes_read, bytes_written, flops |
//! | `timeline.csv` | t, pending, running, booting |
//! | `summary.csv` | key, value |
//!
//! Times are seconds since the run started.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use super::RunReport;
use crate::executor::TaskEvent;
use crate::provisioner::{TimelineSample, WorkerRecord};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("cannot write metrics: {0}")]
    Io(#[from] io::Error),
    #[error("cannot write metrics: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Serialize)]
struct TaskRow<'a> {
    run_id: &'a str,
    node: String,
    phase: &'static str,
    t_start: f64,
    t_end: f64,
    bytes_read: u64,
    bytes_written: u64,
    flops: u64,
    worker: usize,
}

#[derive(Serialize)]
struct WorkerRow {
    worker: usize,
    launched: f64,
    ended: f64,
    exit: &'static str,
    tasks: usize,
    bytes_read: u64,
    bytes_written: u64,
    flops: u64,
}

#[derive(Serialize)]
struct TimelineRow {
    t: f64,
    pending: usize,
    running: usize,
    booting: usize,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tasks(path: &Path, events: &[TaskEvent]) -> Result<(), MetricsError> {
    write_rows(
        path,
        events.iter().map(|e| TaskRow {
            run_id: &e.run_id,
            node: e.node.to_string(),
            phase: e.phase.name(),
            t_start: e.t_start.as_secs_f64(),
            t_end: e.t_end.as_secs_f64(),
            bytes_read: e.bytes_read,
            bytes_written: e.bytes_written,
            flops: e.flops,
            worker: e.worker,
        }),
    )
}

pub fn write_workers(path: &Path, records: &[WorkerRecord]) -> Result<(), MetricsError> {
    write_rows(
        path,
        records.iter().map(|r| {
            let e = r.exit.as_ref();
            WorkerRow {
                worker: r.id,
                launched: r.launched.as_secs_f64(),
                ended: r.ended.as_secs_f64(),
                exit: e.map_or("killed-booting", |e| e.reason.name()),
                tasks: e.map_or(0, |e| e.tasks_completed),
                bytes_read: e.map_or(0, |e| e.bytes_read),
                bytes_written: e.map_or(0, |e| e.bytes_written),
                flops: e.map_or(0, |e| e.flops),
            }
        }),
    )
}

pub fn write_timeline(path: &Path, samples: &[TimelineSample]) -> Result<(), MetricsError> {
    write_rows(
        path,
        samples.iter().map(|s| TimelineRow {
            t: s.t.as_secs_f64(),
            pending: s.pending,
            running: s.running,
            booting: s.booting,
        }),
    )
}

/// Key/value pairs describing a whole run.
pub fn summary(r: &RunReport) -> Vec<(String, String)> {
    let mut kv = vec![
        ("run_id".into(), r.run_id.clone()),
        ("workload".into(), r.workload.clone()),
        ("nodes".into(), r.node_count.to_string()),
        ("complete".into(), r.complete.to_string()),
        ("completion_time_s".into(), format!("{:.6}", r.completion_time.as_secs_f64())),
        ("worker_seconds".into(), format!("{:.6}", r.worker_seconds())),
        ("core_seconds".into(), format!("{:.6}", r.core_seconds())),
        ("workers_launched".into(), r.workers.len().to_string()),
        ("tasks_executed".into(), r.tasks_executed().to_string()),
        ("nodes_done".into(), r.state.done.to_string()),
        ("duplicate_completions".into(), r.state.duplicate_completions.to_string()),
        ("store_bytes_read".into(), r.store.bytes_read.to_string()),
        ("store_bytes_written".into(), r.store.bytes_written.to_string()),
    ];
    if let Some(c) = &r.check {
        kv.push(("check_metric".into(), c.metric.into()));
        kv.push(("check_error".into(), format!("{:e}", c.error)));
        kv.push(("check_tolerance".into(), format!("{:e}", c.tolerance)));
        kv.push(("check_passed".into(), c.passed().to_string()));
    }
    for (i, k) in r.kills.iter().enumerate() {
        kv.push((format!("kill{i}_at_s"), format!("{:.6}", k.at.as_secs_f64())));
        kv.push((format!("kill{i}_killed"), k.killed.len().to_string()));
        kv.push((format!("kill{i}_prior_running"), k.prior_running.to_string()));
        if let Some(t) = k.restored_after {
            kv.push((format!("kill{i}_restored_after_s"), format!("{:.6}", t.as_secs_f64())));
        }
    }
    if let Some(a) = &r.aborted {
        kv.push(("aborted".into(), a.clone()));
    }
    kv
}

/// Writes all metrics files into `dir`, plus `state.txt` when the run aborted.
pub fn write_all(dir: &Path, r: &RunReport) -> Result<(), MetricsError> {
    fs::create_dir_all(dir)?;
    write_tasks(&dir.join("tasks.csv"), &r.events)?;
    write_workers(&dir.join("workers.csv"), &r.workers)?;
    write_timeline(&dir.join("timeline.csv"), &r.timeline)?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["key", "value"])?;
    for (k, v) in summary(r) {
        w.write_record([k, v])?;
    }
    w.flush()?;
    if let Some(lines) = &r.snapshot {
        fs::write(dir.join("state.txt"), lines.join("\n") + "\n")?;
    }
    Ok(())
}
