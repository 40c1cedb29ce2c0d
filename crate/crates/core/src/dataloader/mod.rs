//! Workload ingestion and window clipping.
//!
//! Two on-disk formats are understood: the canonical workload CSV (see
//! [`canonical`]) and the Standard Workload Format (see [`swf`]). Both
//! produce a [`WorkloadSet`], which [`clip_to_window`] then splits into
//! jobs that prepopulate the system, jobs eligible for scheduling, and
//! jobs dismissed because they lie entirely outside the window.

pub mod canonical;
pub mod swf;

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::model::{BoundaryFlag, Job, Seconds, SimWindow, UtilizationTrace};

pub use canonical::{load_canonical, save_canonical, CANONICAL_HEADER};
pub use swf::load_swf;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: header must be exactly `{expected}`, found `{found}`")]
    Header {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: {message} at row {row}")]
    Row { path: PathBuf, row: usize, message: String },
    #[error("duplicate job id {0}")]
    DuplicateId(u64),
}

/// Every job from one or more trace files, sorted by `(submit, id)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSet {
    pub jobs: Vec<Job>,
    pub dataset_span: SimWindow,
    /// Header comments such as SWF `;MaxNodes: 128`.
    pub metadata: BTreeMap<String, String>,
}

impl WorkloadSet {
    pub fn new(mut jobs: Vec<Job>) -> Result<Self, LoadError> {
        jobs.sort_by_key(|j| (j.times.submit, j.id));
        let mut ids: Vec<_> = jobs.iter().map(|j| j.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(LoadError::DuplicateId(w[0].0));
        }
        let dataset_span = span_of(&jobs);
        Ok(WorkloadSet {
            jobs,
            dataset_span,
            metadata: BTreeMap::new(),
        })
    }

    /// Combine several workloads; job ids must stay unique.
    pub fn merge(sets: Vec<WorkloadSet>) -> Result<Self, LoadError> {
        let mut metadata = BTreeMap::new();
        let mut jobs = Vec::new();
        for set in sets {
            jobs.extend(set.jobs);
            metadata.extend(set.metadata);
        }
        let mut merged = WorkloadSet::new(jobs)?;
        merged.metadata = metadata;
        Ok(merged)
    }
}

/// Load one workload file, choosing the format by extension: `.swf` is the
/// Standard Workload Format, anything else is canonical CSV.
pub fn load_workload(path: impl AsRef<std::path::Path>) -> Result<WorkloadSet, LoadError> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("swf")) {
        load_swf(path)
    } else {
        load_canonical(path)
    }
}

fn span_of(jobs: &[Job]) -> SimWindow {
    let mut lo = Seconds::MAX;
    let mut hi = Seconds::MIN;
    for job in jobs {
        let t = &job.times;
        lo = lo.min(t.submit);
        if let Some(ts) = t.telemetry_start {
            lo = lo.min(ts);
        }
        hi = hi.max(effective_end(job).unwrap_or(t.submit + t.wall_limit));
        if let Some(te) = t.telemetry_end {
            hi = hi.max(te);
        }
    }
    if jobs.is_empty() {
        SimWindow { start: 0, end: 0 }
    } else {
        SimWindow { start: lo, end: hi }
    }
}

/// Recorded end, or start plus wall limit when only the start is known.
pub(crate) fn effective_end(job: &Job) -> Option<Seconds> {
    let t = &job.times;
    t.end.or(t.start.map(|s| s + t.wall_limit))
}

/// A workload restricted to one simulation window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClippedWorkload {
    /// Running at window start; placed before the first step.
    pub prepopulate: Vec<Job>,
    /// Enter the queue once submitted.
    pub eligible: Vec<Job>,
    pub dismissed_count: usize,
    /// Copies of every kept job whose boundary flag is set.
    pub flagged: Vec<Job>,
}

/// Split a workload into prepopulated, eligible and dismissed jobs.
///
/// Intervals are closed-open: a job ending exactly at `window.start` is
/// dismissed, as is one submitted exactly at `window.end`.
pub fn clip_to_window(workload: &WorkloadSet, window: SimWindow) -> ClippedWorkload {
    let mut out = ClippedWorkload::default();
    for job in &workload.jobs {
        let end = effective_end(job);
        if end.is_some_and(|e| e <= window.start) || job.times.submit >= window.end {
            out.dismissed_count += 1;
            continue;
        }
        let mut job = job.clone();
        let started_before = job
            .times
            .start
            .is_some_and(|s| s < window.start && end.is_some_and(|e| window.start < e));
        if started_before {
            job.boundary_flag = BoundaryFlag::StartedBeforeWindow;
        } else if job.times.end.is_some_and(|e| e > window.end) {
            job.boundary_flag = BoundaryFlag::EndsAfterWindow;
        }
        if job.boundary_flag != BoundaryFlag::None {
            out.flagged.push(job.clone());
        }
        if started_before {
            out.prepopulate.push(job);
        } else {
            out.eligible.push(job);
        }
    }
    out
}

/// Utilization at `t`: the last known sample at or before `t`, or the
/// first sample when `t` precedes the trace.
pub fn sample_trace(trace: &UtilizationTrace, t: Seconds) -> f64 {
    let idx = trace.sample_times().partition_point(|&s| s <= t);
    trace.values()[idx.saturating_sub(1)]
}
