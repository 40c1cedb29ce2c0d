//! The canonical workload CSV.
//!
//! ```text
//! job_id,account,submit,start,end,wall_limit,nodes_requested,nodes_assigned,priority,avg_util,trace_file
//! 1,acctA,0,10,110,200,2,,5,0.8,
//! ```
//!
//! `nodes_assigned` is a `;`-separated node list; `trace_file` is a path,
//! relative to the workload file, of a `time,util` CSV.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{LoadError, WorkloadSet};
use crate::model::{Job, JobId, JobTimes, UtilizationTrace};

pub const CANONICAL_HEADER: &str =
    "job_id,account,submit,start,end,wall_limit,nodes_requested,nodes_assigned,priority,avg_util,trace_file";

const REQUIRED: [&str; 5] = ["job_id", "account", "submit", "wall_limit", "nodes_requested"];

fn csv_err(path: &Path, source: csv::Error) -> LoadError {
    LoadError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

struct RowCtx<'a> {
    path: &'a Path,
    row: usize,
}

impl RowCtx<'_> {
    fn err(&self, message: impl Into<String>) -> LoadError {
        LoadError::Row {
            path: self.path.to_path_buf(),
            row: self.row,
            message: message.into(),
        }
    }

    fn required<T: FromStr>(&self, field: &str, name: &str) -> Result<T, LoadError> {
        if field.is_empty() {
            return Err(self.err(format!("empty `{name}`")));
        }
        field
            .parse()
            .map_err(|_| self.err(format!("invalid `{name}` value `{field}`")))
    }

    fn optional<T: FromStr>(&self, field: &str, name: &str) -> Result<Option<T>, LoadError> {
        if field.is_empty() {
            Ok(None)
        } else {
            self.required(field, name).map(Some)
        }
    }
}

/// Load a canonical workload CSV and any per-job trace files it references.
pub fn load_canonical(path: impl AsRef<Path>) -> Result<WorkloadSet, LoadError> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let found: Vec<&str> = header.iter().collect();
    for column in REQUIRED {
        if !found.contains(&column) {
            return Err(LoadError::MissingColumn {
                path: path.to_path_buf(),
                column: column.to_string(),
            });
        }
    }
    if found.join(",") != CANONICAL_HEADER {
        return Err(LoadError::Header {
            path: path.to_path_buf(),
            expected: CANONICAL_HEADER.to_string(),
            found: found.join(","),
        });
    }
    let base = path.parent().unwrap_or(Path::new("."));

    let mut jobs = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let ctx = RowCtx { path, row: i + 1 };
        let record = record.map_err(|e| csv_err(path, e))?;
        if record.len() != 11 {
            return Err(ctx.err(format!("expected 11 fields, found {}", record.len())));
        }
        let f = |i: usize| record[i].trim();
        let mut times = JobTimes::new(ctx.required(f(2), "submit")?, ctx.required(f(5), "wall_limit")?);
        times.start = ctx.optional(f(3), "start")?;
        times.end = ctx.optional(f(4), "end")?;
        let mut job = Job::new(
            ctx.required(f(0), "job_id")?,
            f(1),
            times,
            ctx.required(f(6), "nodes_requested")?,
        );
        if !f(7).is_empty() {
            let nodes = f(7)
                .split(';')
                .map(|n| ctx.required(n.trim(), "nodes_assigned"))
                .collect::<Result<Vec<usize>, _>>()?;
            if nodes.len() != job.nodes_requested {
                return Err(ctx.err("assigned-node count mismatch"));
            }
            job.nodes_assigned = Some(nodes);
        }
        job.priority = ctx.optional(f(8), "priority")?.unwrap_or(0);
        job.scalar_avg_util = ctx.optional(f(9), "avg_util")?;
        if !f(10).is_empty() {
            let trace = load_trace(&base.join(f(10))).map_err(|m| ctx.err(m))?;
            job.times.telemetry_start = Some(trace.first_time());
            job.times.telemetry_end = Some(trace.last_time());
            job.trace = Some(trace);
        }
        job.validate().map_err(|m| ctx.err(m))?;
        jobs.push(job);
    }
    WorkloadSet::new(jobs)
}

fn load_trace(path: &Path) -> Result<UtilizationTrace, String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| format!("trace {}: {e}", path.display()))?;
    let header = rdr.headers().map_err(|e| format!("trace {}: {e}", path.display()))?;
    if header.iter().collect::<Vec<_>>() != ["time", "util"] {
        return Err(format!("trace {}: header must be `time,util`", path.display()));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| format!("trace {}: {e}", path.display()))?;
        let t = record[0]
            .trim()
            .parse()
            .map_err(|_| format!("trace {}: bad time `{}`", path.display(), &record[0]))?;
        let u = record[1]
            .trim()
            .parse()
            .map_err(|_| format!("trace {}: bad util `{}`", path.display(), &record[1]))?;
        times.push(t);
        values.push(u);
    }
    UtilizationTrace::new(times, values).map_err(|m| format!("trace {}: {m}", path.display()))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn trace_dir(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("workload");
    PathBuf::from(format!("{stem}_traces"))
}

/// Write a workload as canonical CSV. Traces go to `<stem>_traces/<id>.csv`
/// beside the workload file.
pub fn save_canonical(workload: &WorkloadSet, path: impl AsRef<Path>) -> std::io::Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let rel_dir = trace_dir(path);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .has_headers(false)
        .from_writer(BufWriter::new(File::create(path)?));
    w.write_record(CANONICAL_HEADER.split(','))?;
    for job in &workload.jobs {
        let trace_file = match &job.trace {
            Some(trace) => {
                fs::create_dir_all(base.join(&rel_dir))?;
                let rel = rel_dir.join(format!("{}.csv", job.id));
                write_trace(trace, &base.join(&rel))?;
                rel.to_string_lossy().into_owned()
            }
            None => String::new(),
        };
        let assigned = job
            .nodes_assigned
            .as_ref()
            .map(|n| n.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        let JobId(id) = job.id;
        w.write_record([
            id.to_string(),
            job.account_id.clone(),
            job.times.submit.to_string(),
            opt(job.times.start),
            opt(job.times.end),
            job.times.wall_limit.to_string(),
            job.nodes_requested.to_string(),
            assigned,
            job.priority.to_string(),
            opt(job.scalar_avg_util),
            trace_file,
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_trace(trace: &UtilizationTrace, path: &Path) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "time,util")?;
    for (t, u) in trace.sample_times().iter().zip(trace.values()) {
        writeln!(out, "{t},{u}")?;
    }
    out.flush()
}
