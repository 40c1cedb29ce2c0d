//! Standard Workload Format reader.
//!
//! Header lines start with `;` and may carry `Key: value` metadata. Each data
//! line has 18 whitespace-separated fields; -1 marks an unknown value.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;

use super::{LoadError, WorkloadSet};
use crate::model::{Job, JobTimes};

const FIELDS: usize = 18;

pub fn load_swf(path: impl AsRef<Path>) -> Result<WorkloadSet, LoadError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_swf(&text, path)
}

pub(crate) fn parse_swf(text: &str, path: &Path) -> Result<WorkloadSet, LoadError> {
    let mut metadata = BTreeMap::new();
    let mut jobs = Vec::new();
    let mut skipped = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let row = lineno + 1;
        let err = |message: String| LoadError::Row {
            path: path.to_path_buf(),
            row,
            message,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix(';') {
            if let Some((key, value)) = comment.split_once(':') {
                metadata.insert(key.trim().to_string(), value.trim().to_string());
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < FIELDS {
            return Err(err(format!("expected {FIELDS} fields, found {}", fields.len())));
        }
        let num = |i: usize| -> Result<i64, LoadError> {
            let raw = fields[i - 1];
            raw.parse::<i64>()
                .or_else(|_| raw.parse::<f64>().map(|v| v.round() as i64))
                .map_err(|_| err(format!("field {i} is not a number: `{raw}`")))
        };
        let id = num(1)?;
        let submit = num(2)?;
        let wait = num(3)?;
        let runtime = num(4)?;
        if runtime < 0 {
            return Err(err(format!("negative runtime {runtime}")));
        }
        if wait < 0 {
            return Err(err(format!("negative wait time {wait}")));
        }
        if runtime == 0 {
            skipped += 1;
            continue;
        }
        let requested = num(8)?;
        let nodes = if requested > 0 { requested } else { num(5)? };
        if nodes <= 0 {
            return Err(err("no requested or allocated processor count".to_string()));
        }
        let limit = num(9)?;
        let wall_limit = if limit > 0 { limit } else { runtime };
        let start = submit + wait;
        let times = JobTimes::recorded(submit, start, start + runtime, wall_limit);
        let job = Job::new(id as u64, num(12)?.to_string(), times, nodes as usize);
        job.validate().map_err(err)?;
        jobs.push(job);
    }
    if skipped > 0 {
        warn!("{}: skipped {skipped} zero-runtime jobs", path.display());
    }
    let mut set = WorkloadSet::new(jobs)?;
    set.metadata = metadata;
    Ok(set)
}
