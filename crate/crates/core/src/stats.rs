//! Per-job, per-account and system-wide statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::incentives::earn_fugaku_points;
use crate::model::{Account, BoundaryFlag, Job, JobId, Seconds, SimWindow, SystemConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub fn of(nodes: usize, small_lt: usize, large_ge: usize) -> Self {
        if nodes < small_lt {
            SizeClass::Small
        } else if nodes < large_ge {
            SizeClass::Medium
        } else {
            SizeClass::Large
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JobStats {
    pub job_id: JobId,
    pub account_id: String,
    pub submit: Seconds,
    pub start: Seconds,
    pub end: Seconds,
    pub nodes: usize,
    pub wait: Seconds,
    pub turnaround: Seconds,
    pub runtime: Seconds,
    pub node_seconds: f64,
    /// J
    pub energy: f64,
    /// W
    pub avg_power: f64,
    /// J·s
    pub edp: f64,
    /// J·s²
    pub ed2p: f64,
    pub size_class: SizeClass,
    pub priority: i64,
    /// False for jobs cut off at window end.
    pub finished: bool,
    pub boundary_flag: BoundaryFlag,
}

impl JobStats {
    pub fn node_hours(&self) -> f64 {
        self.node_seconds / 3600.0
    }
}

/// Derive the statistics of one job from its simulated start and end.
pub fn job_stats(job: &Job, start: Seconds, end: Seconds, energy: f64, config: &SystemConfig) -> JobStats {
    debug_assert!(start >= job.times.submit && end > start);
    let wait = start - job.times.submit;
    let runtime = end - start;
    let turnaround = end - job.times.submit;
    let t = turnaround as f64;
    JobStats {
        job_id: job.id,
        account_id: job.account_id.clone(),
        submit: job.times.submit,
        start,
        end,
        nodes: job.nodes_requested,
        wait,
        turnaround,
        runtime,
        node_seconds: (job.nodes_requested as i64 * runtime) as f64,
        energy,
        avg_power: energy / runtime as f64,
        edp: energy * t,
        ed2p: energy * t * t,
        size_class: SizeClass::of(job.nodes_requested, config.size_small_lt, config.size_large_ge),
        priority: job.priority,
        finished: true,
        boundary_flag: job.boundary_flag,
    }
}

/// Node-hour weighted mean turnaround, in seconds.
pub fn area_weighted_response(jobs: &[JobStats]) -> Option<f64> {
    let area: f64 = jobs.iter().map(JobStats::node_hours).sum();
    if jobs.is_empty() || area <= 0.0 {
        return None;
    }
    Some(jobs.iter().map(|j| j.node_hours() * j.turnaround as f64).sum::<f64>() / area)
}

/// Priority-weighted mean of turnaround per node-hour. Weights are
/// `priority - min_priority + 1` so that every weight is positive.
pub fn priority_weighted_specific_response(jobs: &[JobStats]) -> Option<f64> {
    let min = jobs.iter().map(|j| j.priority).min()?;
    let mut num = 0.0;
    let mut den = 0.0;
    for j in jobs {
        let w = (j.priority - min + 1) as f64;
        num += w * (j.turnaround as f64 / j.node_hours());
        den += w;
    }
    Some(num / den)
}

/// Fold one completed job into its account, creating the account on first sight.
pub fn accumulate_account(accounts: &mut BTreeMap<String, Account>, stats: &JobStats, fugaku_reference: f64) {
    let acct = accounts.entry(stats.account_id.clone()).or_insert_with(|| Account {
        account_id: stats.account_id.clone(),
        ..Account::default()
    });
    // avg_power is total energy over total job runtime, so the runtime sum is
    // recoverable from the two persisted fields.
    let prior_runtime = if acct.avg_power > 0.0 {
        acct.total_energy / acct.avg_power
    } else {
        0.0
    };
    acct.jobs_completed += 1;
    acct.total_energy += stats.energy;
    acct.node_seconds += stats.node_seconds;
    acct.accumulated_edp += stats.edp;
    let runtime = prior_runtime + stats.runtime as f64;
    acct.avg_power = if runtime > 0.0 {
        acct.total_energy / runtime
    } else {
        0.0
    };
    earn_fugaku_points(acct, stats, fugaku_reference);
}

#[derive(Debug, Error)]
pub enum AccountsError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("accounts schema error: {0}")]
    Schema(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AccountsFile {
    accounts: BTreeMap<String, Account>,
}

pub fn save_accounts(accounts: &BTreeMap<String, Account>, path: impl AsRef<Path>) -> Result<(), AccountsError> {
    let file = AccountsFile {
        accounts: accounts.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| AccountsError::Schema(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_accounts(path: impl AsRef<Path>) -> Result<BTreeMap<String, Account>, AccountsError> {
    parse_accounts(&fs::read_to_string(path)?)
}

pub fn parse_accounts(text: &str) -> Result<BTreeMap<String, Account>, AccountsError> {
    let file: AccountsFile = serde_json::from_str(text).map_err(|e| AccountsError::Schema(schema_key(&e)))?;
    Ok(file
        .accounts
        .into_iter()
        .map(|(id, mut acct)| {
            acct.account_id = id.clone();
            (id, acct)
        })
        .collect())
}

/// Reduce a serde error to the offending key where one is named.
fn schema_key(err: &serde_json::Error) -> String {
    let msg = err.to_string();
    for marker in ["missing field `", "unknown field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(key) = rest.split('`').next() {
                return key.to_string();
            }
        }
    }
    msg
}

/// System-wide figures written to `stats.out`.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsReport {
    pub window: SimWindow,
    pub timestep: Seconds,
    pub completed_jobs: usize,
    pub unfinished_jobs: usize,
    pub never_started_jobs: usize,
    pub dismissed_jobs: usize,
    pub throughput: f64,
    pub avg_system_power: f64,
    pub avg_utilization: f64,
    pub total_energy: f64,
    pub compute_energy: f64,
    pub total_loss: f64,
    pub cooling_energy: f64,
    pub power_efficiency: Option<f64>,
    pub avg_pue: Option<f64>,
    pub carbon_kg: f64,
    pub avg_job_size: Option<f64>,
    pub size_histogram: [usize; 3],
    pub aggregate_node_hours: f64,
    pub total_job_energy: f64,
    pub avg_wait: Option<f64>,
    pub avg_turnaround: Option<f64>,
    pub awrt: Option<f64>,
    pub pwsrt: Option<f64>,
    pub per_account: BTreeMap<String, Account>,
    pub valid: bool,
}

/// Per-tick power figures the report integrates over.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerSample {
    pub utilization: f64,
    pub compute_watts: f64,
    pub loss_watts: f64,
    pub facility_watts: f64,
    pub cooling_watts: f64,
    pub pue: Option<f64>,
}

pub struct ReportInputs<'a> {
    pub window: SimWindow,
    pub config: &'a SystemConfig,
    pub jobs: &'a [JobStats],
    pub samples: &'a [PowerSample],
    pub never_started: usize,
    pub dismissed: usize,
    pub accounts: BTreeMap<String, Account>,
    pub valid: bool,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl StatsReport {
    pub fn compute(inp: ReportInputs<'_>) -> Self {
        let dt = inp.config.timestep as f64;
        let done: Vec<JobStats> = inp.jobs.iter().filter(|j| j.finished).cloned().collect();
        let integrate = |f: fn(&PowerSample) -> f64| inp.samples.iter().map(|s| f(s) * dt).sum::<f64>();
        let total_energy = integrate(|s| s.facility_watts);
        let compute_energy = integrate(|s| s.compute_watts);
        let hours = inp.window.len() as f64 / 3600.0;
        let mut size_histogram = [0usize; 3];
        for j in &done {
            size_histogram[j.size_class as usize] += 1;
        }
        StatsReport {
            window: inp.window,
            timestep: inp.config.timestep,
            completed_jobs: done.len(),
            unfinished_jobs: inp.jobs.len() - done.len(),
            never_started_jobs: inp.never_started,
            dismissed_jobs: inp.dismissed,
            throughput: if hours > 0.0 { done.len() as f64 / hours } else { 0.0 },
            avg_system_power: mean(inp.samples.iter().map(|s| s.facility_watts)).unwrap_or(0.0),
            avg_utilization: mean(inp.samples.iter().map(|s| s.utilization)).unwrap_or(0.0),
            total_energy,
            compute_energy,
            total_loss: integrate(|s| s.loss_watts),
            cooling_energy: integrate(|s| s.cooling_watts),
            power_efficiency: (total_energy > 0.0).then(|| compute_energy / total_energy),
            avg_pue: mean(inp.samples.iter().filter_map(|s| s.pue)),
            carbon_kg: total_energy / 3.6e6 * inp.config.carbon_intensity,
            avg_job_size: mean(done.iter().map(|j| j.nodes as f64)),
            size_histogram,
            aggregate_node_hours: done.iter().map(JobStats::node_hours).sum(),
            total_job_energy: done.iter().map(|j| j.energy).sum(),
            avg_wait: mean(done.iter().map(|j| j.wait as f64)),
            avg_turnaround: mean(done.iter().map(|j| j.turnaround as f64)),
            awrt: area_weighted_response(&done),
            pwsrt: priority_weighted_specific_response(&done),
            per_account: inp.accounts,
            valid: inp.valid,
        }
    }

    /// `key: value` lines in a fixed order.
    pub fn render(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(|| "n/a".to_string(), |v| v.to_string())
        }
        let rows: Vec<(&str, String)> = vec![
            ("window_start", self.window.start.to_string()),
            ("window_end", self.window.end.to_string()),
            ("timestep_s", self.timestep.to_string()),
            ("jobs_completed", self.completed_jobs.to_string()),
            ("jobs_unfinished", self.unfinished_jobs.to_string()),
            ("jobs_never_started", self.never_started_jobs.to_string()),
            ("jobs_dismissed", self.dismissed_jobs.to_string()),
            ("throughput_jobs_per_hour", self.throughput.to_string()),
            ("avg_system_power_w", self.avg_system_power.to_string()),
            ("avg_utilization", self.avg_utilization.to_string()),
            ("total_energy_j", self.total_energy.to_string()),
            ("compute_energy_j", self.compute_energy.to_string()),
            ("total_loss_j", self.total_loss.to_string()),
            ("power_efficiency", opt(self.power_efficiency)),
            ("cooling_energy_j", self.cooling_energy.to_string()),
            ("avg_pue", opt(self.avg_pue)),
            ("carbon_kg", self.carbon_kg.to_string()),
            ("avg_job_size_nodes", opt(self.avg_job_size)),
            ("jobs_small", self.size_histogram[0].to_string()),
            ("jobs_medium", self.size_histogram[1].to_string()),
            ("jobs_large", self.size_histogram[2].to_string()),
            ("aggregate_node_hours", self.aggregate_node_hours.to_string()),
            ("total_job_energy_j", self.total_job_energy.to_string()),
            ("avg_wait_s", opt(self.avg_wait)),
            ("avg_turnaround_s", opt(self.avg_turnaround)),
            ("awrt_s", opt(self.awrt)),
            ("pwsrt_s_per_node_hour", opt(self.pwsrt)),
            ("accounts", self.per_account.len().to_string()),
            ("valid", self.valid.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k}: {v}");
        }
        out
    }
}

/// Parse `key: value` lines back into a map, e.g. from a `stats.out` file.
pub fn parse_stats(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once(": "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
