//! Result files of one run.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::engine::SimulationOutput;
use crate::stats::save_accounts;

pub const JOB_HISTORY: &str = "job_history.csv";
pub const POWER_HISTORY: &str = "power_history.csv";
pub const UTIL: &str = "util.csv";
pub const QUEUE_HISTORY: &str = "queue_history.csv";
pub const RUNNING_HISTORY: &str = "running_history.csv";
pub const STATS: &str = "stats.out";
pub const ACCOUNTS: &str = "accounts.json";

pub const JOB_HISTORY_HEADER: &str = "job_id,account,submit,start,end,nodes,wait_s,turnaround_s,runtime_s,node_hours,energy_j,avg_power_w,edp,ed2p,size_class,priority,finished,boundary_flag,assigned_nodes";
pub const POWER_HISTORY_HEADER: &str = "t,compute_w,loss_w,facility_w,pue,return_temp,cooling_w";

fn create(dir: &Path, name: &str) -> std::io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Write every output file into `dir`, creating it if needed. Returns the
/// paths written, in a fixed order.
pub fn emit_outputs(out: &SimulationOutput, dir: impl AsRef<Path>) -> std::io::Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let mut w = create(dir, JOB_HISTORY)?;
    writeln!(w, "{JOB_HISTORY_HEADER}")?;
    for j in &out.jobs {
        let nodes = out
            .placements
            .get(&j.job_id)
            .map(|n| n.iter().map(ToString::to_string).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            j.job_id,
            j.account_id,
            j.submit,
            j.start,
            j.end,
            j.nodes,
            j.wait,
            j.turnaround,
            j.runtime,
            j.node_hours(),
            j.energy,
            j.avg_power,
            j.edp,
            j.ed2p,
            j.size_class.as_str(),
            j.priority,
            j.finished,
            j.boundary_flag.as_str(),
            nodes
        )?;
    }
    w.flush()?;

    let mut power = create(dir, POWER_HISTORY)?;
    let mut util = create(dir, UTIL)?;
    let mut queue = create(dir, QUEUE_HISTORY)?;
    let mut running = create(dir, RUNNING_HISTORY)?;
    writeln!(power, "{POWER_HISTORY_HEADER}")?;
    writeln!(util, "t,utilization")?;
    writeln!(queue, "t,queued")?;
    writeln!(running, "t,running")?;
    for r in &out.timeseries {
        let pue = r.pue.map(|p| p.to_string()).unwrap_or_default();
        writeln!(
            power,
            "{},{},{},{},{},{},{}",
            r.t, r.compute_watts, r.loss_watts, r.facility_watts, pue, r.return_temp, r.cooling_watts
        )?;
        writeln!(util, "{},{}", r.t, r.utilization)?;
        writeln!(queue, "{},{}", r.t, r.queued)?;
        writeln!(running, "{},{}", r.t, r.running)?;
    }
    for w in [&mut power, &mut util, &mut queue, &mut running] {
        w.flush()?;
    }

    let mut stats = out.report.render();
    if let Some(err) = &out.error {
        stats.push_str(&format!("error: {err}\n"));
    }
    fs::write(dir.join(STATS), stats)?;

    let mut written: Vec<PathBuf> = [JOB_HISTORY, POWER_HISTORY, UTIL, QUEUE_HISTORY, RUNNING_HISTORY, STATS]
        .iter()
        .map(|n| dir.join(n))
        .collect();
    if let Some(accounts) = &out.accounts {
        save_accounts(accounts, dir.join(ACCOUNTS)).map_err(|e| std::io::Error::other(e.to_string()))?;
        written.push(dir.join(ACCOUNTS));
    }
    Ok(written)
}
