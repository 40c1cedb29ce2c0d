//! Seeded synthetic workloads.
//!
//! Jobs arrive with exponential inter-arrival gaps. Each job is given a
//! recorded start, end and node set by list-scheduling it onto the nodes
//! that free up earliest, so the recorded schedule never double-books a node
//! and can be replayed as-is.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataloader::WorkloadSet;
use crate::model::{Job, JobTimes, Seconds, UtilizationTrace};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub jobs: usize,
    pub total_nodes: usize,
    /// Node counts are powers of two up to this bound.
    pub max_nodes: usize,
    pub mean_interarrival: f64,
    /// The first this many jobs all arrive at time zero.
    pub initial_backlog: usize,
    pub min_runtime: Seconds,
    pub max_runtime: Seconds,
    /// When set, every job runs exactly its wall limit.
    pub exact_runtime: bool,
    pub accounts: usize,
    /// Share of jobs that carry a utilization trace instead of a scalar.
    pub trace_fraction: f64,
    pub trace_interval: Seconds,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            jobs: 200,
            total_nodes: 64,
            max_nodes: 32,
            mean_interarrival: 120.0,
            initial_backlog: 0,
            min_runtime: 300,
            max_runtime: 7200,
            exact_runtime: false,
            accounts: 4,
            trace_fraction: 0.25,
            trace_interval: 60,
            seed: 0,
        }
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn generate(spec: &SyntheticSpec) -> WorkloadSet {
    assert!(spec.max_nodes >= 1 && spec.max_nodes <= spec.total_nodes);
    assert!(spec.min_runtime >= 1 && spec.min_runtime <= spec.max_runtime);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let max_exp = spec.max_nodes.ilog2();
    let mut free_at: Vec<Seconds> = vec![0; spec.total_nodes];
    let mut submit = 0.0f64;
    let mut jobs = Vec::with_capacity(spec.jobs);

    for id in 1..=spec.jobs as u64 {
        if id as usize > spec.initial_backlog.max(1) {
            submit += -spec.mean_interarrival * (1.0 - rng.random::<f64>()).ln();
        }
        let sub = submit.floor() as Seconds;
        let nodes = 1usize << rng.random_range(0..=max_exp);
        let runtime = rng.random_range(spec.min_runtime..=spec.max_runtime);
        let limit = if spec.exact_runtime {
            runtime
        } else {
            (runtime as f64 * rng.random_range(1.0..2.0)).ceil() as Seconds
        };

        let mut order: Vec<usize> = (0..spec.total_nodes).collect();
        order.sort_by_key(|&n| (free_at[n], n));
        let mut chosen: Vec<usize> = order[..nodes].to_vec();
        chosen.sort_unstable();
        let start = chosen.iter().map(|&n| free_at[n]).max().unwrap().max(sub);
        let end = start + runtime;
        for &n in &chosen {
            free_at[n] = end;
        }

        let mut job = Job::new(
            id,
            format!("acct{}", rng.random_range(0..spec.accounts.max(1))),
            JobTimes::recorded(sub, start, end, limit),
            nodes,
        );
        job.nodes_assigned = Some(chosen);
        job.priority = rng.random_range(0..4);
        if rng.random::<f64>() < spec.trace_fraction {
            let times: Vec<Seconds> = (start..end).step_by(spec.trace_interval as usize).collect();
            let values = times.iter().map(|_| round2(rng.random_range(0.2..=1.0))).collect();
            job.times.telemetry_start = Some(start);
            job.times.telemetry_end = times.last().copied();
            job.trace = Some(UtilizationTrace::new(times, values).expect("generated trace is valid"));
        } else {
            job.scalar_avg_util = Some(round2(rng.random_range(0.2..=1.0)));
        }
        jobs.push(job);
    }
    WorkloadSet::new(jobs).expect("generated ids are unique")
}
