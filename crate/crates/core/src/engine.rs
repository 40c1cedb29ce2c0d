//! The time-stepped simulation loop.
//!
//! Every step runs four phases in order: completions, admission of submitted
//! jobs, scheduling, and the physical tick (power, cooling, one timeseries
//! row). The clock then advances by one timestep.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info};
use thiserror::Error;

use crate::bridge::{ExternalScheduler, JobDescriptor, ProtocolError, RunningEntry, TickRequest};
use crate::dataloader::{clip_to_window, sample_trace, WorkloadSet};
use crate::incentives::{derive_priorities, IncentiveRanking};
use crate::ml::{ClusterModel, MlError};
use crate::model::{
    validate_config, Account, BoundaryFlag, Job, JobId, NodeId, Seconds, SimWindow, SystemConfig, DEFAULT_UTIL,
};
use crate::power::{cooling_step, node_power, system_power, CoolingState};
use crate::resources::{AllocError, NodePool};
use crate::schedulers::{order_queue, replay_place, schedule_step, BackfillMode, Policy, RunningView, ScheduleError};
use crate::stats::{accumulate_account, job_stats, JobStats, PowerSample, ReportInputs, StatsReport};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid system config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("job {job} needs {requested} nodes but the system has {total}")]
    Oversize { job: JobId, requested: usize, total: usize },
    #[error("prepopulating job {job}: {source}")]
    Prepopulate { job: JobId, source: AllocError },
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("external scheduler: {0}")]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Ml(#[from] MlError),
    #[error("policy ml needs a trained model")]
    MissingModel,
}

/// Policy choices for one run.
#[derive(Clone, Debug)]
pub struct RunSettings {
    pub policy: Policy,
    pub backfill: BackfillMode,
    /// Accounts loaded from a previous run, used by the `acct_*` policies.
    pub accounts: Option<BTreeMap<String, Account>>,
    /// Fold completed jobs into the accounts and report them.
    pub accumulate_accounts: bool,
    pub ml_model: Option<ClusterModel>,
}

impl RunSettings {
    pub fn new(policy: Policy, backfill: BackfillMode) -> Self {
        RunSettings {
            policy,
            backfill,
            accounts: None,
            accumulate_accounts: false,
            ml_model: None,
        }
    }
}

/// Who decides which queued jobs start.
pub enum SchedulerImpl {
    Builtin,
    External(Box<dyn ExternalScheduler>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningJob {
    pub job: Job,
    pub start: Seconds,
    /// Planned end: start plus the recorded duration, or the wall limit.
    pub end: Seconds,
    pub nodes: Vec<NodeId>,
    /// Compute energy so far, J.
    pub energy: f64,
}

impl RunningJob {
    fn utilization_at(&self, t: Seconds) -> f64 {
        utilization_at(&self.job, self.start, t)
    }

    fn view(&self, now: Seconds) -> RunningView {
        RunningView {
            nodes: self.nodes.len(),
            projected_end: (self.start + self.job.times.wall_limit).max(now + 1),
        }
    }
}

/// Utilization of `job` at absolute time `t` when it started at `start`.
/// Traces are replayed relative to the start of their telemetry.
pub fn utilization_at(job: &Job, start: Seconds, t: Seconds) -> f64 {
    match &job.trace {
        Some(trace) => {
            let origin = job.times.telemetry_start.unwrap_or(trace.first_time());
            sample_trace(trace, origin + (t - start))
        }
        None => job.scalar_avg_util.unwrap_or(DEFAULT_UTIL),
    }
}

fn overlap(a0: Seconds, a1: Seconds, b0: Seconds, b1: Seconds) -> Seconds {
    (a1.min(b1) - a0.max(b0)).max(0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeseriesRow {
    pub t: Seconds,
    pub utilization: f64,
    pub compute_watts: f64,
    pub loss_watts: f64,
    pub facility_watts: f64,
    pub cooling_watts: f64,
    pub pue: Option<f64>,
    pub return_temp: f64,
    pub queued: usize,
    pub running: usize,
}

impl TimeseriesRow {
    pub fn sample(&self) -> PowerSample {
        PowerSample {
            utilization: self.utilization,
            compute_watts: self.compute_watts,
            loss_watts: self.loss_watts,
            facility_watts: self.facility_watts,
            cooling_watts: self.cooling_watts,
            pue: self.pue,
        }
    }
}

/// Everything a finished (or aborted) run produces.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationOutput {
    pub window: SimWindow,
    pub config: SystemConfig,
    pub policy: Policy,
    pub backfill: BackfillMode,
    pub timeseries: Vec<TimeseriesRow>,
    /// Every job that started, in completion order; unfinished jobs last.
    pub jobs: Vec<JobStats>,
    pub placements: BTreeMap<JobId, Vec<NodeId>>,
    /// Jobs still pending or queued when the window closed.
    pub never_started: Vec<JobId>,
    /// First reservation time computed for each EASY head blocker.
    pub first_reservations: BTreeMap<JobId, Seconds>,
    pub report: StatsReport,
    /// Present when accounts were accumulated.
    pub accounts: Option<BTreeMap<String, Account>>,
    pub valid: bool,
    pub error: Option<String>,
}

impl SimulationOutput {
    pub fn start_times(&self) -> BTreeMap<JobId, Seconds> {
        self.jobs.iter().map(|j| (j.job_id, j.start)).collect()
    }
}

#[derive(Debug)]
pub struct SimFailure {
    pub error: SimError,
    /// Output up to the failing step, flagged invalid. Absent when
    /// initialization itself failed.
    pub partial: Option<Box<SimulationOutput>>,
}

/// Mutable state of one simulation.
pub struct Simulation {
    pub config: SystemConfig,
    pub window: SimWindow,
    pub now: Seconds,
    pub pool: NodePool,
    /// Submitted in the future, sorted by `(submit, id)`.
    pub pending: Vec<Job>,
    /// Submitted but not started, in admission order.
    pub queue: Vec<Job>,
    pub running: BTreeMap<JobId, RunningJob>,
    pub completed: Vec<JobStats>,
    pub placements: BTreeMap<JobId, Vec<NodeId>>,
    pub timeseries: Vec<TimeseriesRow>,
    pub first_reservations: BTreeMap<JobId, Seconds>,
    pub accounts: BTreeMap<String, Account>,
    settings: RunSettings,
    ranking: Option<IncentiveRanking>,
    external: Option<Box<dyn ExternalScheduler>>,
    cooling: Option<CoolingState>,
    dismissed: usize,
    /// Set when a submission or completion happened since the last pass.
    dirty: bool,
    pending_cursor: usize,
    admitted: Vec<JobId>,
    just_completed: Vec<JobId>,
    bridge_known: BTreeSet<JobId>,
    bridge_first_tick: Vec<JobId>,
}

impl Simulation {
    pub fn initialize(
        config: SystemConfig,
        workload: &WorkloadSet,
        window: SimWindow,
        settings: RunSettings,
        scheduler: SchedulerImpl,
    ) -> Result<Self, SimError> {
        let config = validate_config(config).map_err(SimError::Config)?;
        let mut settings = settings;
        if settings.policy == Policy::Ml && settings.ml_model.is_none() {
            return Err(SimError::MissingModel);
        }
        if let Some(model) = settings.ml_model.as_mut() {
            if !config.ml_alpha.is_empty() {
                model.weights = model.weights.clone().with_overrides(&config.ml_alpha)?;
            }
        }
        if let Some(job) = workload.jobs.iter().find(|j| j.nodes_requested > config.total_nodes) {
            return Err(SimError::Oversize {
                job: job.id,
                requested: job.nodes_requested,
                total: config.total_nodes,
            });
        }
        let clipped = clip_to_window(workload, window);
        let ranking = settings
            .policy
            .is_account_based()
            .then(|| derive_priorities(settings.policy, settings.accounts.as_ref().unwrap_or(&BTreeMap::new())));
        let mut external = match scheduler {
            SchedulerImpl::Builtin => None,
            SchedulerImpl::External(mut ext) => {
                ext.init(config.total_nodes, config.timestep)?;
                Some(ext)
            }
        };
        let mut pending = clipped.eligible;
        pending.sort_by_key(|j| (j.times.submit, j.id));

        let mut sim = Simulation {
            pool: NodePool::new(config.total_nodes),
            now: window.start,
            window,
            pending,
            queue: Vec::new(),
            running: BTreeMap::new(),
            completed: Vec::new(),
            placements: BTreeMap::new(),
            timeseries: Vec::new(),
            first_reservations: BTreeMap::new(),
            accounts: settings.accounts.clone().unwrap_or_default(),
            ranking,
            external: external.take(),
            cooling: None,
            dismissed: clipped.dismissed_count,
            dirty: true,
            pending_cursor: 0,
            admitted: Vec::new(),
            just_completed: Vec::new(),
            bridge_known: BTreeSet::new(),
            bridge_first_tick: Vec::new(),
            settings,
            config,
        };

        // Recorded placements first so that unrecorded ones cannot steal their nodes.
        let mut pre = clipped.prepopulate;
        pre.sort_by_key(|j| (j.nodes_assigned.is_none(), j.times.start, j.id));
        for job in pre {
            let nodes = sim
                .pool
                .allocate(job.id, job.nodes_requested, job.nodes_assigned.as_deref())
                .map_err(|source| SimError::Prepopulate { job: job.id, source })?;
            let start = job.times.start.expect("prepopulated jobs have a recorded start");
            let end = crate::dataloader::effective_end(&job).expect("prepopulated jobs have an end");
            let mut rj = RunningJob {
                start,
                end,
                nodes,
                energy: 0.0,
                job,
            };
            rj.energy = sim.estimate_energy(&rj, start, window.start);
            debug!(
                "prepopulated job {} on {:?}, {} s remaining",
                rj.job.id,
                rj.nodes,
                end - window.start
            );
            if sim.external.is_some() {
                sim.bridge_first_tick.push(rj.job.id);
            }
            sim.placements.insert(rj.job.id, rj.nodes.clone());
            sim.running.insert(rj.job.id, rj);
        }
        Ok(sim)
    }

    /// Compute energy of a running job over `[from, to)`, sampled on the step grid.
    fn estimate_energy(&self, rj: &RunningJob, from: Seconds, to: Seconds) -> f64 {
        let dt = self.config.timestep;
        let mut energy = 0.0;
        let mut t = from;
        while t < to {
            let w = overlap(t, t + dt, rj.start, rj.end.min(to));
            energy += rj.nodes.len() as f64 * node_power(rj.utilization_at(t), &self.config) * w as f64;
            t += dt;
        }
        energy
    }

    pub fn is_done(&self) -> bool {
        self.now >= self.window.end
    }

    pub fn step(&mut self) -> Result<(), SimError> {
        debug_assert!(!self.is_done());
        self.complete_due()?;
        self.admit()?;
        self.schedule()?;
        self.tick();
        self.now += self.config.timestep;
        Ok(())
    }

    fn complete_due(&mut self) -> Result<(), SimError> {
        let due: Vec<JobId> = self
            .running
            .values()
            .filter(|r| r.end <= self.now)
            .map(|r| r.job.id)
            .collect();
        for id in due {
            let rj = self.running.remove(&id).unwrap();
            self.finish_job(rj, None)?;
            self.just_completed.push(id);
        }
        Ok(())
    }

    /// Release a job's nodes and record it. `end` overrides the planned end.
    fn finish_job(&mut self, rj: RunningJob, end: Option<Seconds>) -> Result<(), SimError> {
        self.pool.release(rj.job.id)?;
        let end = end.unwrap_or(rj.end);
        let stats = job_stats(&rj.job, rj.start, end, rj.energy, &self.config);
        if self.settings.accumulate_accounts {
            accumulate_account(&mut self.accounts, &stats, self.config.fugaku_reference());
        }
        self.completed.push(stats);
        self.dirty = true;
        Ok(())
    }

    fn admit(&mut self) -> Result<(), SimError> {
        while let Some(job) = self.pending.get(self.pending_cursor) {
            if job.times.submit > self.now {
                break;
            }
            let mut job = job.clone();
            self.pending_cursor += 1;
            if let Some(model) = &self.settings.ml_model {
                if self.settings.policy == Policy::Ml {
                    job.score = Some(model.score_job(&job)?);
                }
            }
            self.admitted.push(job.id);
            self.queue.push(job);
            self.dirty = true;
        }
        Ok(())
    }

    fn start_job(&mut self, job: Job, nodes: Vec<NodeId>, start: Seconds) {
        let end = match (self.settings.policy, job.times.end) {
            (Policy::Replay, Some(end)) => end,
            _ => start + job.times.recorded_duration().unwrap_or(job.times.wall_limit),
        };
        self.placements.insert(job.id, nodes.clone());
        self.running.insert(
            job.id,
            RunningJob {
                job,
                start,
                end,
                nodes,
                energy: 0.0,
            },
        );
    }

    fn take_queued(&mut self, id: JobId) -> Option<Job> {
        let pos = self.queue.iter().position(|j| j.id == id)?;
        Some(self.queue.remove(pos))
    }

    fn schedule(&mut self) -> Result<(), SimError> {
        if self.external.is_some() {
            return self.schedule_external();
        }
        if self.settings.policy == Policy::Replay {
            return self.schedule_replay();
        }
        if !self.dirty {
            return Ok(());
        }
        self.dirty = false;
        self.admitted.clear();
        self.just_completed.clear();
        if self.queue.is_empty() {
            return Ok(());
        }
        let views: Vec<RunningView> = self.running.values().map(|r| r.view(self.now)).collect();
        let refs: Vec<&Job> = self.queue.iter().collect();
        let ordered = order_queue(self.settings.policy, &refs, self.now, self.ranking.as_ref())?;
        let plan = schedule_step(
            &ordered,
            &self.pool,
            &views,
            self.settings.backfill,
            self.now,
            self.config.timestep,
        )?;
        if let Some(res) = plan.reservation {
            self.first_reservations.entry(res.job_id).or_insert(res.reserved_start);
        }
        for (id, nodes) in plan.placements {
            let job = self.take_queued(id).expect("planned job is queued");
            let nodes = self.pool.allocate(id, job.nodes_requested, Some(&nodes))?;
            self.start_job(job, nodes, self.now);
        }
        Ok(())
    }

    fn schedule_replay(&mut self) -> Result<(), SimError> {
        self.admitted.clear();
        self.just_completed.clear();
        let refs: Vec<&Job> = self.queue.iter().collect();
        let ordered: Vec<JobId> = order_queue(Policy::Replay, &refs, self.now, None)?
            .into_iter()
            .map(|j| j.id)
            .collect();
        for id in ordered {
            let pos = self.queue.iter().position(|j| j.id == id).unwrap();
            if let Some(nodes) = replay_place(&self.queue[pos], &mut self.pool, self.now)? {
                let job = self.queue.remove(pos);
                let start = job.times.start.unwrap();
                self.start_job(job, nodes, start);
            }
        }
        // A recorded interval can fall entirely between two steps.
        self.complete_due()?;
        self.just_completed.clear();
        Ok(())
    }

    fn schedule_external(&mut self) -> Result<(), SimError> {
        let mut new_jobs: Vec<JobDescriptor> = Vec::new();
        let first: Vec<JobId> = std::mem::take(&mut self.bridge_first_tick);
        let descriptor = |job: &Job| JobDescriptor {
            id: job.id,
            nodes: job.nodes_requested,
            wall_limit: job.times.wall_limit,
            priority: job.priority,
        };
        for id in &first {
            if let Some(r) = self.running.get(id) {
                new_jobs.push(descriptor(&r.job));
            }
        }
        for id in &self.admitted {
            let job = self.queue.iter().find(|j| j.id == *id).expect("admitted job is queued");
            new_jobs.push(descriptor(job));
        }
        let completed: Vec<JobId> = self
            .just_completed
            .iter()
            .copied()
            .filter(|id| self.bridge_known.remove(id))
            .collect();
        self.bridge_known.extend(new_jobs.iter().map(|d| d.id));
        self.admitted.clear();
        self.just_completed.clear();
        self.dirty = false;

        let request = TickRequest {
            time: self.now,
            new_jobs,
            completed,
        };
        let entries = self.external.as_mut().unwrap().tick(&request)?;

        let mut listed = BTreeSet::new();
        for e in &entries {
            if !listed.insert(e.id()) {
                return Err(ProtocolError::DuplicateJob(e.id()).into());
            }
            if !self.running.contains_key(&e.id()) && !self.queue.iter().any(|j| j.id == e.id()) {
                return Err(ProtocolError::UnknownJob(e.id()).into());
            }
        }
        let gone: Vec<JobId> = self.running.keys().filter(|id| !listed.contains(id)).copied().collect();
        for id in gone {
            debug!("job {id} completed externally at {}", self.now);
            self.bridge_known.remove(&id);
            let rj = self.running.remove(&id).unwrap();
            let end = self.now.min(rj.end);
            self.finish_job(rj, Some(end))?;
        }
        for e in entries {
            let id = e.id();
            if let Some(rj) = self.running.get(&id) {
                if let RunningEntry::Nodes { nodes, .. } = &e {
                    if *nodes != rj.nodes {
                        return Err(ProtocolError::Capacity {
                            job: id,
                            reason: format!("running on {:?}, reported on {:?}", rj.nodes, nodes),
                        }
                        .into());
                    }
                }
                continue;
            }
            let job = self.take_queued(id).unwrap();
            let (count, explicit) = match &e {
                RunningEntry::Nodes { nodes, .. } => (nodes.len(), Some(nodes.as_slice())),
                RunningEntry::Count { count, .. } => (*count, None),
            };
            if count != job.nodes_requested {
                return Err(ProtocolError::Capacity {
                    job: id,
                    reason: format!("placed on {count} nodes, requested {}", job.nodes_requested),
                }
                .into());
            }
            let nodes = self
                .pool
                .allocate(id, count, explicit)
                .map_err(|err| ProtocolError::Capacity {
                    job: id,
                    reason: err.to_string(),
                })?;
            self.start_job(job, nodes, self.now);
        }
        Ok(())
    }

    fn tick(&mut self) {
        let dt = self.config.timestep;
        let now = self.now;
        let mut loads = Vec::with_capacity(self.running.len());
        for rj in self.running.values_mut() {
            let u = rj.utilization_at(now);
            debug_assert!((0.0..=1.0).contains(&u));
            let w = overlap(now, now + dt, rj.start, rj.end);
            rj.energy += rj.nodes.len() as f64 * node_power(u, &self.config) * w as f64;
            loads.push((rj.nodes.len(), u));
        }
        let p = system_power(loads, &self.config);
        let params = &self.config.cooling;
        let state = self
            .cooling
            .unwrap_or_else(|| CoolingState::steady(p.facility_watts, params));
        let out = cooling_step(state, p.facility_watts, dt as f64, params);
        self.cooling = Some(out.state);
        self.timeseries.push(TimeseriesRow {
            t: now,
            utilization: p.utilization,
            compute_watts: p.compute_watts,
            loss_watts: p.loss_watts,
            facility_watts: p.facility_watts,
            cooling_watts: out.cooling_watts,
            pue: out.pue,
            return_temp: out.state.return_temp,
            queued: self.queue.len(),
            running: self.running.len(),
        });
    }

    /// Close the run. Jobs still running past the window end are recorded
    /// as unfinished, truncated at the window end.
    pub fn finish(mut self, error: Option<&SimError>) -> SimulationOutput {
        let valid = error.is_none();
        let cutoff = self.window.end;
        let mut unfinished = Vec::new();
        for (_, rj) in std::mem::take(&mut self.running) {
            if rj.end <= cutoff {
                let _ = self.finish_job(rj, None);
            } else {
                let end = cutoff.max(rj.start + 1);
                let mut stats = job_stats(&rj.job, rj.start, end, rj.energy, &self.config);
                stats.finished = false;
                stats.boundary_flag = BoundaryFlag::EndsAfterWindow;
                unfinished.push(stats);
            }
        }
        let mut jobs = self.completed;
        jobs.extend(unfinished);
        let never_started: Vec<JobId> = self
            .queue
            .iter()
            .chain(&self.pending[self.pending_cursor..])
            .map(|j| j.id)
            .collect();
        let samples: Vec<PowerSample> = self.timeseries.iter().map(TimeseriesRow::sample).collect();
        let accounts = self.settings.accumulate_accounts.then_some(self.accounts);
        let report = StatsReport::compute(ReportInputs {
            window: self.window,
            config: &self.config,
            jobs: &jobs,
            samples: &samples,
            never_started: never_started.len(),
            dismissed: self.dismissed,
            accounts: accounts.clone().unwrap_or_default(),
            valid,
        });
        SimulationOutput {
            window: self.window,
            config: self.config,
            policy: self.settings.policy,
            backfill: self.settings.backfill,
            timeseries: self.timeseries,
            jobs,
            placements: self.placements,
            never_started,
            first_reservations: self.first_reservations,
            report,
            accounts,
            valid,
            error: error.map(ToString::to_string),
        }
    }
}

/// Simulate `workload` over `window`.
pub fn run(
    config: SystemConfig,
    workload: &WorkloadSet,
    window: SimWindow,
    settings: RunSettings,
    scheduler: SchedulerImpl,
) -> Result<SimulationOutput, SimFailure> {
    let policy = settings.policy;
    let mut sim = Simulation::initialize(config, workload, window, settings, scheduler)
        .map_err(|error| SimFailure { error, partial: None })?;
    info!("simulating [{}, {}) with {policy}", window.start, window.end);
    while !sim.is_done() {
        if let Err(error) = sim.step() {
            let partial = sim.finish(Some(&error));
            return Err(SimFailure {
                error,
                partial: Some(Box::new(partial)),
            });
        }
    }
    Ok(sim.finish(None))
}
