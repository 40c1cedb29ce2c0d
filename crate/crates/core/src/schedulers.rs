//! Queue ordering policies and backfill strategies.

use std::cmp::{Ordering, Reverse};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::incentives::IncentiveRanking;
use crate::model::{Job, JobId, NodeId, Seconds};
use crate::resources::{AllocError, NodePool};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("job {0} has no ML score")]
    MissingScore(JobId),
    #[error("job {job} needs {requested} nodes but the system has {total}")]
    Unsatisfiable { job: JobId, requested: usize, total: usize },
    #[error("replay job {0} has no recorded start time")]
    MissingStart(JobId),
    #[error(transparent)]
    Alloc(#[from] AllocError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Policy {
    Replay,
    Fcfs,
    Sjf,
    Ljf,
    Priority,
    AcctAvgPower,
    AcctLowAvgPower,
    AcctEdp,
    AcctFugakuPts,
    Ml,
}

impl Policy {
    pub const ALL: [Policy; 10] = [
        Policy::Replay,
        Policy::Fcfs,
        Policy::Sjf,
        Policy::Ljf,
        Policy::Priority,
        Policy::AcctAvgPower,
        Policy::AcctLowAvgPower,
        Policy::AcctEdp,
        Policy::AcctFugakuPts,
        Policy::Ml,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Replay => "replay",
            Policy::Fcfs => "fcfs",
            Policy::Sjf => "sjf",
            Policy::Ljf => "ljf",
            Policy::Priority => "priority",
            Policy::AcctAvgPower => "acct_avg_power",
            Policy::AcctLowAvgPower => "acct_low_avg_power",
            Policy::AcctEdp => "acct_edp",
            Policy::AcctFugakuPts => "acct_fugaku_pts",
            Policy::Ml => "ml",
        }
    }

    pub fn is_account_based(self) -> bool {
        matches!(
            self,
            Policy::AcctAvgPower | Policy::AcctLowAvgPower | Policy::AcctEdp | Policy::AcctFugakuPts
        )
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum BackfillMode {
    #[default]
    None,
    FirstFit,
    Easy,
}

impl BackfillMode {
    pub fn name(self) -> &'static str {
        match self {
            BackfillMode::None => "none",
            BackfillMode::FirstFit => "first-fit",
            BackfillMode::Easy => "easy",
        }
    }
}

impl fmt::Display for BackfillMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackfillMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(BackfillMode::None),
            "first-fit" | "firstfit" => Ok(BackfillMode::FirstFit),
            "easy" => Ok(BackfillMode::Easy),
            _ => Err(format!("unknown backfill `{s}`")),
        }
    }
}

/// The head blocker's guaranteed start under EASY.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Reservation {
    pub job_id: JobId,
    pub reserved_start: Seconds,
    pub reserved_nodes: usize,
}

/// What the scheduler may know about a running job.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunningView {
    pub nodes: usize,
    /// Start plus wall limit.
    pub projected_end: Seconds,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepPlan {
    pub placements: Vec<(JobId, Vec<NodeId>)>,
    pub reservation: Option<Reservation>,
}

fn fifo_key(job: &Job) -> (Seconds, JobId) {
    (job.times.submit, job.id)
}

/// Order the queue for one scheduling pass.
///
/// Ties always fall back to `(submit, id)` ascending.
pub fn order_queue<'a>(
    policy: Policy,
    queue: &[&'a Job],
    now: Seconds,
    ranking: Option<&IncentiveRanking>,
) -> Result<Vec<&'a Job>, ScheduleError> {
    debug_assert!(queue.iter().all(|j| j.times.submit <= now));
    let mut out = queue.to_vec();
    match policy {
        Policy::Fcfs => out.sort_by_key(|j| fifo_key(j)),
        Policy::Sjf => out.sort_by_key(|j| (j.times.wall_limit, fifo_key(j))),
        Policy::Ljf => out.sort_by_key(|j| (Reverse(j.times.wall_limit), fifo_key(j))),
        Policy::Priority => out.sort_by_key(|j| (Reverse(j.priority), fifo_key(j))),
        Policy::Replay => out.sort_by_key(|j| (j.times.start.is_none(), j.times.start, j.id)),
        Policy::AcctAvgPower | Policy::AcctLowAvgPower | Policy::AcctEdp | Policy::AcctFugakuPts => {
            let prio = |j: &Job| ranking.map_or(0, |r| r.priority_of(&j.account_id));
            out.sort_by_key(|j| (Reverse(prio(j)), fifo_key(j)));
        }
        Policy::Ml => {
            if let Some(j) = out.iter().find(|j| j.score.is_none()) {
                return Err(ScheduleError::MissingScore(j.id));
            }
            out.sort_by(|a, b| {
                let (sa, sb) = (a.score.unwrap(), b.score.unwrap());
                sb.total_cmp(&sa).then_with(|| fifo_key(a).cmp(&fifo_key(b)))
            });
        }
    }
    Ok(out)
}

fn snap_up(t: Seconds, now: Seconds, timestep: Seconds) -> Seconds {
    if t <= now {
        now
    } else {
        now + (t - now + timestep - 1) / timestep * timestep
    }
}

/// Earliest time the blocker can start if every running job holds its nodes
/// until its projected end. The result is snapped up to the step grid
/// anchored at `now`, since nodes are only released on step boundaries.
pub fn easy_reservation(
    blocker: &Job,
    running: &[RunningView],
    free_now: usize,
    total: usize,
    now: Seconds,
    timestep: Seconds,
) -> Result<Reservation, ScheduleError> {
    let need = blocker.nodes_requested;
    if need > total {
        return Err(ScheduleError::Unsatisfiable {
            job: blocker.id,
            requested: need,
            total,
        });
    }
    let mut ends: Vec<_> = running.iter().map(|r| (r.projected_end, r.nodes)).collect();
    ends.sort_unstable();
    let mut free = free_now;
    let mut at = now;
    for (end, nodes) in ends {
        if free >= need {
            break;
        }
        free += nodes;
        at = end;
    }
    debug_assert!(free >= need, "running jobs plus free nodes must cover the system");
    Ok(Reservation {
        job_id: blocker.id,
        reserved_start: snap_up(at, now, timestep),
        reserved_nodes: need,
    })
}

/// Decide which queued jobs start now.
///
/// Jobs start in queue order until the first one that does not fit. What
/// happens past that head blocker depends on `mode`.
pub fn schedule_step(
    ordered: &[&Job],
    pool: &NodePool,
    running: &[RunningView],
    mode: BackfillMode,
    now: Seconds,
    timestep: Seconds,
) -> Result<StepPlan, ScheduleError> {
    let mut free: Vec<NodeId> = pool.free_nodes().collect();
    let mut plan = StepPlan::default();
    let take = |free: &mut Vec<NodeId>, job: &Job| -> Vec<NodeId> { free.drain(..job.nodes_requested).collect() };

    let mut rest = ordered.iter();
    let blocker = loop {
        let Some(job) = rest.next() else {
            return Ok(plan);
        };
        if job.nodes_requested <= free.len() {
            let nodes = take(&mut free, job);
            plan.placements.push((job.id, nodes));
        } else {
            break *job;
        }
    };

    match mode {
        BackfillMode::None => {}
        BackfillMode::FirstFit => {
            for job in rest {
                if job.nodes_requested <= free.len() {
                    let nodes = take(&mut free, job);
                    plan.placements.push((job.id, nodes));
                }
            }
        }
        BackfillMode::Easy => {
            let mut views = running.to_vec();
            views.extend(plan.placements.iter().map(|(id, nodes)| {
                let job = ordered.iter().find(|j| j.id == *id).unwrap();
                RunningView {
                    nodes: nodes.len(),
                    projected_end: now + job.times.wall_limit,
                }
            }));
            let res = easy_reservation(blocker, &views, free.len(), pool.total(), now, timestep)?;
            let free_at_shadow = free.len()
                + views
                    .iter()
                    .filter(|v| v.projected_end <= res.reserved_start)
                    .map(|v| v.nodes)
                    .sum::<usize>();
            let mut extra = free_at_shadow - res.reserved_nodes;
            for job in rest {
                if job.nodes_requested > free.len() {
                    continue;
                }
                let ends_in_time = now + job.times.wall_limit <= res.reserved_start;
                if ends_in_time || job.nodes_requested <= extra {
                    if !ends_in_time {
                        extra -= job.nodes_requested;
                    }
                    let nodes = take(&mut free, job);
                    plan.placements.push((job.id, nodes));
                }
            }
            plan.reservation = Some(res);
        }
    }
    Ok(plan)
}

/// Place a replayed job exactly at its recorded start on its recorded nodes.
/// Returns `None` while the recorded start lies in the future.
pub fn replay_place(job: &Job, pool: &mut NodePool, now: Seconds) -> Result<Option<Vec<NodeId>>, ScheduleError> {
    let start = job.times.start.ok_or(ScheduleError::MissingStart(job.id))?;
    if start > now {
        return Ok(None);
    }
    let nodes = pool.allocate(job.id, job.nodes_requested, job.nodes_assigned.as_deref())?;
    Ok(Some(nodes))
}

/// Total order used when a deterministic job order is needed outside a policy.
pub fn fifo_cmp(a: &Job, b: &Job) -> Ordering {
    fifo_key(a).cmp(&fifo_key(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::JobTimes;
    use proptest::prelude::*;

    fn job(id: u64, submit: i64, limit: i64, nodes: usize) -> Job {
        Job::new(id, "a", JobTimes::new(submit, limit), nodes)
    }

    fn ids(jobs: &[&Job]) -> Vec<u64> {
        jobs.iter().map(|j| j.id.0).collect()
    }

    #[test]
    fn sjf_and_ljf_by_limit() {
        let jobs = [job(1, 0, 100, 1), job(2, 0, 10, 1), job(3, 0, 50, 1)];
        let q: Vec<_> = jobs.iter().collect();
        assert_eq!(ids(&order_queue(Policy::Sjf, &q, 0, None).unwrap()), vec![2, 3, 1]);
        assert_eq!(ids(&order_queue(Policy::Ljf, &q, 0, None).unwrap()), vec![1, 3, 2]);
    }

    #[test]
    fn equal_priority_falls_back_to_fcfs() {
        let mut jobs = vec![job(4, 3, 1, 1), job(2, 1, 1, 1), job(3, 1, 1, 1), job(1, 2, 1, 1)];
        for j in &mut jobs {
            j.priority = 7;
        }
        let q: Vec<_> = jobs.iter().collect();
        assert_eq!(
            ids(&order_queue(Policy::Priority, &q, 5, None).unwrap()),
            ids(&order_queue(Policy::Fcfs, &q, 5, None).unwrap())
        );
        assert_eq!(ids(&order_queue(Policy::Fcfs, &q, 5, None).unwrap()), vec![2, 3, 1, 4]);
    }

    #[test]
    fn ml_requires_scores() {
        let mut a = job(1, 0, 1, 1);
        let b = job(2, 0, 1, 1);
        a.score = Some(1.0);
        assert_eq!(
            order_queue(Policy::Ml, &[&a, &b], 0, None),
            Err(ScheduleError::MissingScore(JobId(2)))
        );
    }

    #[test]
    fn names_round_trip() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>().unwrap(), p);
        }
        assert_eq!("firstfit".parse::<BackfillMode>().unwrap(), BackfillMode::FirstFit);
        assert_eq!("first-fit".parse::<BackfillMode>().unwrap(), BackfillMode::FirstFit);
        assert!("bogus".parse::<Policy>().is_err());
    }

    /// 4 nodes; A runs on two of them until t=10. Queue: B (4 nodes), C (1 node,
    /// limit 8), D (1 node, limit 15).
    fn blocked_scenario() -> (NodePool, Vec<RunningView>, [Job; 3]) {
        let mut pool = NodePool::new(4);
        pool.allocate(JobId(100), 2, None).unwrap();
        let running = vec![RunningView {
            nodes: 2,
            projected_end: 10,
        }];
        (pool, running, [job(1, 0, 20, 4), job(2, 0, 8, 1), job(3, 0, 15, 1)])
    }

    #[test]
    fn easy_backfills_only_jobs_that_finish_before_reservation() {
        let (pool, running, q) = blocked_scenario();
        let ordered: Vec<_> = q.iter().collect();
        let plan = schedule_step(&ordered, &pool, &running, BackfillMode::Easy, 0, 1).unwrap();
        assert_eq!(plan.placements, vec![(JobId(2), vec![2])]);
        assert_eq!(
            plan.reservation,
            Some(Reservation {
                job_id: JobId(1),
                reserved_start: 10,
                reserved_nodes: 4
            })
        );
    }

    #[test]
    fn first_fit_ignores_blocker() {
        let (pool, running, q) = blocked_scenario();
        let ordered: Vec<_> = q.iter().collect();
        let plan = schedule_step(&ordered, &pool, &running, BackfillMode::FirstFit, 0, 1).unwrap();
        assert_eq!(plan.placements, vec![(JobId(2), vec![2]), (JobId(3), vec![3])]);
        assert!(plan.reservation.is_none());
    }

    #[test]
    fn no_backfill_stops_at_blocker() {
        let (pool, running, q) = blocked_scenario();
        let ordered: Vec<_> = q.iter().collect();
        let plan = schedule_step(&ordered, &pool, &running, BackfillMode::None, 0, 1).unwrap();
        assert!(plan.placements.is_empty());
    }

    #[test]
    fn reservation_from_cumulative_free() {
        let running = [RunningView {
            nodes: 3,
            projected_end: 10,
        }];
        let r = easy_reservation(&job(1, 0, 5, 4), &running, 1, 4, 0, 1).unwrap();
        assert_eq!(r.reserved_start, 10);
        let r = easy_reservation(&job(1, 0, 5, 4), &running, 1, 4, 0, 15).unwrap();
        assert_eq!(r.reserved_start, 15);
        assert!(matches!(
            easy_reservation(&job(1, 0, 5, 5), &running, 1, 4, 0, 1),
            Err(ScheduleError::Unsatisfiable {
                requested: 5,
                total: 4,
                ..
            })
        ));
    }

    #[test]
    fn easy_uses_extra_nodes_for_long_backfill() {
        // 4 nodes, 2 held until t=10. Blocker wants 3, leaving 1 spare at the
        // reservation, so one long 1-node job may backfill but not two.
        let mut pool = NodePool::new(4);
        pool.allocate(JobId(100), 2, None).unwrap();
        let running = [RunningView {
            nodes: 2,
            projected_end: 10,
        }];
        let q = [job(1, 0, 10, 3), job(2, 0, 100, 1), job(3, 0, 100, 1)];
        let ordered: Vec<_> = q.iter().collect();
        let plan = schedule_step(&ordered, &pool, &running, BackfillMode::Easy, 0, 1).unwrap();
        assert_eq!(plan.placements, vec![(JobId(2), vec![2])]);
    }

    #[test]
    fn replay_waits_for_recorded_start() {
        let mut pool = NodePool::new(6);
        let mut j = Job::new(1, "a", JobTimes::recorded(0, 10, 20, 30), 2);
        j.nodes_assigned = Some(vec![2, 5]);
        assert_eq!(replay_place(&j, &mut pool, 9).unwrap(), None);
        assert_eq!(replay_place(&j, &mut pool, 10).unwrap(), Some(vec![2, 5]));
    }

    #[test]
    fn replay_conflict_reports_both_jobs() {
        let mut pool = NodePool::new(6);
        let mut a = Job::new(1, "a", JobTimes::recorded(0, 0, 20, 30), 1);
        a.nodes_assigned = Some(vec![2]);
        let mut b = Job::new(2, "a", JobTimes::recorded(0, 5, 20, 30), 1);
        b.nodes_assigned = Some(vec![2]);
        replay_place(&a, &mut pool, 0).unwrap();
        assert_eq!(
            replay_place(&b, &mut pool, 5),
            Err(ScheduleError::Alloc(AllocError::NodeConflict {
                node: 2,
                job: JobId(2),
                occupant: JobId(1)
            }))
        );
    }

    proptest! {
        #[test]
        fn order_queue_is_permutation(
            raw in proptest::collection::vec((0i64..20, 1i64..50, -3i64..3), 0..20),
            policy_idx in 0usize..5,
        ) {
            let policy = [Policy::Fcfs, Policy::Sjf, Policy::Ljf, Policy::Priority, Policy::Replay][policy_idx];
            let jobs: Vec<Job> = raw.iter().enumerate().map(|(i, &(s, l, p))| {
                let mut j = job(i as u64, s, l, 1);
                j.priority = p;
                j.times.start = Some(s);
                j
            }).collect();
            let q: Vec<_> = jobs.iter().collect();
            let mut out = ids(&order_queue(policy, &q, 100, None).unwrap());
            out.sort();
            prop_assert_eq!(out, (0..jobs.len() as u64).collect::<Vec<_>>());
        }
    }
}
