use std::collections::BTreeSet;

use proptest::prelude::*;

use schedtwin_core::{
    clip_to_window, generate, run, BackfillMode, Policy, RunSettings, SchedulerImpl, SimWindow, SimulationOutput,
    SyntheticSpec, SystemConfig, WorkloadSet,
};

fn setup(seed: u64, jobs: usize, nodes: usize, dt: i64, ff: i64, len: i64) -> (SystemConfig, WorkloadSet, SimWindow) {
    let workload = generate(&SyntheticSpec {
        jobs,
        total_nodes: nodes,
        max_nodes: nodes,
        mean_interarrival: 300.0,
        min_runtime: 60,
        max_runtime: 3600,
        seed,
        ..SyntheticSpec::default()
    });
    let config = SystemConfig {
        total_nodes: nodes,
        timestep: dt,
        ..SystemConfig::default()
    };
    let start = workload.dataset_span.start + ff;
    (config, workload, SimWindow::new(start, start + len).unwrap())
}

fn simulate(
    config: &SystemConfig,
    w: &WorkloadSet,
    window: SimWindow,
    policy: Policy,
    mode: BackfillMode,
) -> SimulationOutput {
    run(
        config.clone(),
        w,
        window,
        RunSettings::new(policy, mode),
        SchedulerImpl::Builtin,
    )
    .unwrap()
}

fn no_double_booking(out: &SimulationOutput) -> Result<(), TestCaseError> {
    for (i, a) in out.jobs.iter().enumerate() {
        for b in &out.jobs[i + 1..] {
            if a.start < b.end && b.start < a.end {
                let na: BTreeSet<_> = out.placements[&a.job_id].iter().collect();
                let shared = out.placements[&b.job_id].iter().any(|n| na.contains(n));
                prop_assert!(!shared, "jobs {} and {} share a node", a.job_id, b.job_id);
            }
        }
    }
    Ok(())
}

fn rescheduling_policy() -> impl Strategy<Value = Policy> {
    proptest::sample::select(vec![Policy::Fcfs, Policy::Sjf, Policy::Ljf, Policy::Priority])
}

fn backfill() -> impl Strategy<Value = BackfillMode> {
    proptest::sample::select(vec![BackfillMode::None, BackfillMode::FirstFit, BackfillMode::Easy])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rescheduling_invariants(
        seed in any::<u64>(),
        jobs in 1usize..60,
        nodes in 1usize..24,
        dt in 1i64..60,
        ff in 0i64..3600,
        len in 0i64..30_000,
        policy in rescheduling_policy(),
        mode in backfill(),
    ) {
        let (config, w, window) = setup(seed, jobs, nodes, dt, ff, len);
        let out = simulate(&config, &w, window, policy, mode);
        let clipped = clip_to_window(&w, window);

        // Every kept job is accounted for exactly once.
        let kept = clipped.prepopulate.len() + clipped.eligible.len();
        prop_assert_eq!(out.jobs.len() + out.never_started.len(), kept);
        prop_assert_eq!(out.report.dismissed_jobs, clipped.dismissed_count);

        // The clock advances by exactly one step per row.
        for pair in out.timeseries.windows(2) {
            prop_assert_eq!(pair[1].t - pair[0].t, dt);
        }
        if let Some(first) = out.timeseries.first() {
            prop_assert_eq!(first.t, window.start);
        }
        prop_assert!(out.timeseries.iter().all(|r| r.t < window.end));

        for j in &out.jobs {
            prop_assert!(j.start >= j.submit.min(window.start), "job {} starts before submit", j.job_id);
            prop_assert!(j.end >= j.start);
            prop_assert!(j.end <= window.end);
            prop_assert_eq!(out.placements[&j.job_id].len(), j.nodes);
        }
        for r in &out.timeseries {
            prop_assert!((0.0..=1.0).contains(&r.utilization));
            prop_assert!(r.facility_watts >= r.compute_watts);
        }
        no_double_booking(&out)?;
    }

    #[test]
    fn replay_reproduces_record(seed in any::<u64>(), jobs in 1usize..60, nodes in 1usize..24, dt in 1i64..60) {
        let (config, w, _) = setup(seed, jobs, nodes, dt, 0, 1);
        let window = w.dataset_span;
        let out = simulate(&config, &w, window, Policy::Replay, BackfillMode::None);
        prop_assert!(out.valid);
        prop_assert!(out.never_started.is_empty());
        for job in &w.jobs {
            let s = out.jobs.iter().find(|s| s.job_id == job.id).unwrap();
            prop_assert_eq!(Some(s.start), job.times.start);
            prop_assert_eq!(Some(s.end), job.times.end);
            prop_assert_eq!(out.placements.get(&job.id), job.nodes_assigned.as_ref());
        }
    }

    #[test]
    fn same_input_same_output(seed in any::<u64>(), policy in rescheduling_policy(), mode in backfill()) {
        let (config, w, window) = setup(seed, 30, 16, 15, 0, 20_000);
        let a = simulate(&config, &w, window, policy, mode);
        let b = simulate(&config, &w, window, policy, mode);
        prop_assert_eq!(a.start_times(), b.start_times());
        prop_assert_eq!(a.report.render(), b.report.render());
    }
}
