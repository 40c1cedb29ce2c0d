//! Core domain types shared by every other module.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Simulation time in integer seconds, relative to the dataset's time base.
pub type Seconds = i64;

/// Node index in `[0, total_nodes)`.
pub type NodeId = usize;

/// Utilization assumed for jobs that carry neither a trace nor an average.
pub const DEFAULT_UTIL: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(pub u64);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JobTimes {
    pub submit: Seconds,
    /// Recorded start; required for replay.
    pub start: Option<Seconds>,
    /// Recorded end.
    pub end: Option<Seconds>,
    pub wall_limit: Seconds,
    pub telemetry_start: Option<Seconds>,
    pub telemetry_end: Option<Seconds>,
}

impl JobTimes {
    pub fn new(submit: Seconds, wall_limit: Seconds) -> Self {
        JobTimes {
            submit,
            start: None,
            end: None,
            wall_limit,
            telemetry_start: None,
            telemetry_end: None,
        }
    }

    pub fn recorded(submit: Seconds, start: Seconds, end: Seconds, wall_limit: Seconds) -> Self {
        JobTimes {
            start: Some(start),
            end: Some(end),
            ..JobTimes::new(submit, wall_limit)
        }
    }

    /// Recorded runtime when both start and end are known.
    pub fn recorded_duration(&self) -> Option<Seconds> {
        match (self.start, self.end) {
            (Some(s), Some(e)) => Some(e - s),
            _ => None,
        }
    }

    fn check(&self) -> Result<(), String> {
        if self.wall_limit <= 0 {
            return Err("wall_limit must be > 0".into());
        }
        if let Some(start) = self.start {
            if self.submit > start {
                return Err("submit must be <= start".into());
            }
            if let Some(end) = self.end {
                if start >= end {
                    return Err("start must be < end".into());
                }
            }
        }
        if let (Some(ts), Some(te)) = (self.telemetry_start, self.telemetry_end) {
            if ts > te {
                return Err("telemetry_start must be <= telemetry_end".into());
            }
        }
        Ok(())
    }
}

/// Marks jobs that straddle the simulation window and therefore lack
/// ground-truth telemetry for part of their simulated life.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum BoundaryFlag {
    #[default]
    None,
    StartedBeforeWindow,
    EndsAfterWindow,
}

impl BoundaryFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryFlag::None => "none",
            BoundaryFlag::StartedBeforeWindow => "started_before_window",
            BoundaryFlag::EndsAfterWindow => "ends_after_window",
        }
    }
}

/// Piecewise-constant utilization samples for one job.
#[derive(Clone, Debug, PartialEq)]
pub struct UtilizationTrace {
    sample_times: Vec<Seconds>,
    values: Vec<f64>,
}

impl UtilizationTrace {
    pub fn new(sample_times: Vec<Seconds>, values: Vec<f64>) -> Result<Self, String> {
        if sample_times.is_empty() {
            return Err("trace must be nonempty".into());
        }
        if sample_times.len() != values.len() {
            return Err(format!(
                "trace has {} times but {} values",
                sample_times.len(),
                values.len()
            ));
        }
        if sample_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err("trace times must be strictly ascending".into());
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(format!("trace value {v} outside [0,1]"));
        }
        Ok(UtilizationTrace { sample_times, values })
    }

    pub fn sample_times(&self) -> &[Seconds] {
        &self.sample_times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn first_time(&self) -> Seconds {
        self.sample_times[0]
    }

    pub fn last_time(&self) -> Seconds {
        *self.sample_times.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Job {
    pub id: JobId,
    pub account_id: String,
    pub times: JobTimes,
    pub nodes_requested: usize,
    /// Exact recorded placement, used by replay.
    pub nodes_assigned: Option<Vec<NodeId>>,
    /// Higher is more urgent.
    pub priority: i64,
    pub trace: Option<UtilizationTrace>,
    pub scalar_avg_util: Option<f64>,
    pub score: Option<f64>,
    pub boundary_flag: BoundaryFlag,
}

impl Job {
    pub fn new(id: u64, account: impl Into<String>, times: JobTimes, nodes: usize) -> Self {
        Job {
            id: JobId(id),
            account_id: account.into(),
            times,
            nodes_requested: nodes,
            nodes_assigned: None,
            priority: 0,
            trace: None,
            scalar_avg_util: None,
            score: None,
            boundary_flag: BoundaryFlag::None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.times.check()?;
        if self.nodes_requested == 0 {
            return Err("nodes_requested must be >= 1".into());
        }
        if let Some(assigned) = &self.nodes_assigned {
            if assigned.len() != self.nodes_requested {
                return Err(format!(
                    "assigned-node count mismatch ({} listed, {} requested)",
                    assigned.len(),
                    self.nodes_requested
                ));
            }
            let mut sorted = assigned.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err("assigned nodes must be distinct".into());
            }
        }
        if let Some(u) = self.scalar_avg_util {
            if !(0.0..=1.0).contains(&u) {
                return Err(format!("avg_util {u} outside [0,1]"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoolingParams {
    /// °C
    pub supply_temp: f64,
    /// Thermal time constant in seconds.
    pub thermal_mass_tau: f64,
    /// Mass flow times heat capacity, W per °C.
    pub flow_heat_capacity: f64,
    /// W
    pub cooling_overhead_static: f64,
    /// Cooling power per watt of IT input power.
    pub cooling_overhead_slope: f64,
}

impl Default for CoolingParams {
    fn default() -> Self {
        // Steady-state PUE = 1 + slope + static/P, so these defaults sit at 1.06.
        CoolingParams {
            supply_temp: 25.0,
            thermal_mass_tau: 300.0,
            flow_heat_capacity: 50_000.0,
            cooling_overhead_static: 0.0,
            cooling_overhead_slope: 0.06,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig {
    pub total_nodes: usize,
    pub timestep: Seconds,
    pub node_idle_watts: f64,
    pub node_max_watts: f64,
    /// Power conversion efficiency η in (0, 1].
    pub conversion_efficiency: f64,
    pub cooling: CoolingParams,
    /// kg CO2 per kWh
    pub carbon_intensity: f64,
    /// Jobs with fewer nodes are "small".
    pub size_small_lt: usize,
    /// Jobs with at least this many nodes are "large".
    pub size_large_ge: usize,
    /// Per-node reference power for Fugaku points; `None` means midpoint of idle and max.
    pub fugaku_reference_watts: Option<f64>,
    /// Score weights overriding the ML model's stored ones, keyed by feature name.
    pub ml_alpha: Vec<(String, f64)>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            total_nodes: 64,
            timestep: 15,
            node_idle_watts: 200.0,
            node_max_watts: 1000.0,
            conversion_efficiency: 0.95,
            cooling: CoolingParams::default(),
            carbon_intensity: 0.4,
            size_small_lt: 16,
            size_large_ge: 128,
            fugaku_reference_watts: None,
            ml_alpha: Vec::new(),
        }
    }
}

impl SystemConfig {
    pub fn fugaku_reference(&self) -> f64 {
        self.fugaku_reference_watts
            .unwrap_or(self.node_idle_watts + 0.5 * (self.node_max_watts - self.node_idle_watts))
    }
}

/// Check every configuration invariant, collecting all violations.
pub fn validate_config(config: SystemConfig) -> Result<SystemConfig, Vec<String>> {
    let mut errs = Vec::new();
    if config.total_nodes == 0 {
        errs.push("total_nodes must be > 0".to_string());
    }
    if config.timestep < 1 {
        errs.push("timestep must be >= 1".to_string());
    }
    if !(config.node_idle_watts < config.node_max_watts) {
        errs.push("node_idle_watts < node_max_watts".to_string());
    }
    if config.node_idle_watts < 0.0 {
        errs.push("node_idle_watts must be >= 0".to_string());
    }
    let eta = config.conversion_efficiency;
    if !(eta > 0.0 && eta <= 1.0) {
        errs.push("conversion_efficiency must be in (0,1]".to_string());
    }
    let c = &config.cooling;
    if !(c.thermal_mass_tau > 0.0) {
        errs.push("thermal_mass_tau must be > 0".to_string());
    }
    if !(c.flow_heat_capacity > 0.0) {
        errs.push("flow_heat_capacity must be > 0".to_string());
    }
    if !(c.cooling_overhead_slope >= 0.0) {
        errs.push("cooling_overhead_slope must be >= 0".to_string());
    }
    if !(c.cooling_overhead_static >= 0.0) {
        errs.push("cooling_overhead_static must be >= 0".to_string());
    }
    if config.carbon_intensity < 0.0 {
        errs.push("carbon_intensity must be >= 0".to_string());
    }
    if config.size_small_lt > config.size_large_ge {
        errs.push("size_small_lt must be <= size_large_ge".to_string());
    }
    if let Some(r) = config.fugaku_reference_watts {
        if !(r > 0.0) {
            errs.push("fugaku_reference_w must be > 0".to_string());
        }
    }
    if errs.is_empty() {
        Ok(config)
    } else {
        Err(errs)
    }
}

/// Per-account aggregates, persisted across simulations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Account {
    #[serde(skip)]
    pub account_id: String,
    pub jobs_completed: u64,
    #[serde(rename = "total_energy_j")]
    pub total_energy: f64,
    pub node_seconds: f64,
    #[serde(rename = "avg_power_w")]
    pub avg_power: f64,
    pub accumulated_edp: f64,
    pub fugaku_points: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimWindow {
    pub start: Seconds,
    pub end: Seconds,
}

impl SimWindow {
    /// `start == end` is allowed and yields an empty simulation.
    pub fn new(start: Seconds, end: Seconds) -> Result<Self, String> {
        if start > end {
            return Err(format!("window start {start} after end {end}"));
        }
        Ok(SimWindow { start, end })
    }

    pub fn len(&self) -> Seconds {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(nodes: usize, idle: f64, max: f64, eta: f64) -> SystemConfig {
        SystemConfig {
            total_nodes: nodes,
            node_idle_watts: idle,
            node_max_watts: max,
            conversion_efficiency: eta,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn valid_config_passes_unchanged() {
        let c = cfg(4, 200.0, 1000.0, 0.95);
        assert_eq!(validate_config(c.clone()), Ok(c));
    }

    #[test]
    fn zero_efficiency_rejected() {
        let errs = validate_config(cfg(4, 200.0, 1000.0, 0.0)).unwrap_err();
        assert_eq!(errs, vec!["conversion_efficiency must be in (0,1]"]);
    }

    #[test]
    fn idle_equal_max_rejected() {
        let errs = validate_config(cfg(4, 1000.0, 1000.0, 0.95)).unwrap_err();
        assert_eq!(errs, vec!["node_idle_watts < node_max_watts"]);
    }

    #[test]
    fn all_violations_reported() {
        let mut c = cfg(0, 1000.0, 1000.0, 1.5);
        c.timestep = 0;
        c.cooling.thermal_mass_tau = 0.0;
        let errs = validate_config(c).unwrap_err();
        assert_eq!(errs.len(), 5, "{errs:?}");
    }

    #[test]
    fn job_invariants() {
        let mut job = Job::new(1, "a", JobTimes::recorded(0, 10, 110, 200), 2);
        assert!(job.validate().is_ok());
        job.nodes_assigned = Some(vec![3]);
        assert!(job.validate().unwrap_err().contains("mismatch"));
        job.nodes_assigned = Some(vec![3, 3]);
        assert!(job.validate().unwrap_err().contains("distinct"));
        job.nodes_assigned = None;
        job.times.start = Some(-1);
        assert!(job.validate().is_err());
    }

    #[test]
    fn trace_rejects_unsorted_and_out_of_range() {
        assert!(UtilizationTrace::new(vec![0, 0], vec![0.1, 0.2]).is_err());
        assert!(UtilizationTrace::new(vec![0], vec![1.5]).is_err());
        assert!(UtilizationTrace::new(vec![], vec![]).is_err());
        assert!(UtilizationTrace::new(vec![0, 20], vec![0.2, 0.9]).is_ok());
    }
}
