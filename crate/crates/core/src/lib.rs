//! Scheduling-integrated data-center digital twin.
//!
//! Workload traces are loaded and clipped to a simulation window, then a
//! time-stepped engine replays or reschedules them while computing system
//! power, conversion loss and a cooling proxy at every step.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod config;
pub mod dataloader;
pub mod engine;
pub mod incentives;
pub mod ml;
pub mod model;
pub mod output;
pub mod power;
pub mod resources;
pub mod schedulers;
pub mod stats;
pub mod synthetic;

pub use bridge::{Bridge, ChildTransport, ExternalScheduler, ProtocolError, StubScheduler};
pub use config::{load_config, parse_config, ConfigError};
pub use dataloader::{clip_to_window, load_workload, ClippedWorkload, LoadError, WorkloadSet};
pub use engine::{run, RunSettings, SchedulerImpl, SimError, SimFailure, Simulation, SimulationOutput, TimeseriesRow};
pub use ml::{ClusterModel, MlError, ScoreWeights};
pub use model::{
    Account, BoundaryFlag, CoolingParams, Job, JobId, JobTimes, NodeId, Seconds, SimWindow, SystemConfig,
    UtilizationTrace,
};
pub use output::emit_outputs;
pub use resources::{AllocError, NodePool};
pub use schedulers::{BackfillMode, Policy, ScheduleError};
pub use stats::{JobStats, StatsReport};
pub use synthetic::{generate, SyntheticSpec};
