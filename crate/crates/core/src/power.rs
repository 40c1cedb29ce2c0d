//! Utilization to power, conversion losses, and a first-order cooling proxy.
//!
//! Node power is linear between idle and max. IT input power is compute power
//! divided by the conversion efficiency η. The cooling loop is modelled as a
//! single thermal mass relaxing toward `supply + P / (ṁ·c_p)` with time
//! constant τ, and cooling power is affine in IT input power.

use crate::model::{CoolingParams, Seconds, SystemConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerSnapshot {
    pub t: Seconds,
    pub compute_watts: f64,
    pub loss_watts: f64,
    /// IT input power: compute plus conversion loss.
    pub facility_watts: f64,
    pub cooling_watts: f64,
    pub utilization: f64,
    /// Absent when the facility draws nothing.
    pub pue: Option<f64>,
    pub return_temp: f64,
}

pub fn node_power(util: f64, config: &SystemConfig) -> f64 {
    debug_assert!((0.0..=1.0).contains(&util));
    config.node_idle_watts + util * (config.node_max_watts - config.node_idle_watts)
}

/// Returns `(facility_input, loss)` for a compute draw at efficiency `eta`.
pub fn apply_loss(compute_watts: f64, eta: f64) -> (f64, f64) {
    (compute_watts / eta, compute_watts * (1.0 - eta) / eta)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemPower {
    pub compute_watts: f64,
    pub loss_watts: f64,
    pub facility_watts: f64,
    pub utilization: f64,
}

/// Sum node power over the system. `occupied` yields `(node_count, util)` for
/// each running job; every other node idles.
pub fn system_power(occupied: impl IntoIterator<Item = (usize, f64)>, config: &SystemConfig) -> SystemPower {
    let mut busy = 0usize;
    let mut compute = 0.0;
    for (nodes, util) in occupied {
        busy += nodes;
        compute += nodes as f64 * node_power(util, config);
    }
    debug_assert!(busy <= config.total_nodes);
    compute += (config.total_nodes - busy) as f64 * config.node_idle_watts;
    let (facility, loss) = apply_loss(compute, config.conversion_efficiency);
    SystemPower {
        compute_watts: compute,
        loss_watts: loss,
        facility_watts: facility,
        utilization: busy as f64 / config.total_nodes as f64,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoolingState {
    pub return_temp: f64,
}

impl CoolingState {
    /// Start at the steady state for `facility_watts`.
    pub fn steady(facility_watts: f64, params: &CoolingParams) -> Self {
        CoolingState {
            return_temp: target_temp(facility_watts, params),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoolingOutput {
    pub state: CoolingState,
    pub cooling_watts: f64,
    pub pue: Option<f64>,
}

pub fn target_temp(facility_watts: f64, params: &CoolingParams) -> f64 {
    params.supply_temp + facility_watts / params.flow_heat_capacity
}

pub fn cooling_step(state: CoolingState, facility_watts: f64, dt: f64, params: &CoolingParams) -> CoolingOutput {
    debug_assert!(dt > 0.0);
    let target = target_temp(facility_watts, params);
    let k = (dt / params.thermal_mass_tau).min(1.0);
    let return_temp = state.return_temp + k * (target - state.return_temp);
    let cooling_watts = params.cooling_overhead_static + params.cooling_overhead_slope * facility_watts;
    let pue = (facility_watts > 0.0).then(|| (facility_watts + cooling_watts) / facility_watts);
    CoolingOutput {
        state: CoolingState { return_temp },
        cooling_watts,
        pue,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg() -> SystemConfig {
        SystemConfig {
            total_nodes: 4,
            node_idle_watts: 200.0,
            node_max_watts: 1000.0,
            conversion_efficiency: 1.0,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn node_power_identities() {
        let c = cfg();
        assert_eq!(node_power(0.0, &c), 200.0);
        assert_eq!(node_power(1.0, &c), 1000.0);
        assert_eq!(node_power(0.5, &c), 600.0);
    }

    #[test]
    fn loss_arithmetic() {
        let (f, l) = apply_loss(600.0, 0.95);
        assert_relative_eq!(f, 631.578_947_368_421, max_relative = 1e-12);
        assert_relative_eq!(l, 31.578_947_368_421, max_relative = 1e-12);
        assert_eq!(apply_loss(600.0, 1.0), (600.0, 0.0));
        assert_eq!(apply_loss(0.0, 0.9), (0.0, 0.0));
    }

    #[test]
    fn idle_system_and_half_busy() {
        let c = cfg();
        let p = system_power([], &c);
        assert_eq!((p.compute_watts, p.utilization), (800.0, 0.0));
        let p = system_power([(2, 1.0)], &c);
        assert_eq!((p.compute_watts, p.utilization), (2400.0, 0.5));
    }

    #[test]
    fn cooling_fixed_point_and_pue() {
        let params = CoolingParams {
            cooling_overhead_static: 0.0,
            cooling_overhead_slope: 0.05,
            ..CoolingParams::default()
        };
        let s = CoolingState::steady(1000.0, &params);
        let out = cooling_step(s, 1000.0, 15.0, &params);
        assert_eq!(out.state, s);
        assert_relative_eq!(out.pue.unwrap(), 1.05);
    }

    #[test]
    fn zero_load_has_no_pue_and_decays_to_supply() {
        let params = CoolingParams::default();
        let mut s = CoolingState { return_temp: 40.0 };
        let out = cooling_step(s, 0.0, 15.0, &params);
        assert!(out.pue.is_none());
        for _ in 0..1000 {
            s = cooling_step(s, 0.0, 15.0, &params).state;
        }
        assert_relative_eq!(s.return_temp, params.supply_temp, epsilon = 1e-9);
    }

    #[test]
    fn large_step_clamps_update() {
        let params = CoolingParams::default();
        let out = cooling_step(
            CoolingState { return_temp: 0.0 },
            5e5,
            10.0 * params.thermal_mass_tau,
            &params,
        );
        assert_eq!(out.state.return_temp, target_temp(5e5, &params));
    }

    #[test]
    fn default_steady_state_pue_is_1_06() {
        let out = cooling_step(
            CoolingState::steady(1e6, &CoolingParams::default()),
            1e6,
            15.0,
            &CoolingParams::default(),
        );
        assert!((out.pue.unwrap() - 1.06).abs() <= 0.005);
    }

    proptest! {
        #[test]
        fn node_power_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let c = cfg();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(node_power(lo, &c) <= node_power(hi, &c));
        }

        #[test]
        fn power_within_floor_and_ceiling(
            jobs in proptest::collection::vec((1usize..4, 0.0f64..=1.0), 0..4),
            eta in 0.5f64..=1.0,
        ) {
            let c = SystemConfig { total_nodes: 16, conversion_efficiency: eta, ..cfg() };
            let p = system_power(jobs, &c);
            let floor = 16.0 * c.node_idle_watts / eta;
            let ceil = 16.0 * c.node_max_watts / eta;
            prop_assert!(p.facility_watts >= floor * (1.0 - 1e-12) && p.facility_watts <= ceil * (1.0 + 1e-12));
            prop_assert!((p.compute_watts + p.loss_watts - p.facility_watts).abs() <= 1e-9 * p.facility_watts);
        }

        #[test]
        fn pue_monotone_in_overheads(s1 in 0.0f64..1e4, s2 in 0.0f64..1e4, k1 in 0.0f64..0.5, k2 in 0.0f64..0.5, p in 1.0f64..1e6) {
            let mk = |s, k| CoolingParams { cooling_overhead_static: s, cooling_overhead_slope: k, ..CoolingParams::default() };
            let st = CoolingState { return_temp: 30.0 };
            let lo = cooling_step(st, p, 15.0, &mk(s1.min(s2), k1.min(k2))).pue.unwrap();
            let hi = cooling_step(st, p, 15.0, &mk(s1.max(s2), k1.max(k2))).pue.unwrap();
            prop_assert!(lo <= hi);
            prop_assert!(lo >= 1.0);
        }

        #[test]
        fn cooling_lag_monotone_and_settles(p0 in 0.0f64..1e6, p1 in 0.0f64..1e6, dt in 1i64..60, tau in 60.0f64..3600.0) {
            let params = CoolingParams { thermal_mass_tau: tau, ..CoolingParams::default() };
            let mut s = CoolingState::steady(p0, &params);
            let target = target_temp(p1, &params);
            let gap0 = (target - s.return_temp).abs();
            let mut elapsed = 0.0;
            let mut prev = gap0;
            while elapsed < 5.0 * tau {
                s = cooling_step(s, p1, dt as f64, &params).state;
                elapsed += dt as f64;
                let gap = (target - s.return_temp).abs();
                prop_assert!(gap <= prev + 1e-12);
                prev = gap;
            }
            prop_assert!(prev <= 0.01 * gap0 + 1e-9);
        }
    }
}
