//! Account-derived priorities for the incentive redeeming policies.

use std::collections::BTreeMap;

use crate::model::Account;
use crate::schedulers::Policy;
use crate::stats::JobStats;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IncentiveRanking {
    pub policy: Policy,
    /// Dense ranks; the best account gets the highest value.
    pub priorities: BTreeMap<String, i64>,
}

impl IncentiveRanking {
    /// Accounts missing from the ranking get 0 and sort after ranked ones.
    pub fn priority_of(&self, account: &str) -> i64 {
        self.priorities.get(account).copied().unwrap_or(0)
    }
}

/// Rank accounts by the policy's key. Equal keys share a rank.
///
/// # Panics
/// If `policy` is not one of the `acct_*` policies.
pub fn derive_priorities(policy: Policy, accounts: &BTreeMap<String, Account>) -> IncentiveRanking {
    // (key, higher key is better)
    let (key, descending): (fn(&Account) -> f64, bool) = match policy {
        Policy::AcctAvgPower => (|a| a.avg_power, true),
        Policy::AcctLowAvgPower => (|a| a.avg_power, false),
        Policy::AcctEdp => (|a| a.accumulated_edp, false),
        Policy::AcctFugakuPts => (|a| a.fugaku_points, true),
        other => panic!("{other} is not an account policy"),
    };
    let mut keys: Vec<f64> = accounts.values().map(key).collect();
    keys.sort_by(|a, b| if descending { b.total_cmp(a) } else { a.total_cmp(b) });
    keys.dedup_by(|a, b| a.total_cmp(b).is_eq());
    let n = keys.len() as i64;
    let priorities = accounts
        .iter()
        .map(|(id, acct)| {
            let k = key(acct);
            let pos = keys.iter().position(|x| x.total_cmp(&k).is_eq()).unwrap() as i64;
            (id.clone(), n - pos)
        })
        .collect();
    IncentiveRanking { policy, priorities }
}

/// Points earned by one completed job: positive when the job drew less than
/// `reference_power` per node, negative when it drew more, scaled by node-hours.
pub fn fugaku_points_for(stats: &JobStats, reference_power: f64) -> f64 {
    let reference = reference_power * stats.nodes as f64;
    (reference - stats.avg_power) / reference_power * stats.node_hours()
}

pub fn earn_fugaku_points(account: &mut Account, stats: &JobStats, reference_power: f64) -> f64 {
    account.fugaku_points += fugaku_points_for(stats, reference_power);
    account.fugaku_points
}
