//! Learned job ranking.
//!
//! Training: featurize historical jobs, cluster them on static plus
//! trace-summary features, then fit one least-squares predictor of runtime
//! and average power per cluster. Inference: a new job, for which only the
//! static features exist, is classified to the nearest centroid in the static
//! subspace; the cluster's predictor estimates its runtime and power; and the
//! job is scored by `S(x) = Σ α_j · exp(1 / √(x_j + 1))`.

pub mod kmeans;

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Job, JobId, SystemConfig, DEFAULT_UTIL};
use crate::power::node_power;
use crate::schedulers::{order_queue, Policy, ScheduleError};

pub use kmeans::{kmeans_fit, KMeans};

pub const STATIC_FEATURES: [&str; 3] = ["nodes_requested", "wall_limit", "priority"];
pub const DYNAMIC_FEATURES: [&str; 4] = ["util_max", "util_min", "util_mean", "util_std"];
pub const SCORE_FEATURES: [&str; 5] = [
    "nodes_requested",
    "wall_limit",
    "priority",
    "pred_runtime",
    "pred_avg_power",
];
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error)]
pub enum MlError {
    #[error("cannot fit {k} clusters to {n} points")]
    TooFewPoints { k: usize, n: usize },
    #[error("feature `{feature}` = {value} is outside the score domain (x >= -1)")]
    Domain { feature: String, value: f64 },
    #[error("invalid score weights: {0}")]
    InvalidWeights(String),
    #[error("unknown score feature `{0}`")]
    UnknownFeature(String),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub static_features: [f64; 3],
    /// (max, min, mean, std) of the utilization trace.
    pub dynamic_summary: Option<[f64; 4]>,
    pub normalized: bool,
}

impl FeatureVector {
    /// Static features followed by the trace summary, falling back to a
    /// constant `DEFAULT_UTIL` summary when the job carries no utilization data.
    pub fn full(&self) -> Vec<f64> {
        let dynamic = self
            .dynamic_summary
            .unwrap_or([DEFAULT_UTIL, DEFAULT_UTIL, DEFAULT_UTIL, 0.0]);
        self.static_features.iter().chain(&dynamic).copied().collect()
    }
}

fn summarize(values: &[f64]) -> [f64; 4] {
    let n = values.len() as f64;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    [max, min, mean, var.sqrt()]
}

pub fn featurize(job: &Job) -> FeatureVector {
    let dynamic_summary = match (&job.trace, job.scalar_avg_util) {
        (Some(trace), _) => Some(summarize(trace.values())),
        (None, Some(u)) => Some([u, u, u, 0.0]),
        (None, None) => None,
    };
    FeatureVector {
        static_features: [
            job.nodes_requested as f64,
            job.times.wall_limit as f64,
            job.priority as f64,
        ],
        dynamic_summary,
        normalized: false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    /// One α per entry of [`SCORE_FEATURES`].
    pub alpha: Vec<f64>,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            alpha: vec![1.0, 0.0, 0.0, 1.0, 0.0],
        }
    }
}

impl ScoreWeights {
    pub fn validate(&self) -> Result<(), MlError> {
        if self.alpha.len() != SCORE_FEATURES.len() {
            return Err(MlError::InvalidWeights(format!(
                "expected {} weights, found {}",
                SCORE_FEATURES.len(),
                self.alpha.len()
            )));
        }
        if self.alpha.iter().any(|a| !a.is_finite()) {
            return Err(MlError::InvalidWeights("weights must be finite".into()));
        }
        if self.alpha.iter().all(|a| *a == 0.0) {
            return Err(MlError::InvalidWeights("at least one weight must be nonzero".into()));
        }
        Ok(())
    }

    /// Replace weights by feature name, e.g. from `ml_alpha_<feature>` config keys.
    pub fn with_overrides(mut self, overrides: &[(String, f64)]) -> Result<Self, MlError> {
        for (name, value) in overrides {
            let idx = SCORE_FEATURES
                .iter()
                .position(|f| f == name)
                .ok_or_else(|| MlError::UnknownFeature(name.clone()))?;
            self.alpha[idx] = *value;
        }
        self.validate()?;
        Ok(self)
    }
}

/// `Σ α_j · exp(1 / √(x_j + 1))`. Terms with zero weight are skipped.
pub fn score(features: &[f64], weights: &[f64]) -> Result<f64, MlError> {
    let mut s = 0.0;
    for (j, (&x, &a)) in features.iter().zip(weights).enumerate() {
        if a == 0.0 {
            continue;
        }
        if x < -1.0 || x.is_nan() {
            return Err(MlError::Domain {
                feature: SCORE_FEATURES.get(j).map_or_else(|| format!("#{j}"), |f| f.to_string()),
                value: x,
            });
        }
        s += a * (1.0 / (x + 1.0).sqrt()).exp();
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterPredictor {
    pub members: usize,
    /// Intercept followed by one coefficient per normalized static feature.
    pub runtime: Vec<f64>,
    pub avg_power: Vec<f64>,
}

impl ClusterPredictor {
    fn eval(coef: &[f64], x: &[f64]) -> f64 {
        let raw = coef[0] + coef[1..].iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
        raw.max(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub feature_names: Vec<String>,
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
    /// In normalized feature space, static features first.
    pub centroids: Vec<Vec<f64>>,
    pub predictors: Vec<ClusterPredictor>,
    pub weights: ScoreWeights,
}

fn least_squares(design: &DMatrix<f64>, target: &DVector<f64>) -> Vec<f64> {
    let svd = design.clone().svd(true, true);
    svd.solve(target, 1e-12)
        .expect("SVD computed with both U and V")
        .iter()
        .copied()
        .collect()
}

impl ClusterModel {
    /// Cluster, then fit per-cluster predictors. Targets are recorded runtime
    /// (wall limit when unrecorded) and whole-job average power.
    pub fn train(jobs: &[Job], config: &SystemConfig, k: usize, seed: u64) -> Result<Self, MlError> {
        let raw: Vec<Vec<f64>> = jobs.iter().map(|j| featurize(j).full()).collect();
        if raw.len() < k || k == 0 {
            return Err(MlError::TooFewPoints { k, n: raw.len() });
        }
        let dim = raw[0].len();
        let n = raw.len() as f64;
        let means: Vec<f64> = (0..dim).map(|d| raw.iter().map(|r| r[d]).sum::<f64>() / n).collect();
        let scales: Vec<f64> = (0..dim)
            .map(|d| {
                let var = raw.iter().map(|r| (r[d] - means[d]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let points: Vec<Vec<f64>> = raw
            .iter()
            .map(|r| {
                r.iter()
                    .zip(&means)
                    .zip(&scales)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect()
            })
            .collect();
        let km = kmeans_fit(&points, k, seed)?;

        let targets: Vec<(f64, f64)> = jobs
            .iter()
            .zip(&raw)
            .map(|(j, r)| {
                let runtime = j.times.recorded_duration().unwrap_or(j.times.wall_limit) as f64;
                let power = j.nodes_requested as f64 * node_power(r[5], config);
                (runtime, power)
            })
            .collect();
        let ns = STATIC_FEATURES.len();
        let predictors = (0..k)
            .map(|c| {
                let members: Vec<usize> = (0..points.len()).filter(|&i| km.labels[i] == c).collect();
                let mean_of = |f: fn(&(f64, f64)) -> f64, idx: &[usize]| {
                    idx.iter().map(|&i| f(&targets[i])).sum::<f64>() / idx.len().max(1) as f64
                };
                let constant = |v: f64| {
                    let mut c = vec![0.0; ns + 1];
                    c[0] = v;
                    c
                };
                if members.len() < 2 {
                    let idx: Vec<usize> = if members.is_empty() {
                        (0..points.len()).collect()
                    } else {
                        members.clone()
                    };
                    return ClusterPredictor {
                        members: members.len(),
                        runtime: constant(mean_of(|t| t.0, &idx)),
                        avg_power: constant(mean_of(|t| t.1, &idx)),
                    };
                }
                let design = DMatrix::from_fn(members.len(), ns + 1, |r, c| {
                    if c == 0 {
                        1.0
                    } else {
                        points[members[r]][c - 1]
                    }
                });
                let rt = DVector::from_iterator(members.len(), members.iter().map(|&i| targets[i].0));
                let pw = DVector::from_iterator(members.len(), members.iter().map(|&i| targets[i].1));
                ClusterPredictor {
                    members: members.len(),
                    runtime: least_squares(&design, &rt),
                    avg_power: least_squares(&design, &pw),
                }
            })
            .collect();

        Ok(ClusterModel {
            k,
            feature_names: STATIC_FEATURES
                .iter()
                .chain(&DYNAMIC_FEATURES)
                .map(|s| s.to_string())
                .collect(),
            feature_means: means,
            feature_scales: scales,
            centroids: km.centroids,
            predictors,
            weights: ScoreWeights::default(),
        })
    }

    pub fn normalize_static(&self, features: &FeatureVector) -> [f64; 3] {
        let mut out = features.static_features;
        for (d, v) in out.iter_mut().enumerate() {
            *v = (*v - self.feature_means[d]) / self.feature_scales[d];
        }
        out
    }

    /// Nearest centroid over the static-feature subspace; ties go to the lower label.
    pub fn assign_cluster(&self, normalized_static: &[f64; 3]) -> usize {
        let projected: Vec<Vec<f64>> = self.centroids.iter().map(|c| c[..3].to_vec()).collect();
        kmeans::nearest(normalized_static, &projected).0
    }

    /// Predicted `(runtime_s, avg_power_w)`, clamped at zero.
    pub fn predict_metrics(&self, cluster: usize, normalized_static: &[f64; 3]) -> (f64, f64) {
        let p = &self.predictors[cluster];
        (
            ClusterPredictor::eval(&p.runtime, normalized_static),
            ClusterPredictor::eval(&p.avg_power, normalized_static),
        )
    }

    /// Score features for a job, in [`SCORE_FEATURES`] order.
    pub fn score_features(&self, job: &Job) -> Vec<f64> {
        let fv = featurize(job);
        let norm = self.normalize_static(&fv);
        let cluster = self.assign_cluster(&norm);
        let (runtime, power) = self.predict_metrics(cluster, &norm);
        let s = fv.static_features;
        vec![s[0], s[1], s[2], runtime, power]
    }

    pub fn score_job(&self, job: &Job) -> Result<f64, MlError> {
        score(&self.score_features(job), &self.weights.alpha)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MlError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MlError> {
        let model: ClusterModel = serde_json::from_str(&fs::read_to_string(path)?)?;
        model.weights.validate()?;
        if model.centroids.len() != model.k || model.predictors.len() != model.k || model.k == 0 {
            return Err(MlError::InvalidWeights(
                "centroid/predictor count does not match k".into(),
            ));
        }
        if model.feature_scales.iter().any(|s| !(*s > 0.0)) {
            return Err(MlError::InvalidWeights("feature scales must be positive".into()));
        }
        Ok(model)
    }
}

/// Attach a score to every queued job and return the ids in ranked order.
pub fn rank_jobs(queue: &mut [Job], model: &ClusterModel) -> Result<Vec<JobId>, MlError> {
    for job in queue.iter_mut() {
        job.score = Some(model.score_job(job)?);
    }
    let refs: Vec<&Job> = queue.iter().collect();
    let now = refs.iter().map(|j| j.times.submit).max().unwrap_or(0);
    Ok(order_queue(Policy::Ml, &refs, now, None)?
        .into_iter()
        .map(|j| j.id)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{JobTimes, UtilizationTrace};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn featurize_trace_summary() {
        let mut j = Job::new(1, "a", JobTimes::new(0, 10), 2);
        j.trace = Some(UtilizationTrace::new(vec![0, 5], vec![0.2, 0.9]).unwrap());
        let s = featurize(&j).dynamic_summary.unwrap();
        assert_relative_eq!(s[0], 0.9);
        assert_relative_eq!(s[1], 0.2);
        assert_relative_eq!(s[2], 0.55);
        assert_relative_eq!(s[3], 0.35);
    }

    #[test]
    fn featurize_scalar_and_constant() {
        let mut j = Job::new(1, "a", JobTimes::new(0, 10), 2);
        j.scalar_avg_util = Some(0.8);
        assert_eq!(featurize(&j).dynamic_summary, Some([0.8, 0.8, 0.8, 0.0]));
        j.trace = Some(UtilizationTrace::new(vec![0, 5, 9], vec![0.4; 3]).unwrap());
        approx::assert_abs_diff_eq!(featurize(&j).dynamic_summary.unwrap()[3], 0.0, epsilon = 1e-12);
        let bare = Job::new(2, "a", JobTimes::new(0, 10), 2);
        assert_eq!(featurize(&bare).dynamic_summary, None);
        assert_eq!(featurize(&bare).static_features, [2.0, 10.0, 0.0]);
    }

    #[test]
    fn score_values() {
        assert_relative_eq!(
            score(&[0.0], &[1.0]).unwrap(),
            std::f64::consts::E,
            max_relative = 1e-15
        );
        assert_relative_eq!(score(&[3.0], &[1.0]).unwrap(), 0.5f64.exp(), max_relative = 1e-15);
        let x = [4.0, 7.0, 0.5];
        assert_relative_eq!(
            score(&x, &[0.0, 2.5, 0.0]).unwrap(),
            2.5 * (1.0 / 8.0f64.sqrt()).exp(),
            max_relative = 1e-15
        );
        assert!(matches!(score(&[-2.0], &[1.0]), Err(MlError::Domain { .. })));
    }

    #[test]
    fn weights_validation() {
        assert!(ScoreWeights::default().validate().is_ok());
        assert!(ScoreWeights { alpha: vec![0.0; 5] }.validate().is_err());
        assert!(ScoreWeights {
            alpha: vec![f64::NAN, 1.0, 0.0, 0.0, 0.0]
        }
        .validate()
        .is_err());
        let w = ScoreWeights::default()
            .with_overrides(&[("priority".into(), 2.0)])
            .unwrap();
        assert_eq!(w.alpha[2], 2.0);
        assert!(ScoreWeights::default()
            .with_overrides(&[("bogus".into(), 1.0)])
            .is_err());
    }

    fn training_set() -> Vec<Job> {
        // Three well-separated job families; runtime is exactly affine in the
        // static features within every family.
        let mut jobs = Vec::new();
        let mut id = 0;
        for (nodes, limit, util) in [(2usize, 600i64, 0.2), (32, 7200, 0.6), (256, 36000, 0.95)] {
            for v in 0..12i64 {
                let n = nodes + (v % 3) as usize;
                let l = limit + 60 * (v % 4);
                let runtime = 30 * n as i64 + l / 4 + 7 * (v % 2);
                let mut j = Job::new(id, "a", JobTimes::recorded(0, 0, runtime, l), n);
                j.priority = v % 2;
                j.scalar_avg_util = Some(util);
                jobs.push(j);
                id += 1;
            }
        }
        jobs
    }

    #[test]
    fn classification_agrees_with_clustering() {
        let jobs = training_set();
        let model = ClusterModel::train(&jobs, &SystemConfig::default(), 3, 42).unwrap();
        let points: Vec<Vec<f64>> = jobs
            .iter()
            .map(|j| {
                featurize(j)
                    .full()
                    .iter()
                    .enumerate()
                    .map(|(d, v)| (v - model.feature_means[d]) / model.feature_scales[d])
                    .collect()
            })
            .collect();
        let agree = points
            .iter()
            .zip(&jobs)
            .filter(|(p, j)| {
                let full = kmeans::nearest(p, &model.centroids).0;
                model.assign_cluster(&model.normalize_static(&featurize(j))) == full
            })
            .count();
        assert!(agree as f64 >= 0.9 * jobs.len() as f64, "{agree}/{}", jobs.len());
    }

    #[test]
    fn exact_linear_targets_are_recovered() {
        let jobs = training_set();
        let model = ClusterModel::train(&jobs, &SystemConfig::default(), 3, 42).unwrap();
        for j in &jobs {
            let norm = model.normalize_static(&featurize(j));
            let c = model.assign_cluster(&norm);
            let (rt, _) = model.predict_metrics(c, &norm);
            let truth = j.times.recorded_duration().unwrap() as f64;
            assert!((rt - truth).abs() <= 1e-9 * truth.max(1.0), "{rt} vs {truth}");
        }
    }

    #[test]
    fn constant_targets_and_clamp() {
        let p = ClusterPredictor {
            members: 3,
            runtime: vec![100.0, 0.0, 0.0, 0.0],
            avg_power: vec![-5.0, 1.0, 0.0, 0.0],
        };
        assert_eq!(ClusterPredictor::eval(&p.runtime, &[3.0, -1.0, 2.0]), 100.0);
        assert_eq!(ClusterPredictor::eval(&p.avg_power, &[1.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn singleton_cluster_falls_back_to_mean() {
        let mut jobs = training_set();
        jobs.truncate(3);
        let model = ClusterModel::train(&jobs, &SystemConfig::default(), 3, 1).unwrap();
        for (p, j) in model.predictors.iter().zip(&jobs) {
            assert_eq!(p.members, 1);
            assert_eq!(&p.runtime[1..], &[0.0, 0.0, 0.0]);
            let _ = j;
        }
    }

    #[test]
    fn model_json_round_trip() {
        let model = ClusterModel::train(&training_set(), &SystemConfig::default(), 3, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        model.save(&p).unwrap();
        assert_eq!(ClusterModel::load(&p).unwrap(), model);
    }

    #[test]
    fn smaller_job_ranks_first() {
        let model = ClusterModel::train(&training_set(), &SystemConfig::default(), 3, 9).unwrap();
        let mut queue = vec![
            Job::new(1, "a", JobTimes::new(0, 3600), 200),
            Job::new(2, "a", JobTimes::new(0, 3600), 2),
        ];
        assert_eq!(rank_jobs(&mut queue, &model).unwrap(), vec![JobId(2), JobId(1)]);
    }

    #[test]
    fn identical_jobs_tie_break_fifo() {
        let model = ClusterModel::train(&training_set(), &SystemConfig::default(), 3, 9).unwrap();
        let mut queue = vec![
            Job::new(5, "a", JobTimes::new(3, 3600), 4),
            Job::new(4, "a", JobTimes::new(3, 3600), 4),
            Job::new(9, "a", JobTimes::new(1, 3600), 4),
        ];
        assert_eq!(
            rank_jobs(&mut queue, &model).unwrap(),
            vec![JobId(9), JobId(4), JobId(5)]
        );
    }

    proptest! {
        #[test]
        fn score_strictly_decreasing(
            x in proptest::collection::vec(0.0f64..1e4, 1..6),
            alpha in proptest::collection::vec(0.01f64..10.0, 6),
            j in 0usize..6,
            bump in 1e-3f64..100.0,
        ) {
            let j = j % x.len();
            let mut y = x.clone();
            y[j] += bump;
            prop_assert!(score(&y, &alpha).unwrap() < score(&x, &alpha).unwrap());
        }

        #[test]
        fn negated_weights_reverse_order(
            a in proptest::collection::vec(0.0f64..1e3, 3),
            b in proptest::collection::vec(0.0f64..1e3, 3),
            alpha in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            let neg: Vec<f64> = alpha.iter().map(|v| -v).collect();
            let (sa, sb) = (score(&a, &alpha).unwrap(), score(&b, &alpha).unwrap());
            let (na, nb) = (score(&a, &neg).unwrap(), score(&b, &neg).unwrap());
            if sa != sb {
                prop_assert_eq!(sa < sb, na > nb);
            }
        }

        #[test]
        fn constant_column_shifts_all_scores(
            rows in proptest::collection::vec(proptest::collection::vec(0.0f64..100.0, 2), 2..8),
            c in 0.0f64..100.0,
            ac in -3.0f64..3.0,
        ) {
            let alpha = [1.0, 0.5];
            let plain: Vec<f64> = rows.iter().map(|r| score(r, &alpha).unwrap()).collect();
            let ext: Vec<f64> = rows.iter().map(|r| score(&[r[0], r[1], c], &[1.0, 0.5, ac]).unwrap()).collect();
            let shift = ext[0] - plain[0];
            for (p, e) in plain.iter().zip(&ext) {
                prop_assert!((e - p - shift).abs() <= 1e-9);
            }
        }
    }
}
