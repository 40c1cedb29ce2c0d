//! Lloyd's k-means with seeded k-means++ initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::MlError;

pub const MAX_ITERATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Within-cluster sum of squares after each assignment pass.
    pub inertia_history: Vec<f64>,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut dist: Vec<f64> = points.iter().map(|p| squared_distance(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, d) in dist.iter().enumerate() {
                if *d > 0.0 {
                    pick = Some(i);
                    if target < *d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.unwrap()
        } else {
            // Every remaining point coincides with a centroid.
            (0..points.len()).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

pub fn kmeans_fit(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans, MlError> {
    if k == 0 || k > points.len() {
        return Err(MlError::TooFewPoints { k, n: points.len() });
    }
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut labels = vec![usize::MAX; points.len()];
    let mut history = Vec::new();

    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        let mut inertia = 0.0;
        for (label, p) in labels.iter_mut().zip(points) {
            let (c, d) = nearest(p, &centroids);
            inertia += d;
            if *label != c {
                *label = c;
                changed = true;
            }
        }
        history.push(inertia);
        if !changed {
            break;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&l, p) in labels.iter().zip(points) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut reseeded = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..points.len())
                    .filter(|i| !reseeded.contains(i))
                    .max_by(|&a, &b| {
                        let da = squared_distance(&points[a], &centroids[labels[a]]);
                        let db = squared_distance(&points[b], &centroids[labels[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap();
                reseeded.push(far);
                centroids[c] = points[far].clone();
            }
        }
    }
    let inertia = *history.last().unwrap();
    Ok(KMeans {
        centroids,
        labels,
        inertia,
        inertia_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn blobs() -> Vec<Vec<f64>> {
        let mut pts = Vec::new();
        for i in 0..20 {
            let d = (i % 5) as f64 * 0.1;
            pts.push(vec![0.0 + d, 0.0 - d]);
            pts.push(vec![10.0 - d, 10.0 + d]);
        }
        pts
    }

    #[test]
    fn k1_is_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 4.0], vec![4.0, 2.0]];
        let m = kmeans_fit(&pts, 1, 7).unwrap();
        assert_relative_eq!(m.centroids[0][0], 2.0);
        assert_relative_eq!(m.centroids[0][1], 2.0);
    }

    #[test]
    fn separated_blobs() {
        let pts = blobs();
        let m = kmeans_fit(&pts, 2, 3).unwrap();
        let mut cs = m.centroids.clone();
        cs.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!(cs[0][0] < 1.0 && cs[1][0] > 9.0);
        // Inter-blob squared distance is 200.
        assert!(m.inertia < 200.0 / 4.0 * pts.len() as f64);
        assert_ne!(m.labels[0], m.labels[1]);
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let pts = vec![vec![0.0], vec![1.0], vec![5.0], vec![9.0]];
        let m = kmeans_fit(&pts, 4, 11).unwrap();
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn too_many_clusters() {
        assert!(matches!(
            kmeans_fit(&[vec![1.0]], 2, 0),
            Err(MlError::TooFewPoints { k: 2, n: 1 })
        ));
    }

    #[test]
    fn duplicate_points_still_initialize() {
        let pts = vec![vec![1.0], vec![1.0], vec![1.0]];
        let m = kmeans_fit(&pts, 3, 5).unwrap();
        assert_eq!(m.inertia, 0.0);
    }

    proptest! {
        #[test]
        fn deterministic_and_inertia_non_increasing(
            raw in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..40),
            k in 1usize..4,
            seed in any::<u64>(),
        ) {
            let pts: Vec<Vec<f64>> = raw.iter().map(|&(x, y)| vec![x, y]).collect();
            let a = kmeans_fit(&pts, k, seed).unwrap();
            let b = kmeans_fit(&pts, k, seed).unwrap();
            prop_assert_eq!(&a, &b);
            for w in a.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
            }
        }
    }
}
