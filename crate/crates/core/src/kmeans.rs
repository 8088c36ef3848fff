//! k-means++ seeding and Lloyd iterations (squared Euclidean distance).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vecmath::squared_distance;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

impl KMeans {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Point indices belonging to `cluster`.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Picks `k` distinct seed indices by D² sampling.
///
/// Once every remaining point coincides with a chosen seed, the lowest
/// unchosen index is taken.
pub fn plus_plus_seeds<T: Scalar, P: AsRef<[T]>>(
    points: &[P],
    k: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let n = points.len();
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut seeds = vec![first];
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p.as_ref(), points[first].as_ref()))
        .collect();

    while seeds.len() < k {
        let total: f64 = nearest
            .iter()
            .zip(&chosen)
            .filter(|(_, &c)| !c)
            .map(|(d, _)| d)
            .sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &d) in nearest.iter().enumerate() {
                if chosen[i] || d <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < d {
                    break;
                }
                target -= d;
            }
            pick.expect("positive total implies a candidate")
        } else {
            chosen.iter().position(|&c| !c).expect("k <= n")
        };
        chosen[next] = true;
        seeds.push(next);
        for (i, p) in points.iter().enumerate() {
            let d = squared_distance(p.as_ref(), points[next].as_ref());
            if d < nearest[i] {
                nearest[i] = d;
            }
        }
    }
    seeds
}

/// Index of the nearest centroid; ties go to the lower index.
pub fn nearest_centroid<T: Scalar>(point: &[T], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d: f64 = point
            .iter()
            .zip(centroid)
            .map(|(x, m)| {
                let diff = x.as_f64() - m;
                diff * diff
            })
            .sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm from k-means++ seeds. `k` is clamped to the point count.
/// An emptied cluster keeps its previous centroid.
pub fn lloyd<T: Scalar, P: AsRef<[T]>>(
    points: &[P],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<KMeans> {
    if points.is_empty() {
        return Err(Error::Degenerate("k-means on an empty point set".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let dim = points[0].as_ref().len();
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: p.as_ref().len(),
        });
    }
    let k = k.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = plus_plus_seeds(points, k, &mut rng)
        .into_iter()
        .map(|i| points[i].as_ref().iter().map(|v| v.as_f64()).collect())
        .collect();

    let mut assignments = vec![usize::MAX; points.len()];
    let mut iterations = 0;
    let mut inertia;
    loop {
        inertia = 0.0;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest_centroid(p.as_ref(), &centroids);
            inertia += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        if !changed || iterations >= max_iters {
            break;
        }
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p.as_ref()) {
                *s += v.as_f64();
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                centroids[c] = sums[c].iter().map(|s| s / n).collect();
            }
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        inertia,
        iterations,
    })
}
