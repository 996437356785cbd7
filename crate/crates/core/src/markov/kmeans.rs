//! Deterministic 1-D K-means for payload-length binning.
//!
//! Runs on the weighted histogram of distinct values, which keeps Lloyd
//! iterations cheap no matter how many packets feed the fit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MarkovError;

pub const MAX_LLOYD_ITERATIONS: usize = 300;
pub const DEFAULT_BINS: usize = 50;

/// Sorted centroids plus the midpoints between neighbours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlBinning {
    pub k: usize,
    pub centroids: Vec<f64>,
    pub boundaries: Vec<f64>,
}

impl PlBinning {
    pub fn from_centroids(mut centroids: Vec<f64>) -> Result<Self, MarkovError> {
        if centroids.is_empty() {
            return Err(MarkovError::ZeroBins);
        }
        centroids.sort_by(f64::total_cmp);
        if centroids.windows(2).any(|w| w[0] >= w[1]) || centroids.iter().any(|c| !c.is_finite()) {
            return Err(MarkovError::InvalidBinning);
        }
        let boundaries = centroids.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
        Ok(PlBinning {
            k: centroids.len(),
            centroids,
            boundaries,
        })
    }

    /// Index of the nearest centroid; a value exactly between two
    /// centroids goes to the lower one.
    pub fn assign(&self, pl: u32) -> usize {
        let x = pl as f64;
        self.boundaries.partition_point(|&b| b < x)
    }

    pub fn centroid_pl(&self, bin: usize) -> u32 {
        self.centroids[bin].round().max(1.0) as u32
    }

    /// Within-cluster sum of squared errors.
    pub fn quantization_error(&self, values: &[u32]) -> f64 {
        values
            .iter()
            .map(|&v| {
                let d = v as f64 - self.centroids[self.assign(v)];
                d * d
            })
            .sum()
    }
}

fn histogram(values: &[u32]) -> (Vec<f64>, Vec<f64>) {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let mut xs = Vec::new();
    let mut ws: Vec<f64> = Vec::new();
    for v in sorted {
        if xs.last() == Some(&(v as f64)) {
            *ws.last_mut().unwrap() += 1.0;
        } else {
            xs.push(v as f64);
            ws.push(1.0);
        }
    }
    (xs, ws)
}

fn sample_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if acc > target {
                return i;
            }
        }
    }
    last_positive
}

fn nearest(centroids: &[f64], x: f64) -> usize {
    let i = centroids.partition_point(|&c| c < x);
    if i == 0 {
        0
    } else if i == centroids.len() || x - centroids[i - 1] <= centroids[i] - x {
        i - 1
    } else {
        i
    }
}

/// k-means++ seeding followed by Lloyd iterations until the assignment
/// stops changing or [`MAX_LLOYD_ITERATIONS`] is reached. An empty cluster
/// is re-seeded at the point farthest from its current centroid.
pub fn fit_binning(values: &[u32], k: usize, seed: u64) -> Result<PlBinning, MarkovError> {
    if k == 0 {
        return Err(MarkovError::ZeroBins);
    }
    let (xs, ws) = histogram(values);
    if xs.len() < k {
        return Err(MarkovError::TooFewDistinct {
            distinct: xs.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = Vec::with_capacity(k);
    centroids.push(xs[sample_weighted(&mut rng, &ws)]);
    let mut d2: Vec<f64> = xs.iter().map(|&x| (x - centroids[0]).powi(2)).collect();
    while centroids.len() < k {
        let weights: Vec<f64> = d2.iter().zip(&ws).map(|(d, w)| d * w).collect();
        let c = xs[sample_weighted(&mut rng, &weights)];
        centroids.push(c);
        for (d, &x) in d2.iter_mut().zip(&xs) {
            *d = d.min((x - c).powi(2));
        }
    }
    centroids.sort_by(f64::total_cmp);

    let mut assignment = vec![usize::MAX; xs.len()];
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let next: Vec<usize> = xs.iter().map(|&x| nearest(&centroids, x)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
        let mut sum = vec![0.0; k];
        let mut weight = vec![0.0; k];
        for ((&x, &w), &a) in xs.iter().zip(&ws).zip(&assignment) {
            sum[a] += x * w;
            weight[a] += w;
        }
        for c in 0..k {
            if weight[c] > 0.0 {
                centroids[c] = sum[c] / weight[c];
            }
        }
        for c in 0..k {
            if weight[c] == 0.0 {
                let far = (0..xs.len())
                    .max_by(|&i, &j| {
                        let di = (xs[i] - centroids[assignment[i]]).abs();
                        let dj = (xs[j] - centroids[assignment[j]]).abs();
                        di.total_cmp(&dj).then(j.cmp(&i))
                    })
                    .unwrap();
                centroids[c] = xs[far];
                assignment[far] = c;
            }
        }
        centroids.sort_by(f64::total_cmp);
    }
    PlBinning::from_centroids(centroids)
}
