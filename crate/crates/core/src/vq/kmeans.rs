//! Lloyd's k-means with k-means++ seeding over flat row-major data.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the relative decrease of the mean squared error falls below this.
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iters: 25,
            tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Lloyd update steps performed.
    pub iterations: usize,
    /// Mean squared quantization error after every assignment step.
    pub mse_history: Vec<f64>,
    pub final_mse: f64,
    pub distinct_vectors: usize,
    /// Set when there were fewer distinct vectors than entries and the codebook
    /// was filled up with duplicate centroids.
    pub padded: bool,
}

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub centroids: Vec<f32>,
    pub report: TrainingReport,
}

pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid and its squared distance. Ties go to the lowest index.
pub fn nearest(centroids: &[f32], dim: usize, v: &[f32]) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_distance(c, v);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn check_input(data: &[f32], dim: usize, k: usize) -> Result<usize> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::Precondition(format!(
            "data length {} is not a multiple of dimension {dim}",
            data.len()
        )));
    }
    if data.is_empty() {
        return Err(Error::Precondition("k-means needs at least one vector".into()));
    }
    if k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    Ok(data.len() / dim)
}

/// k-means++ seeding: first centroid uniform, then each next one sampled with
/// probability proportional to the squared distance to the closest chosen one.
pub fn kmeans_plus_plus(data: &[f32], dim: usize, k: usize, seed: u64) -> Result<Vec<f32>> {
    let n = check_input(data, dim, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(&data[first * dim..(first + 1) * dim]);

    let mut min_d2: Vec<f64> = data
        .par_chunks_exact(dim)
        .map(|v| squared_distance(v, &centroids[..dim]) as f64)
        .collect();

    for _ in 1..k {
        let total: f64 = min_d2.iter().sum();
        let pick = if total > 0.0 {
            let threshold = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in min_d2.iter().enumerate() {
                acc += d;
                if acc > threshold && *d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        let c = data[pick * dim..(pick + 1) * dim].to_vec();
        min_d2
            .par_iter_mut()
            .zip(data.par_chunks_exact(dim))
            .for_each(|(m, v)| *m = m.min(squared_distance(v, &c) as f64));
        centroids.extend_from_slice(&c);
    }
    Ok(centroids)
}

fn assign(data: &[f32], dim: usize, centroids: &[f32]) -> (Vec<usize>, Vec<f32>, f64) {
    let (labels, dists): (Vec<usize>, Vec<f32>) = data
        .par_chunks_exact(dim)
        .map(|v| nearest(centroids, dim, v))
        .unzip();
    // Fixed-order summation keeps the result independent of the worker count.
    let sse: f64 = dists.iter().map(|d| *d as f64).sum();
    let n = labels.len() as f64;
    (labels, dists, sse / n)
}

fn distinct_rows(data: &[f32], dim: usize) -> Vec<usize> {
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (i, v) in data.chunks_exact(dim).enumerate() {
        let key: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
        if seen.insert(key) {
            rows.push(i);
        }
    }
    rows
}

/// Runs Lloyd iterations from the given initial centroids.
pub fn lloyd(data: &[f32], dim: usize, mut centroids: Vec<f32>, config: &KMeansConfig) -> Result<KMeansResult> {
    let n = check_input(data, dim, config.k)?;
    let k = centroids.len() / dim;
    let mut report = TrainingReport::default();

    let (mut labels, mut dists, mut mse) = assign(data, dim, &centroids);
    report.mse_history.push(mse);

    for _ in 0..config.max_iters {
        if mse == 0.0 {
            break;
        }
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, v) in data.chunks_exact(dim).enumerate() {
            let l = labels[i];
            counts[l] += 1;
            for (s, x) in sums[l * dim..(l + 1) * dim].iter_mut().zip(v) {
                *s += *x as f64;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for d in 0..dim {
                    centroids[j * dim + d] = (sums[j * dim + d] / counts[j] as f64) as f32;
                }
            } else {
                // Re-seed from the point worst served by its current centroid.
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("data is non-empty");
                centroids[j * dim..(j + 1) * dim].copy_from_slice(&data[far * dim..(far + 1) * dim]);
                dists[far] = 0.0;
            }
        }
        report.iterations += 1;

        let (new_labels, new_dists, new_mse) = assign(data, dim, &centroids);
        report.mse_history.push(new_mse);
        let converged = (mse - new_mse) / mse < config.tol;
        labels = new_labels;
        dists = new_dists;
        mse = new_mse;
        if converged {
            break;
        }
    }
    report.final_mse = mse;
    Ok(KMeansResult { centroids, report })
}

/// Trains `config.k` centroids. With fewer distinct vectors than `k`, the
/// distinct vectors themselves become the centroids and the remaining entries
/// repeat them; `report.padded` flags that case.
pub fn train_kmeans(data: &[f32], dim: usize, config: &KMeansConfig) -> Result<KMeansResult> {
    check_input(data, dim, config.k)?;
    let distinct = distinct_rows(data, dim);
    if distinct.len() <= config.k {
        let mut centroids = Vec::with_capacity(config.k * dim);
        for j in 0..config.k {
            let row = distinct[j % distinct.len()];
            centroids.extend_from_slice(&data[row * dim..(row + 1) * dim]);
        }
        let (_, _, mse) = assign(data, dim, &centroids);
        return Ok(KMeansResult {
            centroids,
            report: TrainingReport {
                iterations: 0,
                mse_history: vec![mse],
                final_mse: mse,
                distinct_vectors: distinct.len(),
                padded: distinct.len() < config.k,
            },
        });
    }
    let init = kmeans_plus_plus(data, dim, config.k, config.seed)?;
    let mut result = lloyd(data, dim, init, config)?;
    result.report.distinct_vectors = distinct.len();
    Ok(result)
}
