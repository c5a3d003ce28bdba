//! K-means with k-means++ seeding and Lloyd iterations.
//!
//! Assignment uses squared Euclidean distance with ties going to the lowest
//! centroid index. A cluster that loses all its members is re-seeded with a
//! random member of the currently largest cluster, so every fitted model
//! covers all `k` ids. Row-wise work runs on the current rayon pool, but
//! every reduction is summed in row order, so results do not depend on the
//! thread count.

use rand::Rng as _;
use rayon::prelude::*;

use crate::features::squared_distance;
use crate::rng::{self, streams, Rng};
use crate::{Error, FeatureMatrix, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest-inertia fit wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            max_iter: 300,
            tol: 1e-6,
            restarts: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub dim: usize,
    /// `k × dim`, row-major.
    pub centroids: Vec<f64>,
    pub assignments: Vec<u32>,
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia after every assignment step, starting with the initial one.
    pub inertia_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a as usize] += 1;
        }
        sizes
    }
}

/// k-means++ seeding: the first centroid is uniform, each further one is
/// drawn with probability proportional to its squared distance from the
/// nearest chosen centroid. When every remaining weight is zero the draw
/// falls back to a uniform pick among unchosen rows, so the chosen row
/// indices are always distinct.
pub fn kmeanspp_init(x: &FeatureMatrix, k: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = rng::seeded(seed);
    Ok(kmeanspp_indices(x, k, &mut rng)?
        .into_iter()
        .flat_map(|i| x.row(i).to_vec())
        .collect())
}

fn kmeanspp_indices(x: &FeatureMatrix, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let n = x.rows();
    if k == 0 || n < k {
        return Err(Error::Shape(format!("cannot seed {k} centroids from {n} rows")));
    }
    let mut chosen = vec![false; n];
    let mut picks = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    chosen[first] = true;
    picks.push(first);
    let mut d2: Vec<f64> = x.iter_rows().map(|r| squared_distance(r, x.row(first))).collect();
    while picks.len() < k {
        let total: f64 = d2.iter().enumerate().filter(|(i, _)| !chosen[*i]).map(|(_, d)| d).sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if chosen[i] || d <= 0.0 {
                    continue;
                }
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total weight")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        picks.push(next);
        let c = x.row(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(x.row(i), c));
        }
    }
    Ok(picks)
}

/// Index of the nearest centroid, lowest index on ties.
fn nearest(row: &[f64], centroids: &[f64], dim: usize) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim.max(1)).enumerate() {
        let d = squared_distance(row, c);
        if d < best.1 {
            best = (j as u32, d);
        }
    }
    best
}

fn check_centroids(x: &FeatureMatrix, centroids: &[f64]) -> Result<usize> {
    let dim = x.dim();
    if dim == 0 || centroids.is_empty() || centroids.len() % dim != 0 {
        return Err(Error::Shape(format!(
            "{} centroid values do not match feature dim {dim}",
            centroids.len()
        )));
    }
    Ok(centroids.len() / dim)
}

/// Nearest-centroid labels.
pub fn assign(x: &FeatureMatrix, centroids: &[f64]) -> Result<Vec<u32>> {
    check_centroids(x, centroids)?;
    Ok(assign_with_distances(x, centroids).into_iter().map(|(l, _)| l).collect())
}

fn assign_with_distances(x: &FeatureMatrix, centroids: &[f64]) -> Vec<(u32, f64)> {
    let dim = x.dim();
    (0..x.rows())
        .into_par_iter()
        .map(|i| nearest(x.row(i), centroids, dim))
        .collect()
}

fn inertia_of(x: &FeatureMatrix, centroids: &[f64], labels: &[u32]) -> f64 {
    let dim = x.dim();
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| squared_distance(x.row(i), &centroids[l as usize * dim..(l as usize + 1) * dim]))
        .sum()
}

/// Moves each empty cluster's centroid onto a random member of the largest
/// cluster and hands that member over.
fn repair_empty(x: &FeatureMatrix, centroids: &mut [f64], labels: &mut [u32], k: usize, rng: &mut Rng) {
    let dim = x.dim();
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l as usize] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        // largest cluster, lowest id on ties
        let largest = (0..k).fold(0, |best, j| if sizes[j] > sizes[best] { j } else { best });
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] as usize == largest).collect();
        let donor = members[rng.random_range(0..members.len())];
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(x.row(donor));
        labels[donor] = empty as u32;
    }
}

fn update_means(x: &FeatureMatrix, labels: &[u32], k: usize, old: &[f64]) -> Vec<f64> {
    let dim = x.dim();
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        counts[l] += 1;
        for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    for j in 0..k {
        let slot = &mut sums[j * dim..(j + 1) * dim];
        if counts[j] == 0 {
            slot.copy_from_slice(&old[j * dim..(j + 1) * dim]);
        } else {
            slot.iter_mut().for_each(|s| *s /= counts[j] as f64);
        }
    }
    sums
}

/// Lloyd iterations from the given centroids.
///
/// Stops once the largest centroid shift is at most `tol` or after
/// `max_iter` updates. An update that would raise the inertia (possible
/// only through rounding at a fixed point) is discarded and ends the run,
/// so `inertia_trace` never increases.
pub fn lloyd(x: &FeatureMatrix, centroids: &[f64], max_iter: usize, tol: f64, seed: u64) -> Result<ClusterModel> {
    let k = check_centroids(x, centroids)?;
    if max_iter == 0 {
        return Err(Error::Config("max_iter must be at least 1".into()));
    }
    if !(tol >= 0.0) {
        return Err(Error::Config(format!("tolerance {tol} must be >= 0")));
    }
    if x.rows() < k {
        return Err(Error::Shape(format!("{} rows cannot fill {k} clusters", x.rows())));
    }
    let dim = x.dim();
    let mut rng = rng::seeded(rng::derive(seed, streams::KMEANS_REPAIR, 0));
    let mut centroids = centroids.to_vec();
    let mut labels: Vec<u32> = assign_with_distances(x, &centroids).into_iter().map(|(l, _)| l).collect();
    repair_empty(x, &mut centroids, &mut labels, k, &mut rng);
    let mut inertia = inertia_of(x, &centroids, &labels);
    let mut trace = vec![inertia];
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let updated = update_means(x, &labels, k, &centroids);
        let shift = centroids
            .chunks_exact(dim)
            .zip(updated.chunks_exact(dim))
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        let mut next_centroids = updated;
        let mut next_labels: Vec<u32> =
            assign_with_distances(x, &next_centroids).into_iter().map(|(l, _)| l).collect();
        repair_empty(x, &mut next_centroids, &mut next_labels, k, &mut rng);
        let next_inertia = inertia_of(x, &next_centroids, &next_labels);
        if next_inertia > inertia {
            break;
        }
        centroids = next_centroids;
        labels = next_labels;
        inertia = next_inertia;
        trace.push(inertia);
        if shift <= tol {
            break;
        }
    }

    Ok(ClusterModel {
        k,
        dim,
        centroids,
        assignments: labels,
        inertia,
        iterations_run: iterations,
        inertia_trace: trace,
    })
}

/// k-means++ seeding followed by Lloyd iterations, keeping the best of
/// `cfg.restarts` runs.
pub fn kmeans(x: &FeatureMatrix, k: usize, cfg: &KMeansConfig) -> Result<ClusterModel> {
    let mut best: Option<ClusterModel> = None;
    for r in 0..cfg.restarts.max(1) {
        let seed = if r == 0 { cfg.seed } else { rng::derive(cfg.seed, streams::RESTART, r as u64) };
        let init = kmeanspp_init(x, k, seed)?;
        let fit = lloyd(x, &init, cfg.max_iter, cfg.tol, seed)?;
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}
