use std::collections::BTreeMap;

use super::distance::{pairwise_distances, DissimilarityMatrix};
use crate::{Error, FeatureMatrix, Result};

/// Mean silhouette over all samples of a precomputed distance matrix.
///
/// Singleton clusters score 0, as does a sample whose intra- and
/// nearest-other-cluster mean distances are both zero.
pub fn silhouette(d: &DissimilarityMatrix, labels: &[u32]) -> Result<f64> {
    let samples = silhouette_samples(d, labels)?;
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

pub fn silhouette_samples(d: &DissimilarityMatrix, labels: &[u32]) -> Result<Vec<f64>> {
    let n = d.n();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} samples", labels.len())));
    }
    // dense cluster ids in label order
    let ids: BTreeMap<u32, usize> = labels.iter().map(|&l| (l, 0)).collect();
    if ids.len() < 2 {
        return Err(Error::SingleCluster(ids.len()));
    }
    let dense: BTreeMap<u32, usize> = ids.keys().enumerate().map(|(i, &l)| (l, i)).collect();
    let cluster: Vec<usize> = labels.iter().map(|l| dense[l]).collect();
    let k = dense.len();
    let mut sizes = vec![0usize; k];
    for &c in &cluster {
        sizes[c] += 1;
    }

    let mut out = Vec::with_capacity(n);
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            sums[cluster[j]] += d.get(i, j);
        }
        let own = cluster[i];
        if sizes[own] == 1 {
            out.push(0.0);
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        out.push(if denom > 0.0 { (b - a) / denom } else { 0.0 });
    }
    Ok(out)
}

/// Silhouette of the feature rows, computed on a seeded subsample of at
/// most `max_samples` rows.
pub fn silhouette_features(x: &FeatureMatrix, labels: &[u32], max_samples: usize, seed: u64) -> Result<f64> {
    if labels.len() != x.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), x.rows())));
    }
    let size = max_samples.min(x.rows());
    let (d, idx) = pairwise_distances(x, size, seed)?;
    let sub: Vec<u32> = idx.iter().map(|&i| labels[i]).collect();
    silhouette(&d, &sub)
}
