use rand::seq::index;
use rayon::prelude::*;

use crate::features::squared_distance;
use crate::rng;
use crate::{Error, FeatureMatrix, Result};

/// Symmetric matrix of pairwise Euclidean distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DissimilarityMatrix {
    /// Validates symmetry (within 1e-9), zero diagonal, non-negative finite
    /// entries.
    pub fn new(n: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != n * n {
            return Err(Error::Shape(format!("{} entries do not form {n} x {n}", d.len())));
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::Data(format!("diagonal entry {i} is not zero")));
            }
            for j in 0..i {
                let (a, b) = (d[i * n + j], d[j * n + i]);
                if !(a.is_finite() && a >= 0.0 && b.is_finite() && b >= 0.0) {
                    return Err(Error::Data(format!("entry ({i}, {j}) is negative or not finite")));
                }
                if (a - b).abs() > 1e-9 {
                    return Err(Error::Data(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(DissimilarityMatrix { n, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.d
    }

    /// `out[i][j] = d[p[i]][p[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<DissimilarityMatrix> {
        if !is_permutation(perm, self.n) {
            return Err(Error::Shape(format!("not a permutation of 0..{}", self.n)));
        }
        let n = self.n;
        let mut d = vec![0.0; n * n];
        for (i, &pi) in perm.iter().enumerate() {
            for (j, &pj) in perm.iter().enumerate() {
                d[i * n + j] = self.get(pi, pj);
            }
        }
        Ok(DissimilarityMatrix { n, d })
    }

    /// Euclidean distances between all rows of `x`.
    pub fn from_features(x: &FeatureMatrix) -> DissimilarityMatrix {
        let n = x.rows();
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (0..i).map(|j| squared_distance(x.row(i), x.row(j)).sqrt()).collect())
            .collect();
        let mut d = vec![0.0; n * n];
        for (i, row) in upper.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        DissimilarityMatrix { n, d }
    }
}

pub(crate) fn is_permutation(p: &[usize], n: usize) -> bool {
    if p.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    p.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

/// Seeded uniform subsample of row indices without replacement, sorted
/// ascending. Returns every index when `size == rows`.
pub fn subsample_indices(rows: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size == 0 || size > rows {
        return Err(Error::Shape(format!("cannot draw {size} of {rows} rows")));
    }
    if size == rows {
        return Ok((0..rows).collect());
    }
    let mut picked = index::sample(&mut rng::seeded(seed), rows, size).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Distances among a seeded subsample of rows, with the chosen row indices.
pub fn pairwise_distances(x: &FeatureMatrix, subsample: usize, seed: u64) -> Result<(DissimilarityMatrix, Vec<usize>)> {
    let idx = subsample_indices(x.rows(), subsample, seed)?;
    let d = DissimilarityMatrix::from_features(&x.select_rows(&idx));
    Ok((d, idx))
}
