//! Flattening and principal component analysis.
//!
//! The fit eigendecomposes whichever scatter matrix is smaller: the
//! `dim × dim` covariance when there are at least as many samples as
//! features, otherwise the `rows × rows` Gram matrix of the centered data,
//! whose eigenvectors map back to the same right singular directions.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;

use crate::ingest::TileSet;
use crate::rng::{self, streams};
use crate::{Error, FeatureMatrix, Result};

/// Default row cap for fitting the flattened-pixel baseline.
pub const DEFAULT_FIT_ROW_CAP: usize = 20_000;

/// Relative slack when comparing cumulative explained variance to a
/// threshold, absorbing rounding in the eigenvalue sum.
const CUMULATIVE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// `n × dim`, row-major, rows orthonormal.
    components: Vec<f64>,
    explained_variance: Vec<f64>,
    total_variance: f64,
}

impl PcaModel {
    /// Rebuilds a model from stored parts (e.g. a checkpoint section).
    pub fn from_parts(
        mean: Vec<f64>,
        components: Vec<f64>,
        explained_variance: Vec<f64>,
        total_variance: f64,
    ) -> Result<Self> {
        let dim = mean.len();
        let n = explained_variance.len();
        if components.len() != n * dim {
            return Err(Error::Shape(format!(
                "{} component values do not form {n} x {dim}",
                components.len()
            )));
        }
        if !(total_variance.is_finite() && total_variance >= 0.0)
            || explained_variance.iter().any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Data("variances must be finite and non-negative".into()));
        }
        Ok(PcaModel {
            mean,
            components,
            explained_variance,
            total_variance,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.explained_variance.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.components[i * d..(i + 1) * d]
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Number of components with non-zero variance.
    pub fn rank(&self) -> usize {
        self.explained_variance.iter().filter(|&&v| v > 0.0).count()
    }

    /// Keeps only the leading `n` components.
    pub fn truncated(&self, n: usize) -> PcaModel {
        let n = n.min(self.n_components());
        PcaModel {
            mean: self.mean.clone(),
            components: self.components[..n * self.dim()].to_vec(),
            explained_variance: self.explained_variance[..n].to_vec(),
            total_variance: self.total_variance,
        }
    }
}

/// Row-major flattening of each tile into one feature row.
pub fn flatten(tiles: &TileSet) -> Result<FeatureMatrix> {
    if tiles.is_empty() {
        return Err(Error::EmptySet("cannot flatten an empty tile set".into()));
    }
    let dim = tiles.window() * tiles.window();
    let values = tiles
        .tiles()
        .iter()
        .flat_map(|t| t.pixels.iter().map(|&p| f64::from(p)))
        .collect();
    FeatureMatrix::new(tiles.len(), dim, values)
}

/// Fits the top `n` principal directions of `x`.
///
/// Variances use the sample divisor `rows − 1`. Each component's
/// largest-magnitude entry is made positive. Requesting more components
/// than the numerical rank succeeds with a warning; the surplus components
/// get zero variance and are completed to an orthonormal set.
pub fn pca_fit(x: &FeatureMatrix, n: usize) -> Result<PcaModel> {
    let (rows, dim) = (x.rows(), x.dim());
    if rows < 2 {
        return Err(Error::Shape(format!("PCA needs at least 2 rows, got {rows}")));
    }
    if n == 0 || n > dim.min(rows) {
        return Err(Error::Shape(format!(
            "requested {n} components from a {rows} x {dim} matrix"
        )));
    }

    let mut mean = vec![0.0; dim];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    let centered = DMatrix::from_fn(rows, dim, |i, j| x.row(i)[j] - mean[j]);
    let denom = (rows - 1) as f64;
    let total_variance = centered.iter().map(|v| v * v).sum::<f64>() / denom;

    let use_gram = dim > rows;
    let scatter = if use_gram {
        &centered * centered.transpose()
    } else {
        centered.tr_mul(&centered)
    };
    let eig = SymmetricEigen::new(scatter);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * rows.max(dim) as f64 * f64::EPSILON * 4.0;

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut variances = Vec::with_capacity(n);
    for &idx in order.iter().take(n) {
        let lambda = eig.eigenvalues[idx];
        if lambda <= tol {
            break;
        }
        let v: Vec<f64> = if use_gram {
            // v = Cᵀu / sqrt(λ)
            let u = eig.eigenvectors.column(idx);
            let scale = lambda.sqrt();
            (0..dim)
                .map(|j| centered.column(j).dot(&u) / scale)
                .collect()
        } else {
            eig.eigenvectors.column(idx).iter().copied().collect()
        };
        components.push(v);
        variances.push(lambda / denom);
    }
    let rank = components.len();
    if rank < n {
        warn!("requested {n} PCA components but the data has numerical rank {rank}; surplus variances set to 0");
    }
    orthonormalize(&mut components, dim, n);
    variances.resize(n, 0.0);
    for c in &mut components {
        fix_sign(c);
    }

    Ok(PcaModel {
        mean,
        components: components.concat(),
        explained_variance: variances,
        total_variance,
    })
}

/// Fits on at most `cap` rows, drawn uniformly without replacement when the
/// matrix is larger.
pub fn pca_fit_capped(x: &FeatureMatrix, n: usize, cap: usize, seed: u64) -> Result<PcaModel> {
    if cap < 2 {
        return Err(Error::Config(format!("row cap {cap} is below 2")));
    }
    if x.rows() <= cap {
        return pca_fit(x, n);
    }
    let mut rng = rng::seeded(rng::derive(seed, streams::PCA_SUBSAMPLE, 0));
    let mut picked = index::sample(&mut rng, x.rows(), cap).into_vec();
    picked.sort_unstable();
    pca_fit(&x.select_rows(&picked), n.min(cap))
}

/// Projects rows onto the components: `(x − mean)·componentsᵀ`.
pub fn pca_transform(model: &PcaModel, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    if x.dim() != model.dim() {
        return Err(Error::Shape(format!(
            "features have dim {}, model expects {}",
            x.dim(),
            model.dim()
        )));
    }
    let n = model.n_components();
    let mut out = Vec::with_capacity(x.rows() * n);
    let mut centered = vec![0.0; model.dim()];
    for row in x.iter_rows() {
        for ((c, v), m) in centered.iter_mut().zip(row).zip(&model.mean) {
            *c = v - m;
        }
        for k in 0..n {
            out.push(dot(&centered, model.component(k)));
        }
    }
    FeatureMatrix::new(x.rows(), n, out)
}

/// Maps projected rows back to input space: `mean + proj·components`.
pub fn pca_inverse_transform(model: &PcaModel, proj: &FeatureMatrix) -> Result<FeatureMatrix> {
    if proj.dim() != model.n_components() {
        return Err(Error::Shape(format!(
            "projections have dim {}, model has {} components",
            proj.dim(),
            model.n_components()
        )));
    }
    let d = model.dim();
    let mut out = Vec::with_capacity(proj.rows() * d);
    for row in proj.iter_rows() {
        let mut x = model.mean.clone();
        for (k, &coef) in row.iter().enumerate() {
            for (xi, ci) in x.iter_mut().zip(model.component(k)) {
                *xi += coef * ci;
            }
        }
        out.extend(x);
    }
    FeatureMatrix::new(proj.rows(), d, out)
}

/// Fraction of the total variance carried by each fitted component.
pub fn evr(model: &PcaModel) -> Result<Vec<f64>> {
    if model.total_variance <= 0.0 {
        return Err(Error::DegenerateData("total variance is zero".into()));
    }
    Ok(model
        .explained_variance
        .iter()
        .map(|v| (v / model.total_variance).clamp(0.0, 1.0))
        .collect())
}

/// Smallest number of leading components whose cumulative explained
/// variance ratio reaches `threshold`.
pub fn components_for_variance(model: &PcaModel, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("variance threshold {threshold} outside (0, 1]")));
    }
    let ratios = evr(model)?;
    let target = threshold - CUMULATIVE_TOLERANCE;
    let mut cumulative = 0.0;
    for (i, r) in ratios.iter().enumerate() {
        cumulative += r;
        if cumulative >= target {
            return Ok(i + 1);
        }
    }
    Err(Error::InsufficientModel {
        available: ratios.len(),
        explained: cumulative,
        threshold,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modified Gram-Schmidt over the existing vectors, then completion with
/// standard basis vectors until `n` orthonormal vectors exist.
fn orthonormalize(vs: &mut Vec<Vec<f64>>, dim: usize, n: usize) {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    let candidates = std::mem::take(vs).into_iter().chain((0..dim).map(|j| {
        let mut e = vec![0.0; dim];
        e[j] = 1.0;
        e
    }));
    for mut v in candidates {
        if out.len() == n {
            break;
        }
        // two passes keep the result orthogonal to working precision
        for _ in 0..2 {
            for u in &out {
                let p = dot(&v, u);
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= p * ui;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            out.push(v);
        }
    }
    *vs = out;
}

/// Flips `v` so that its largest-magnitude entry (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Tile, TileSet};
    use proptest::prelude::*;

    fn random_matrix(rows: usize, dim: usize, seed: u64) -> FeatureMatrix {
        let mut rng = rng::seeded(seed);
        let vals = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureMatrix::new(rows, dim, vals).unwrap()
    }

    fn assert_orthonormal(m: &PcaModel, tol: f64) {
        for i in 0..m.n_components() {
            for j in 0..m.n_components() {
                let d = dot(m.component(i), m.component(j));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < tol, "<c{i}, c{j}> = {d}");
            }
        }
    }

    #[test]
    fn flatten_is_row_major() {
        let set = TileSet::new(
            2,
            vec![Tile { pixels: vec![1.0, 2.0, 3.0, 4.0], time_index: 0, band_index: 0 }],
            None,
        )
        .unwrap();
        let f = flatten(&set).unwrap();
        assert_eq!(f.row(0), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn flatten_dims() {
        let tiles = (0..16)
            .map(|i| Tile { pixels: vec![0.5; 32 * 32], time_index: i, band_index: 0 })
            .collect();
        let f = flatten(&TileSet::new(32, tiles, None).unwrap()).unwrap();
        assert_eq!((f.rows(), f.dim()), (16, 1024));
        let one = (0..1)
            .map(|i| Tile { pixels: vec![0.0; 128 * 128], time_index: i, band_index: 0 })
            .collect();
        assert_eq!(flatten(&TileSet::new(128, one, None).unwrap()).unwrap().dim(), 16_384);
        assert!(matches!(flatten(&TileSet::empty(4).unwrap()), Err(Error::EmptySet(_))));
    }

    #[test]
    fn points_on_a_line_have_one_component() {
        let x = FeatureMatrix::from_rows(&[
            vec![-2.0, 0.0],
            vec![-1.0, 0.0],
            vec![1.0, 0.0],
            vec![3.0, 0.0],
        ])
        .unwrap();
        let m = pca_fit(&x, 2).unwrap();
        assert!((m.component(0)[0] - 1.0).abs() < 1e-12);
        assert!(m.component(0)[1].abs() < 1e-12);
        let r = evr(&m).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-12);
        assert_eq!(r[1], 0.0);
        assert_eq!(m.rank(), 1);
        assert_orthonormal(&m, 1e-12);
    }

    #[test]
    fn one_dimensional_data_in_higher_space() {
        let x = FeatureMatrix::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![2.0, 4.0, 6.0],
            vec![-1.0, -2.0, -3.0],
        ])
        .unwrap();
        let m = pca_fit(&x, 3).unwrap();
        let r = evr(&m).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-12);
        assert!(r[1..].iter().all(|&v| v == 0.0));
        assert_orthonormal(&m, 1e-10);
    }

    #[test]
    fn gram_route_rank_deficiency_is_completed() {
        // 3 rows in 5 dims: rank at most 2 after centering
        let x = random_matrix(3, 5, 4);
        let m = pca_fit(&x, 3).unwrap();
        assert_eq!(m.rank(), 2);
        assert_eq!(m.explained_variance()[2], 0.0);
        assert_orthonormal(&m, 1e-10);
    }

    #[test]
    fn full_model_reconstructs_rows() {
        for (rows, dim) in [(12, 5), (6, 20)] {
            let x = random_matrix(rows, dim, 11);
            let n = (rows - 1).min(dim);
            let m = pca_fit(&x, n).unwrap();
            let back = pca_inverse_transform(&m, &pca_transform(&m, &x).unwrap()).unwrap();
            let err: f64 = x.values().iter().zip(back.values()).map(|(a, b)| (a - b).powi(2)).sum();
            let norm: f64 = x.values().iter().map(|a| a * a).sum();
            assert!((err / norm).sqrt() < 1e-6, "relative error {}", (err / norm).sqrt());
        }
    }

    #[test]
    fn transform_of_mean_is_zero() {
        let x = random_matrix(10, 4, 2);
        let m = pca_fit(&x, 3).unwrap();
        let mean = FeatureMatrix::new(1, 4, m.mean().to_vec()).unwrap();
        let p = pca_transform(&m, &mean).unwrap();
        assert!(p.values().iter().all(|v| v.abs() < 1e-12));
        let empty = FeatureMatrix::zeros(0, 4);
        assert_eq!(pca_transform(&m, &empty).unwrap().rows(), 0);
        assert!(matches!(pca_transform(&m, &FeatureMatrix::zeros(1, 5)), Err(Error::Shape(_))));
    }

    #[test]
    fn full_rank_evr_sums_to_one() {
        let x = random_matrix(20, 6, 8);
        let m = pca_fit(&x, 6).unwrap();
        let s: f64 = evr(&m).unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert_eq!(components_for_variance(&m, 1.0).unwrap(), 6);
    }

    #[test]
    fn threshold_selection() {
        let m = PcaModel::from_parts(vec![0.0; 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.], vec![0.6, 0.3, 0.1], 1.0).unwrap();
        assert_eq!(components_for_variance(&m, 0.95).unwrap(), 3);
        assert_eq!(components_for_variance(&m, 0.9).unwrap(), 2);
        assert_eq!(components_for_variance(&m, 0.5).unwrap(), 1);
        let short = m.truncated(2);
        assert!(matches!(components_for_variance(&short, 0.95), Err(Error::InsufficientModel { .. })));
        assert!(components_for_variance(&m, 0.0).is_err());
        assert!(components_for_variance(&m, 1.5).is_err());
    }

    #[test]
    fn threshold_one_gives_numerical_rank() {
        let x = FeatureMatrix::from_rows(&[
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 2.0],
            vec![1.0, 1.0, 0.0, 0.0],
            vec![2.0, 0.0, 0.0, 0.0],
        ])
        .unwrap();
        // one constant column, and every row sums to 2
        let m = pca_fit(&x, 4).unwrap();
        assert_eq!(m.rank(), 2);
        assert_eq!(components_for_variance(&m, 1.0).unwrap(), 2);
    }

    #[test]
    fn degenerate_data() {
        let x = FeatureMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let m = pca_fit(&x, 1).unwrap();
        assert!(matches!(evr(&m), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn shape_preconditions() {
        let x = random_matrix(5, 3, 1);
        assert!(pca_fit(&x, 0).is_err());
        assert!(pca_fit(&x, 4).is_err());
        assert!(pca_fit(&random_matrix(1, 3, 1), 1).is_err());
    }

    #[test]
    fn capped_fit_subsamples() {
        let x = random_matrix(50, 4, 3);
        let a = pca_fit_capped(&x, 4, 20, 9).unwrap();
        let b = pca_fit_capped(&x, 4, 20, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, pca_fit(&x, 4).unwrap());
        assert_eq!(pca_fit_capped(&x, 4, 100, 9).unwrap(), pca_fit(&x, 4).unwrap());
    }

    fn sign_aligned_eq(a: &PcaModel, b: &PcaModel, tol: f64) {
        for k in 0..a.n_components() {
            assert!((a.explained_variance()[k] - b.explained_variance()[k]).abs() < tol);
            let d = dot(a.component(k), b.component(k));
            assert!((d.abs() - 1.0).abs() < tol, "component {k} alignment {d}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn components_are_orthonormal(rows in 2usize..30, dim in 1usize..10, seed in any::<u64>()) {
            let x = random_matrix(rows, dim, seed);
            let m = pca_fit(&x, rows.min(dim)).unwrap();
            assert_orthonormal(&m, 1e-8);
            let v = m.explained_variance();
            prop_assert!(v.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(evr(&m).unwrap().iter().sum::<f64>() <= 1.0 + 1e-9);
        }

        #[test]
        fn row_permutation_invariance(rows in 3usize..20, dim in 1usize..6, seed in any::<u64>()) {
            let x = random_matrix(rows, dim, seed);
            let mut perm: Vec<usize> = (0..rows).rev().collect();
            perm.rotate_left(seed as usize % rows);
            let n = (rows - 1).min(dim);
            let a = pca_fit(&x, n).unwrap();
            let b = pca_fit(&x.select_rows(&perm), n).unwrap();
            sign_aligned_eq(&a, &b, 1e-8);
        }

        #[test]
        fn translation_changes_only_the_mean(rows in 3usize..20, dim in 1usize..6, seed in any::<u64>(), shift in -5.0f64..5.0) {
            let x = random_matrix(rows, dim, seed);
            let moved: Vec<f64> = x.values().iter().enumerate().map(|(i, v)| v + shift * (1 + i % dim) as f64).collect();
            let y = FeatureMatrix::new(rows, dim, moved).unwrap();
            let n = (rows - 1).min(dim);
            let a = pca_fit(&x, n).unwrap();
            let b = pca_fit(&y, n).unwrap();
            sign_aligned_eq(&a, &b, 1e-8);
        }
    }
}
