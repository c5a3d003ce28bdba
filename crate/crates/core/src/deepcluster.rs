//! Alternating clustering and training: every epoch extracts CNN features,
//! reduces them with a freshly fitted PCA, clusters them with k-means, and
//! trains the network for one pass on the resulting pseudo-labels.

use std::sync::atomic::{AtomicBool, Ordering};

use log::info;

use crate::cnn::{build_model, ArchKind, CnnModel, ReducerSettings, Sgd, TrainConfig, DEFAULT_FEATURE_DIM};
use crate::ingest::TileSet;
use crate::kmeans::{kmeans, ClusterModel, KMeansConfig};
use crate::pca::{pca_fit, pca_transform, PcaModel};
use crate::rng::{self, streams};
use crate::{Error, FeatureMatrix, Result};

const WHITEN_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct DeepClusterConfig {
    pub clusters: usize,
    pub components: usize,
    pub epochs: usize,
    pub reducer: ReducerSettings,
    pub train: TrainConfig,
    /// Iteration limits and restarts; the seed is derived per epoch.
    pub kmeans: KMeansConfig,
    pub arch: ArchKind,
    pub feature_dim: usize,
    /// Batch size for feature extraction (does not affect results).
    pub extract_batch: usize,
    pub seed: u64,
}

impl Default for DeepClusterConfig {
    fn default() -> Self {
        DeepClusterConfig {
            clusters: 10,
            components: 32,
            epochs: 200,
            reducer: ReducerSettings::default(),
            train: TrainConfig::default(),
            kmeans: KMeansConfig::default(),
            arch: ArchKind::Reduced,
            feature_dim: DEFAULT_FEATURE_DIM,
            extract_batch: 256,
            seed: 0,
        }
    }
}

impl DeepClusterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.clusters < 2 {
            return bad(format!("need at least 2 clusters, got {}", self.clusters));
        }
        if self.components == 0 {
            return bad("need at least 1 component".into());
        }
        if self.epochs == 0 {
            return bad("need at least 1 epoch".into());
        }
        if self.components > self.feature_dim {
            return bad(format!(
                "{} components exceed the feature dim {}",
                self.components, self.feature_dim
            ));
        }
        if self.extract_batch == 0 {
            return bad("extraction batch size must be at least 1".into());
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub inertia: f64,
    pub cluster_sizes: Vec<usize>,
    /// Fraction of samples whose cluster changed since the previous epoch,
    /// after optimally matching cluster ids. `None` for the first epoch.
    pub label_churn: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `epoch,mean_loss,inertia,churn,size_0..size_{K-1}`; churn is empty
    /// for the first epoch.
    pub fn to_csv(&self, k: usize) -> String {
        let mut out = String::from("epoch,mean_loss,inertia,churn");
        for j in 0..k {
            out.push_str(&format!(",size_{j}"));
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{},", r.epoch, r.mean_loss, r.inertia));
            if let Some(c) = r.label_churn {
                out.push_str(&c.to_string());
            }
            for s in &r.cluster_sizes {
                out.push_str(&format!(",{s}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Output of one clustering stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub pca: PcaModel,
    /// Reduced (and conditioned) features that were clustered.
    pub reduced: FeatureMatrix,
    pub model: ClusterModel,
}

/// State handed to the per-epoch hook.
pub struct EpochState<'a> {
    pub record: &'a EpochRecord,
    pub model: &'a CnnModel<f32>,
    pub clustering: &'a Clustering,
}

#[derive(Default)]
pub struct Hooks<'a> {
    /// Called after every completed epoch; an error aborts the run.
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochState) -> Result<()>>,
    /// Checked between epochs; when set the run stops with
    /// [`Error::Interrupted`].
    pub interrupt: Option<&'a AtomicBool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepClusterRun {
    pub model: CnnModel<f32>,
    pub history: TrainHistory,
    /// Clustering of the features of the fully trained model.
    pub clustering: Clustering,
}

impl DeepClusterRun {
    pub fn labels(&self) -> &[u32] {
        &self.clustering.model.assignments
    }
}

/// Optional whitening, then optional row-wise L2 normalization. Zero rows
/// stay zero.
pub fn condition(reduced: &mut FeatureMatrix, pca: &PcaModel, settings: ReducerSettings) {
    if settings.whiten {
        let scale: Vec<f64> = pca
            .explained_variance()
            .iter()
            .map(|v| 1.0 / (v.sqrt() + WHITEN_EPS))
            .collect();
        for i in 0..reduced.rows() {
            reduced.row_mut(i).iter_mut().zip(&scale).for_each(|(x, s)| *x *= s);
        }
    }
    if settings.l2_normalize {
        for i in 0..reduced.rows() {
            let row = reduced.row_mut(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
}

/// PCA fitted on `features`, then projection and conditioning.
pub fn reduce(features: &FeatureMatrix, components: usize, settings: ReducerSettings, epoch: usize) -> Result<(PcaModel, FeatureMatrix)> {
    let pca = pca_fit(features, components)?;
    if pca.total_variance() <= 0.0 {
        return Err(Error::DegenerateFeatures { epoch });
    }
    let mut reduced = pca_transform(&pca, features)?;
    condition(&mut reduced, &pca, settings);
    Ok((pca, reduced))
}

/// Extract, reduce and cluster with the model as it stands.
pub fn cluster_features(model: &CnnModel<f32>, tiles: &TileSet, cfg: &DeepClusterConfig, epoch: usize) -> Result<Clustering> {
    let features = model.extract_features(tiles, cfg.extract_batch)?;
    if features.dim() != cfg.feature_dim {
        return Err(Error::Shape(format!(
            "model yields {} features, config expects {}",
            features.dim(),
            cfg.feature_dim
        )));
    }
    let (pca, reduced) = reduce(&features, cfg.components, cfg.reducer, epoch)?;
    let kcfg = KMeansConfig {
        seed: rng::derive(cfg.seed, streams::KMEANS_EPOCH, epoch as u64),
        ..cfg.kmeans
    };
    let model = kmeans(&reduced, cfg.clusters, &kcfg)?;
    Ok(Clustering { pca, reduced, model })
}

/// One clustering + training round. `previous` are the last epoch's labels,
/// used for the churn figure.
pub fn epoch_step(
    model: &mut CnnModel<f32>,
    sgd: &mut Sgd<f32>,
    tiles: &TileSet,
    cfg: &DeepClusterConfig,
    epoch: usize,
    previous: Option<&[u32]>,
) -> Result<(Clustering, EpochRecord)> {
    let clustering = cluster_features(model, tiles, cfg, epoch)?;
    let labels = &clustering.model.assignments;
    model.reinit_head(cfg.clusters, rng::derive(cfg.seed, streams::HEAD_INIT, epoch as u64 + 1))?;
    sgd.forget(&model.head_slots());
    let sampler_seed = rng::derive(cfg.train.seed, streams::SAMPLER, epoch as u64);
    let mean_loss = model.train_epoch(sgd, tiles, labels, &cfg.train, sampler_seed)?;
    let record = EpochRecord {
        epoch,
        mean_loss,
        inertia: clustering.model.inertia,
        cluster_sizes: clustering.model.cluster_sizes(),
        label_churn: previous.map(|p| label_churn(p, labels, cfg.clusters)),
    };
    Ok((clustering, record))
}

/// Full run: `cfg.epochs` rounds, then one last clustering of the trained
/// model's features.
pub fn train(tiles: &TileSet, cfg: &DeepClusterConfig) -> Result<DeepClusterRun> {
    train_with(tiles, cfg, Hooks::default())
}

pub fn train_with(tiles: &TileSet, cfg: &DeepClusterConfig, mut hooks: Hooks) -> Result<DeepClusterRun> {
    cfg.validate()?;
    if tiles.is_empty() {
        return Err(Error::EmptySet("no tiles to cluster".into()));
    }
    if tiles.len() < cfg.clusters {
        return Err(Error::Shape(format!("{} tiles cannot fill {} clusters", tiles.len(), cfg.clusters)));
    }
    let mut model = build_model(cfg.arch, tiles.window(), cfg.feature_dim, cfg.clusters, cfg.seed)?;
    let mut sgd = Sgd::new();
    let mut history = TrainHistory::default();
    let mut previous: Option<Vec<u32>> = None;
    for epoch in 0..cfg.epochs {
        if hooks.interrupt.is_some_and(|f| f.load(Ordering::SeqCst)) {
            return Err(Error::Interrupted { completed_epochs: epoch });
        }
        let (clustering, record) = epoch_step(&mut model, &mut sgd, tiles, cfg, epoch, previous.as_deref())?;
        info!(
            "epoch {epoch}: loss {:.4}, inertia {:.4}, churn {}",
            record.mean_loss,
            record.inertia,
            record.label_churn.map_or("-".into(), |c| format!("{c:.4}"))
        );
        if let Some(cb) = hooks.on_epoch.as_mut() {
            cb(&EpochState {
                record: &record,
                model: &model,
                clustering: &clustering,
            })?;
        }
        previous = Some(clustering.model.assignments);
        history.records.push(record);
    }
    let clustering = cluster_features(&model, tiles, cfg, cfg.epochs)?;
    Ok(DeepClusterRun {
        model,
        history,
        clustering,
    })
}

/// Share of samples whose label differs between two labelings once the
/// cluster ids of `b` are optimally matched to those of `a`.
pub fn label_churn(a: &[u32], b: &[u32], k: usize) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    if a.is_empty() {
        return 0.0;
    }
    let k = a.iter().chain(b).map(|&l| l as usize + 1).max().unwrap_or(0).max(k);
    let mut overlap = vec![vec![0i64; k]; k];
    for (&x, &y) in a.iter().zip(b) {
        overlap[x as usize][y as usize] += 1;
    }
    let cost: Vec<Vec<i64>> = overlap.iter().map(|row| row.iter().map(|&c| -c).collect()).collect();
    let assignment = min_cost_assignment(&cost);
    let matched: i64 = assignment.iter().enumerate().map(|(i, &j)| overlap[i][j]).sum();
    1.0 - matched as f64 / a.len() as f64
}

/// Hungarian algorithm (shortest augmenting paths with potentials) on a
/// square cost matrix; returns the column assigned to every row.
pub(crate) fn min_cost_assignment(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    const INF: i64 = i64::MAX / 4;
    // 1-based arrays; column 0 is a virtual start
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            col_of[row_of[j] - 1] = j - 1;
        }
    }
    col_of
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(cost: &[Vec<i64>]) -> i64 {
        fn go(cost: &[Vec<i64>], row: usize, used: &mut Vec<bool>) -> i64 {
            if row == cost.len() {
                return 0;
            }
            let mut best = i64::MAX;
            for j in 0..cost.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[row][j] + go(cost, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        go(cost, 0, &mut vec![false; cost.len()])
    }

    #[test]
    fn churn_ignores_renaming() {
        assert_eq!(label_churn(&[0, 0, 1, 1, 2], &[2, 2, 0, 0, 1], 3), 0.0);
        assert!((label_churn(&[0, 0, 1, 1], &[0, 1, 1, 1], 2) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn conditioning() {
        let f = FeatureMatrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let pca = PcaModel::from_parts(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0], vec![4.0, 1.0], 5.0).unwrap();
        let mut x = f.clone();
        condition(&mut x, &pca, ReducerSettings::default());
        assert_eq!(x.row(0), &[0.6, 0.8]);
        assert_eq!(x.row(1), &[0.0, 0.0]);
        let mut w = f.clone();
        condition(&mut w, &pca, ReducerSettings { whiten: true, l2_normalize: false });
        assert!((w.row(0)[0] - 1.5).abs() < 1e-7 && (w.row(0)[1] - 4.0).abs() < 1e-7);
    }

    #[test]
    fn config_validation() {
        assert!(DeepClusterConfig::default().validate().is_ok());
        for bad in [
            DeepClusterConfig { clusters: 1, ..Default::default() },
            DeepClusterConfig { components: 0, ..Default::default() },
            DeepClusterConfig { components: 65, ..Default::default() },
            DeepClusterConfig { epochs: 0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn history_csv() {
        let h = TrainHistory {
            records: vec![
                EpochRecord { epoch: 0, mean_loss: 1.5, inertia: 2.0, cluster_sizes: vec![3, 1], label_churn: None },
                EpochRecord { epoch: 1, mean_loss: 1.0, inertia: 1.0, cluster_sizes: vec![2, 2], label_churn: Some(0.25) },
            ],
        };
        assert_eq!(h.to_csv(2), "epoch,mean_loss,inertia,churn,size_0,size_1\n0,1.5,2,,3,1\n1,1,1,0.25,2,2\n");
    }

    proptest! {
        #[test]
        fn hungarian_is_optimal(n in 1usize..6, seed in any::<u64>()) {
            use rand::Rng as _;
            let mut r = rng::seeded(seed);
            let cost: Vec<Vec<i64>> = (0..n).map(|_| (0..n).map(|_| r.random_range(-20..20)).collect()).collect();
            let a = min_cost_assignment(&cost);
            let mut seen = vec![false; n];
            for &j in &a { prop_assert!(!seen[j]); seen[j] = true; }
            let total: i64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            prop_assert_eq!(total, brute_force(&cost));
        }

        #[test]
        fn churn_bounded(pairs in proptest::collection::vec((0u32..4, 0u32..4), 1..50)) {
            let (a, b): (Vec<u32>, Vec<u32>) = pairs.into_iter().unzip();
            let c = label_churn(&a, &b, 4);
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert_eq!(label_churn(&a, &a, 4), 0.0);
        }
    }
}
