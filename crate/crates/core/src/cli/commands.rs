use std::cell::RefCell;
use std::path::Path;

use log::info;

use super::{BaselineArgs, CmdResult, Cli, Command, DeepClusterArgs, EvaluateArgs, Failure, Preset, SegmentArgs, SynthArgs};
use crate::cnn::{load_checkpoint, save_checkpoint, ArchKind, Centroids, Checkpoint, ReducerSettings, TrainConfig};
use crate::deepcluster::{condition, train_with, Clustering, DeepClusterConfig, EpochState, Hooks, TrainHistory};
use crate::eval::{self, average_spectrogram, band_histogram, nmi, pairwise_distances, silhouette_features, vat};
use crate::ingest::{labels_to_csv, load_labels, load_psd, load_tiles, normalize, segment, synth_generate, SynthConfig, TileSet};
use crate::kmeans::{assign, kmeans, KMeansConfig};
use crate::pca::{components_for_variance, evr, flatten, pca_fit_capped, pca_transform, PcaModel};
use crate::report::{self, Manifest, Summary};
use crate::rng::{self, streams};
use crate::{Error, FeatureMatrix, Result};

const DEFAULT_WINDOW: usize = 128;

/// The run directory and its manifest. Every write goes through here.
struct Run {
    dir: std::path::PathBuf,
    seed: u64,
    manifest: Manifest,
}

impl Run {
    fn open(dir: &Path, seed: u64) -> Result<Self> {
        Ok(Run {
            dir: dir.to_path_buf(),
            seed,
            manifest: Manifest::load(dir)?,
        })
    }

    fn record(&mut self, rel: &str) {
        let (stem, kind) = rel.rsplit_once('.').unwrap_or((rel, ""));
        self.manifest.record(&stem.replace('/', "."), kind, rel, self.seed);
    }

    fn bytes(&mut self, rel: &str, data: &[u8]) -> Result<()> {
        report::write_bytes(&self.dir.join(rel), data)?;
        self.record(rel);
        Ok(())
    }

    fn text(&mut self, rel: &str, text: &str) -> Result<()> {
        self.bytes(rel, text.as_bytes())
    }

    fn image(&mut self, rel: &str, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
        self.bytes(rel, &eval::to_pgm(rows, cols, values)?)
    }

    fn close(self) -> Result<()> {
        self.manifest.save(&self.dir)
    }
}

pub(super) fn dispatch(cli: &Cli) -> CmdResult {
    let g = &cli.global;
    let mut run = Run::open(&g.out, g.seed)?;
    match &cli.command {
        Command::Synth(a) => synth(&mut run, a)?,
        Command::Segment(a) => segment_cmd(&mut run, a)?,
        Command::Baseline(a) => baseline(&mut run, a)?,
        Command::Deepcluster(a) => deepcluster(&mut run, a)?,
        Command::Evaluate(a) => evaluate(&mut run, a)?,
        Command::Report => {
            let r = report::sweep_report(&run.dir)?;
            run.text(report::REPORT_FILE, &r.to_csv())?;
        }
    }
    run.close()?;
    Ok(())
}

fn require(path: &Path) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("input file {} does not exist", path.display())))
    }
}

fn tiles_and_labels(tiles: &Path, labels: Option<&Path>) -> CmdResult<(TileSet, Option<Vec<u32>>)> {
    require(tiles)?;
    if let Some(l) = labels {
        require(l)?;
    }
    let t = load_tiles(tiles)?;
    if t.is_empty() {
        return Err(Error::EmptySet(format!("{} holds no tiles", tiles.display())).into());
    }
    let l = labels.map(load_labels).transpose()?;
    if let Some(l) = &l {
        if l.len() != t.len() {
            return Err(Error::Shape(format!("{} labels for {} tiles", l.len(), t.len())).into());
        }
    }
    Ok((t, l))
}

fn synth(run: &mut Run, a: &SynthArgs) -> CmdResult {
    let seed = run.seed;
    let window = a.window.unwrap_or(DEFAULT_WINDOW);
    let mut cfg = match a.preset {
        Preset::Default => SynthConfig {
            window,
            seed,
            ..SynthConfig::default()
        },
        Preset::SixClass => SynthConfig::six_class(window, 300, seed),
        Preset::EdgeBands => SynthConfig::edge_bands(window, a.windows_per_band.unwrap_or(64), seed),
    };
    if let Some(n) = a.tiles_per_class {
        cfg.tiles_per_class = n;
    }
    if !a.class.is_empty() {
        cfg.classes = a.class.clone();
    }
    if let Some(b) = a.bands {
        cfg.bands = b;
    }
    if !a.rolloff.is_empty() {
        cfg.rolloff = a.rolloff.clone();
    }
    if let Some(v) = a.noise_floor {
        cfg.noise_floor_dbm = v;
    }
    if let Some(v) = a.noise_std {
        cfg.noise_std_db = v;
    }
    let out = synth_generate(&cfg)?;
    run.bytes("synth/recording.spsd", &out.to_psd()?.to_bytes())?;
    run.bytes("synth/tiles.sptl", &normalize(&out.tiles)?.to_bytes())?;
    run.text("synth/labels.csv", &labels_to_csv(&out.labels))?;
    info!("generated {} tiles in {} classes", out.tiles.len(), cfg.classes.len());
    Ok(())
}

fn segment_cmd(run: &mut Run, a: &SegmentArgs) -> CmdResult {
    require(&a.psd)?;
    let psd = load_psd(&a.psd)?;
    let tiles = normalize(&segment(&psd, a.window)?)?;
    run.bytes("segment/tiles.sptl", &tiles.to_bytes())?;
    info!("{} x {} recording -> {} tiles", psd.bins(), psd.steps(), tiles.len());
    Ok(())
}

fn evr_csv(model: &PcaModel) -> Result<String> {
    let mut out = String::from("component,evr,cumulative\n");
    let mut cum = 0.0;
    for (i, r) in evr(model)?.iter().enumerate() {
        cum += r;
        out.push_str(&format!("{},{r},{cum}\n", i + 1));
    }
    Ok(out)
}

fn histogram_csv(tiles: &TileSet, labels: &[u32]) -> Result<String> {
    let (k, bands, h) = band_histogram(tiles, labels)?;
    let mut out = String::from("cluster");
    for b in 0..bands {
        out.push_str(&format!(",band_{b}"));
    }
    out.push('\n');
    for j in 0..k {
        out.push_str(&j.to_string());
        for b in 0..bands {
            out.push_str(&format!(",{}", h[j * bands + b]));
        }
        out.push('\n');
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

/// VAT and iVAT images of a seeded subsample.
fn vat_images(run: &mut Run, dir: &str, x: &FeatureMatrix, size: usize) -> Result<()> {
    let size = size.min(x.rows());
    if size < 2 {
        return Ok(());
    }
    let (d, _) = pairwise_distances(x, size, rng::derive(run.seed, streams::VAT_SUBSAMPLE, 0))?;
    let v = vat(&d, true)?;
    let n = d.n();
    run.image(&format!("{dir}/vat.pgm"), n, n, v.reordered.values())?;
    if let Some(i) = &v.ivat {
        run.image(&format!("{dir}/ivat.pgm"), n, n, i.values())?;
    }
    Ok(())
}

fn silhouette_of(x: &FeatureMatrix, labels: &[u32], size: usize, seed: u64) -> Result<f64> {
    silhouette_features(x, labels, size.max(2), rng::derive(seed, streams::SILHOUETTE_SUBSAMPLE, 0))
}

/// Every component the data can support (centering costs one rank), for
/// EVR reporting.
fn full_pca(x: &FeatureMatrix, cap: usize, seed: u64) -> Result<PcaModel> {
    let n = x.dim().min(x.rows().min(cap).saturating_sub(1)).max(1);
    pca_fit_capped(x, n, cap, seed)
}

fn baseline(run: &mut Run, a: &BaselineArgs) -> CmdResult {
    if a.k_min < 2 || a.k_max < a.k_min {
        return Err(Failure::Usage(format!("k range {}..{} must satisfy 2 <= k-min <= k-max", a.k_min, a.k_max)));
    }
    if a.components == 0 || a.restarts == 0 || a.fit_rows < 2 {
        return Err(Failure::Usage("--components, --restarts and --fit-rows must be positive".into()));
    }
    let (tiles, truth) = tiles_and_labels(&a.tiles, a.labels.as_deref())?;
    if a.k_max > tiles.len() {
        return Err(Failure::Usage(format!("k-max {} exceeds the {} tiles", a.k_max, tiles.len())));
    }
    let x = flatten(&tiles)?;
    let full = full_pca(&x, a.fit_rows, run.seed)?;
    run.text("baseline/evr.csv", &evr_csv(&full)?)?;
    let n95 = components_for_variance(&full, 0.95)?;
    info!("{n95} of {} components explain 95% of the variance", x.dim());
    if a.components > full.n_components() {
        return Err(Failure::Usage(format!(
            "--components {} exceeds the {} available",
            a.components,
            full.n_components()
        )));
    }
    let reduced = pca_transform(&full.truncated(a.components), &x)?;

    let mut sweep = String::from("k,silhouette,inertia,nmi\n");
    let mut best: Option<(usize, f64, Vec<u32>, Option<f64>)> = None;
    for k in a.k_min..=a.k_max {
        let cfg = KMeansConfig {
            max_iter: a.max_iter,
            restarts: a.restarts,
            seed: rng::derive(run.seed, streams::BASELINE_KMEANS, k as u64),
            ..KMeansConfig::default()
        };
        let model = kmeans(&reduced, k, &cfg)?;
        let sil = silhouette_of(&reduced, &model.assignments, a.subsample.subsample_sil, run.seed)?;
        let score = truth.as_ref().map(|t| nmi(t, &model.assignments)).transpose()?;
        info!("k={k}: silhouette {sil:.4}");
        sweep.push_str(&format!("{k},{sil},{},{}\n", model.inertia, opt(score)));
        if best.as_ref().is_none_or(|b| sil > b.1) {
            best = Some((k, sil, model.assignments, score));
        }
    }
    let (best_k, best_sil, labels, best_nmi) = best.expect("non-empty k range");
    run.text("baseline/silhouette.csv", &sweep)?;
    run.text("baseline/labels.csv", &labels_to_csv(&labels))?;
    run.text("baseline/band_histogram.csv", &histogram_csv(&tiles, &labels)?)?;
    vat_images(run, "baseline", &reduced, a.subsample.subsample_vat)?;

    let mut s = Summary::default();
    s.set("samples", tiles.len())
        .set("dim", x.dim())
        .set("components_95", n95)
        .set("components", a.components)
        .set("best_k", best_k)
        .set("best_silhouette", best_sil)
        .set("nmi", opt(best_nmi));
    run.text(report::BASELINE_SUMMARY, &s.to_csv())?;
    Ok(())
}

fn checkpoint_of(model: &crate::cnn::CnnModel<f32>, reducer: ReducerSettings, c: &Clustering) -> Checkpoint {
    Checkpoint {
        model: model.clone(),
        reducer: Some(reducer),
        pca: Some(c.pca.clone()),
        centroids: Some(Centroids {
            k: c.model.k,
            dim: c.model.dim,
            values: c.model.centroids.clone(),
        }),
    }
}

fn deepcluster(run: &mut Run, a: &DeepClusterArgs) -> CmdResult {
    let (tiles, truth) = tiles_and_labels(&a.tiles, a.labels.as_deref())?;
    let feature_dim = a.feature_dim.unwrap_or(match a.arch {
        ArchKind::Resnet18 => 512,
        _ => crate::cnn::DEFAULT_FEATURE_DIM,
    });
    let cfg = DeepClusterConfig {
        clusters: a.clusters,
        components: a.components,
        epochs: a.epochs,
        reducer: ReducerSettings {
            whiten: a.whiten,
            l2_normalize: !a.no_l2,
        },
        train: TrainConfig {
            learning_rate: a.lr,
            momentum: a.momentum,
            weight_decay: a.weight_decay,
            batch_size: a.batch_size,
            balanced_sampling: !a.no_balanced,
            bn_momentum: a.bn_momentum,
            seed: run.seed,
        },
        kmeans: KMeansConfig {
            restarts: a.restarts,
            ..KMeansConfig::default()
        },
        arch: a.arch,
        feature_dim,
        extract_batch: 256,
        seed: run.seed,
    };
    cfg.validate()?;

    // Per-epoch history and last/best checkpoints, rewritten as training goes.
    let dir = run.dir.join("deepcluster");
    let history = RefCell::new(TrainHistory::default());
    let mut best_loss = f64::INFINITY;
    let mut on_epoch = |state: &EpochState| -> Result<()> {
        let mut h = history.borrow_mut();
        h.records.push(state.record.clone());
        report::write_text(&dir.join("history.csv"), &h.to_csv(cfg.clusters))?;
        let ck = checkpoint_of(state.model, cfg.reducer, state.clustering);
        save_checkpoint(&ck, dir.join("checkpoint_last.spck"))?;
        if state.record.mean_loss < best_loss {
            best_loss = state.record.mean_loss;
            save_checkpoint(&ck, dir.join("checkpoint_best.spck"))?;
        }
        Ok(())
    };
    let result = train_with(
        &tiles,
        &cfg,
        Hooks {
            on_epoch: Some(&mut on_epoch),
            interrupt: None,
        },
    )?;
    for rel in ["deepcluster/history.csv", "deepcluster/checkpoint_best.spck"] {
        run.record(rel);
    }
    run.bytes(
        "deepcluster/checkpoint_last.spck",
        &checkpoint_of(&result.model, cfg.reducer, &result.clustering).to_bytes(),
    )?;
    let labels = result.labels();
    run.text("deepcluster/labels.csv", &labels_to_csv(labels))?;

    let features = result.model.extract_features(&tiles, cfg.extract_batch)?;
    let full = full_pca(&features, crate::pca::DEFAULT_FIT_ROW_CAP, run.seed)?;
    run.text("deepcluster/evr.csv", &evr_csv(&full)?)?;
    let n95 = components_for_variance(&full, 0.95)?;
    let sil = silhouette_of(&result.clustering.reduced, labels, a.subsample_sil, run.seed)?;
    let score = truth.as_ref().map(|t| nmi(t, labels)).transpose()?;
    info!(
        "final: {n95} components for 95% variance, silhouette {sil:.4}{}",
        score.map_or(String::new(), |v| format!(", NMI {v:.4}"))
    );

    let mut s = Summary::default();
    s.set("samples", tiles.len())
        .set("dim", features.dim())
        .set("components_95", n95)
        .set("components", cfg.components)
        .set("epochs", cfg.epochs)
        .set("final_loss", result.history.records.last().map_or(f64::NAN, |r| r.mean_loss))
        .set("best_k", cfg.clusters)
        .set("best_silhouette", sil)
        .set("nmi", opt(score));
    run.text(report::DEEPCLUSTER_SUMMARY, &s.to_csv())?;
    Ok(())
}

fn evaluate(run: &mut Run, a: &EvaluateArgs) -> CmdResult {
    require(&a.checkpoint)?;
    let (tiles, truth) = tiles_and_labels(&a.tiles, a.labels.as_deref())?;
    let ck = load_checkpoint(&a.checkpoint)?;
    if ck.model.window() != tiles.window() {
        return Err(Error::Shape(format!(
            "checkpoint expects {0}x{0} tiles, got {1}x{1}",
            ck.model.window(),
            tiles.window()
        ))
        .into());
    }
    let features = ck.model.extract_features(&tiles, 256)?;
    let reduced = match &ck.pca {
        Some(p) => {
            let mut r = pca_transform(p, &features)?;
            condition(&mut r, p, ck.reducer.unwrap_or_default());
            r
        }
        None => features,
    };
    let labels = match &ck.centroids {
        Some(c) if c.dim == reduced.dim() => assign(&reduced, &c.values)?,
        Some(c) => {
            return Err(Error::Shape(format!("centroids have dim {}, features {}", c.dim, reduced.dim())).into())
        }
        None => {
            let cfg = KMeansConfig {
                seed: rng::derive(run.seed, streams::BASELINE_KMEANS, 0),
                ..KMeansConfig::default()
            };
            kmeans(&reduced, ck.model.classes(), &cfg)?.assignments
        }
    };
    let k = ck.centroids.as_ref().map_or(ck.model.classes(), |c| c.k);
    let occupied = {
        let mut seen = vec![false; k];
        labels.iter().for_each(|&l| seen[l as usize] = true);
        seen.iter().filter(|&&s| s).count()
    };
    let sil = if occupied >= 2 {
        Some(silhouette_of(&reduced, &labels, a.subsample.subsample_sil, run.seed)?)
    } else {
        None
    };
    let score = truth.as_ref().map(|t| nmi(t, &labels)).transpose()?;

    run.text("evaluate/labels.csv", &labels_to_csv(&labels))?;
    run.text("evaluate/band_histogram.csv", &histogram_csv(&tiles, &labels)?)?;
    let w = tiles.window();
    for j in 0..k as u32 {
        if labels.contains(&j) {
            let avg = average_spectrogram(&tiles, &labels, j)?;
            let values: Vec<f64> = avg.iter().map(|&v| v as f64).collect();
            run.image(&format!("evaluate/avg_cluster_{j}.pgm"), w, w, &values)?;
        }
    }
    vat_images(run, "evaluate", &reduced, a.subsample.subsample_vat)?;

    let mut s = Summary::default();
    s.set("samples", tiles.len())
        .set("clusters", k)
        .set("occupied_clusters", occupied)
        .set("silhouette", opt(sil))
        .set("nmi", opt(score));
    run.text("evaluate/summary.csv", &s.to_csv())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_layout() {
        let tiles = crate::ingest::TileSet::new(
            2,
            (0..4)
                .map(|i| crate::ingest::Tile {
                    band_index: (i % 2) as u16,
                    time_index: (i / 2) as u32,
                    pixels: vec![0.0; 4],
                })
                .collect(),
            None,
        )
        .unwrap();
        assert_eq!(
            histogram_csv(&tiles, &[0, 1, 0, 0]).unwrap(),
            "cluster,band_0,band_1\n0,2,1\n1,0,1\n"
        );
    }
}
