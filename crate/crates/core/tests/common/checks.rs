//! The fast acceptance checks, shared by the focused test files and the
//! acceptance runner.

use rand::Rng;
use spectrum_dc::eval::{self, DissimilarityMatrix};
use spectrum_dc::ingest::{segment, tile_grid, PsdMatrix};
use spectrum_dc::kmeans::{kmeans, kmeanspp_init, lloyd, KMeansConfig};
use spectrum_dc::pca::{evr, pca_fit};
use spectrum_dc::FeatureMatrix;

use super::*;

pub struct Check {
    pub pass: bool,
    pub detail: String,
}

fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
    FeatureMatrix::from_rows(rows).unwrap()
}

/// Components and EVR against a Jacobi eigendecomposition of the sample
/// covariance, on 50 random matrices.
pub fn pca_oracle(seed: u64) -> Check {
    let mut r = rng(seed);
    let (mut comp_err, mut evr_err, mut sum_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let rows = r.random_range(2..=30);
        let dim = r.random_range(1..=10);
        // anisotropic columns keep the spectrum well separated
        let scales: Vec<f64> = (0..dim).map(|_| r.random_range(0.1..5.0)).collect();
        let x: Vec<Vec<f64>> = (0..rows)
            .map(|_| scales.iter().map(|s| s * gaussian(&mut r) + 3.0).collect())
            .collect();
        let n = rows.min(dim);
        let model = pca_fit(&matrix(&x), n).unwrap();
        let (values, vectors) = jacobi_eigen(&covariance(&x));
        let trace: f64 = values.iter().sum();
        let ratios = evr(&model).unwrap();
        for i in 0..n {
            let oracle = values[i].max(0.0) / trace;
            evr_err = evr_err.max((ratios[i] - oracle).abs());
        }
        // components are only defined where the variance is nonzero
        let rank = (rows - 1).min(dim);
        for (i, oracle) in vectors.iter().enumerate().take(rank) {
            let got = model.component(i);
            let sign = if got.iter().zip(oracle).map(|(a, b)| a * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            for (a, b) in got.iter().zip(oracle) {
                comp_err = comp_err.max((a - sign * b).abs());
            }
        }
        if rows > dim {
            sum_err = sum_err.max((ratios.iter().sum::<f64>() - 1.0).abs());
        }
    }
    Check {
        pass: comp_err <= 1e-8 && evr_err <= 1e-8 && sum_err <= 1e-9,
        detail: format!("max component err {comp_err:.2e}, max EVR err {evr_err:.2e}, max |sum EVR - 1| {sum_err:.2e}"),
    }
}

pub fn gradient_check() -> Check {
    let worst = max_gradient_error(tiny_arch(), 1);
    Check {
        pass: worst < 1e-4,
        detail: format!("max relative error {worst:.2e}"),
    }
}

fn blobs(r: &mut rand_chacha::ChaCha8Rng, centers: &[[f64; 2]], per: usize, spread: f64) -> (Vec<Vec<f64>>, Vec<u32>) {
    let mut pts = Vec::new();
    let mut truth = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per {
            pts.push(vec![center[0] + spread * gaussian(r), center[1] + spread * gaussian(r)]);
            truth.push(c as u32);
        }
    }
    (pts, truth)
}

/// Monotone inertia over 100 runs, blob recovery over 100 seeds, and the
/// global optimum on well-separated six-point sets.
pub fn kmeans_properties(seed: u64) -> Check {
    let mut monotone = 0;
    for s in 0..100u64 {
        let mut r = rng(seed ^ (s * 7919));
        let n = r.random_range(10..60);
        let dim = r.random_range(1..4);
        let k = r.random_range(2..6);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| gaussian(&mut r)).collect()).collect();
        let x = matrix(&x);
        let init = kmeanspp_init(&x, k, s).unwrap();
        let fit = lloyd(&x, &init, 300, 0.0, s).unwrap();
        if fit.inertia_trace.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        }
    }

    let mut recovered = 0;
    for s in 0..100u64 {
        let mut r = rng(seed.wrapping_add(1000 + s));
        let (pts, truth) = blobs(&mut r, &[[0.0, 0.0], [6.0, 0.0], [3.0, 5.0]], 40, 0.5);
        let fit = kmeans(&matrix(&pts), 3, &KMeansConfig { seed: s, ..Default::default() }).unwrap();
        if eval::nmi(&truth, &fit.assignments).unwrap() > 1.0 - 1e-9 {
            recovered += 1;
        }
    }

    let mut optimal = 0;
    let mut configs = 0;
    for s in 0..20u64 {
        let mut r = rng(seed.wrapping_add(5000 + s));
        let k = 2 + (s % 2) as usize;
        let centers: Vec<[f64; 2]> = (0..k).map(|c| [20.0 * c as f64, 10.0 * (c % 2) as f64]).collect();
        let (pts, _) = blobs(&mut r, &centers, 6 / k, 0.3);
        let best = brute_kmeans_inertia(&pts, k);
        let fit = kmeans(&matrix(&pts), k, &KMeansConfig { seed: s, ..Default::default() }).unwrap();
        configs += 1;
        if (fit.inertia - best).abs() <= 1e-9 * best.max(1.0) {
            optimal += 1;
        }
    }
    Check {
        pass: monotone == 100 && recovered >= 95 && optimal == configs,
        detail: format!("monotone {monotone}/100, recovered {recovered}/100, global optimum {optimal}/{configs}"),
    }
}

fn random_dissimilarity(r: &mut rand_chacha::ChaCha8Rng, n: usize, ties: bool) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = if ties { r.random_range(1..5) as f64 } else { r.random_range(0.01..10.0) };
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// iVAT against exhaustive minimax paths; every third matrix has heavy ties.
pub fn ivat_oracle(seed: u64) -> Check {
    let mut r = rng(seed);
    let mut exact = 0;
    for t in 0..100 {
        let n = r.random_range(2..=7);
        let d = random_dissimilarity(&mut r, n, t % 3 == 0);
        let m = DissimilarityMatrix::new(n, d.concat()).unwrap();
        let v = eval::vat(&m, true).unwrap();
        let ivat = v.ivat.unwrap();
        let p = &v.permutation;
        let ok = (0..n).all(|a| (0..n).all(|b| ivat.get(a, b) == minimax_all_paths(&d, p[a], p[b])));
        exact += usize::from(ok);
    }
    Check {
        pass: exact == 100,
        detail: format!("{exact}/100 matrices match exactly"),
    }
}

pub fn silhouette_oracle(seed: u64) -> Check {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(3..=100);
        let dim = r.random_range(1..=3);
        let k = r.random_range(2..=n.min(6)) as u32;
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| gaussian(&mut r)).collect()).collect();
        let mut labels: Vec<u32> = (0..n).map(|_| r.random_range(0..k)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let got = eval::silhouette(&DissimilarityMatrix::from_features(&matrix(&pts)), &labels).unwrap();
        worst = worst.max((got - brute_silhouette(&pts, &labels)).abs());
    }
    let line: Vec<Vec<f64>> = [0.0, 1.0, 10.0, 11.0].iter().map(|&v| vec![v]).collect();
    let pair = eval::silhouette(&DissimilarityMatrix::from_features(&matrix(&line)), &[0, 0, 1, 1]).unwrap();
    // (2·(1 − 1/10.5) + 2·(1 − 1/9.5)) / 4
    let expected = 0.899_749_373_433_583_9;
    Check {
        pass: worst <= 1e-9 && (pair - expected).abs() <= 1e-6,
        detail: format!("max err vs brute force {worst:.2e}, {{0,1,10,11}} -> {pair:.6}"),
    }
}

/// Tile counts for random recording lengths, the full-scale count, and an
/// actual segmentation of a small recording.
pub fn segmentation_arithmetic(seed: u64) -> Check {
    let mut r = rng(seed);
    let mut ok = true;
    for _ in 0..200 {
        let steps = r.random_range(0..10_000_000usize);
        let g = tile_grid(1024, steps, 128).unwrap();
        ok &= g.count() == 8 * (steps / 128);
    }
    let full = tile_grid(1024, 52_988 * 128, 128).unwrap().count();
    let psd = PsdMatrix::from_fn(70, 45, |b, t| (b * 45 + t) as f32).unwrap();
    let cut = segment(&psd, 8).unwrap().len();
    ok &= cut == (70 / 8) * (45 / 8);
    Check {
        pass: ok && full == 423_904,
        detail: format!("random lengths consistent: {ok}, 52988*128 steps -> {full} tiles, 70x45/8 -> {cut}"),
    }
}

pub fn cli(args: &[&str]) -> i32 {
    spectrum_dc::cli::run(args.iter().copied())
}

/// Reads `key,value` pairs from a summary file.
pub fn summary(path: &std::path::Path) -> std::collections::BTreeMap<String, String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once(',').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

/// Edge-attenuated sub-bands under the k = 3 PCA baseline: overall
/// silhouette, and for each attenuated band the share of its majority
/// cluster that comes from that band (purity) and the share of the band
/// that lands there (coverage).
pub fn edge_band_baseline(out: &std::path::Path, seed: u64) -> Check {
    let out_s = out.to_str().unwrap();
    let seed_s = seed.to_string();
    let g = ["--out", out_s, "--seed", &seed_s];
    let synth = cli(&[&g[..], &["synth", "--preset", "edge-bands", "--window", "32"]].concat());
    let tiles = out.join("synth/tiles.sptl");
    let base = cli(&[&g[..], &["baseline", "--tiles", tiles.to_str().unwrap(), "--k-min", "3", "--k-max", "3"]].concat());
    if synth != 0 || base != 0 {
        return Check {
            pass: false,
            detail: format!("commands exited with {synth} and {base}"),
        };
    }
    let sil: f64 = summary(&out.join("baseline/summary.csv"))["best_silhouette"].parse().unwrap();
    let hist: Vec<Vec<u64>> = std::fs::read_to_string(out.join("baseline/band_histogram.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    let bands = hist[0].len();
    let mut ok = sil >= 0.5;
    let mut parts = vec![format!("silhouette {sil:.4}")];
    let mut homes = Vec::new();
    for band in [0, bands - 1] {
        let (home, count) = hist.iter().enumerate().map(|(c, row)| (c, row[band])).max_by_key(|&(_, n)| n).unwrap();
        let cluster_size: u64 = hist[home].iter().sum();
        let band_size: u64 = hist.iter().map(|row| row[band]).sum();
        let purity = count as f64 / cluster_size as f64;
        let coverage = count as f64 / band_size as f64;
        ok &= purity >= 0.9 && coverage >= 0.9;
        homes.push(home);
        parts.push(format!("band {band}: cluster {home}, purity {purity:.3}, coverage {coverage:.3}"));
    }
    ok &= homes[0] != homes[1];
    Check {
        pass: ok,
        detail: parts.join("; "),
    }
}
