//! Independent reference implementations used by the integration tests.
//! Each one follows the textbook definition as directly as possible and
//! shares no code with the library.

#![allow(dead_code)]

pub mod checks;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectrum_dc::cnn::{ArchKind, Architecture, Stage, Stem};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u: f64 = r.random_range(f64::EPSILON..1.0);
    let v: f64 = r.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

/// Sample covariance (divisor n − 1) of row vectors.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut c = vec![vec![0.0; d]; d];
    for r in rows {
        for a in 0..d {
            for b in 0..d {
                c[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    for row in &mut c {
        for v in row.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }
    c
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in descending order with unit eigenvectors (as rows).
pub fn jacobi_eigen(m: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.len();
    let mut a = m.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y][y].total_cmp(&a[x][x]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Silhouette straight from its definition, on points. Singleton clusters
/// score 0.
pub fn brute_silhouette(points: &[Vec<f64>], labels: &[u32]) -> f64 {
    let n = points.len();
    let mut clusters: Vec<u32> = labels.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    let mut total = 0.0;
    for i in 0..n {
        let mean_to = |c: u32| {
            let others: Vec<f64> = (0..n)
                .filter(|&j| j != i && labels[j] == c)
                .map(|j| euclid(&points[i], &points[j]))
                .collect();
            (others.iter().sum::<f64>() / others.len() as f64, others.len())
        };
        let (a, same) = mean_to(labels[i]);
        if same == 0 {
            continue;
        }
        let b = clusters
            .iter()
            .filter(|&&c| c != labels[i])
            .map(|&c| mean_to(c).0)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    total / n as f64
}

/// Minimax path distance between `s` and `t`: the smallest possible largest
/// edge over every simple path, found by exhaustive enumeration.
pub fn minimax_all_paths(d: &[Vec<f64>], s: usize, t: usize) -> f64 {
    fn walk(d: &[Vec<f64>], at: usize, t: usize, seen: &mut Vec<bool>, worst: f64, best: &mut f64) {
        if at == t {
            *best = best.min(worst);
            return;
        }
        for next in 0..d.len() {
            if !seen[next] {
                seen[next] = true;
                walk(d, next, t, seen, worst.max(d[at][next]), best);
                seen[next] = false;
            }
        }
    }
    if s == t {
        return 0.0;
    }
    let mut seen = vec![false; d.len()];
    seen[s] = true;
    let mut best = f64::INFINITY;
    walk(d, s, t, &mut seen, 0.0, &mut best);
    best
}

/// Lowest k-means objective over every partition of `points` into `k`
/// non-empty groups.
pub fn brute_kmeans_inertia(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    loop {
        let mut used = vec![false; k];
        labels.iter().for_each(|&l| used[l] = true);
        if used.iter().all(|&u| u) {
            let mut cost = 0.0;
            for c in 0..k {
                let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
                let dim = members[0].len();
                let mean: Vec<f64> = (0..dim).map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64).collect();
                cost += members.iter().map(|p| euclid(p, &mean).powi(2)).sum::<f64>();
            }
            best = best.min(cost);
        }
        // next labeling in base k
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

/// Two-stage residual net small enough for exhaustive gradient checks.
pub fn tiny_arch() -> Architecture {
    Architecture {
        kind: ArchKind::Custom,
        window: 8,
        stem: Stem {
            channels: 2,
            kernel: 3,
            stride: 1,
            pad: 1,
            maxpool: false,
        },
        stages: vec![
            Stage {
                channels: 2,
                stride: 1,
                blocks: 1,
            },
            Stage {
                channels: 4,
                stride: 2,
                blocks: 1,
            },
        ],
        classes: 3,
    }
}

/// Largest relative error between analytic and central-difference
/// gradients of the training loss, over every parameter. Relative errors
/// use a floor of 1e-8 on the magnitude.
pub fn max_gradient_error(arch: Architecture, seed: u64) -> f64 {
    use spectrum_dc::cnn::CnnModel;
    let mut m = CnnModel::<f64>::new(arch, seed).unwrap();
    let w = m.window();
    let batch = 3;
    let x: Vec<f32> = (0..batch * w * w).map(|i| ((i * 37 % 101) as f32) / 101.0).collect();
    let labels = [0, 2, 1];
    let (_, grads) = m.loss_and_grads(&x, &labels).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for p in 0..m.params().len() {
        for j in 0..m.params()[p].data.len() {
            let orig = m.params()[p].data[j];
            m.param_data_mut(p)[j] = orig + h;
            let up = m.batch_loss(&x, &labels).unwrap();
            m.param_data_mut(p)[j] = orig - h;
            let down = m.batch_loss(&x, &labels).unwrap();
            m.param_data_mut(p)[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[p][j];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}
