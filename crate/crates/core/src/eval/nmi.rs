use std::collections::BTreeMap;

use crate::{Error, Result};

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information, normalized by the arithmetic mean of the
/// two entropies. Two single-cluster labelings score 1; a single-cluster
/// labeling against a varied one scores 0.
pub fn nmi(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "labelings of length {} and {} cannot be compared",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let mut ca: BTreeMap<u32, usize> = BTreeMap::new();
    let mut cb: BTreeMap<u32, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    if ca.len() == 1 && cb.len() == 1 {
        return Ok(1.0);
    }
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    // ordered maps keep every sum in a fixed order
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c as f64 / n;
            let px = ca[&x] as f64 / n;
            let py = cb[&y] as f64 / n;
            pxy * (pxy / (px * py)).ln()
        })
        .sum();
    Ok((mi / ((ha + hb) / 2.0)).clamp(0.0, 1.0))
}
