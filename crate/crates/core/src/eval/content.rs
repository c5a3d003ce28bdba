//! Per-cluster views of tile content: where clusters sit along the band
//! axis and what their average tile looks like.

use crate::ingest::TileSet;
use crate::{Error, Result};

fn check_labels(tiles: &TileSet, labels: &[u32]) -> Result<()> {
    if labels.len() != tiles.len() {
        return Err(Error::Shape(format!("{} labels for {} tiles", labels.len(), tiles.len())));
    }
    Ok(())
}

/// Counts per cluster and band, `k × bands` row-major, where `k` is one more
/// than the largest label and `bands` one more than the largest band index.
pub fn band_histogram(tiles: &TileSet, labels: &[u32]) -> Result<(usize, usize, Vec<u64>)> {
    check_labels(tiles, labels)?;
    let k = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let bands = tiles.num_bands();
    let mut h = vec![0u64; k * bands];
    for (t, &l) in tiles.tiles().iter().zip(labels) {
        h[l as usize * bands + t.band_index as usize] += 1;
    }
    Ok((k, bands, h))
}

/// Pixel-wise mean of the tiles assigned to `cluster`.
pub fn average_spectrogram(tiles: &TileSet, labels: &[u32], cluster: u32) -> Result<Vec<f32>> {
    check_labels(tiles, labels)?;
    let mut sum = vec![0.0f64; tiles.window() * tiles.window()];
    let mut count = 0usize;
    for (t, _) in tiles.tiles().iter().zip(labels).filter(|(_, &l)| l == cluster) {
        count += 1;
        for (s, &p) in sum.iter_mut().zip(&t.pixels) {
            *s += p as f64;
        }
    }
    if count == 0 {
        return Err(Error::EmptyCluster(cluster));
    }
    Ok(sum.iter().map(|s| (s / count as f64) as f32).collect())
}
