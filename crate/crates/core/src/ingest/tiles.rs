use std::path::Path;

use super::psd::PsdMatrix;
use super::wire::{self, Reader};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"SPTL";
const VERSION: u32 = 1;
/// magic, version, tile_count, W, gmin, gmax
pub const SPTL_HEADER_LEN: usize = 4 + 4 + 4 + 2 + 4 + 4;
/// time_index, band_index
pub const SPTL_TILE_HEADER_LEN: usize = 4 + 2;

/// One W×W spectrogram crop. Row `i` is frequency bin `band·W + i`, column
/// `j` is time step `time·W + j` of the source recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub pixels: Vec<f32>,
    pub time_index: u32,
    pub band_index: u16,
}

/// An ordered tile collection sharing one window size. Tiles produced by
/// [`segment`] are ordered band-major, then by time.
#[derive(Debug, Clone, PartialEq)]
pub struct TileSet {
    window: usize,
    tiles: Vec<Tile>,
    /// Global (min, max) in dBm used by [`normalize`]; `None` while pixels
    /// are still raw dBm.
    norm_bounds: Option<(f32, f32)>,
}

/// Tile counts along frequency (`bands`) and time (`windows`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileGrid {
    pub bands: usize,
    pub windows: usize,
}

impl TileGrid {
    pub fn count(&self) -> usize {
        self.bands * self.windows
    }
}

/// Grid produced by segmenting `bins × steps` with square windows; trailing
/// rows and columns that do not fill a whole window are dropped.
pub fn tile_grid(bins: usize, steps: usize, window: usize) -> Result<TileGrid> {
    if window < 2 {
        return Err(Error::Config(format!("window must be at least 2, got {window}")));
    }
    Ok(TileGrid {
        bands: bins / window,
        windows: steps / window,
    })
}

impl TileSet {
    pub fn new(window: usize, tiles: Vec<Tile>, norm_bounds: Option<(f32, f32)>) -> Result<Self> {
        if window < 2 || window > u16::MAX as usize {
            return Err(Error::Config(format!("window {window} outside [2, 65535]")));
        }
        if let Some(t) = tiles.iter().find(|t| t.pixels.len() != window * window) {
            return Err(Error::Shape(format!(
                "tile ({}, {}) has {} pixels, expected {}",
                t.band_index,
                t.time_index,
                t.pixels.len(),
                window * window
            )));
        }
        Ok(TileSet {
            window,
            tiles,
            norm_bounds,
        })
    }

    pub fn empty(window: usize) -> Result<Self> {
        Self::new(window, Vec::new(), None)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn norm_bounds(&self) -> Option<(f32, f32)> {
        self.norm_bounds
    }

    /// Number of sub-bands spanned by the set (largest band index + 1).
    pub fn num_bands(&self) -> usize {
        self.tiles.iter().map(|t| t.band_index as usize + 1).max().unwrap_or(0)
    }

    pub fn subset(&self, indices: &[usize]) -> TileSet {
        TileSet {
            window: self.window,
            tiles: indices.iter().map(|&i| self.tiles[i].clone()).collect(),
            norm_bounds: self.norm_bounds,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let per_tile = SPTL_TILE_HEADER_LEN + self.window * self.window * 4;
        let mut out = Vec::with_capacity(SPTL_HEADER_LEN + self.tiles.len() * per_tile);
        out.extend_from_slice(MAGIC);
        wire::put_u32(&mut out, VERSION);
        wire::put_u32(&mut out, self.tiles.len() as u32);
        wire::put_u16(&mut out, self.window as u16);
        let (gmin, gmax) = self.norm_bounds.unwrap_or((f32::NAN, f32::NAN));
        wire::put_f32(&mut out, gmin);
        wire::put_f32(&mut out, gmax);
        for t in &self.tiles {
            wire::put_u32(&mut out, t.time_index);
            wire::put_u16(&mut out, t.band_index);
            wire::put_f32s(&mut out, t.pixels.iter().copied());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "SPTL");
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("SPTL version {version} is not supported")));
        }
        let count = r.u32()? as usize;
        let window = r.u16()? as usize;
        let gmin = r.f32()?;
        let gmax = r.f32()?;
        if window < 2 {
            return Err(Error::Format(format!("SPTL window {window} is below 2")));
        }
        let per_tile = SPTL_TILE_HEADER_LEN + window * window * 4;
        if r.remaining() != count.saturating_mul(per_tile) {
            return Err(Error::Format(format!(
                "SPTL declares {count} tiles of {per_tile} bytes but carries {} payload bytes",
                r.remaining()
            )));
        }
        let mut tiles = Vec::with_capacity(count);
        for _ in 0..count {
            let time_index = r.u32()?;
            let band_index = r.u16()?;
            let pixels = r.f32_vec(window * window)?;
            if pixels.iter().any(|p| !p.is_finite()) {
                return Err(Error::Data(format!(
                    "non-finite pixel in tile ({band_index}, {time_index})"
                )));
            }
            tiles.push(Tile {
                pixels,
                time_index,
                band_index,
            });
        }
        let norm_bounds = if gmin.is_nan() && gmax.is_nan() {
            None
        } else {
            Some((gmin, gmax))
        };
        Self::new(window, tiles, norm_bounds)
    }
}

/// Cuts the recording into non-overlapping `window × window` tiles. Tile
/// `(b, t)` covers bins `[bW, (b+1)W)` and steps `[tW, (t+1)W)`; remainders
/// are discarded, so a recording smaller than one window yields an empty set.
pub fn segment(psd: &PsdMatrix, window: usize) -> Result<TileSet> {
    let grid = tile_grid(psd.bins(), psd.steps(), window)?;
    if grid.bands > u16::MAX as usize + 1 || grid.windows > u32::MAX as usize + 1 {
        return Err(Error::Config(format!(
            "{} bands x {} windows exceeds the tile index range",
            grid.bands, grid.windows
        )));
    }
    let mut tiles = Vec::with_capacity(grid.count());
    for b in 0..grid.bands {
        for t in 0..grid.windows {
            let mut pixels = Vec::with_capacity(window * window);
            for i in 0..window {
                let bin = b * window + i;
                let start = bin * psd.steps() + t * window;
                pixels.extend_from_slice(&psd.values()[start..start + window]);
            }
            tiles.push(Tile {
                pixels,
                time_index: t as u32,
                band_index: b as u16,
            });
        }
    }
    debug_assert_eq!(tiles.len(), grid.count());
    TileSet::new(window, tiles, None)
}

/// Scales every pixel by the global min/max of the set into `[0, 1]`.
/// A constant-valued set maps to all zeros.
pub fn normalize(tiles: &TileSet) -> Result<TileSet> {
    if tiles.is_empty() {
        return Err(Error::EmptySet("cannot normalize an empty tile set".into()));
    }
    let (gmin, gmax) = tiles
        .tiles
        .iter()
        .flat_map(|t| t.pixels.iter())
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &p| {
            (lo.min(p), hi.max(p))
        });
    let lo = f64::from(gmin);
    let range = f64::from(gmax) - lo;
    let scale = |p: f32| -> f32 {
        if range > 0.0 {
            ((f64::from(p) - lo) / range) as f32
        } else {
            0.0
        }
    };
    let out = tiles
        .tiles
        .iter()
        .map(|t| Tile {
            pixels: t.pixels.iter().map(|&p| scale(p)).collect(),
            time_index: t.time_index,
            band_index: t.band_index,
        })
        .collect();
    TileSet::new(tiles.window, out, Some((gmin, gmax)))
}

pub fn save_tiles(tiles: &TileSet, path: impl AsRef<Path>) -> Result<()> {
    wire::write_file(path.as_ref(), &tiles.to_bytes())
}

pub fn load_tiles(path: impl AsRef<Path>) -> Result<TileSet> {
    TileSet::from_bytes(&wire::read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(bins: usize, steps: usize) -> PsdMatrix {
        PsdMatrix::from_fn(bins, steps, |b, t| -120.0 + (b * 7 + t * 3) as f32 * 0.01).unwrap()
    }

    #[test]
    fn full_scale_grid_counts() {
        assert_eq!(tile_grid(1024, 256, 128).unwrap().count(), 16);
        assert_eq!(tile_grid(1024, 52_988 * 128, 128).unwrap().count(), 423_904);
        assert_eq!(tile_grid(1024, 100, 128).unwrap().count(), 0);
    }

    #[test]
    fn segment_counts_and_order() {
        let set = segment(&ramp(1024, 256), 128).unwrap();
        assert_eq!(set.len(), 16);
        let order: Vec<(u16, u32)> = set.tiles().iter().map(|t| (t.band_index, t.time_index)).collect();
        assert_eq!(order[0], (0, 0));
        assert_eq!(order[1], (0, 1));
        assert_eq!(order[2], (1, 0));
        assert_eq!(order[15], (7, 1));
    }

    #[test]
    fn short_recording_gives_empty_set() {
        let set = segment(&ramp(1024, 100), 128).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn window_below_two_is_rejected() {
        assert!(matches!(segment(&ramp(8, 8), 1), Err(Error::Config(_))));
    }

    #[test]
    fn normalize_maps_global_range() {
        let tiles = vec![
            Tile { pixels: vec![-120.0, -90.0, -90.0, -90.0], time_index: 0, band_index: 0 },
            Tile { pixels: vec![-60.0, -75.0, -90.0, -105.0], time_index: 1, band_index: 0 },
        ];
        let set = TileSet::new(2, tiles, None).unwrap();
        let n = normalize(&set).unwrap();
        assert_eq!(n.norm_bounds(), Some((-120.0, -60.0)));
        assert_eq!(n.tiles()[0].pixels, vec![0.0, 0.5, 0.5, 0.5]);
        assert_eq!(n.tiles()[1].pixels, vec![1.0, 0.75, 0.5, 0.25]);
    }

    #[test]
    fn constant_set_normalizes_to_zero() {
        let set = TileSet::new(2, vec![Tile { pixels: vec![-80.0; 4], time_index: 0, band_index: 0 }], None).unwrap();
        let n = normalize(&set).unwrap();
        assert!(n.tiles()[0].pixels.iter().all(|&p| p == 0.0));
        assert_eq!(n.norm_bounds(), Some((-80.0, -80.0)));
    }

    #[test]
    fn normalize_empty_is_error() {
        assert!(matches!(normalize(&TileSet::empty(4).unwrap()), Err(Error::EmptySet(_))));
    }

    #[test]
    fn normalize_is_idempotent() {
        let once = normalize(&segment(&ramp(64, 96), 16).unwrap()).unwrap();
        let twice = normalize(&once).unwrap();
        assert_eq!(twice.norm_bounds(), Some((0.0, 1.0)));
        for (a, b) in once.tiles().iter().zip(twice.tiles()) {
            assert_eq!(a.pixels, b.pixels);
        }
    }

    #[test]
    fn sptl_file_size_and_round_trip() {
        let set = normalize(&segment(&ramp(1024, 256), 128).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sptl");
        save_tiles(&set, &path).unwrap();
        let size = std::fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(size, SPTL_HEADER_LEN + 16 * (SPTL_TILE_HEADER_LEN + 128 * 128 * 4));
        assert_eq!(load_tiles(&path).unwrap(), set);
    }

    #[test]
    fn raw_set_round_trips_without_bounds() {
        let set = segment(&ramp(16, 16), 8).unwrap();
        assert_eq!(TileSet::from_bytes(&set.to_bytes()).unwrap(), set);
    }

    #[test]
    fn empty_file_is_format_error() {
        assert!(matches!(TileSet::from_bytes(&[]), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_tile_file_is_format_error() {
        let bytes = segment(&ramp(16, 16), 8).unwrap().to_bytes();
        assert!(matches!(TileSet::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn segment_tiles_copy_exact_pixels(bins in 2usize..40, steps in 0usize..40, window in 2usize..9) {
            let psd = PsdMatrix::from_fn(bins, steps, |b, t| (b * 1000 + t) as f32).unwrap();
            let set = segment(&psd, window).unwrap();
            prop_assert_eq!(set.len(), (bins / window) * (steps / window));
            for tile in set.tiles() {
                let (b, t) = (tile.band_index as usize, tile.time_index as usize);
                for i in 0..window {
                    for j in 0..window {
                        prop_assert_eq!(tile.pixels[i * window + j], psd.get(b * window + i, t * window + j));
                    }
                }
            }
        }

        #[test]
        fn normalized_pixels_span_unit_interval(vals in proptest::collection::vec(-150.0f32..-20.0, 16..64)) {
            let n = vals.len() / 4 * 4;
            let tiles = vals[..n].chunks(4).enumerate()
                .map(|(i, c)| Tile { pixels: c.to_vec(), time_index: i as u32, band_index: 0 })
                .collect();
            let set = normalize(&TileSet::new(2, tiles, None).unwrap()).unwrap();
            let all: Vec<f32> = set.tiles().iter().flat_map(|t| t.pixels.iter().copied()).collect();
            prop_assert!(all.iter().all(|&p| (0.0..=1.0).contains(&p)));
            let (lo, hi) = set.norm_bounds().unwrap();
            if hi > lo {
                prop_assert_eq!(all.iter().copied().fold(f32::INFINITY, f32::min), 0.0);
                prop_assert_eq!(all.iter().copied().fold(f32::NEG_INFINITY, f32::max), 1.0);
            }
        }
    }
}
