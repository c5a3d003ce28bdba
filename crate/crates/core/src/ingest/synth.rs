//! Labeled synthetic spectrum generator.
//!
//! Each class renders a distinct activity pattern on top of Gaussian
//! background noise (all in dBm): narrowband lines that stay on for part of
//! the window, short dot-like bursts, empty spectrum, or a background whose
//! gain rolls off toward the low-frequency edge of the tile. Tiles are laid
//! out on a `bands × windows` grid so the output can also be assembled into
//! a full PSD recording, optionally with per-band edge roll-off mimicking a
//! sensor with non-uniform sensitivity across its bandwidth.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::psd::PsdMatrix;
use super::tiles::{Tile, TileGrid, TileSet};
use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivityKind {
    LineBurst,
    DotBurst,
    NoiseOnly,
    EdgeAttenuated,
}

impl fmt::Display for ActivityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActivityKind::LineBurst => "line_burst",
            ActivityKind::DotBurst => "dot_burst",
            ActivityKind::NoiseOnly => "noise_only",
            ActivityKind::EdgeAttenuated => "edge_attenuated",
        })
    }
}

impl FromStr for ActivityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line_burst" => Ok(ActivityKind::LineBurst),
            "dot_burst" => Ok(ActivityKind::DotBurst),
            "noise_only" => Ok(ActivityKind::NoiseOnly),
            "edge_attenuated" => Ok(ActivityKind::EdgeAttenuated),
            other => Err(Error::Config(format!("unknown activity kind {other:?}"))),
        }
    }
}

/// One synthetic class. `snr_db` is the burst power above the noise floor,
/// or the roll-off depth for [`ActivityKind::EdgeAttenuated`]. `duty_cycle`
/// is the fraction of the window a line stays on, or the dot density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSpec {
    pub kind: ActivityKind,
    pub snr_db: f64,
    pub duty_cycle: f64,
}

impl ClassSpec {
    pub fn new(kind: ActivityKind, snr_db: f64, duty_cycle: f64) -> Self {
        ClassSpec { kind, snr_db, duty_cycle }
    }
}

/// Parses `kind:snr_db:duty_cycle`, e.g. `line_burst:12:0.5`.
impl FromStr for ClassSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!("class spec {s:?} is not kind:snr_db:duty_cycle")));
        }
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number {v:?} in class spec {s:?}")))
        };
        Ok(ClassSpec {
            kind: parts[0].parse()?,
            snr_db: num(parts[1])?,
            duty_cycle: num(parts[2])?,
        })
    }
}

impl fmt::Display for ClassSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.kind, self.snr_db, self.duty_cycle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Low,
    High,
}

/// Gain roll-off applied to every tile of one sub-band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandRolloff {
    pub band: usize,
    pub edge: Edge,
    pub depth_db: f64,
}

/// Parses `band:low|high:depth_db`, e.g. `0:low:15`.
impl FromStr for BandRolloff {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("band roll-off {s:?} is not band:low|high:depth_db"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let edge = match parts[1] {
            "low" => Edge::Low,
            "high" => Edge::High,
            _ => return Err(bad()),
        };
        Ok(BandRolloff {
            band: parts[0].parse().map_err(|_| bad())?,
            edge,
            depth_db: parts[2].parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub window: usize,
    pub tiles_per_class: usize,
    pub classes: Vec<ClassSpec>,
    pub noise_floor_dbm: f64,
    pub noise_std_db: f64,
    /// Sub-bands of the assembled recording; the tile count must divide evenly.
    pub bands: usize,
    pub rolloff: Vec<BandRolloff>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            window: 32,
            tiles_per_class: 100,
            classes: vec![
                ClassSpec::new(ActivityKind::NoiseOnly, 0.0, 0.0),
                ClassSpec::new(ActivityKind::LineBurst, 12.0, 0.6),
                ClassSpec::new(ActivityKind::DotBurst, 12.0, 0.25),
                ClassSpec::new(ActivityKind::EdgeAttenuated, 12.0, 0.0),
            ],
            noise_floor_dbm: -110.0,
            noise_std_db: 2.0,
            bands: 1,
            rolloff: Vec::new(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Six content classes that differ in burst shape rather than in
    /// overall brightness: empty spectrum, short and long narrowband lines,
    /// sparse and dense dot bursts, and edge-attenuated background.
    pub fn six_class(window: usize, tiles_per_class: usize, seed: u64) -> Self {
        SynthConfig {
            window,
            tiles_per_class,
            classes: vec![
                ClassSpec::new(ActivityKind::NoiseOnly, 0.0, 0.0),
                ClassSpec::new(ActivityKind::LineBurst, 10.0, 0.3),
                ClassSpec::new(ActivityKind::LineBurst, 10.0, 1.0),
                ClassSpec::new(ActivityKind::DotBurst, 10.0, 0.1),
                ClassSpec::new(ActivityKind::DotBurst, 10.0, 0.4),
                ClassSpec::new(ActivityKind::EdgeAttenuated, 8.0, 0.0),
            ],
            noise_floor_dbm: -110.0,
            noise_std_db: 2.0,
            bands: 1,
            rolloff: Vec::new(),
            seed,
        }
    }

    /// An eight-band recording whose outermost bands fade toward the edges
    /// of the spectrum, carrying a mix of line, dot and empty tiles.
    pub fn edge_bands(window: usize, windows_per_band: usize, seed: u64) -> Self {
        let bands = 8;
        let classes = vec![
            ClassSpec::new(ActivityKind::NoiseOnly, 0.0, 0.0),
            ClassSpec::new(ActivityKind::LineBurst, 10.0, 0.5),
            ClassSpec::new(ActivityKind::DotBurst, 10.0, 0.25),
            ClassSpec::new(ActivityKind::LineBurst, 10.0, 1.0),
        ];
        SynthConfig {
            window,
            tiles_per_class: bands * windows_per_band / classes.len(),
            classes,
            noise_floor_dbm: -110.0,
            noise_std_db: 2.0,
            bands,
            rolloff: vec![
                BandRolloff { band: 0, edge: Edge::Low, depth_db: 25.0 },
                BandRolloff { band: bands - 1, edge: Edge::High, depth_db: 25.0 },
            ],
            seed,
        }
    }

    pub fn total_tiles(&self) -> usize {
        self.tiles_per_class * self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.window < 2 || self.window > u16::MAX as usize {
            return fail(format!("window {} outside [2, 65535]", self.window));
        }
        if !self.noise_floor_dbm.is_finite() {
            return fail("noise floor must be finite".into());
        }
        if !(self.noise_std_db.is_finite() && self.noise_std_db >= 0.0) {
            return fail(format!("noise std {} must be finite and >= 0", self.noise_std_db));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if !(0.0..=1.0).contains(&c.duty_cycle) {
                return fail(format!("class {i}: duty cycle {} outside [0, 1]", c.duty_cycle));
            }
            if !c.snr_db.is_finite() {
                return fail(format!("class {i}: snr must be finite"));
            }
        }
        if self.bands == 0 || self.bands > u16::MAX as usize + 1 {
            return fail(format!("band count {} outside [1, 65536]", self.bands));
        }
        if self.total_tiles() % self.bands != 0 {
            return fail(format!(
                "{} tiles cannot be split evenly over {} bands",
                self.total_tiles(),
                self.bands
            ));
        }
        for r in &self.rolloff {
            if r.band >= self.bands {
                return fail(format!("roll-off band {} >= band count {}", r.band, self.bands));
            }
            if !(r.depth_db.is_finite() && r.depth_db >= 0.0) {
                return fail(format!("roll-off depth {} must be finite and >= 0", r.depth_db));
            }
        }
        Ok(())
    }
}

/// Generated tiles (raw dBm) with their class labels, index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub tiles: TileSet,
    pub labels: Vec<u32>,
    pub grid: TileGrid,
}

impl SynthOutput {
    /// Assembles the tile grid into a recording; segmenting the result with
    /// the same window reproduces `tiles` exactly.
    pub fn to_psd(&self) -> Result<PsdMatrix> {
        let w = self.tiles.window();
        let bins = self.grid.bands.max(1) * w;
        let steps = self.grid.windows * w;
        let mut values = vec![0.0f32; bins * steps];
        for tile in self.tiles.tiles() {
            let (b, t) = (tile.band_index as usize, tile.time_index as usize);
            for i in 0..w {
                let row = (b * w + i) * steps + t * w;
                values[row..row + w].copy_from_slice(&tile.pixels[i * w..(i + 1) * w]);
            }
        }
        PsdMatrix::new(bins, steps, values)
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let total = cfg.total_tiles();
    let grid = TileGrid {
        bands: cfg.bands,
        windows: total / cfg.bands,
    };
    let mut rng = rng::seeded(cfg.seed);
    let mut labels: Vec<u32> = (0..cfg.classes.len() as u32)
        .flat_map(|c| std::iter::repeat_n(c, cfg.tiles_per_class))
        .collect();
    labels.shuffle(&mut rng);

    let noise = Normal::new(0.0, cfg.noise_std_db).expect("validated std");
    let mut tiles = Vec::with_capacity(total);
    for (slot, &label) in labels.iter().enumerate() {
        let band = slot / grid.windows;
        let time = slot % grid.windows;
        let mut pixels = render_class(&cfg.classes[label as usize], cfg, &noise, &mut rng);
        for r in cfg.rolloff.iter().filter(|r| r.band == band) {
            apply_rolloff(&mut pixels, cfg.window, r.edge, r.depth_db);
        }
        tiles.push(Tile {
            pixels: pixels.into_iter().map(|p| p as f32).collect(),
            time_index: time as u32,
            band_index: band as u16,
        });
    }
    Ok(SynthOutput {
        tiles: TileSet::new(cfg.window, tiles, None)?,
        labels,
        grid,
    })
}

fn render_class(class: &ClassSpec, cfg: &SynthConfig, noise: &Normal<f64>, rng: &mut Rng) -> Vec<f64> {
    let w = cfg.window;
    let floor = cfg.noise_floor_dbm;
    let mut px: Vec<f64> = (0..w * w).map(|_| floor + noise.sample(rng)).collect();
    let burst = |rng: &mut Rng| floor + class.snr_db + 0.5 * noise.sample(rng);
    match class.kind {
        ActivityKind::NoiseOnly => {}
        ActivityKind::LineBurst => {
            let lines = rng.random_range(1..=2);
            let len = ((class.duty_cycle * w as f64).round() as usize).clamp(1, w);
            for _ in 0..lines {
                let row = rng.random_range(0..w);
                let start = rng.random_range(0..=w - len);
                for j in start..start + len {
                    px[row * w + j] = burst(rng);
                }
            }
        }
        ActivityKind::DotBurst => {
            let dots = ((class.duty_cycle * w as f64).round() as usize).max(1);
            for _ in 0..dots {
                let h = rng.random_range(1..=2usize).min(w);
                let len = rng.random_range(2..=3usize).min(w);
                let r0 = rng.random_range(0..=w - h);
                let c0 = rng.random_range(0..=w - len);
                for i in r0..r0 + h {
                    for j in c0..c0 + len {
                        px[i * w + j] = burst(rng);
                    }
                }
            }
        }
        ActivityKind::EdgeAttenuated => apply_rolloff(&mut px, w, Edge::Low, class.snr_db),
    }
    px
}

/// Quadratic gain roll-off along the frequency rows: `-depth` dB at the
/// given edge, 0 dB at the opposite one.
fn apply_rolloff(px: &mut [f64], w: usize, edge: Edge, depth_db: f64) {
    for i in 0..w {
        let pos = i as f64 / (w - 1) as f64;
        let dist = match edge {
            Edge::Low => 1.0 - pos,
            Edge::High => pos,
        };
        let gain = -depth_db * dist * dist;
        for v in &mut px[i * w..(i + 1) * w] {
            *v += gain;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::segment;

    #[test]
    fn zero_tiles_per_class_is_empty() {
        let cfg = SynthConfig { tiles_per_class: 0, ..SynthConfig::default() };
        let out = synth_generate(&cfg).unwrap();
        assert!(out.tiles.is_empty());
        assert!(out.labels.is_empty());
    }

    #[test]
    fn label_histogram_matches_class_counts() {
        let cfg = SynthConfig { tiles_per_class: 50, ..SynthConfig::default() };
        let out = synth_generate(&cfg).unwrap();
        assert_eq!(out.tiles.len(), 200);
        let mut hist = [0usize; 4];
        for &l in &out.labels {
            hist[l as usize] += 1;
        }
        assert_eq!(hist, [50, 50, 50, 50]);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = SynthConfig { tiles_per_class: 10, seed: 99, ..SynthConfig::default() };
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        assert_eq!(a.tiles.to_bytes(), b.tiles.to_bytes());
        assert_eq!(a.labels, b.labels);
        let c = synth_generate(&SynthConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.tiles.to_bytes(), c.tiles.to_bytes());
    }

    #[test]
    fn assembled_recording_segments_back_to_tiles() {
        let cfg = SynthConfig::edge_bands(16, 4, 3);
        let out = synth_generate(&cfg).unwrap();
        let psd = out.to_psd().unwrap();
        assert_eq!(psd.bins(), 8 * 16);
        assert_eq!(psd.steps(), 4 * 16);
        assert_eq!(segment(&psd, 16).unwrap(), out.tiles);
    }

    #[test]
    fn rolloff_darkens_the_chosen_edge() {
        let cfg = SynthConfig {
            classes: vec![ClassSpec::new(ActivityKind::NoiseOnly, 0.0, 0.0)],
            tiles_per_class: 2,
            noise_std_db: 0.0,
            bands: 2,
            rolloff: vec![BandRolloff { band: 1, edge: Edge::High, depth_db: 20.0 }],
            window: 8,
            ..SynthConfig::default()
        };
        let out = synth_generate(&cfg).unwrap();
        let flat = &out.tiles.tiles()[0].pixels;
        let faded = &out.tiles.tiles()[1].pixels;
        assert!(flat.iter().all(|&p| p == -110.0));
        assert_eq!(faded[0], -110.0);
        assert_eq!(faded[63], -130.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_duty = SynthConfig {
            classes: vec![ClassSpec::new(ActivityKind::LineBurst, 10.0, 1.5)],
            ..SynthConfig::default()
        };
        assert!(matches!(synth_generate(&bad_duty), Err(Error::Config(_))));
        let uneven = SynthConfig { tiles_per_class: 3, bands: 8, ..SynthConfig::default() };
        assert!(matches!(synth_generate(&uneven), Err(Error::Config(_))));
        let bad_window = SynthConfig { window: 1, ..SynthConfig::default() };
        assert!(matches!(synth_generate(&bad_window), Err(Error::Config(_))));
    }

    #[test]
    fn class_spec_parses() {
        let c: ClassSpec = "dot_burst:9.5:0.25".parse().unwrap();
        assert_eq!(c, ClassSpec::new(ActivityKind::DotBurst, 9.5, 0.25));
        assert_eq!(c.to_string().parse::<ClassSpec>().unwrap(), c);
        assert!("sine:1:1".parse::<ClassSpec>().is_err());
        let r: BandRolloff = "7:high:12".parse().unwrap();
        assert_eq!(r.edge, Edge::High);
    }
}
