//! PSD recordings, spectrogram tiling and normalization, the synthetic
//! spectrum generator, and the SPSD / SPTL / labels file formats.

mod labels;
mod psd;
mod synth;
mod tiles;
pub(crate) mod wire;

pub use labels::{labels_to_csv, load_labels, parse_labels, save_labels};
pub use psd::{load_psd, save_psd, PsdMatrix, PsdMeta};
pub use synth::{
    synth_generate, ActivityKind, BandRolloff, ClassSpec, Edge, SynthConfig, SynthOutput,
};
pub use tiles::{
    load_tiles, normalize, save_tiles, segment, tile_grid, Tile, TileGrid, TileSet,
    SPTL_HEADER_LEN, SPTL_TILE_HEADER_LEN,
};
