//! Clustering tendency and quality measures.

mod content;
mod distance;
mod nmi;
mod render;
mod silhouette;
mod vat;

pub use content::{average_spectrogram, band_histogram};
pub use distance::{pairwise_distances, subsample_indices, DissimilarityMatrix};
pub use nmi::nmi;
pub use render::{parse_pgm, render_matrix, to_pgm};
pub use silhouette::{silhouette, silhouette_features, silhouette_samples};
pub use vat::{ivat_transform, vat, vat_order, VatResult};

/// Default number of samples drawn for VAT/iVAT images.
pub const DEFAULT_VAT_SUBSAMPLE: usize = 500;
/// Default number of samples drawn for silhouette scores.
pub const DEFAULT_SILHOUETTE_SUBSAMPLE: usize = 5000;
