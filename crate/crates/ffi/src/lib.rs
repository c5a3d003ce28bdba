//! C ABI over the spectrum-dc library.
//!
//! Objects cross the boundary as opaque handles created by `sdc_*_load`,
//! `sdc_*_new` or `sdc_*_fit` and released with the matching `sdc_*_free`.
//! Every fallible call returns an [`SdcStatus`]; on failure the message is
//! available from [`sdc_last_error`] on the same thread. Panics never cross
//! the boundary; they are reported as [`SdcStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use spectrum_dc::cnn::{load_checkpoint, CnnModel};
use spectrum_dc::ingest::{load_tiles, normalize, segment, tile_grid, PsdMatrix, TileSet};
use spectrum_dc::kmeans::{kmeans, KMeansConfig};
use spectrum_dc::pca::{components_for_variance, evr, flatten, pca_fit, pca_transform, PcaModel};
use spectrum_dc::{eval, Error, FeatureMatrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Version = 5,
    Shape = 6,
    Data = 7,
    Config = 8,
    EmptySet = 9,
    Degenerate = 10,
    MissingArtifact = 11,
    BufferTooSmall = 12,
    Panic = 13,
    Other = 14,
}

/// Normalized spectrogram tiles.
pub struct SdcTiles(TileSet);

/// A dense sample × feature matrix of doubles.
pub struct SdcFeatures(FeatureMatrix);

/// A fitted PCA projection.
pub struct SdcPca(PcaModel);

/// A trained CNN loaded from a checkpoint.
pub struct SdcModel(CnnModel<f32>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Fail {
    Status(SdcStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn status_of(e: &Error) -> SdcStatus {
    match e {
        Error::Io { .. } => SdcStatus::Io,
        Error::Format(_) => SdcStatus::Format,
        Error::Version { .. } => SdcStatus::Version,
        Error::Shape(_) | Error::LabelRange { .. } => SdcStatus::Shape,
        Error::Data(_) => SdcStatus::Data,
        Error::Config(_) => SdcStatus::Config,
        Error::EmptySet(_) => SdcStatus::EmptySet,
        Error::DegenerateData(_)
        | Error::DegenerateFeatures { .. }
        | Error::SingleCluster(_)
        | Error::EmptyCluster(_)
        | Error::InsufficientModel { .. } => SdcStatus::Degenerate,
        Error::MissingArtifact(_) => SdcStatus::MissingArtifact,
        _ => SdcStatus::Other,
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SdcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SdcStatus::Ok,
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            SdcStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(SdcStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail::Status(SdcStatus::InvalidArgument, msg.into())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_handle<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    out.write(Box::into_raw(Box::new(value)));
    Ok(())
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn copy_out<T: Copy>(src: &[T], dst: &mut [T]) -> Result<(), Fail> {
    if dst.len() < src.len() {
        return Err(Fail::Status(
            SdcStatus::BufferTooSmall,
            format!("buffer holds {} values, {} needed", dst.len(), src.len()),
        ));
    }
    dst[..src.len()].copy_from_slice(src);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next `sdc_*` call on the same thread.
#[no_mangle]
pub extern "C" fn sdc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sdc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of W×W tiles cut from a `bins × steps` recording.
///
/// # Safety
/// `out_count` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdc_tile_count(bins: usize, steps: usize, window: usize, out_count: *mut usize) -> SdcStatus {
    guard(|| put(out_count, tile_grid(bins, steps, window)?.count(), "out_count"))
}

/// Loads an SPTL tile file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdc_tiles_load(path: *const c_char, out: *mut *mut SdcTiles) -> SdcStatus {
    guard(|| put_handle(out, SdcTiles(load_tiles(path_arg(path)?)?)))
}

/// Segments a row-major `bins × steps` recording (dBm) into normalized tiles.
///
/// # Safety
/// `values` must point to `bins * steps` floats and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdc_tiles_from_psd(
    values: *const f32,
    bins: usize,
    steps: usize,
    window: usize,
    out: *mut *mut SdcTiles,
) -> SdcStatus {
    guard(|| {
        let n = bins.checked_mul(steps).ok_or_else(|| invalid("bins * steps overflows"))?;
        let psd = PsdMatrix::new(bins, steps, slice_arg(values, n, "values")?.to_vec())?;
        put_handle(out, SdcTiles(normalize(&segment(&psd, window)?)?))
    })
}

/// # Safety
/// `tiles` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn sdc_tiles_len(tiles: *const SdcTiles) -> usize {
    tiles.as_ref().map_or(0, |t| t.0.len())
}

/// # Safety
/// `tiles` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn sdc_tiles_window(tiles: *const SdcTiles) -> usize {
    tiles.as_ref().map_or(0, |t| t.0.window())
}

/// # Safety
/// `tiles` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sdc_tiles_free(tiles: *mut SdcTiles) {
    free_handle(tiles)
}

/// Copies a row-major `rows × dim` matrix into a new handle.
///
/// # Safety
/// `values` must point to `rows * dim` doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdc_features_new(values: *const f64, rows: usize, dim: usize, out: *mut *mut SdcFeatures) -> SdcStatus {
    guard(|| {
        let n = rows.checked_mul(dim).ok_or_else(|| invalid("rows * dim overflows"))?;
        let m = FeatureMatrix::new(rows, dim, slice_arg(values, n, "values")?.to_vec())?;
        put_handle(out, SdcFeatures(m))
    })
}

/// One row per tile, pixels in row-major order.
///
/// # Safety
/// `tiles` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdc_features_flatten(tiles: *const SdcTiles, out: *mut *mut SdcFeatures) -> SdcStatus {
    guard(|| put_handle(out, SdcFeatures(flatten(&handle(tiles, "tiles")?.0)?)))
}

/// # Safety
/// `f` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn sdc_features_rows(f: *const SdcFeatures) -> usize {
    f.as_ref().map_or(0, |f| f.0.rows())
}

/// # Safety
/// `f` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn sdc_features_dim(f: *const SdcFeatures) -> usize {
    f.as_ref().map_or(0, |f| f.0.dim())
}

/// Copies the matrix, row-major, into `buf` of capacity `len`.
///
/// # Safety
/// `f` must be a live handle and `buf` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sdc_features_copy(f: *const SdcFeatures, buf: *mut f64, len: usize) -> SdcStatus {
    guard(|| copy_out(handle(f, "features")?.0.values(), out_slice(buf, len, "buf")?))
}

/// # Safety
/// `f` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sdc_features_free(f: *mut SdcFeatures) {
    free_handle(f)
}

/// Fits the top `n` principal components.
///
/// # Safety
/// `x` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdc_pca_fit(x: *const SdcFeatures, n: usize, out: *mut *mut SdcPca) -> SdcStatus {
    guard(|| put_handle(out, SdcPca(pca_fit(&handle(x, "features")?.0, n)?)))
}

/// # Safety
/// `pca` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn sdc_pca_components(pca: *const SdcPca) -> usize {
    pca.as_ref().map_or(0, |p| p.0.n_components())
}

/// # Safety
/// `pca` and `x` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdc_pca_transform(pca: *const SdcPca, x: *const SdcFeatures, out: *mut *mut SdcFeatures) -> SdcStatus {
    guard(|| {
        let p = handle(pca, "pca")?;
        put_handle(out, SdcFeatures(pca_transform(&p.0, &handle(x, "features")?.0)?))
    })
}

/// Explained variance ratio per component, written to `buf`.
///
/// # Safety
/// `pca` must be a live handle and `buf` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sdc_pca_evr(pca: *const SdcPca, buf: *mut f64, len: usize) -> SdcStatus {
    guard(|| copy_out(&evr(&handle(pca, "pca")?.0)?, out_slice(buf, len, "buf")?))
}

/// Fewest leading components whose cumulative EVR reaches `threshold`.
///
/// # Safety
/// `pca` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdc_pca_components_for_variance(pca: *const SdcPca, threshold: f64, out: *mut usize) -> SdcStatus {
    guard(|| put(out, components_for_variance(&handle(pca, "pca")?.0, threshold)?, "out"))
}

/// # Safety
/// `pca` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sdc_pca_free(pca: *mut SdcPca) {
    free_handle(pca)
}

/// K-means++ with Lloyd iterations. Writes one label per row to `labels`
/// and, when `out_centroids` is not NULL, the `k × dim` centroids.
///
/// # Safety
/// `x` must be a live handle, `labels` point to `rows` writable values,
/// `out_centroids` be NULL or point to `k * dim` doubles, and `out_inertia`
/// be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn sdc_kmeans(
    x: *const SdcFeatures,
    k: usize,
    seed: u64,
    restarts: usize,
    labels: *mut u32,
    out_centroids: *mut f64,
    out_inertia: *mut f64,
) -> SdcStatus {
    guard(|| {
        let x = &handle(x, "features")?.0;
        let cfg = KMeansConfig {
            seed,
            restarts,
            ..KMeansConfig::default()
        };
        let m = kmeans(x, k, &cfg)?;
        copy_out(&m.assignments, out_slice(labels, x.rows(), "labels")?)?;
        if !out_centroids.is_null() {
            copy_out(&m.centroids, out_slice(out_centroids, m.centroids.len(), "centroids")?)?;
        }
        if !out_inertia.is_null() {
            out_inertia.write(m.inertia);
        }
        Ok(())
    })
}

/// Mean silhouette over at most `max_samples` rows drawn with `seed`.
///
/// # Safety
/// `x` must be a live handle, `labels` point to `rows` values and `out` be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn sdc_silhouette(
    x: *const SdcFeatures,
    labels: *const u32,
    max_samples: usize,
    seed: u64,
    out: *mut f64,
) -> SdcStatus {
    guard(|| {
        let x = &handle(x, "features")?.0;
        let labels = slice_arg(labels, x.rows(), "labels")?;
        put(out, eval::silhouette_features(x, labels, max_samples, seed)?, "out")
    })
}

/// Normalized mutual information of two labelings of length `n`.
///
/// # Safety
/// `a` and `b` must point to `n` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn sdc_nmi(a: *const u32, b: *const u32, n: usize, out: *mut f64) -> SdcStatus {
    guard(|| put(out, eval::nmi(slice_arg(a, n, "a")?, slice_arg(b, n, "b")?)?, "out"))
}

/// VAT on `size` rows drawn with `seed`. Writes the visit order (indices
/// into the original rows) to `order`, and when the pointers are not NULL
/// the reordered distances and the iVAT matrix, each `size × size`.
///
/// # Safety
/// `x` must be a live handle, `order` point to `size` writable values and
/// the matrix outputs be NULL or point to `size * size` doubles.
#[no_mangle]
pub unsafe extern "C" fn sdc_vat(
    x: *const SdcFeatures,
    size: usize,
    seed: u64,
    order: *mut usize,
    out_vat: *mut f64,
    out_ivat: *mut f64,
) -> SdcStatus {
    guard(|| {
        let x = &handle(x, "features")?.0;
        let (d, idx) = eval::pairwise_distances(x, size, seed)?;
        let v = eval::vat(&d, !out_ivat.is_null())?;
        let rows: Vec<usize> = v.permutation.iter().map(|&p| idx[p]).collect();
        copy_out(&rows, out_slice(order, size, "order")?)?;
        if !out_vat.is_null() {
            copy_out(v.reordered.values(), out_slice(out_vat, size * size, "out_vat")?)?;
        }
        if let Some(i) = &v.ivat {
            copy_out(i.values(), out_slice(out_ivat, size * size, "out_ivat")?)?;
        }
        Ok(())
    })
}

/// Loads the network from an SPCK checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdc_model_load(path: *const c_char, out: *mut *mut SdcModel) -> SdcStatus {
    guard(|| put_handle(out, SdcModel(load_checkpoint(path_arg(path)?)?.model)))
}

/// # Safety
/// `m` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn sdc_model_window(m: *const SdcModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.window())
}

/// # Safety
/// `m` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn sdc_model_feature_dim(m: *const SdcModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.feature_dim())
}

/// Pooled CNN features of every tile, in evaluation mode.
///
/// # Safety
/// `m` and `tiles` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdc_model_extract(m: *const SdcModel, tiles: *const SdcTiles, out: *mut *mut SdcFeatures) -> SdcStatus {
    guard(|| {
        let m = handle(m, "model")?;
        put_handle(out, SdcFeatures(m.0.extract_features(&handle(tiles, "tiles")?.0, 256)?))
    })
}

/// # Safety
/// `m` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sdc_model_free(m: *mut SdcModel) {
    free_handle(m)
}
