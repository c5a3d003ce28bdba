use std::path::Path;

use super::wire::{self, Reader};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"SPSD";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

/// Acquisition parameters of a recording. Informational only; the SPSD
/// container does not carry them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdMeta {
    /// PSD measurements per second.
    pub sample_rate_hz: f64,
    pub center_freq_hz: f64,
    pub bandwidth_hz: f64,
}

impl Default for PsdMeta {
    fn default() -> Self {
        PsdMeta {
            sample_rate_hz: 5.0,
            center_freq_hz: 868.0e6,
            bandwidth_hz: 192.0e3,
        }
    }
}

/// Power spectral density recording: `bins` frequency rows by `steps` time
/// columns, in dBm, stored bin-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix {
    bins: usize,
    steps: usize,
    values: Vec<f32>,
    pub meta: PsdMeta,
}

impl PsdMatrix {
    pub fn new(bins: usize, steps: usize, values: Vec<f32>) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Shape("a PSD recording needs at least one bin".into()));
        }
        if bins.checked_mul(steps) != Some(values.len()) {
            return Err(Error::Shape(format!(
                "{} values cannot form {bins} bins x {steps} steps",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite PSD value at bin {}, step {}",
                pos / steps.max(1),
                pos % steps.max(1)
            )));
        }
        Ok(PsdMatrix {
            bins,
            steps,
            values,
            meta: PsdMeta::default(),
        })
    }

    pub fn from_fn(bins: usize, steps: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut values = Vec::with_capacity(bins * steps);
        for b in 0..bins {
            for t in 0..steps {
                values.push(f(b, t));
            }
        }
        Self::new(bins, steps, values)
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, bin: usize, step: usize) -> f32 {
        self.values[bin * self.steps + step]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.values.len() * 4);
        out.extend_from_slice(MAGIC);
        wire::put_u32(&mut out, VERSION);
        wire::put_u32(&mut out, self.bins as u32);
        wire::put_u64(&mut out, self.steps as u64);
        wire::put_f32s(&mut out, self.values.iter().copied());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "SPSD");
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("SPSD version {version} is not supported")));
        }
        let bins = r.u32()? as usize;
        let steps = usize::try_from(r.u64()?)
            .map_err(|_| Error::Format("SPSD step count exceeds address space".into()))?;
        if bins == 0 {
            return Err(Error::Format("SPSD declares zero bins".into()));
        }
        let count = bins
            .checked_mul(steps)
            .ok_or_else(|| Error::Format("SPSD dimensions overflow".into()))?;
        let values = r.f32_vec(count)?;
        if !r.is_empty() {
            return Err(Error::Format(format!(
                "SPSD has {} trailing bytes after the declared payload",
                r.remaining()
            )));
        }
        Self::new(bins, steps, values)
    }
}

pub fn load_psd(path: impl AsRef<Path>) -> Result<PsdMatrix> {
    PsdMatrix::from_bytes(&wire::read_file(path.as_ref())?)
}

pub fn save_psd(psd: &PsdMatrix, path: impl AsRef<Path>) -> Result<()> {
    wire::write_file(path.as_ref(), &psd.to_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PsdMatrix {
        PsdMatrix::from_fn(4, 3, |b, t| -100.0 + (b * 3 + t) as f32).unwrap()
    }

    #[test]
    fn round_trip_keeps_dims_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.spsd");
        save_psd(&sample(), &path).unwrap();
        let back = load_psd(&path).unwrap();
        assert_eq!(back.bins(), 4);
        assert_eq!(back.steps(), 3);
        assert_eq!(back, sample());
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(PsdMatrix::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_format_error() {
        // header says 10 steps, payload holds 5
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        wire::put_u32(&mut bytes, 1);
        wire::put_u32(&mut bytes, 1);
        wire::put_u64(&mut bytes, 10);
        wire::put_f32s(&mut bytes, [0.0f32; 5]);
        assert!(matches!(PsdMatrix::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn nan_payload_is_data_error() {
        let mut bytes = sample().to_bytes();
        let nan = f32::NAN.to_le_bytes();
        bytes[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&nan);
        assert!(matches!(PsdMatrix::from_bytes(&bytes), Err(Error::Data(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_psd("/nonexistent/x.spsd"), Err(Error::Io { .. })));
    }

    #[test]
    fn zero_steps_is_allowed() {
        let psd = PsdMatrix::new(8, 0, vec![]).unwrap();
        let back = PsdMatrix::from_bytes(&psd.to_bytes()).unwrap();
        assert_eq!(back.steps(), 0);
    }
}
