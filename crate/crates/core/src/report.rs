//! Run-directory bookkeeping: the artifact manifest, `key,value` summary
//! files, and the baseline-versus-CNN comparison report.

use std::fs;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const BASELINE_SUMMARY: &str = "baseline/summary.csv";
pub const DEEPCLUSTER_SUMMARY: &str = "deepcluster/summary.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub artifact: String,
    pub kind: String,
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub seed: u64,
}

/// Every file a run has written. Entries are keyed by artifact name; writing
/// the same artifact again replaces its entry in place.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some("artifact,kind,path,seed") {
            return Err(Error::Format(format!("{} has an unexpected header", path.display())));
        }
        let mut m = Manifest::default();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let [artifact, kind, rel, seed] = f[..] else {
                return Err(Error::Format(format!("bad manifest line '{line}'")));
            };
            let seed = seed.parse().map_err(|_| Error::Format(format!("bad seed in '{line}'")))?;
            m.record(artifact, kind, rel, seed);
        }
        Ok(m)
    }

    pub fn record(&mut self, artifact: &str, kind: &str, path: &str, seed: u64) {
        let entry = ManifestEntry {
            artifact: artifact.into(),
            kind: kind.into(),
            path: path.into(),
            seed,
        };
        match self.entries.iter_mut().find(|e| e.artifact == artifact) {
            Some(e) => *e = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("artifact,kind,path,seed\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{},{}\n", e.artifact, e.kind, e.path, e.seed));
        }
        out
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        write_text(&run_dir.join(MANIFEST_FILE), &self.to_csv())
    }
}

/// Writes a file, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Ordered `key,value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pairs: Vec<(String, String)>,
}

impl Summary {
    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        match self.pairs.iter_mut().find(|(k, _)| k == key) {
            Some(p) => p.1 = value,
            None => self.pairs.push((key.into(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("key,value\n");
        for (k, v) in &self.pairs {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("key,value") {
            return Err(Error::Format("summary lacks its key,value header".into()));
        }
        let mut s = Summary::default();
        for line in lines.filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("bad summary line '{line}'")))?;
            s.set(k, v);
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    fn number<T: std::str::FromStr>(&self, key: &str, file: &Path) -> Result<T> {
        self.get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format(format!("{} lacks a valid '{key}'", file.display())))
    }
}

/// Share of baseline components saved by the CNN features.
pub fn reduction_ratio(baseline_components: usize, cnn_components: usize) -> f64 {
    1.0 - cnn_components as f64 / baseline_components as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelReport {
    pub model: String,
    pub components_95: usize,
    pub best_silhouette: f64,
    pub best_k: usize,
    pub nmi: Option<f64>,
    pub reduction_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<ModelReport>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,components_95,best_silhouette,best_k,nmi,reduction_ratio\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.model,
                r.components_95,
                r.best_silhouette,
                r.best_k,
                r.nmi.map_or(String::new(), |v| v.to_string()),
                r.reduction_ratio
            ));
        }
        out
    }
}

/// Compares the baseline and DeepCluster outputs of a run directory.
pub fn sweep_report(run_dir: &Path) -> Result<SweepReport> {
    let read = |rel: &str| -> Result<(Summary, PathBuf)> {
        let path = run_dir.join(rel);
        Ok((Summary::load(&path)?, path))
    };
    let (base, base_path) = read(BASELINE_SUMMARY)?;
    let (cnn, cnn_path) = read(DEEPCLUSTER_SUMMARY)?;
    let row = |name: &str, s: &Summary, path: &Path, ratio: f64| -> Result<ModelReport> {
        Ok(ModelReport {
            model: name.into(),
            components_95: s.number("components_95", path)?,
            best_silhouette: s.number("best_silhouette", path)?,
            best_k: s.number("best_k", path)?,
            nmi: s.get("nmi").filter(|v| !v.is_empty()).and_then(|v| v.parse().ok()),
            reduction_ratio: ratio,
        })
    };
    let base_row = row("baseline", &base, &base_path, 0.0)?;
    let n_cnn: usize = cnn.number("components_95", &cnn_path)?;
    let cnn_row = row(
        "deepcluster",
        &cnn,
        &cnn_path,
        reduction_ratio(base_row.components_95, n_cnn),
    )?;
    Ok(SweepReport {
        rows: vec![base_row, cnn_row],
    })
}
