//! `relative_path,label` CSV manifests.
//!
//! The header row is required. Image paths are relative to the directory
//! holding the manifest. Row numbers in errors count data rows from 1, so
//! row `n` sits on line `n + 1` of the file.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Component, Path, PathBuf};

use pvcnn_core::data::{DataError, Dataset};
use thiserror::Error;

pub const HEADER: [&str; 2] = ["relative_path", "label"];

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: header must be `relative_path,label`, found `{found}`")]
    Header { path: PathBuf, found: String },
    #[error("{path}: row {row}: expected 2 fields, found {found}")]
    FieldCount {
        path: PathBuf,
        row: usize,
        found: usize,
    },
    #[error("{path}: row {row}: image `{image}` does not exist")]
    MissingImage {
        path: PathBuf,
        row: usize,
        image: PathBuf,
    },
    #[error("{path}: {source}")]
    Data { path: PathBuf, source: DataError },
}

/// Directory that image paths of `manifest` are relative to.
pub fn image_root(manifest: &Path) -> PathBuf {
    match manifest.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Parses manifest text without touching the file system. `origin` only
/// labels errors.
pub fn parse(reader: impl Read, origin: &Path) -> Result<Dataset, ManifestError> {
    let csv_err = |source| ManifestError::Csv {
        path: origin.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != HEADER {
        return Err(ManifestError::Header {
            path: origin.to_path_buf(),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err)?;
        if record.len() != 2 {
            return Err(ManifestError::FieldCount {
                path: origin.to_path_buf(),
                row: i + 1,
                found: record.len(),
            });
        }
        rows.push((record[0].trim().to_string(), record[1].trim().to_string()));
    }
    Dataset::from_rows(
        rows.iter().map(|(p, l)| (p.as_str(), l.as_str())),
        Some(origin.display().to_string()),
    )
    .map_err(|source| ManifestError::Data {
        path: origin.to_path_buf(),
        source,
    })
}

/// Reads and validates a manifest, including that every image exists.
pub fn load_manifest(path: &Path) -> Result<Dataset, ManifestError> {
    let file = File::open(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let dataset = parse(file, path)?;
    let root = image_root(path);
    for (i, sample) in dataset.samples().iter().enumerate() {
        let image = root.join(&sample.image_path);
        if !image.is_file() {
            return Err(ManifestError::MissingImage {
                path: path.to_path_buf(),
                row: i + 1,
                image,
            });
        }
    }
    Ok(dataset)
}

pub fn write(dataset: &Dataset, writer: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for s in dataset.samples() {
        w.write_record([s.image_path.as_str(), s.label.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Path of `target` relative to the directory `base`. Both must exist.
pub fn relative_to(target: &Path, base: &Path) -> std::io::Result<PathBuf> {
    let target = target.canonicalize()?;
    let base = base.canonicalize()?;
    let t: Vec<Component> = target.components().collect();
    let b: Vec<Component> = base.components().collect();
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &t[common..] {
        out.push(c.as_os_str());
    }
    Ok(out)
}

/// Re-expresses every image path of `dataset` (relative to `from`) as a
/// path relative to `to`, with `/` separators.
pub fn rebase(dataset: &Dataset, from: &Path, to: &Path) -> Result<Dataset, ManifestError> {
    let mut samples = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.samples().iter().enumerate() {
        let image = from.join(&s.image_path);
        let rel = relative_to(&image, to).map_err(|_| ManifestError::MissingImage {
            path: from.to_path_buf(),
            row: i + 1,
            image: image.clone(),
        })?;
        let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
        let mut s = s.clone();
        s.image_path = parts.join("/");
        samples.push(s);
    }
    Dataset::new(samples, dataset.taxonomy(), None).map_err(|source| ManifestError::Data {
        path: to.to_path_buf(),
        source,
    })
}
