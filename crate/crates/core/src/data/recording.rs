use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One multichannel recording, `values[T, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub values: Tensor,
    pub sample_rate_hz: f64,
    pub subject_id: String,
    pub label: usize,
}

impl Recording {
    pub fn new(values: Tensor, sample_rate_hz: f64, subject_id: impl Into<String>, label: usize) -> Result<Self> {
        let rec = Recording {
            values,
            sample_rate_hz,
            subject_id: subject_id.into(),
            label,
        };
        rec.validate(None)?;
        Ok(rec)
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }

    /// Channel-major copy `[C, T]`, the layout the centralization metrics take.
    pub fn channels_by_time(&self) -> Tensor {
        self.values.transpose(0, 1)
    }

    pub fn validate(&self, n_classes: Option<usize>) -> Result<()> {
        let who = &self.subject_id;
        match self.values.shape() {
            &[t, c] if t >= 1 && c >= 1 => {}
            s => return Err(Error::Data(format!("recording of {who} must be [T >= 1, C >= 1], got {s:?}"))),
        }
        if !self.values.all_finite() {
            return Err(Error::Data(format!("recording of {who} has non-finite values")));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::Data(format!("recording of {who} has sample rate {}", self.sample_rate_hz)));
        }
        if let Some(k) = n_classes {
            if self.label >= k {
                return Err(Error::Data(format!("recording of {who} has label {} outside [0, {k})", self.label)));
            }
        }
        Ok(())
    }
}

/// One line of the JSONL manifest. `path` is relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub subject: String,
    pub label: i64,
    pub sample_rate_hz: f64,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            msg: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Parse a headerless CSV with one row per timestep into `[T, C]`.
pub fn read_csv(path: &Path) -> Result<Tensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(path, e)),
        }
        let line = record.position().map_or(rows as u64 + 1, |p| p.line());
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(parse_err(format!("expected {w} columns, found {}", record.len())));
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("column {}: {cell:?} is not a number", j + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(format!("column {}: non-finite value {cell:?}", j + 1)));
            }
            data.push(v);
        }
        rows += 1;
    }
    match width {
        Some(w) if w > 0 => Ok(Tensor::from_vec(&[rows, w], data)),
        _ => Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "no data rows".into(),
        }),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{kind:?}"),
        },
    }
}

pub fn write_csv(path: &Path, values: &Tensor) -> Result<()> {
    let (t, c) = (values.shape()[0], values.shape()[1]);
    let mut out = String::with_capacity(t * c * 12);
    for row in values.data().chunks(c) {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            // shortest representation that parses back to the same f64
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load every recording of a manifest, in manifest order. With `n_classes`
/// set, labels outside `[0, n_classes)` are rejected.
pub fn load_recordings(manifest: &Path, n_classes: Option<usize>) -> Result<Vec<Recording>> {
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let entries = read_manifest(manifest)?;
    let mut recs = Vec::with_capacity(entries.len());
    for (i, e) in entries.into_iter().enumerate() {
        let bad = |msg: String| Error::Parse {
            path: manifest.to_path_buf(),
            line: i as u64 + 1,
            msg,
        };
        let label = usize::try_from(e.label).map_err(|_| bad(format!("negative label {}", e.label)))?;
        if let Some(k) = n_classes {
            if label >= k {
                return Err(Error::Data(format!(
                    "{}: line {}: label {label} outside [0, {k})",
                    manifest.display(),
                    i + 1
                )));
            }
        }
        let csv_path: PathBuf = base.join(&e.path);
        let rec = Recording {
            values: read_csv(&csv_path)?,
            sample_rate_hz: e.sample_rate_hz,
            subject_id: e.subject,
            label,
        };
        rec.validate(n_classes).map_err(|err| bad(err.to_string()))?;
        recs.push(rec);
    }
    log::info!("loaded {} recordings from {}", recs.len(), manifest.display());
    Ok(recs)
}

/// Write recordings as `recordings/NNNN.csv` plus `manifest.jsonl` under `dir`.
/// Returns the manifest path.
pub fn write_recordings(dir: &Path, recs: &[Recording]) -> Result<PathBuf> {
    let rec_dir = dir.join("recordings");
    fs::create_dir_all(&rec_dir).map_err(|e| Error::io(&rec_dir, e))?;
    let manifest = dir.join("manifest.jsonl");
    let mut lines = Vec::with_capacity(recs.len());
    for (i, r) in recs.iter().enumerate() {
        let rel = format!("recordings/{i:04}.csv");
        write_csv(&dir.join(&rel), &r.values)?;
        let entry = ManifestEntry {
            path: rel,
            subject: r.subject_id.clone(),
            label: r.label as i64,
            sample_rate_hz: r.sample_rate_hz,
        };
        lines.push(serde_json::to_string(&entry)?);
    }
    let mut f = fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    for line in lines {
        writeln!(f, "{line}").map_err(|e| Error::io(&manifest, e))?;
    }
    Ok(manifest)
}
