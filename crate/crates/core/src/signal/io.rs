//! Raw recording files.
//!
//! Two layouts are accepted.
//!
//! **Single-recording CSV.** A header row, one metadata row, then one
//! amplitude per line:
//!
//! ```text
//! subject,condition,score_arousal,score_valence,score_stress,sample_rate_hz
//! s01,interruption,6.5,4,,2048
//! 0.0132
//! 0.0127
//! ...
//! ```
//!
//! Empty score fields mean the target is not annotated for this recording.
//!
//! **Manifest + binary.** A `manifest.csv` with header
//! `file,subject,condition,score_arousal,score_valence,score_stress,sample_rate_hz,num_samples`,
//! one row per recording. `file` is a path relative to the manifest's
//! directory holding `num_samples` little-endian IEEE-754 `f32` values and
//! nothing else.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const TARGETS: [&str; 3] = ["arousal", "valence", "stress"];
pub const CSV_HEADER: [&str; 6] = [
    "subject",
    "condition",
    "score_arousal",
    "score_valence",
    "score_stress",
    "sample_rate_hz",
];
pub const MANIFEST_HEADER: [&str; 8] = [
    "file",
    "subject",
    "condition",
    "score_arousal",
    "score_valence",
    "score_stress",
    "sample_rate_hz",
    "num_samples",
];
pub const MANIFEST_NAME: &str = "manifest.csv";

/// One raw ECG recording with its self-reported affect scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub samples: Vec<f32>,
    pub sample_rate_hz: f64,
    pub subject_id: String,
    pub condition: String,
    /// Target name (`arousal`, `valence`, `stress`) to score on the 1–9 scale.
    pub scores: BTreeMap<String, f64>,
}

impl RawRecording {
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Validation(format!("recording {} has no samples", self.subject_id)));
        }
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return Err(Error::Validation(format!(
                "recording {} has sample rate {}",
                self.subject_id, self.sample_rate_hz
            )));
        }
        for (k, &v) in &self.scores {
            if !(1.0..=9.0).contains(&v) {
                return Err(Error::Validation(format!(
                    "recording {}: {k} score {v} outside [1, 9]",
                    self.subject_id
                )));
            }
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "recording {}: non-finite sample at index {i}",
                self.subject_id
            )));
        }
        Ok(())
    }
}

fn parse_scores(fields: &[&str], path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut scores = BTreeMap::new();
    for (name, raw) in TARGETS.iter().zip(fields) {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let v: f64 = raw
            .parse()
            .map_err(|_| Error::format(path, format!("bad {name} score '{raw}'")))?;
        scores.insert(name.to_string(), v);
    }
    Ok(scores)
}

fn score_fields(scores: &BTreeMap<String, f64>) -> Vec<String> {
    TARGETS
        .iter()
        .map(|t| scores.get(*t).map(|v| v.to_string()).unwrap_or_default())
        .collect()
}

fn parse_rate(raw: &str, path: &Path) -> Result<f64> {
    raw.trim()
        .parse()
        .map_err(|_| Error::format(path, format!("bad sample rate '{raw}'")))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

pub fn read_recording_csv(path: &Path) -> Result<RawRecording> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().map(str::trim).ne(CSV_HEADER) {
        return Err(Error::format(path, format!("expected header {}", CSV_HEADER.join(","))));
    }
    let mut records = rdr.records();
    let meta = records
        .next()
        .ok_or_else(|| Error::format(path, "missing metadata row"))?
        .map_err(|e| csv_err(path, e))?;
    if meta.len() != CSV_HEADER.len() {
        return Err(Error::format(path, format!("metadata row has {} fields", meta.len())));
    }
    let fields: Vec<&str> = meta.iter().collect();
    let mut samples = Vec::new();
    for (line, rec) in records.enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let raw = rec.get(0).unwrap_or("").trim();
        if rec.len() != 1 || raw.is_empty() {
            return Err(Error::format(path, format!("sample line {} is not a single value", line + 3)));
        }
        samples.push(
            raw.parse::<f32>()
                .map_err(|_| Error::format(path, format!("bad sample '{raw}' on line {}", line + 3)))?,
        );
    }
    let rec = RawRecording {
        samples,
        sample_rate_hz: parse_rate(fields[5], path)?,
        subject_id: fields[0].trim().to_string(),
        condition: fields[1].trim().to_string(),
        scores: parse_scores(&fields[2..5], path)?,
    };
    rec.validate()?;
    Ok(rec)
}

pub fn write_recording_csv(rec: &RawRecording, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut meta = vec![rec.subject_id.clone(), rec.condition.clone()];
    meta.extend(score_fields(&rec.scores));
    meta.push(rec.sample_rate_hz.to_string());
    w.write_record(CSV_HEADER).map_err(|e| csv_err(path, e))?;
    w.write_record(&meta).map_err(|e| csv_err(path, e))?;
    for v in &rec.samples {
        w.write_record([v.to_string()]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<RawRecording>> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().map(str::trim).ne(MANIFEST_HEADER) {
        return Err(Error::format(path, format!("expected header {}", MANIFEST_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let f: Vec<&str> = rec.iter().collect();
        let bin = dir.join(f[0].trim());
        let n: usize = f[7]
            .trim()
            .parse()
            .map_err(|_| Error::format(path, format!("bad num_samples '{}'", f[7])))?;
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        if bytes.len() != n * 4 {
            return Err(Error::format(
                &bin,
                format!("expected {} bytes for {n} samples, found {}", n * 4, bytes.len()),
            ));
        }
        let samples = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let r = RawRecording {
            samples,
            sample_rate_hz: parse_rate(f[6], path)?,
            subject_id: f[1].trim().to_string(),
            condition: f[2].trim().to_string(),
            scores: parse_scores(&f[3..6], path)?,
        };
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

/// Write `recs` as `<dir>/manifest.csv` plus one `rec_NNNN.f32` per recording.
pub fn write_manifest(recs: &[RawRecording], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(MANIFEST_NAME);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(MANIFEST_HEADER).map_err(|e| csv_err(&path, e))?;
    for (i, rec) in recs.iter().enumerate() {
        let name = format!("rec_{i:04}.f32");
        let bytes: Vec<u8> = rec.samples.iter().flat_map(|v| v.to_le_bytes()).collect();
        let bin = dir.join(&name);
        fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        let mut row = vec![name, rec.subject_id.clone(), rec.condition.clone()];
        row.extend(score_fields(&rec.scores));
        row.push(rec.sample_rate_hz.to_string());
        row.push(rec.samples.len().to_string());
        w.write_record(&row).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Load recordings from a manifest file, a single recording CSV, or a
/// directory (its `manifest.csv` if present, otherwise every `*.csv` in
/// name order).
pub fn load_recordings(path: &Path) -> Result<Vec<RawRecording>> {
    if path.is_dir() {
        let manifest = path.join(MANIFEST_NAME);
        if manifest.is_file() {
            return read_manifest(&manifest);
        }
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Data(format!("no recordings found in {}", path.display())));
        }
        return files.iter().map(|f| read_recording_csv(f)).collect();
    }
    let first = fs::read_to_string(path)
        .map_err(|e| Error::io(path, e))?
        .lines()
        .next()
        .unwrap_or("")
        .to_string();
    if first.trim_start().starts_with("file,") {
        read_manifest(path)
    } else {
        Ok(vec![read_recording_csv(path)?])
    }
}
