use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{DatasetStats, SampleRecord};
use crate::error::{Error, Result};

/// Writes one JSON object per line.
pub fn save_dataset(records: &[SampleRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a JSON Lines dataset, failing on the first malformed line or
/// invalid record. Blank lines are skipped.
pub fn load_dataset(path: &Path) -> Result<Vec<SampleRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out: Vec<SampleRecord> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        let index = out.len();
        rec.check().map_err(|message| Error::Validation { index, message })?;
        if let Some(first) = out.first() {
            if first.joints_3d.len() != rec.joints_3d.len() {
                return Err(Error::Validation {
                    index,
                    message: format!("{} joints, earlier records have {}", rec.joints_3d.len(), first.joints_3d.len()),
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// `train.jsonl` -> `train.jsonl.stats.json`
pub fn stats_sidecar_path(dataset: &Path) -> PathBuf {
    let mut s = dataset.as_os_str().to_owned();
    s.push(".stats.json");
    PathBuf::from(s)
}

pub fn save_stats(stats: &DatasetStats, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, stats)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_stats(path: &Path) -> Result<DatasetStats> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
