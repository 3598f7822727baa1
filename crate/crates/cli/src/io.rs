//! File helpers shared by the subcommands. Paths inside JSONL files are
//! relative to the file that contains them.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use cabingaze_core::annotate::{read_records, write_records, Posture, SampleRecord, Zone};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| CliError::io(p, e)),
        _ => Ok(()),
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<(), CliError> {
    ensure_parent(path)?;
    let mut w = BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?);
    for it in items {
        serde_json::to_writer(&mut w, it).map_err(|e| CliError::Data(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_records(path: &Path) -> Result<Vec<SampleRecord>, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let recs = read_records(BufReader::new(f)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if recs.is_empty() {
        return Err(CliError::Data(format!("{}: no records", path.display())));
    }
    Ok(recs)
}

pub fn save_records(path: &Path, recs: &[SampleRecord]) -> Result<(), CliError> {
    ensure_parent(path)?;
    let mut w = BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?);
    write_records(&mut w, recs)?;
    w.flush()?;
    Ok(())
}

/// Resolves `rel` against the directory of `file`.
pub fn resolve(file: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        return p.to_path_buf();
    }
    file.parent().unwrap_or_else(|| Path::new(".")).join(p)
}

/// Frame a capture's target position is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetFrame {
    Dms,
    Depth,
}

/// One raw capture before annotation: the face center measured in the DMS
/// frame and the fixated target as located by the depth camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Capture {
    pub subject_id: u32,
    pub camera_id: String,
    pub target_id: u32,
    pub zone: Zone,
    pub face_center: [f64; 3],
    pub target: [f64; 3],
    pub target_frame: TargetFrame,
    pub landmarks: Vec<[f64; 3]>,
    pub posture: Posture,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}
