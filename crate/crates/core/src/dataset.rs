//! On-disk datasets: one MAFT image per sample plus a `manifest.csv` with
//! columns `path,label,occluded` (paths relative to the manifest).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{MafError, Result};
use crate::synth::Sample;
use crate::tensor_file::{load_tensor, save_tensor, write_atomic};

pub const MANIFEST: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "path,label,occluded";

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
    pub occluded: bool,
}

/// Writes samples under `dir` and returns the manifest entries.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<Vec<ManifestEntry>> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| MafError::io(&img_dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let rel = format!("images/{i:06}.maft");
        save_tensor(dir.join(&rel), &s.image)?;
        entries.push(ManifestEntry {
            path: rel,
            label: s.label,
            occluded: s.occluded,
        });
    }
    write_manifest(&dir.join(MANIFEST), &entries)?;
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for e in entries {
        let _ = writeln!(text, "{},{},{}", e.path, e.label, e.occluded);
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| MafError::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(MafError::Format(format!(
            "{} does not start with `{MANIFEST_HEADER}`",
            path.display()
        )));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let bad = || MafError::Format(format!("{}:{}: malformed row `{line}`", path.display(), n + 2));
            let mut cols = line.split(',');
            let (Some(p), Some(l), Some(o), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
                return Err(bad());
            };
            let label = match l {
                "0" => 0,
                "1" => 1,
                _ => return Err(bad()),
            };
            let occluded = o.parse::<bool>().map_err(|_| bad())?;
            Ok(ManifestEntry {
                path: p.to_string(),
                label,
                occluded,
            })
        })
        .collect()
}

/// A dataset loaded from disk, with each sample's manifest path.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub samples: Vec<Sample>,
}

pub fn read_dataset(dir: &Path) -> Result<LoadedDataset> {
    let entries = read_manifest(&dir.join(MANIFEST))?;
    let samples = entries
        .iter()
        .map(|e| {
            let image = load_tensor(dir.join(&e.path))?;
            if image.ndim() != 3 || image.shape()[0] != 1 {
                return Err(MafError::Format(format!(
                    "{}: expected a 1×H×W image, found {:?}",
                    e.path,
                    image.shape()
                )));
            }
            Ok(Sample {
                image,
                label: e.label,
                occluded: e.occluded,
                occluded_region: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedDataset {
        root: dir.to_path_buf(),
        entries,
        samples,
    })
}
