//! Dataset manifest: a CSV of `path,label` rows.
//!
//! The `undefined` label marks images whose behavior cannot be determined
//! (typically close face portraits); such entries are retained for dataset
//! statistics but excluded from training and evaluation because the model
//! has three output classes.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::label::Behavior;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestLabel {
    Behavior(Behavior),
    Undefined,
}

impl ManifestLabel {
    pub fn parse(s: &str) -> Option<ManifestLabel> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "undefined" {
            return Some(ManifestLabel::Undefined);
        }
        lower.parse::<Behavior>().ok().map(ManifestLabel::Behavior)
    }

    pub fn behavior(self) -> Option<Behavior> {
        match self {
            ManifestLabel::Behavior(b) => Some(b),
            ManifestLabel::Undefined => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: ManifestLabel,
}

/// Load and validate a manifest CSV with header `path,label`.
///
/// Every referenced file must exist; duplicate paths and unknown labels are
/// rejected with the offending line number (1-based, counting the header).
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));

    {
        let headers = reader.headers()?;
        if headers.len() != 2 || &headers[0] != "path" || &headers[1] != "label" {
            return Err(Error::ManifestParse {
                line: 1,
                reason: format!("expected header 'path,label', got '{}'", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
    }

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(entries.len() + 2);
        if record.len() != 2 {
            return Err(Error::ManifestParse {
                line,
                reason: format!("expected 2 fields, got {}", record.len()),
            });
        }
        let raw_path = &record[0];
        if raw_path.is_empty() {
            return Err(Error::ManifestParse {
                line,
                reason: "empty path".into(),
            });
        }
        let label = ManifestLabel::parse(&record[1]).ok_or_else(|| Error::UnknownLabel {
            line,
            label: record[1].to_string(),
        })?;
        if !seen.insert(raw_path.to_string()) {
            return Err(Error::DuplicatePath {
                line,
                path: raw_path.to_string(),
            });
        }
        // Relative paths resolve against the manifest's directory.
        let resolved = if Path::new(raw_path).is_absolute() {
            PathBuf::from(raw_path)
        } else {
            base.join(raw_path)
        };
        if !resolved.is_file() {
            return Err(Error::MissingFile {
                line,
                path: resolved.display().to_string(),
            });
        }
        entries.push(ManifestEntry {
            path: resolved,
            label,
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyManifest);
    }
    Ok(entries)
}

/// Per-label entry counts: (lying, sitting, standing, undefined).
pub fn label_counts(entries: &[ManifestEntry]) -> (usize, usize, usize, usize) {
    let mut counts = (0, 0, 0, 0);
    for e in entries {
        match e.label {
            ManifestLabel::Behavior(Behavior::Lying) => counts.0 += 1,
            ManifestLabel::Behavior(Behavior::Sitting) => counts.1 += 1,
            ManifestLabel::Behavior(Behavior::Standing) => counts.2 += 1,
            ManifestLabel::Undefined => counts.3 += 1,
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_manifest(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("manifest.csv");
        fs::write(&path, body).unwrap();
        path
    }

    fn touch(dir: &Path, name: &str) {
        fs::write(dir.join(name), b"x").unwrap();
    }

    #[test]
    fn loads_and_flags_undefined() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.ppm");
        touch(dir.path(), "b.ppm");
        touch(dir.path(), "c.ppm");
        let m = write_manifest(
            dir.path(),
            "path,label\na.ppm,lying\nb.ppm,Sitting\nc.ppm,undefined\n",
        );
        let entries = load_manifest(&m).unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(entries[0].label, ManifestLabel::Behavior(Behavior::Lying));
        assert_eq!(entries[1].label, ManifestLabel::Behavior(Behavior::Sitting));
        assert_eq!(entries[2].label, ManifestLabel::Undefined);
        assert_eq!(entries[2].label.behavior(), None);
    }

    #[test]
    fn unknown_label_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.ppm");
        touch(dir.path(), "b.ppm");
        let m = write_manifest(dir.path(), "path,label\na.ppm,lying\nb.ppm,rolling\n");
        match load_manifest(&m) {
            Err(Error::UnknownLabel { line: 3, label }) => assert_eq!(label, "rolling"),
            other => panic!("expected unknown label at line 3, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_path_rejected() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.ppm");
        let m = write_manifest(dir.path(), "path,label\na.ppm,lying\na.ppm,sitting\n");
        assert!(matches!(
            load_manifest(&m),
            Err(Error::DuplicatePath { line: 3, .. })
        ));
    }

    #[test]
    fn missing_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(dir.path(), "path,label\nnope.ppm,lying\n");
        assert!(matches!(
            load_manifest(&m),
            Err(Error::MissingFile { line: 2, .. })
        ));
    }

    #[test]
    fn empty_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(dir.path(), "path,label\n");
        assert!(matches!(load_manifest(&m), Err(Error::EmptyManifest)));
    }

    #[test]
    fn usable_sample_arithmetic() {
        // With the documented corpus counts (4143 standing, 3038 sitting,
        // 7090 lying, 6307 undefined), the usable pool for a 3-class model
        // is 14271.
        let (standing, sitting, lying, undefined) = (4143usize, 3038, 7090, 6307);
        assert_eq!(standing + sitting + lying, 14_271);
        assert_eq!(standing + sitting + lying + undefined, 20_578);
    }
}
