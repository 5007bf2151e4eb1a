//! Manifest CSV: `image,mask,patient_id,plane,classes,split`.
//!
//! Paths are relative to the manifest's directory (absolute paths are kept
//! as is). `classes` lists the class ids present, separated by `;`. `plane`
//! and `split` may be blank.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::write_atomic;
use crate::data::{Plane, Split, NUM_CLASSES};
use crate::error::{Error, Result};

pub const HEADER: [&str; 6] = ["image", "mask", "patient_id", "plane", "classes", "split"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image: String,
    pub mask: String,
    pub patient_id: String,
    pub plane: Option<Plane>,
    pub classes: Vec<u8>,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

#[derive(Debug, Deserialize)]
struct RawRow {
    image: String,
    mask: String,
    patient_id: String,
    plane: String,
    classes: String,
    split: String,
}

fn parse_classes(s: &str) -> std::result::Result<Vec<u8>, String> {
    let mut out = Vec::new();
    for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let v: u8 = part.parse().map_err(|_| format!("bad class id {part:?}"))?;
        if v as usize >= NUM_CLASSES {
            return Err(format!("class id {v} out of range"));
        }
        out.push(v);
    }
    Ok(out)
}

fn join_classes(classes: &[u8]) -> String {
    classes.iter().map(u8::to_string).collect::<Vec<_>>().join(";")
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, rows: Vec<ManifestRow>) -> Self {
        Manifest {
            root: root.into(),
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == Some(split))
    }

    /// Row counts per split: (train, val, test, untagged).
    pub fn split_counts(&self) -> (usize, usize, usize, usize) {
        let mut c = (0, 0, 0, 0);
        for r in &self.rows {
            match r.split {
                Some(Split::Train) => c.0 += 1,
                Some(Split::Val) => c.1 += 1,
                Some(Split::Test) => c.2 += 1,
                None => c.3 += 1,
            }
        }
        c
    }

    /// Rejects a patient that appears under two different split tags.
    pub fn check_leakage(&self) -> Result<()> {
        let mut seen: HashMap<&str, (Option<Split>, usize)> = HashMap::new();
        for (i, row) in self.rows.iter().enumerate() {
            match seen.get(row.patient_id.as_str()) {
                Some(&(split, first_row)) if split != row.split => {
                    let tag = |s: Option<Split>| s.map(|s| s.to_string()).unwrap_or_else(|| "(none)".into());
                    return Err(Error::SplitLeakage {
                        patient: row.patient_id.clone(),
                        first: tag(split),
                        first_row,
                        second: tag(row.split),
                        row: i + 1,
                    });
                }
                Some(_) => {}
                None => {
                    seen.insert(&row.patient_id, (row.split, i + 1));
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let err = |e: csv::Error| Error::ManifestInvalid(e.to_string());
        w.write_record(HEADER).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.image.as_str(),
                r.mask.as_str(),
                r.patient_id.as_str(),
                &r.plane.map(|p| p.to_string()).unwrap_or_default(),
                &join_classes(&r.classes),
                &r.split.map(|s| s.to_string()).unwrap_or_default(),
            ])
            .map_err(err)?;
        }
        w.into_inner().map_err(|e| Error::ManifestInvalid(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv()?)
    }
}

/// Parses and validates a manifest. Rows are numbered from 1 (the first
/// line after the header).
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = parse_manifest(&bytes, root)?;
    for (i, row) in manifest.rows.iter().enumerate() {
        for rel in [&row.image, &row.mask] {
            let p = manifest.resolve(rel);
            if !p.is_file() {
                return Err(Error::Manifest {
                    row: i + 1,
                    message: format!("file {} does not exist", p.display()),
                });
            }
        }
    }
    Ok(manifest)
}

/// Parses without touching the referenced files.
pub fn parse_manifest(bytes: &[u8], root: PathBuf) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| Error::ManifestInvalid(format!("unreadable header: {e}")))?
        .clone();
    if headers.iter().ne(HEADER) {
        return Err(Error::ManifestInvalid(format!(
            "header must be `{}`, found `{}`",
            HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<RawRow>().enumerate() {
        let row = i + 1;
        let fail = |message: String| Error::Manifest { row, message };
        let raw = rec.map_err(|e| fail(e.to_string()))?;
        if raw.image.is_empty() || raw.mask.is_empty() {
            return Err(fail("image and mask paths are required".into()));
        }
        if raw.patient_id.is_empty() {
            return Err(fail("patient_id is required".into()));
        }
        let plane = match raw.plane.as_str() {
            "" => None,
            s => Some(s.parse().map_err(fail)?),
        };
        let split = match raw.split.as_str() {
            "" => None,
            s => Some(s.parse().map_err(fail)?),
        };
        rows.push(ManifestRow {
            image: raw.image,
            mask: raw.mask,
            patient_id: raw.patient_id,
            plane,
            classes: parse_classes(&raw.classes).map_err(fail)?,
            split,
        });
    }
    if rows.is_empty() {
        return Err(Error::Empty("manifest has no rows".into()));
    }
    let m = Manifest { root, rows };
    m.check_leakage()?;
    Ok(m)
}
