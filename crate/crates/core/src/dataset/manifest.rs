//! JSON-lines dataset manifests.
//!
//! Each line is one record: `{"path": ..., "vehicle_id": ..., "camera_id": ..., "split": ...}`.
//! An optional first line `{"name": ..., "n_cameras": N}` declares the camera
//! count; without it the count is inferred as `max(camera_id) + 1`. Relative
//! paths resolve against the manifest's directory.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::fsutil::write_atomic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
    /// Undivided test images; query/gallery are drawn by a protocol.
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    #[serde(rename = "path")]
    pub image_path: PathBuf,
    pub vehicle_id: u32,
    pub camera_id: u32,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub n_cameras: usize,
    pub n_identities: usize,
    pub records: Vec<ImageRecord>,
    /// Directory relative record paths resolve against.
    pub root: PathBuf,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    name: String,
    n_cameras: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    path: PathBuf,
    vehicle_id: u32,
    camera_id: u32,
    split: Split,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Line {
    Header(HeaderLine),
    Record(RecordLine),
}

impl DatasetManifest {
    /// Build and validate; records are sorted by path.
    pub fn new(name: impl Into<String>, n_cameras: usize, mut records: Vec<ImageRecord>, root: PathBuf) -> Result<Self> {
        records.sort_by(|a, b| a.image_path.cmp(&b.image_path));
        for r in &records {
            if r.camera_id as usize >= n_cameras {
                return Err(Error::validation(format!(
                    "{}: camera_id {} >= n_cameras {}",
                    r.image_path.display(),
                    r.camera_id,
                    n_cameras
                )));
            }
        }
        let n_identities = count_identities(&records);
        Ok(DatasetManifest {
            name: name.into(),
            n_cameras,
            n_identities,
            records,
            root,
        })
    }

    pub fn resolve(&self, record: &ImageRecord) -> PathBuf {
        if record.image_path.is_absolute() {
            record.image_path.clone()
        } else {
            self.root.join(&record.image_path)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// A manifest over a subset of records (same camera count and root).
    pub fn subset(&self, records: Vec<ImageRecord>) -> Result<Self> {
        DatasetManifest::new(self.name.clone(), self.n_cameras, records, self.root.clone())
    }

    /// Serialize to JSON lines with a header line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&HeaderLine {
            name: self.name.clone(),
            n_cameras: self.n_cameras,
        })?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }
}

fn count_identities(records: &[ImageRecord]) -> usize {
    records.iter().map(|r| r.vehicle_id).collect::<BTreeSet<_>>().len()
}

/// Parse manifest text. `path` is used for error messages and as the root.
pub fn parse_manifest(text: &str, path: &Path) -> Result<DatasetManifest> {
    let mut header: Option<HeaderLine> = None;
    let mut records = Vec::new();
    let mut lines_of = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: e.to_string(),
        })?;
        match parsed {
            Line::Header(h) if records.is_empty() && header.is_none() => header = Some(h),
            Line::Header(_) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: "header line must come first".into(),
                })
            }
            Line::Record(r) => {
                records.push(ImageRecord {
                    image_path: r.path,
                    vehicle_id: r.vehicle_id,
                    camera_id: r.camera_id,
                    split: r.split,
                });
                lines_of.push(lineno);
            }
        }
    }
    let (name, n_cameras) = match header {
        Some(h) => {
            if h.n_cameras == 0 {
                return Err(Error::validation(format!("{}: n_cameras must be positive", path.display())));
            }
            (h.name, h.n_cameras)
        }
        None => {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let n = records.iter().map(|r| r.camera_id as usize + 1).max().unwrap_or(0);
            (name, n)
        }
    };
    for (r, &lineno) in records.iter().zip(&lines_of) {
        if r.camera_id as usize >= n_cameras {
            return Err(Error::validation(format!(
                "{}:{}: camera_id {} >= n_cameras {}",
                path.display(),
                lineno,
                r.camera_id,
                n_cameras
            )));
        }
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::new(name, n_cameras, records, root)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).io_ctx(|| format!("reading manifest {}", path.display()))?;
    parse_manifest(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = r#"{"name":"t","n_cameras":2}"#;

    fn rec(path: &str, id: u32, cam: u32, split: &str) -> String {
        format!(r#"{{"path":"{path}","vehicle_id":{id},"camera_id":{cam},"split":"{split}"}}"#)
    }

    #[test]
    fn four_valid_lines() {
        let text = [
            HEADER.to_string(),
            rec("b.png", 1, 0, "train"),
            rec("a.png", 1, 1, "train"),
            rec("c.png", 2, 0, "query"),
            rec("d.png", 2, 1, "gallery"),
        ]
        .join("\n");
        let m = parse_manifest(&text, Path::new("/data/m.jsonl")).unwrap();
        assert_eq!(m.records.len(), 4);
        assert_eq!(m.n_cameras, 2);
        assert_eq!(m.n_identities, 2);
        // sorted by path
        assert_eq!(m.records[0].image_path, PathBuf::from("a.png"));
        assert_eq!(m.resolve(&m.records[0]), PathBuf::from("/data/a.png"));
    }

    #[test]
    fn empty_file() {
        let m = parse_manifest("", Path::new("m.jsonl")).unwrap();
        assert!(m.records.is_empty());
        assert_eq!(m.n_identities, 0);
    }

    #[test]
    fn camera_out_of_range_names_line() {
        let text = [HEADER.to_string(), rec("a.png", 1, 0, "train"), rec("b.png", 1, 5, "train")].join("\n");
        let err = parse_manifest(&text, Path::new("m.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("m.jsonl:3"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = [rec("a.png", 1, 0, "train"), "{not json".to_string()].join("\n");
        match parse_manifest(&text, Path::new("m.jsonl")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_split_is_a_parse_error() {
        let text = rec("a.png", 1, 0, "validation");
        assert!(matches!(parse_manifest(&text, Path::new("m")), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn late_header_rejected() {
        let text = [rec("a.png", 1, 0, "train"), HEADER.to_string()].join("\n");
        assert!(matches!(parse_manifest(&text, Path::new("m")), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn jsonl_roundtrip() {
        let text = [HEADER.to_string(), rec("a.png", 3, 1, "train")].join("\n");
        let m = parse_manifest(&text, Path::new("m.jsonl")).unwrap();
        let again = parse_manifest(&m.to_jsonl().unwrap(), Path::new("m.jsonl")).unwrap();
        assert_eq!(m, again);
    }
}
