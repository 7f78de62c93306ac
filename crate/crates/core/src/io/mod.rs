//! File formats: OBJ meshes, XYZ point clouds, depth images, primitive
//! JSON, token sequence JSON lines and weight containers.

pub mod depth;
pub mod obj;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use depth::{read_depth, write_depth};
pub use obj::{primitives_mesh, read_obj, write_obj};

use crate::error::{Error, Result};
use crate::geom::{Plane, Primitive};
use crate::parser::PrimitiveSet;
use crate::seqgen::{ModelWeights, Token, WeightContainer};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, data: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, data).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Whitespace-separated `x y z` per line; blank lines and `#` comments are
/// skipped and extra columns ignored.
pub fn parse_xyz(text: &str, path: &Path) -> Result<Vec<Vector3<f64>>> {
    let mut pts = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let c: Vec<f64> = content
            .split_whitespace()
            .take(3)
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: e.to_string(),
            })?;
        if c.len() < 3 || c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: "expected three finite coordinates".into(),
            });
        }
        pts.push(Vector3::new(c[0], c[1], c[2]));
    }
    Ok(pts)
}

pub fn read_xyz(path: &Path) -> Result<Vec<Vector3<f64>>> {
    parse_xyz(&read_text(path)?, path)
}

pub fn format_xyz(points: &[Vector3<f64>]) -> String {
    let mut s = String::new();
    for p in points {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    s
}

pub fn write_xyz(path: &Path, points: &[Vector3<f64>]) -> Result<()> {
    write_text(path, &format_xyz(points))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrimsMetadata {
    pub symmetry_plane: Option<Plane>,
    pub source_file: Option<String>,
    pub seed: Option<u64>,
    pub energy: Option<f64>,
    pub coverage: Option<f64>,
}

/// On-disk primitive set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimsFile {
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub mirror_of: Vec<Option<usize>>,
    #[serde(default)]
    pub metadata: PrimsMetadata,
    /// Optional per-primitive part labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u32>>,
}

impl PrimsFile {
    pub fn from_set(set: &PrimitiveSet, mut metadata: PrimsMetadata) -> Self {
        metadata.symmetry_plane = set.symmetry_plane;
        PrimsFile {
            primitives: set.primitives.clone(),
            mirror_of: set.mirror_of.clone(),
            metadata,
            labels: None,
        }
    }

    pub fn to_set(&self) -> PrimitiveSet {
        let mut set = PrimitiveSet::new(self.primitives.clone());
        if self.mirror_of.len() == self.primitives.len() {
            set.mirror_of = self.mirror_of.clone();
        }
        set.symmetry_plane = self.metadata.symmetry_plane;
        set
    }
}

pub fn write_prims(path: &Path, file: &PrimsFile) -> Result<()> {
    write_json(path, file)
}

pub fn read_prims(path: &Path) -> Result<PrimsFile> {
    let f: PrimsFile = read_json(path)?;
    if !f.mirror_of.is_empty() && f.mirror_of.len() != f.primitives.len() {
        return Err(Error::Format(format!("{}: mirror_of length differs from primitives", path.display())));
    }
    Ok(f)
}

/// One line of a token dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub name: String,
    pub tokens: Vec<Token>,
    /// Depth views, relative to the dataset directory.
    #[serde(default)]
    pub views: Vec<String>,
    #[serde(default)]
    pub symmetry_plane: Option<Plane>,
}

pub fn format_sequences(records: &[SequenceRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_sequences(path: &Path, records: &[SequenceRecord]) -> Result<()> {
    write_text(path, &format_sequences(records)?)
}

pub fn read_sequences(path: &Path) -> Result<Vec<SequenceRecord>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_weights(path: &Path, w: &ModelWeights) -> Result<()> {
    write_text(path, &serde_json::to_string(&w.to_container())?)
}

pub fn read_weights(path: &Path) -> Result<ModelWeights> {
    let c: WeightContainer = read_json(path)?;
    ModelWeights::from_container(c)
}
