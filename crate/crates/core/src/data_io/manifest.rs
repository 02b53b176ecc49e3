//! Dataset manifests.
//!
//! Line-oriented UTF-8. Blank lines and lines starting with `#` are skipped.
//! Fields are tab-separated; relative paths resolve against the manifest's
//! directory and `-` marks an absent mask.
//!
//! ```text
//! bounds      <D_min> <D_max>
//! max_depth   <meters>
//! <image.ppm> <depth.sdt> <teacher.sdt | -> <gt.sdt | ->
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub image: PathBuf,
    pub depth: PathBuf,
    pub teacher_mask: Option<PathBuf>,
    pub gt_mask: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub records: Vec<Record>,
    pub depth_min: f64,
    pub depth_max: f64,
    pub max_depth: f64,
}

fn line_err(line: usize, msg: impl Into<String>) -> Error {
    Error::invalid(format!("manifest line {line}: {}", msg.into()))
}

fn number(line: usize, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| line_err(line, format!("bad number {s:?}")))
}

impl Manifest {
    /// Parses manifest text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut records = Vec::new();
        let (mut bounds, mut max_depth) = (None, None);
        let resolve = |p: &str| -> PathBuf {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match fields[0] {
                "bounds" => {
                    if fields.len() != 3 {
                        return Err(line_err(n, "bounds needs D_min and D_max"));
                    }
                    bounds = Some((number(n, fields[1])?, number(n, fields[2])?));
                }
                "max_depth" => {
                    if fields.len() != 2 {
                        return Err(line_err(n, "max_depth needs one value"));
                    }
                    max_depth = Some(number(n, fields[1])?);
                }
                _ => {
                    if fields.len() != 4 || fields.iter().any(|f| f.is_empty()) {
                        return Err(line_err(n, format!("expected 4 tab-separated fields, got {}", fields.len())));
                    }
                    let opt = |f: &str| (f != "-").then(|| resolve(f));
                    records.push(Record {
                        image: resolve(fields[0]),
                        depth: resolve(fields[1]),
                        teacher_mask: opt(fields[2]),
                        gt_mask: opt(fields[3]),
                    });
                }
            }
        }
        let (depth_min, depth_max) = bounds.ok_or_else(|| Error::invalid("manifest has no bounds line"))?;
        let max_depth = max_depth.ok_or_else(|| Error::invalid("manifest has no max_depth line"))?;
        let m = Self { records, depth_min, depth_max, max_depth };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.depth_min > 0.0 && self.depth_min < self.depth_max) {
            return Err(Error::invalid(format!(
                "manifest bounds must satisfy 0 < D_min < D_max, got {} and {}",
                self.depth_min, self.depth_max
            )));
        }
        if !(self.max_depth > 0.0) {
            return Err(Error::invalid(format!("max_depth must be positive, got {}", self.max_depth)));
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Serializes with paths relative to `base` where possible.
    pub fn to_text(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let opt = |p: &Option<PathBuf>| p.as_deref().map_or_else(|| "-".to_string(), rel);
        let mut s = String::new();
        writeln!(s, "bounds\t{}\t{}", self.depth_min, self.depth_max).unwrap();
        writeln!(s, "max_depth\t{}", self.max_depth).unwrap();
        for r in &self.records {
            writeln!(s, "{}\t{}\t{}\t{}", rel(&r.image), rel(&r.depth), opt(&r.teacher_mask), opt(&r.gt_mask)).unwrap();
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_text(path.parent().unwrap_or(Path::new(".")));
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
