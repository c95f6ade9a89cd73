//! CSV/JSON emitters, atomic writes and the run manifest.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// One in-memory output file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn json<T: Serialize>(name: &str, value: &T) -> Result<Self, CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Numerical(format!("{name}: {e}")))?;
        bytes.push(b'\n');
        Ok(Self { name: name.into(), bytes })
    }
}

/// CSV cell; floats keep 17 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::I(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::I(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::I(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.into())
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::I(v as i64)
    }
}

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Row-oriented CSV builder.
#[derive(Debug, Clone)]
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { text: format!("{}\n", header.join(",")), columns: header.len() }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        debug_assert_eq!(cells.len(), self.columns);
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            match c {
                Cell::F(v) => self.text.push_str(&format_f64(*v)),
                Cell::I(v) => write!(self.text, "{v}").unwrap(),
                Cell::S(s) => self.text.push_str(s),
            }
        }
        self.text.push('\n');
    }

    pub fn into_artifact(self, name: &str) -> Artifact {
        Artifact { name: name.into(), bytes: self.text.into_bytes() }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timings {
    pub compute_s: f64,
    pub write_s: f64,
    pub started_unix_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub schema_version: u32,
    pub threads: usize,
    pub outputs: Vec<OutputEntry>,
    pub timings: Timings,
}

/// Manifest file written next to the outputs of `command`.
pub fn manifest_name(command: &str) -> String {
    format!("{command}.manifest.json")
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Stages every artifact in a temporary file inside `dir`, then renames
/// them into place. A failure before the renames leaves `dir` untouched.
pub fn write_atomic(dir: &Path, artifacts: &[Artifact]) -> Result<Vec<OutputEntry>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut staged = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        let mut tmp = tempfile::Builder::new().prefix(".fdmr-").suffix(".part").tempfile_in(dir).map_err(|e| io(dir, e))?;
        tmp.write_all(&a.bytes).map_err(|e| io(tmp.path(), e))?;
        tmp.as_file().sync_all().map_err(|e| io(tmp.path(), e))?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644)).map_err(|e| io(tmp.path(), e))?;
        }
        staged.push((tmp, a));
    }
    let mut entries = Vec::with_capacity(artifacts.len());
    for (tmp, a) in staged {
        let target = dir.join(&a.name);
        tmp.persist(&target).map_err(|e| io(&target, e.error))?;
        entries.push(OutputEntry { file: a.name.clone(), sha256: sha256_hex(&a.bytes), bytes: a.bytes.len() });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, -1.0 / 3.0, 1545.265, 6.02214076e23, 5e-324, f64::MAX] {
            assert_eq!(format_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn csv_rows_join_cells() {
        let mut c = Csv::new(&["a", "b", "c"]);
        c.row(vec![1.5.into(), 3usize.into(), "x".into()]);
        let a = c.into_artifact("t.csv");
        assert_eq!(String::from_utf8(a.bytes).unwrap(), "a,b,c\n1.5000000000000000e0,3,x\n");
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn atomic_write_leaves_no_staging_files() {
        let dir = tempfile::tempdir().unwrap();
        let arts = vec![Artifact { name: "a.txt".into(), bytes: b"1".to_vec() }, Artifact { name: "b.txt".into(), bytes: b"2".to_vec() }];
        let e = write_atomic(dir.path(), &arts).unwrap();
        assert_eq!(e.len(), 2);
        let mut names: Vec<String> = std::fs::read_dir(dir.path()).unwrap().map(|d| d.unwrap().file_name().into_string().unwrap()).collect();
        names.sort();
        assert_eq!(names, ["a.txt", "b.txt"]);
        assert_eq!(std::fs::read(dir.path().join("b.txt")).unwrap(), b"2");
    }
}
