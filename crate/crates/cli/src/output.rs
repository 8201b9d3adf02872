//! CSV and stamp writers. Every file carries the manifest hash on its first
//! line so that outputs from different manifests are never compared.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const HASH_PREFIX: &str = "# manifest_hash=";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Shortest round-trip decimal form; stable across runs and platforms.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Hash line, optional `# key=value` comment lines, then the table.
    pub fn to_bytes(&self, hash: &str, comments: &[String]) -> CliResult<Vec<u8>> {
        let mut out = format!("{HASH_PREFIX}{hash}\n").into_bytes();
        for c in comments {
            out.extend_from_slice(format!("# {c}\n").as_bytes());
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        out.extend(w.into_inner().map_err(|e| CliError::Io(e.into_error()))?);
        Ok(out)
    }

    pub fn write(&self, path: &Path, hash: &str, comments: &[String]) -> CliResult<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes(hash, comments)?)?;
        Ok(())
    }
}

/// The hash recorded on the first line of a CSV written by [`Table::write`].
pub fn read_hash(path: &Path) -> CliResult<Option<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().next().and_then(|l| l.strip_prefix(HASH_PREFIX)).map(str::to_owned))
}

#[derive(Debug, Clone, Serialize)]
pub struct Stamp {
    pub command: String,
    pub manifest_hash: String,
    pub seed: u64,
    /// `manifest`, `SHE_SEED` or `default`.
    pub seed_source: String,
    pub version: String,
}

impl Stamp {
    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join("stamp.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Comparison {
    Identical { files: usize },
    Differs { files: Vec<String> },
}

/// Byte comparison of every CSV in two output directories. Refuses when a
/// pair of files carries different manifest hashes.
pub fn compare_dirs(a: &Path, b: &Path) -> CliResult<Comparison> {
    let list = |d: &Path| -> CliResult<Vec<String>> {
        let mut names: Vec<String> = fs::read_dir(d)?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".csv"))
            .collect();
        names.sort();
        Ok(names)
    };
    let (na, nb) = (list(a)?, list(b)?);
    if na != nb {
        return Err(CliError::Usage(format!(
            "directories hold different CSV sets: {na:?} vs {nb:?}"
        )));
    }
    let mut differs = Vec::new();
    for name in &na {
        let (pa, pb) = (a.join(name), b.join(name));
        let (ha, hb) = (read_hash(&pa)?, read_hash(&pb)?);
        if ha.is_none() || ha != hb {
            return Err(CliError::HashMismatch {
                file: name.clone(),
                left: ha.unwrap_or_default(),
                right: hb.unwrap_or_default(),
            });
        }
        if fs::read(&pa)? != fs::read(&pb)? {
            differs.push(name.clone());
        }
    }
    Ok(if differs.is_empty() {
        Comparison::Identical { files: na.len() }
    } else {
        Comparison::Differs { files: differs }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 2.5e10, -0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
    }

    #[test]
    fn csv_carries_hash_and_compares() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new(["a", "b"]);
        t.push(vec!["1".into(), fmt_f64(0.5)]);
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        t.write(&a.join("x.csv"), "abc", &["k=v".into()]).unwrap();
        t.write(&b.join("x.csv"), "abc", &["k=v".into()]).unwrap();
        assert_eq!(read_hash(&a.join("x.csv")).unwrap().as_deref(), Some("abc"));
        assert_eq!(compare_dirs(&a, &b).unwrap(), Comparison::Identical { files: 1 });
        t.write(&b.join("x.csv"), "def", &[]).unwrap();
        assert!(matches!(compare_dirs(&a, &b), Err(CliError::HashMismatch { .. })));
    }

    #[test]
    fn sha_is_hex() {
        let h = sha256_hex(b"abc");
        assert_eq!(h, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
