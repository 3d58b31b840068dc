//! Artifact writing: metadata blocks, CSV/JSON encoding and no-clobber
//! atomic file creation.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const TOOL: &str = "ropegeom";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    /// SHA-256 of the command's canonical JSON configuration.
    pub config_sha256: String,
    #[serde(skip)]
    config: Value,
}

impl Metadata {
    pub fn new<C: Serialize>(command: &'static str, seed: u64, config: &C) -> CliResult<Self> {
        let config = serde_json::to_value(config)?;
        let bytes = serde_json::to_vec(&config)?;
        Ok(Self {
            tool: TOOL,
            version: VERSION,
            command,
            seed,
            config_sha256: format!("{:x}", Sha256::digest(bytes)),
            config,
        })
    }

    /// `# key: value` lines that precede the CSV header.
    pub fn csv_preamble(&self) -> String {
        format!(
            "# tool: {}\n# version: {}\n# command: {}\n# seed: {}\n# config_sha256: {}\n",
            self.tool, self.version, self.command, self.seed, self.config_sha256
        )
    }

    pub fn to_json(&self) -> Value {
        json!({
            "tool": self.tool,
            "version": self.version,
            "command": self.command,
            "seed": self.seed,
            "config_sha256": self.config_sha256,
            "config": self.config,
        })
    }
}

/// CSV body with the metadata preamble and an explicit header, so empty
/// tables still carry their schema.
pub fn csv_bytes<R: Serialize>(meta: &Metadata, header: &[&str], rows: &[R]) -> CliResult<Vec<u8>> {
    let mut buf = meta.csv_preamble().into_bytes();
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

/// `{"metadata": ..., <body fields>}`; `body` must serialize to an object.
pub fn json_bytes<B: Serialize>(meta: &Metadata, body: &B) -> CliResult<Vec<u8>> {
    let mut doc = serde_json::Map::new();
    doc.insert("metadata".into(), meta.to_json());
    match serde_json::to_value(body)? {
        Value::Object(fields) => doc.extend(fields),
        other => {
            doc.insert("data".into(), other);
        }
    }
    let mut text = serde_json::to_string_pretty(&Value::Object(doc))?;
    text.push('\n');
    Ok(text.into_bytes())
}

#[derive(Debug, Clone)]
pub struct OutputDir {
    pub dir: PathBuf,
    pub force: bool,
}

impl OutputDir {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Fails up front if any target exists and `--force` was not given.
    pub fn check_free(&self, names: &[&str]) -> CliResult<()> {
        if self.force {
            return Ok(());
        }
        for name in names {
            let p = self.path(name);
            if p.exists() {
                return Err(exists_error(&p));
            }
        }
        Ok(())
    }

    /// Writes through a temporary file in the same directory and renames it
    /// into place, so readers never observe a partial artifact.
    pub fn write(&self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let target = self.path(name);
        let parent = target.parent().unwrap_or(Path::new("."));
        std::fs::create_dir_all(parent)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        let persisted = if self.force {
            tmp.persist(&target).map(|_| ())
        } else {
            tmp.persist_noclobber(&target).map(|_| ())
        };
        persisted.map_err(|e| {
            if e.error.kind() == std::io::ErrorKind::AlreadyExists {
                exists_error(&target)
            } else {
                CliError::Io(e.error)
            }
        })?;
        Ok(target)
    }
}

fn exists_error(p: &Path) -> CliError {
    CliError::Invalid(format!("{} already exists (pass --force to overwrite)", p.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = Metadata::new("x", 1, &json!({"n": [1, 2]})).unwrap();
        let b = Metadata::new("x", 1, &json!({"n": [1, 2]})).unwrap();
        let c = Metadata::new("x", 1, &json!({"n": [1, 3]})).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.config_sha256, c.config_sha256);
        assert_eq!(a.config_sha256.len(), 64);
    }

    #[test]
    fn empty_csv_keeps_header() {
        let m = Metadata::new("x", 0, &json!({})).unwrap();
        let rows: Vec<(u32, f64)> = vec![];
        let text = String::from_utf8(csv_bytes(&m, &["a", "b"], &rows).unwrap()).unwrap();
        assert!(text.starts_with("# tool: ropegeom\n"));
        assert!(text.ends_with("a,b\n"));
    }

    #[test]
    fn refuses_to_clobber_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir {
            dir: dir.path().to_path_buf(),
            force: false,
        };
        out.write("f.txt", b"one").unwrap();
        assert!(out.check_free(&["f.txt"]).is_err());
        assert!(out.write("f.txt", b"two").is_err());
        assert_eq!(std::fs::read(dir.path().join("f.txt")).unwrap(), b"one");
        let forced = OutputDir { force: true, ..out };
        forced.write("f.txt", b"two").unwrap();
        assert_eq!(std::fs::read(dir.path().join("f.txt")).unwrap(), b"two");
    }
}
