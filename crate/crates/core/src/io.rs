//! `.rkq` latent dumps and the `manifest.json` that indexes them.
//!
//! A dump is a fixed 48-byte little-endian header followed by the row-major
//! f32 payload:
//!
//! | offset | type    | field                                  |
//! |--------|---------|----------------------------------------|
//! | 0      | [u8; 4] | magic `RKQ1`                           |
//! | 4      | u32     | version (1)                            |
//! | 8      | u32     | dtype (0 = f32)                        |
//! | 12     | u32     | role (0 = key, 1 = query)              |
//! | 16     | u32     | stage (0 = pre_rope, 1 = post_rope)    |
//! | 20     | u32     | layout (0 = canonical interleaved)     |
//! | 24     | u32     | layer                                  |
//! | 28     | u32     | head                                   |
//! | 32     | u64     | n (rows)                               |
//! | 40     | u64     | d (head dim, even)                     |
//! | 48     | f32 × n·d | payload                              |

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cloud::{CloudMeta, LatentCloud, Role, RopeStage};
use crate::rope::RopeVariant;

pub const MAGIC: [u8; 4] = *b"RKQ1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 48;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u32),
    #[error("unknown layout code {0}")]
    UnknownLayout(u32),
    #[error("invalid header field {field} = {value}")]
    InvalidHeader { field: &'static str, value: u64 },
    #[error("payload size mismatch: header declares {expected} bytes, file holds {actual}")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error("cloud does not match header: {0}")]
    Inconsistent(String),
    #[error("{0} already exists")]
    AlreadyExists(PathBuf),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    CanonicalInterleaved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub version: u32,
    pub dtype: Dtype,
    pub n: u64,
    pub d: u64,
    pub role: Role,
    pub stage: RopeStage,
    pub layer: u32,
    pub head: u32,
    pub layout: Layout,
}

impl DumpHeader {
    pub fn for_cloud(cloud: &LatentCloud) -> Self {
        Self {
            version: VERSION,
            dtype: Dtype::F32,
            n: cloud.n() as u64,
            d: cloud.d() as u64,
            role: cloud.meta.role,
            stage: cloud.meta.stage,
            layer: cloud.meta.layer,
            head: cloud.meta.head,
            layout: Layout::CanonicalInterleaved,
        }
    }

    pub fn payload_len(&self) -> u64 {
        self.n * self.d * 4
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        let words = [
            self.version,
            0, // f32
            match self.role {
                Role::Key => 0,
                Role::Query => 1,
            },
            match self.stage {
                RopeStage::PreRope => 0,
                RopeStage::PostRope => 1,
            },
            0, // canonical interleaved
            self.layer,
            self.head,
        ];
        for (i, w) in words.iter().enumerate() {
            b[4 + 4 * i..8 + 4 * i].copy_from_slice(&w.to_le_bytes());
        }
        b[32..40].copy_from_slice(&self.n.to_le_bytes());
        b[40..48].copy_from_slice(&self.d.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; HEADER_LEN]) -> Result<Self, DumpError> {
        let magic: [u8; 4] = b[0..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(DumpError::BadMagic(magic));
        }
        let word = |i: usize| u32::from_le_bytes(b[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
        let version = word(0);
        if version != VERSION {
            return Err(DumpError::UnsupportedVersion(version));
        }
        if word(1) != 0 {
            return Err(DumpError::UnknownDtype(word(1)));
        }
        let role = match word(2) {
            0 => Role::Key,
            1 => Role::Query,
            v => {
                return Err(DumpError::InvalidHeader {
                    field: "role",
                    value: v.into(),
                })
            }
        };
        let stage = match word(3) {
            0 => RopeStage::PreRope,
            1 => RopeStage::PostRope,
            v => {
                return Err(DumpError::InvalidHeader {
                    field: "stage",
                    value: v.into(),
                })
            }
        };
        if word(4) != 0 {
            return Err(DumpError::UnknownLayout(word(4)));
        }
        let n = u64::from_le_bytes(b[32..40].try_into().expect("8 bytes"));
        let d = u64::from_le_bytes(b[40..48].try_into().expect("8 bytes"));
        if n == 0 {
            return Err(DumpError::InvalidHeader { field: "n", value: n });
        }
        if d == 0 || d % 2 != 0 {
            return Err(DumpError::InvalidHeader { field: "d", value: d });
        }
        Ok(Self {
            version,
            dtype: Dtype::F32,
            n,
            d,
            role,
            stage,
            layer: word(5),
            head: word(6),
            layout: Layout::CanonicalInterleaved,
        })
    }
}

/// Writes `cloud` as f32. Refuses to replace an existing file unless
/// `overwrite` is set.
pub fn write_dump(path: &Path, cloud: &LatentCloud, overwrite: bool) -> Result<DumpHeader, DumpError> {
    if cloud.positions().iter().enumerate().any(|(i, &p)| i != p) {
        return Err(DumpError::Inconsistent(
            "dumps store positions 0..n only".into(),
        ));
    }
    let header = DumpHeader::for_cloud(cloud);
    let file = if overwrite {
        File::create(path)?
    } else {
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .map_err(|e| match e.kind() {
                ErrorKind::AlreadyExists => DumpError::AlreadyExists(path.to_path_buf()),
                _ => DumpError::Io(e),
            })?
    };
    let mut w = BufWriter::new(file);
    w.write_all(&header.to_bytes())?;
    for &x in cloud.data() {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(header)
}

pub fn read_header(path: &Path) -> Result<DumpHeader, DumpError> {
    let mut f = File::open(path)?;
    let actual = f.metadata()?.len();
    let mut buf = [0u8; HEADER_LEN];
    f.read_exact(&mut buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => DumpError::SizeMismatch {
            expected: HEADER_LEN as u64,
            actual,
        },
        _ => DumpError::Io(e),
    })?;
    let header = DumpHeader::from_bytes(&buf)?;
    let expected = HEADER_LEN as u64 + header.payload_len();
    if actual != expected {
        return Err(DumpError::SizeMismatch { expected, actual });
    }
    Ok(header)
}

/// Reads a dump into f64 with positions `0..n`. The file length must match
/// the header exactly; nothing past the declared payload is read.
pub fn read_dump(path: &Path) -> Result<(DumpHeader, LatentCloud), DumpError> {
    let header = read_header(path)?;
    let mut r = BufReader::new(File::open(path)?);
    let mut skip = [0u8; HEADER_LEN];
    r.read_exact(&mut skip)?;
    let count = (header.n * header.d) as usize;
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let meta = CloudMeta {
        model: String::new(),
        layer: header.layer,
        head: header.head,
        role: header.role,
        stage: header.stage,
    };
    let cloud = LatentCloud::new(data, header.d as usize, meta)
        .map_err(|e| DumpError::Inconsistent(e.to_string()))?;
    Ok((header, cloud))
}

pub fn sha256_file(path: &Path) -> Result<String, DumpError> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut f, &mut hasher)?;
    Ok(format!("{:x}", hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub layer: u32,
    pub head: u32,
    pub role: Role,
    pub pre_post: RopeStage,
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model_name: String,
    pub train_len: u64,
    pub head_dim: u64,
    pub n_layers: u32,
    pub n_query_heads: u32,
    pub n_kv_heads: u32,
    pub rope_variant: RopeVariant,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, DumpError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| DumpError::Manifest(e.to_string()))
    }

    pub fn save(&self, path: &Path, overwrite: bool) -> Result<(), DumpError> {
        if !overwrite && path.exists() {
            return Err(DumpError::AlreadyExists(path.to_path_buf()));
        }
        let text = serde_json::to_string_pretty(self).map_err(|e| DumpError::Manifest(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn find(&self, layer: u32, head: u32, role: Role, stage: RopeStage) -> Option<&ManifestEntry> {
        self.files
            .iter()
            .find(|e| e.layer == layer && e.head == head && e.role == role && e.pre_post == stage)
    }
}

/// Manifest-relative path resolution.
pub fn resolve(manifest_path: &Path, entry: &ManifestEntry) -> PathBuf {
    manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&entry.path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntryProblem {
    Missing,
    ChecksumMismatch { expected: String, actual: String },
    HeaderMismatch { detail: String },
    Unreadable { detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryFailure {
    pub index: usize,
    pub path: String,
    pub problem: EntryProblem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestReport {
    pub manifest: Manifest,
    pub entries_checked: usize,
    pub failures: Vec<EntryFailure>,
}

impl ManifestReport {
    pub fn is_valid(&self) -> bool {
        self.failures.is_empty()
    }
}

fn check_entry(manifest: &Manifest, path: &Path, entry: &ManifestEntry) -> Option<EntryProblem> {
    if !path.exists() {
        return Some(EntryProblem::Missing);
    }
    let header = match read_header(path) {
        Ok(h) => h,
        Err(e) => {
            return Some(EntryProblem::Unreadable {
                detail: e.to_string(),
            })
        }
    };
    let mut mismatches = Vec::new();
    if header.layer != entry.layer {
        mismatches.push(format!("layer {} != {}", header.layer, entry.layer));
    }
    if header.head != entry.head {
        mismatches.push(format!("head {} != {}", header.head, entry.head));
    }
    if header.role != entry.role {
        mismatches.push(format!("role {:?} != {:?}", header.role, entry.role));
    }
    if header.stage != entry.pre_post {
        mismatches.push(format!("stage {:?} != {:?}", header.stage, entry.pre_post));
    }
    if header.d != manifest.head_dim {
        mismatches.push(format!("d {} != head_dim {}", header.d, manifest.head_dim));
    }
    if !mismatches.is_empty() {
        return Some(EntryProblem::HeaderMismatch {
            detail: mismatches.join("; "),
        });
    }
    match sha256_file(path) {
        Ok(actual) if actual.eq_ignore_ascii_case(&entry.sha256) => None,
        Ok(actual) => Some(EntryProblem::ChecksumMismatch {
            expected: entry.sha256.clone(),
            actual,
        }),
        Err(e) => Some(EntryProblem::Unreadable {
            detail: e.to_string(),
        }),
    }
}

/// Checks every entry's existence, header and checksum, collecting all
/// failures rather than stopping at the first.
pub fn validate_manifest(path: &Path) -> Result<ManifestReport, DumpError> {
    let manifest = Manifest::load(path)?;
    let failures = manifest
        .files
        .iter()
        .enumerate()
        .filter_map(|(index, entry)| {
            check_entry(&manifest, &resolve(path, entry), entry).map(|problem| EntryFailure {
                index,
                path: entry.path.clone(),
                problem,
            })
        })
        .collect();
    Ok(ManifestReport {
        entries_checked: manifest.files.len(),
        manifest,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(data: Vec<f64>, d: usize) -> LatentCloud {
        LatentCloud::new(data, d, CloudMeta::default()).unwrap()
    }

    #[test]
    fn known_payload_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.rkq");
        write_dump(&p, &cloud(vec![1.0, 2.0], 2), false).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"RKQ1");
        assert_eq!(&bytes[HEADER_LEN..], &[0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x40]);
        let (h, c) = read_dump(&p).unwrap();
        assert_eq!(h.n, 1);
        assert_eq!(c.data(), &[1.0, 2.0]);
    }

    #[test]
    fn refuses_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.rkq");
        let c = cloud(vec![1.0, 2.0], 2);
        write_dump(&p, &c, false).unwrap();
        assert!(matches!(write_dump(&p, &c, false), Err(DumpError::AlreadyExists(_))));
        write_dump(&p, &c, true).unwrap();
    }

    #[test]
    fn truncated_and_oversized_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.rkq");
        write_dump(&p, &cloud(vec![1.0, 2.0, 3.0, 4.0], 2), false).unwrap();
        let bytes = std::fs::read(&p).unwrap();

        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_dump(&p), Err(DumpError::SizeMismatch { .. })));

        let mut longer = bytes.clone();
        longer.extend_from_slice(&[0, 0, 0, 0]);
        std::fs::write(&p, &longer).unwrap();
        assert!(matches!(read_dump(&p), Err(DumpError::SizeMismatch { .. })));

        std::fs::write(&p, &bytes[..10]).unwrap();
        assert!(matches!(read_dump(&p), Err(DumpError::SizeMismatch { .. })));
    }

    #[test]
    fn distinct_header_errors() {
        let c = cloud(vec![1.0, 2.0], 2);
        let good = DumpHeader::for_cloud(&c).to_bytes();

        let mut b = good;
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(DumpHeader::from_bytes(&b), Err(DumpError::BadMagic(m)) if &m == b"XXXX"));

        let mut b = good;
        b[4] = 9;
        assert!(matches!(DumpHeader::from_bytes(&b), Err(DumpError::UnsupportedVersion(9))));

        let mut b = good;
        b[8] = 2;
        assert!(matches!(DumpHeader::from_bytes(&b), Err(DumpError::UnknownDtype(2))));

        let mut b = good;
        b[20] = 1;
        assert!(matches!(DumpHeader::from_bytes(&b), Err(DumpError::UnknownLayout(1))));

        let mut b = good;
        b[40] = 3;
        assert!(matches!(
            DumpHeader::from_bytes(&b),
            Err(DumpError::InvalidHeader { field: "d", .. })
        ));
    }
}
