//! Versioned binary blobs: magic, format version, kind, task-space
//! fingerprint, then a bincode payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Result, SlideError};

pub const MAGIC: &[u8; 8] = b"SLIDECKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Header {
    pub version: u32,
    pub kind: String,
    pub fingerprint: String,
}

pub fn encode<T: Serialize>(kind: &str, fingerprint: &str, value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for field in [kind, fingerprint] {
        out.extend_from_slice(&(field.len() as u32).to_le_bytes());
        out.extend_from_slice(field.as_bytes());
    }
    bincode::serialize_into(&mut out, value).map_err(|e| SlideError::Checkpoint(e.to_string()))?;
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(SlideError::Checkpoint("truncated header".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn take_string(bytes: &mut &[u8]) -> Result<String> {
    let len = u32::from_le_bytes(take(bytes, 4)?.try_into().unwrap()) as usize;
    String::from_utf8(take(bytes, len)?.to_vec()).map_err(|_| SlideError::Checkpoint("header is not utf-8".into()))
}

pub fn read_header(mut bytes: &[u8]) -> Result<(Header, &[u8])> {
    if take(&mut bytes, MAGIC.len())? != MAGIC {
        return Err(SlideError::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(SlideError::Checkpoint(format!("unsupported format version {version}")));
    }
    let kind = take_string(&mut bytes)?;
    let fingerprint = take_string(&mut bytes)?;
    Ok((Header { version, kind, fingerprint }, bytes))
}

/// Decodes a blob, checking kind and (if given) fingerprint.
pub fn decode<T: DeserializeOwned>(bytes: &[u8], kind: &str, fingerprint: Option<&str>) -> Result<T> {
    let (header, payload) = read_header(bytes)?;
    if header.kind != kind {
        return Err(SlideError::Checkpoint(format!("expected a `{kind}` checkpoint, found `{}`", header.kind)));
    }
    if let Some(fp) = fingerprint {
        if header.fingerprint != fp {
            return Err(SlideError::Checkpoint(format!(
                "task-space fingerprint mismatch: checkpoint {} vs expected {fp}",
                header.fingerprint
            )));
        }
    }
    bincode::deserialize(payload).map_err(|e| SlideError::Checkpoint(e.to_string()))
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save<T: Serialize>(path: &Path, kind: &str, fingerprint: &str, value: &T) -> Result<()> {
    write_atomic(path, &encode(kind, fingerprint, value)?)
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str, fingerprint: Option<&str>) -> Result<T> {
    decode(&fs::read(path)?, kind, fingerprint)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_header_checks() {
        let value = (3u32, vec![1.5f64, -2.0], String::from("x"));
        let bytes = encode("demo", "abc", &value).unwrap();
        let back: (u32, Vec<f64>, String) = decode(&bytes, "demo", Some("abc")).unwrap();
        assert_eq!(back, value);
        assert!(decode::<(u32, Vec<f64>, String)>(&bytes, "other", None).is_err());
        assert!(decode::<(u32, Vec<f64>, String)>(&bytes, "demo", Some("abd")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_header(&bad), Err(SlideError::Checkpoint(_))));
        assert!(read_header(&bytes[..10]).is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        save(&p, "k", "f", &1u8).unwrap();
        save(&p, "k", "f", &2u8).unwrap();
        assert_eq!(load::<u8>(&p, "k", Some("f")).unwrap(), 2);
        assert!(!p.with_extension("tmp").exists());
    }
}
