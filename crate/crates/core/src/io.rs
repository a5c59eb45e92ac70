//! File plumbing shared by the binary formats: atomic writes, content
//! hashes, and the `magic | version | header | payload` container used by
//! checkpoints.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Writes via a sibling temporary file and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serializes `magic | version u32 LE | header_len u32 LE | header | f64 LE payload`.
pub fn encode_container(magic: &[u8; 4], version: u32, header: &str, payload: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + header.len() + 8 * payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parsed container: the JSON header and the raw payload bytes.
pub struct Container<'a> {
    pub version: u32,
    pub header: String,
    pub payload: &'a [u8],
    pub payload_offset: usize,
}

pub fn decode_container<'a>(bytes: &'a [u8], magic: &[u8; 4], supported_version: u32) -> Result<Container<'a>> {
    if bytes.len() < 12 {
        return Err(Error::Length {
            expected: 12,
            actual: bytes.len(),
        });
    }
    if &bytes[0..4] != magic {
        return Err(Error::Format {
            offset: 0,
            detail: format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[0..4]),
                String::from_utf8_lossy(magic)
            ),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != supported_version {
        return Err(Error::Format {
            offset: 4,
            detail: format!("unsupported version {version}, expected {supported_version}"),
        });
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 12 + hlen {
        return Err(Error::Length {
            expected: 12 + hlen,
            actual: bytes.len(),
        });
    }
    let header = std::str::from_utf8(&bytes[12..12 + hlen])
        .map_err(|e| Error::Format {
            offset: 12 + e.valid_up_to(),
            detail: "header is not valid UTF-8".into(),
        })?
        .to_string();
    Ok(Container {
        version,
        header,
        payload: &bytes[12 + hlen..],
        payload_offset: 12 + hlen,
    })
}

impl Container<'_> {
    /// Reads exactly `count` f64 values, rejecting any other payload length.
    pub fn f64_payload(&self, count: usize) -> Result<Vec<f64>> {
        let expected = self.payload_offset + 8 * count;
        let actual = self.payload_offset + self.payload.len();
        if expected != actual {
            return Err(Error::Length { expected, actual });
        }
        Ok(self
            .payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_roundtrip_and_validation() {
        let bytes = encode_container(b"TEST", 1, "{\"a\":1}", &[1.5, -2.0]);
        let c = decode_container(&bytes, b"TEST", 1).unwrap();
        assert_eq!(c.header, "{\"a\":1}");
        assert_eq!(c.f64_payload(2).unwrap(), vec![1.5, -2.0]);
        assert!(matches!(c.f64_payload(3), Err(Error::Length { .. })));
        assert!(matches!(decode_container(&bytes, b"NOPE", 1), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode_container(&bytes, b"TEST", 2), Err(Error::Format { offset: 4, .. })));
        assert!(decode_container(&bytes[..10], b"TEST", 1).is_err());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/file.bin");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
