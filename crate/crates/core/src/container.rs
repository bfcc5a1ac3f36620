//! Shared on-disk container: 4-byte magic, `u32` version, `u32` header
//! length (all little-endian), a UTF-8 JSON header, then a raw blob section.

use thiserror::Error;

pub const SUPPORTED_VERSION: u32 = 1;
const PREAMBLE: usize = 12;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported version {0} (this build reads version 1)")]
    UnsupportedVersion(u32),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("malformed header: {0}")]
    Header(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BlobRef {
    /// Byte offset into the blob section.
    pub offset: u64,
    /// Element count.
    pub len: u64,
}

/// Accumulates the blob section in write order.
#[derive(Debug, Default)]
pub struct BlobWriter {
    bytes: Vec<u8>,
}

impl BlobWriter {
    pub fn push_f32(&mut self, values: &[f32]) -> BlobRef {
        let offset = self.bytes.len() as u64;
        for v in values {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        BlobRef { offset, len: values.len() as u64 }
    }

    pub fn push_u32(&mut self, values: &[u32]) -> BlobRef {
        let offset = self.bytes.len() as u64;
        for v in values {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        BlobRef { offset, len: values.len() as u64 }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

pub fn encode(magic: &[u8; 4], header: &[u8], blobs: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + blobs.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&SUPPORTED_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(blobs);
    out
}

/// Splits a container into `(header, blobs)` after checking magic and
/// version.
pub fn decode<'a>(magic: &[u8; 4], bytes: &'a [u8]) -> Result<(&'a [u8], BlobReader<'a>), ContainerError> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(ContainerError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found,
        });
    }
    if bytes.len() < PREAMBLE {
        return Err(ContainerError::Truncated("file ends inside the preamble".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SUPPORTED_VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = PREAMBLE
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| ContainerError::Truncated(format!("header of {header_len} bytes runs past end of file")))?;
    Ok((&bytes[PREAMBLE..header_end], BlobReader { bytes: &bytes[header_end..] }))
}

pub struct BlobReader<'a> {
    bytes: &'a [u8],
}

impl BlobReader<'_> {
    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    fn slice(&self, r: BlobRef, what: &str) -> Result<&[u8], ContainerError> {
        let start = usize::try_from(r.offset).map_err(|_| ContainerError::Header(format!("{what}: offset overflow")))?;
        let n = usize::try_from(r.len)
            .ok()
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| ContainerError::Header(format!("{what}: length overflow")))?;
        let end = start
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                ContainerError::Truncated(format!(
                    "{what}: blob [{start}, {start}+{n}) exceeds blob section of {} bytes",
                    self.bytes.len()
                ))
            })?;
        Ok(&self.bytes[start..end])
    }

    pub fn f32s(&self, r: BlobRef, what: &str) -> Result<Vec<f32>, ContainerError> {
        Ok(self
            .slice(r, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn u32s(&self, r: BlobRef, what: &str) -> Result<Vec<u32>, ContainerError> {
        Ok(self
            .slice(r, what)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
