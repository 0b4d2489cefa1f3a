//! Versioned little-endian weight container.
//!
//! ```text
//! "MTRC" | version: u32 = 1 | meta_len: u32 | meta (JSON bytes)
//! | entry_count: u32
//! | per entry: name_len: u16 | name | ndim: u8 | dims: u32 × ndim
//!              | payload_len: u64 | payload (f32 LE)
//! ```
//!
//! No padding anywhere. See `docs/checkpoint-format.md`.

use std::path::Path;

use indexmap::IndexMap;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::tensor::DenseArray;

pub const MAGIC: &[u8; 4] = b"MTRC";
pub const VERSION: u32 = 1;
pub const MAX_NAME_LEN: usize = 256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {0:?}, expected \"MTRC\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated while reading {0}")]
    Truncated(String),
    #[error("entry {name:?}: payload is {found} bytes, shape needs {expected}")]
    PayloadMismatch {
        name: String,
        expected: u64,
        found: u64,
    },
    #[error("invalid entry name {0:?}")]
    InvalidName(String),
    #[error("duplicate entry {0:?}")]
    DuplicateName(String),
    #[error("metadata is not UTF-8")]
    BadMeta,
    #[error("{0} trailing bytes after last entry")]
    TrailingBytes(usize),
    #[error("missing entry {0:?}")]
    MissingEntry(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    /// Embedded JSON, typically a serialised model config. May be empty.
    pub meta: String,
    pub entries: IndexMap<String, DenseArray>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.len() <= MAX_NAME_LEN && name.is_ascii()
}

impl Checkpoint {
    pub fn insert(&mut self, name: impl Into<String>, value: DenseArray) -> Result<()> {
        let name = name.into();
        if !valid_name(&name) {
            return Err(FormatError::InvalidName(name).into());
        }
        if self.entries.contains_key(&name) {
            return Err(FormatError::DuplicateName(name).into());
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&DenseArray> {
        self.entries
            .get(name)
            .ok_or_else(|| FormatError::MissingEntry(name.to_string()).into())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, arr) in &self.entries {
            if !valid_name(name) {
                return Err(FormatError::InvalidName(name.clone()).into());
            }
            if arr.shape().len() > u8::MAX as usize {
                return Err(Error::Config(format!(
                    "entry {name:?} has too many dimensions"
                )));
            }
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(arr.shape().len() as u8);
            for &d in arr.shape() {
                let d = u32::try_from(d)
                    .map_err(|_| Error::Config(format!("entry {name:?} extent {d} exceeds u32")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(&((arr.len() * 4) as u64).to_le_bytes());
            for v in arr.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if &magic != MAGIC {
            return Err(FormatError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta = std::str::from_utf8(r.take(meta_len, "metadata")?)
            .map_err(|_| FormatError::BadMeta)?
            .to_string();
        let count = r.u32("entry count")?;
        let mut entries = IndexMap::new();
        for i in 0..count {
            let name_len = r.u16(&format!("name length of entry {i}"))? as usize;
            let name = r.take(name_len, &format!("name of entry {i}"))?;
            let name = std::str::from_utf8(name)
                .ok()
                .filter(|n| valid_name(n))
                .ok_or_else(|| {
                    FormatError::InvalidName(String::from_utf8_lossy(name).into_owned())
                })?
                .to_string();
            let ndim = r.take(1, &format!("rank of entry {name:?}"))?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32(&format!("shape of entry {name:?}"))? as usize);
            }
            let payload_len = r.u64(&format!("payload length of entry {name:?}"))?;
            let expected = shape.iter().map(|&d| d as u64).product::<u64>() * 4;
            if payload_len != expected {
                return Err(FormatError::PayloadMismatch {
                    name,
                    expected,
                    found: payload_len,
                });
            }
            let raw = r.take(payload_len as usize, &format!("payload of entry {name:?}"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let arr = DenseArray::new(shape, data).expect("payload length checked");
            if entries.insert(name.clone(), arr).is_some() {
                return Err(FormatError::DuplicateName(name));
            }
        }
        if r.pos != bytes.len() {
            return Err(FormatError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self { meta, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| FormatError::Truncated(what.to_string()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_checkpoint_is_sixteen_bytes() {
        let bytes = Checkpoint::default().to_bytes().unwrap();
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[..4], b"MTRC");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
    }

    #[test]
    fn single_entry_layout() {
        let mut c = Checkpoint::default();
        c.insert("w", DenseArray::new(vec![2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        let bytes = c.to_bytes().unwrap();
        let expected: Vec<u8> = [
            &b"MTRC"[..],
            &[1, 0, 0, 0],
            &[0, 0, 0, 0],
            &[1, 0, 0, 0],
            &[1, 0],
            b"w",
            &[1],
            &[2, 0, 0, 0],
            &[8, 0, 0, 0, 0, 0, 0, 0],
            &[0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x40],
        ]
        .concat();
        assert_eq!(bytes, expected);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = Checkpoint::default().to_bytes().unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert_eq!(
            Checkpoint::from_bytes(&bytes),
            Err(FormatError::BadMagic(*b"XXXX"))
        );
        let mut bytes = Checkpoint::default().to_bytes().unwrap();
        bytes[4] = 2;
        assert_eq!(
            Checkpoint::from_bytes(&bytes),
            Err(FormatError::UnsupportedVersion(2))
        );
    }

    #[test]
    fn truncation_names_the_entry() {
        let mut c = Checkpoint::default();
        c.insert("blocks.0.w", DenseArray::zeros(vec![3, 2]))
            .unwrap();
        let bytes = c.to_bytes().unwrap();
        match Checkpoint::from_bytes(&bytes[..bytes.len() - 3]) {
            Err(FormatError::Truncated(what)) => assert!(what.contains("blocks.0.w"), "{what}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn payload_length_must_match_shape() {
        let mut c = Checkpoint::default();
        c.insert("w", DenseArray::zeros(vec![2])).unwrap();
        let mut bytes = c.to_bytes().unwrap();
        // payload_len sits after magic(4) version(4) meta_len(4) count(4)
        // name_len(2) name(1) ndim(1) dim(4).
        bytes[24] = 12;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(FormatError::PayloadMismatch {
                expected: 8,
                found: 12,
                ..
            })
        ));
    }

    #[test]
    fn names_are_validated() {
        let mut c = Checkpoint::default();
        assert!(c.insert("", DenseArray::zeros(vec![1])).is_err());
        assert!(c.insert("é", DenseArray::zeros(vec![1])).is_err());
        assert!(c
            .insert("x".repeat(257), DenseArray::zeros(vec![1]))
            .is_err());
        c.insert("x".repeat(256), DenseArray::zeros(vec![1]))
            .unwrap();
        assert!(c
            .insert("x".repeat(256), DenseArray::zeros(vec![1]))
            .is_err());
    }

    #[test]
    fn meta_round_trips() {
        let c = Checkpoint {
            meta: "{\"depth\":3}".into(),
            entries: IndexMap::new(),
        };
        let bytes = c.to_bytes().unwrap();
        assert_eq!(bytes.len(), 16 + 11);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
    }
}
