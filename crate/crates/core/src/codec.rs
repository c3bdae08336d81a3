//! Binary payload format used for file-based parameter passing.
//!
//! Layout of an encoded payload (all integers little-endian):
//!
//! | field          | width          | notes                                  |
//! |----------------|----------------|----------------------------------------|
//! | magic          | 4              | `TFRT`                                 |
//! | format version | 1              | currently `1`                          |
//! | type tag       | 1              | see [`TypeTag`]                        |
//! | shape          | 0, 8 or 16     | `u64` dimensions, count fixed per tag  |
//! | payload        | variable       | raw little-endian element data         |
//! | checksum       | 8              | FNV-1a 64 of every preceding byte      |
//!
//! A scalar therefore takes 22 bytes, and an empty vector 22 bytes as well
//! (8 bytes of shape, no payload).
//!
//! Composite values (fragments, neighbor sets, partial sums) travel as
//! [`Value::Bytes`] holding a *bundle*: a `u32` item count followed by
//! `u64`-length-prefixed encoded payloads. See [`pack`] and [`unpack`].

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::value::{Matrix, Value};

pub const MAGIC: [u8; 4] = *b"TFRT";
pub const FORMAT_VERSION: u8 = 1;
const CHECKSUM_LEN: usize = 8;
const PREFIX_LEN: usize = 6;
/// Smallest possible encoding: prefix plus checksum, no shape, no payload.
pub const MIN_ENCODED_LEN: usize = PREFIX_LEN + CHECKSUM_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum TypeTag {
    I64 = 0,
    F64 = 1,
    F64Vec = 2,
    Matrix = 3,
    I64Vec = 4,
    Bytes = 5,
}

impl TypeTag {
    fn from_u8(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => TypeTag::I64,
            1 => TypeTag::F64,
            2 => TypeTag::F64Vec,
            3 => TypeTag::Matrix,
            4 => TypeTag::I64Vec,
            5 => TypeTag::Bytes,
            _ => return None,
        })
    }

    fn dims(self) -> usize {
        match self {
            TypeTag::I64 | TypeTag::F64 => 0,
            TypeTag::F64Vec | TypeTag::I64Vec | TypeTag::Bytes => 1,
            TypeTag::Matrix => 2,
        }
    }

    fn elem_width(self) -> usize {
        match self {
            TypeTag::Bytes => 1,
            _ => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("value of type {0} has no binary encoding")]
    UnsupportedType(&'static str),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown type tag {0}")]
    UnknownTypeTag(u8),
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },
    #[error("malformed bundle")]
    BadBundle,
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

fn tag_of(value: &Value) -> Result<TypeTag, CodecError> {
    Ok(match value {
        Value::I64(_) => TypeTag::I64,
        Value::F64(_) => TypeTag::F64,
        Value::F64Vec(_) => TypeTag::F64Vec,
        Value::Matrix(_) => TypeTag::Matrix,
        Value::I64Vec(_) => TypeTag::I64Vec,
        Value::Bytes(_) => TypeTag::Bytes,
        Value::Unit => return Err(CodecError::UnsupportedType("unit")),
    })
}

/// Size in bytes of `encode(value)` without encoding it.
pub fn encoded_len(value: &Value) -> Result<usize, CodecError> {
    let tag = tag_of(value)?;
    let payload = match value {
        Value::I64(_) | Value::F64(_) => 8,
        Value::F64Vec(v) => v.len() * 8,
        Value::I64Vec(v) => v.len() * 8,
        Value::Matrix(m) => m.as_slice().len() * 8,
        Value::Bytes(b) => b.len(),
        Value::Unit => unreachable!(),
    };
    Ok(MIN_ENCODED_LEN + tag.dims() * 8 + payload)
}

pub fn encode(value: &Value) -> Result<Vec<u8>, CodecError> {
    let tag = tag_of(value)?;
    let mut out = Vec::with_capacity(encoded_len(value)?);
    out.extend_from_slice(&MAGIC);
    out.push(FORMAT_VERSION);
    out.push(tag as u8);
    match value {
        Value::I64(v) => out.extend_from_slice(&v.to_le_bytes()),
        Value::F64(v) => out.extend_from_slice(&v.to_le_bytes()),
        Value::F64Vec(v) => {
            out.extend_from_slice(&(v.len() as u64).to_le_bytes());
            v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        }
        Value::I64Vec(v) => {
            out.extend_from_slice(&(v.len() as u64).to_le_bytes());
            v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        }
        Value::Matrix(m) => {
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            m.as_slice()
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        }
        Value::Bytes(b) => {
            out.extend_from_slice(&(b.len() as u64).to_le_bytes());
            out.extend_from_slice(b);
        }
        Value::Unit => unreachable!(),
    }
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

fn read_u64(bytes: &[u8]) -> u64 {
    u64::from_le_bytes(bytes[..8].try_into().expect("8-byte slice"))
}

pub fn decode(bytes: &[u8]) -> Result<Value, CodecError> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(CodecError::BadMagic);
    }
    if bytes.len() < MIN_ENCODED_LEN {
        return Err(CodecError::Length {
            expected: MIN_ENCODED_LEN,
            found: bytes.len(),
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    let stored = read_u64(trailer);
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(CodecError::ChecksumMismatch { stored, computed });
    }
    if body[4] != FORMAT_VERSION {
        return Err(CodecError::UnsupportedVersion(body[4]));
    }
    let tag = TypeTag::from_u8(body[5]).ok_or(CodecError::UnknownTypeTag(body[5]))?;

    let rest = &body[PREFIX_LEN..];
    let shape_len = tag.dims() * 8;
    if rest.len() < shape_len {
        return Err(CodecError::Length {
            expected: PREFIX_LEN + shape_len + CHECKSUM_LEN,
            found: bytes.len(),
        });
    }
    let (shape, payload) = rest.split_at(shape_len);
    let dims: Vec<u64> = shape.chunks_exact(8).map(read_u64).collect();
    let count = match tag.dims() {
        0 => Some(1u64),
        1 => Some(dims[0]),
        _ => dims[0].checked_mul(dims[1]),
    };
    let expected = count
        .and_then(|c| usize::try_from(c).ok())
        .and_then(|c| c.checked_mul(tag.elem_width()));
    if expected != Some(payload.len()) {
        return Err(CodecError::Length {
            expected: expected.unwrap_or(usize::MAX),
            found: payload.len(),
        });
    }

    let f64s = || -> Vec<f64> {
        payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    Ok(match tag {
        TypeTag::I64 => Value::I64(i64::from_le_bytes(payload.try_into().unwrap())),
        TypeTag::F64 => Value::F64(f64::from_le_bytes(payload.try_into().unwrap())),
        TypeTag::F64Vec => Value::F64Vec(f64s()),
        TypeTag::I64Vec => Value::I64Vec(
            payload
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        TypeTag::Matrix => Value::Matrix(
            Matrix::from_row_major(dims[0] as usize, dims[1] as usize, f64s())
                .expect("length checked above"),
        ),
        TypeTag::Bytes => Value::Bytes(payload.to_vec()),
    })
}

/// Packs several values into one [`Value::Bytes`] bundle.
pub fn pack(items: &[Value]) -> Result<Value, CodecError> {
    let mut out = Vec::new();
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for item in items {
        let enc = encode(item)?;
        out.extend_from_slice(&(enc.len() as u64).to_le_bytes());
        out.extend_from_slice(&enc);
    }
    Ok(Value::Bytes(out))
}

/// Inverse of [`pack`].
pub fn unpack(bundle: &[u8]) -> Result<Vec<Value>, CodecError> {
    let count_bytes: [u8; 4] = bundle
        .get(..4)
        .and_then(|b| b.try_into().ok())
        .ok_or(CodecError::BadBundle)?;
    let count = u32::from_le_bytes(count_bytes) as usize;
    let mut rest = &bundle[4..];
    let mut items = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        if rest.len() < 8 {
            return Err(CodecError::BadBundle);
        }
        let len = usize::try_from(read_u64(rest)).map_err(|_| CodecError::BadBundle)?;
        rest = &rest[8..];
        if rest.len() < len {
            return Err(CodecError::BadBundle);
        }
        items.push(decode(&rest[..len])?);
        rest = &rest[len..];
    }
    if !rest.is_empty() {
        return Err(CodecError::BadBundle);
    }
    Ok(items)
}

/// Writes the encoding of `value` to `path` through a temporary file and an
/// atomic rename. Returns the number of bytes written.
pub fn write_payload_file(path: &Path, value: &Value) -> io::Result<u64> {
    let bytes = encode(value).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::File::create(&tmp)?.write_all(&bytes)?;
    fs::rename(&tmp, path)?;
    Ok(bytes.len() as u64)
}

#[derive(Debug, Error)]
pub enum ReadPayloadError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: CodecError,
    },
}

pub fn read_payload_file(path: &Path) -> Result<Value, ReadPayloadError> {
    let bytes = fs::read(path).map_err(|source| ReadPayloadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes).map_err(|source| ReadPayloadError::Decode {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_is_22_bytes() {
        let enc = encode(&Value::I64(9)).unwrap();
        assert_eq!(enc.len(), 22);
        assert_eq!(&enc[..4], b"TFRT");
        assert_eq!(enc[4], 1);
        assert_eq!(enc[5], 0);
        assert_eq!(&enc[6..14], &9i64.to_le_bytes());
        assert_eq!(read_u64(&enc[14..]), fnv1a64(&enc[..14]));
        assert_eq!(encoded_len(&Value::I64(9)).unwrap(), 22);
    }

    #[test]
    fn matrix_layout_is_row_major() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let enc = encode(&Value::Matrix(m)).unwrap();
        assert_eq!(enc[5], 3);
        assert_eq!(read_u64(&enc[6..]), 2);
        assert_eq!(read_u64(&enc[14..]), 2);
        let payload = &enc[22..22 + 32];
        let vals: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(vals, [1.0, 2.0, 3.0, 4.0]);
        assert_eq!(enc.len(), 6 + 16 + 32 + 8);
    }

    #[test]
    fn empty_vector_is_valid() {
        let v = Value::F64Vec(vec![]);
        let enc = encode(&v).unwrap();
        assert_eq!(enc[5], 2);
        assert_eq!(read_u64(&enc[6..]), 0);
        assert_eq!(enc.len(), 22);
        assert_eq!(decode(&enc).unwrap(), v);
    }

    #[test]
    fn unit_is_unsupported() {
        assert_eq!(
            encode(&Value::Unit),
            Err(CodecError::UnsupportedType("unit"))
        );
    }

    #[test]
    fn corrupted_payload_is_detected() {
        let mut enc = encode(&Value::F64Vec(vec![1.5, 2.5, -0.0])).unwrap();
        enc[20] ^= 0x01;
        assert!(matches!(
            decode(&enc),
            Err(CodecError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn truncated_header() {
        let enc = encode(&Value::I64(1)).unwrap();
        assert_eq!(decode(&enc[..3]), Err(CodecError::BadMagic));
        assert!(matches!(
            decode(&enc[..10]),
            Err(CodecError::Length { .. } | CodecError::ChecksumMismatch { .. })
        ));
        assert_eq!(decode(b"NOPE0000000000"), Err(CodecError::BadMagic));
    }

    #[test]
    fn unknown_tag_with_valid_checksum() {
        let mut enc = encode(&Value::I64(1)).unwrap();
        enc[5] = 9;
        let n = enc.len();
        let sum = fnv1a64(&enc[..n - 8]);
        enc[n - 8..].copy_from_slice(&sum.to_le_bytes());
        assert_eq!(decode(&enc), Err(CodecError::UnknownTypeTag(9)));
    }

    #[test]
    fn bundle_roundtrip() {
        let items = vec![
            Value::I64(3),
            Value::Matrix(Matrix::zeros(2, 3)),
            Value::I64Vec(vec![]),
        ];
        let Value::Bytes(b) = pack(&items).unwrap() else {
            panic!()
        };
        assert_eq!(unpack(&b).unwrap(), items);
        assert_eq!(unpack(&b[..b.len() - 1]), Err(CodecError::BadBundle));
    }

    #[test]
    fn payload_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d1_v1.bin");
        let v = Value::F64Vec(vec![0.25; 17]);
        let n = write_payload_file(&path, &v).unwrap();
        assert_eq!(n as usize, encoded_len(&v).unwrap());
        assert_eq!(read_payload_file(&path).unwrap(), v);
        // no temporary files left behind
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
