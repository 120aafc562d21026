//! Embedding shard files.
//!
//! Layout (little-endian): magic `PAMEMB01`, `u32` dim, `u64` count, then
//! `count` records of `[u64 window_id][dim x f32]`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::ByteReader;
use crate::error::{invalid, Error, ParseError, Result};
use crate::model::WindowId;

pub const SHARD_MAGIC: &[u8; 8] = b"PAMEMB01";
const HEADER_LEN: u64 = 8 + 4 + 8;

/// A block of window embeddings stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingShard {
    dim: usize,
    ids: Vec<WindowId>,
    data: Vec<f32>,
}

impl EmbeddingShard {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(invalid(format!("shard dim {dim} out of range")));
        }
        Ok(EmbeddingShard {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
        })
    }

    pub fn from_records<I, V>(dim: usize, records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (WindowId, V)>,
        V: AsRef<[f32]>,
    {
        let mut shard = Self::new(dim)?;
        let mut seen = HashSet::new();
        for (id, v) in records {
            if !seen.insert(id) {
                return Err(Error::DuplicateWindows(vec![id]));
            }
            shard.push(id, v.as_ref())?;
        }
        Ok(shard)
    }

    /// Appends a record. Uniqueness of `id` is the caller's responsibility;
    /// [`write_shard`] and [`read_shard`] both check it.
    pub fn push(&mut self, id: WindowId, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if let Some(x) = vector.iter().find(|x| !x.is_finite()) {
            return Err(invalid(format!("window {id}: non-finite component {x}")));
        }
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[WindowId] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn records(&self) -> impl Iterator<Item = (WindowId, &[f32])> + '_ {
        self.ids.iter().copied().zip(self.data.chunks_exact(self.dim))
    }

    pub fn encode<W: Write>(&self, mut out: W) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.ids.len());
        if let Some(dup) = self.ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::DuplicateWindows(vec![*dup]));
        }
        out.write_all(SHARD_MAGIC)?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        for (id, v) in self.records() {
            out.write_all(&id.0.to_le_bytes())?;
            for x in v {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Decodes a full shard. With `expected_dim` set, a header declaring a
    /// different width is rejected before any record is read.
    pub fn decode<R: Read>(input: R, expected_dim: Option<usize>) -> Result<Self> {
        let mut reader = ByteReader::new(input);
        reader.magic(SHARD_MAGIC, "PAMEMB01")?;
        let dim_offset = reader.offset;
        let dim = reader.u32("dim")?;
        if dim == 0 {
            return Err(ParseError::InvalidField {
                offset: dim_offset,
                message: "dim must be positive".into(),
            }
            .into());
        }
        if let Some(expected) = expected_dim {
            if expected != dim as usize {
                return Err(ParseError::DimMismatch {
                    offset: dim_offset,
                    expected: expected as u32,
                    found: dim,
                }
                .into());
            }
        }
        let count = reader.u64("count")?;
        let dim = dim as usize;
        let mut shard = EmbeddingShard::new(dim)?;
        // Count comes from the file; don't trust it for allocation.
        let reserve = count.min(1 << 16) as usize;
        shard.ids.reserve(reserve);
        shard.data.reserve(reserve * dim);
        let mut seen = HashSet::with_capacity(reserve);
        let mut row = vec![0u8; dim * 4];
        for _ in 0..count {
            let id_offset = reader.offset;
            let id = reader.u64("window id")?;
            if !seen.insert(id) {
                return Err(ParseError::DuplicateId {
                    offset: id_offset,
                    id,
                }
                .into());
            }
            let row_offset = reader.offset;
            reader.fill(&mut row, "vector")?;
            for (j, bytes) in row.chunks_exact(4).enumerate() {
                let x = f32::from_le_bytes(bytes.try_into().unwrap());
                if !x.is_finite() {
                    return Err(ParseError::NonFinite {
                        offset: row_offset + 4 * j as u64,
                    }
                    .into());
                }
                shard.data.push(x);
            }
            shard.ids.push(WindowId(id));
        }
        reader.finish()?;
        Ok(shard)
    }

    /// Size of the encoded form in bytes.
    pub fn encoded_len(&self) -> u64 {
        HEADER_LEN + self.ids.len() as u64 * (8 + 4 * self.dim as u64)
    }
}

pub fn write_shard(shard: &EmbeddingShard, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    shard.encode(BufWriter::new(file))
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<EmbeddingShard> {
    read_shard_with_dim(path, None)
}

pub fn read_shard_with_dim(
    path: impl AsRef<Path>,
    expected_dim: Option<usize>,
) -> Result<EmbeddingShard> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    EmbeddingShard::decode(BufReader::new(file), expected_dim)
}

/// Reads only the header and returns `(dim, count)`.
pub fn peek_shard_header(path: impl AsRef<Path>) -> Result<(usize, u64)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = ByteReader::new(BufReader::new(file));
    reader.magic(SHARD_MAGIC, "PAMEMB01")?;
    let dim = reader.u32("dim")?;
    let count = reader.u64("count")?;
    Ok((dim as usize, count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> EmbeddingShard {
        EmbeddingShard::from_records(
            4,
            vec![
                (WindowId(7), vec![1.0, 2.0, 3.0, 4.0]),
                (WindowId(3), vec![-0.5, 0.0, 0.25, 1e-30]),
                (WindowId(u64::MAX), vec![f32::MAX, f32::MIN, -0.0, 8.5]),
            ],
        )
        .unwrap()
    }

    fn encode(shard: &EmbeddingShard) -> Vec<u8> {
        let mut buf = Vec::new();
        shard.encode(&mut buf).unwrap();
        buf
    }

    fn parse_err(bytes: &[u8], dim: Option<usize>) -> ParseError {
        match EmbeddingShard::decode(bytes, dim) {
            Err(Error::Parse(e)) => e,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_three_records() {
        let s = sample();
        let bytes = encode(&s);
        assert_eq!(bytes.len() as u64, s.encoded_len());
        let back = EmbeddingShard::decode(&bytes[..], None).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pamemb");
        write_shard(&sample(), &path).unwrap();
        assert_eq!(read_shard(&path).unwrap(), sample());
        assert_eq!(peek_shard_header(&path).unwrap(), (4, 3));
    }

    #[test]
    fn empty_shard_is_valid() {
        let s = EmbeddingShard::new(16).unwrap();
        let bytes = encode(&s);
        assert_eq!(bytes.len(), 20);
        let back = EmbeddingShard::decode(&bytes[..], Some(16)).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 16);
    }

    #[test]
    fn truncated_final_record_reports_offset() {
        let bytes = encode(&sample());
        // header 20 + two records of 8 + 16 bytes, then the third id, then 5 vector bytes
        let cut = 20 + 2 * 24 + 8 + 5;
        let err = parse_err(&bytes[..cut], None);
        assert_eq!(
            err,
            ParseError::Truncated {
                offset: cut as u64,
                needed: 11,
                what: "vector"
            }
        );
        let err = parse_err(&bytes[..20 + 24 + 3], None);
        assert_eq!(
            err,
            ParseError::Truncated {
                offset: 47,
                needed: 5,
                what: "window id"
            }
        );
    }

    #[test]
    fn bad_magic_and_dim_mismatch() {
        let mut bytes = encode(&sample());
        assert_eq!(
            parse_err(&bytes, Some(8)),
            ParseError::DimMismatch {
                offset: 8,
                expected: 8,
                found: 4
            }
        );
        bytes[0] = b'X';
        assert!(matches!(parse_err(&bytes, None), ParseError::BadMagic { .. }));
    }

    #[test]
    fn duplicate_and_non_finite_rejected() {
        let mut bytes = encode(&sample());
        // overwrite the second id with the first
        let first: [u8; 8] = bytes[20..28].try_into().unwrap();
        bytes[44..52].copy_from_slice(&first);
        assert_eq!(
            parse_err(&bytes, None),
            ParseError::DuplicateId { offset: 44, id: 7 }
        );

        let mut bytes = encode(&sample());
        bytes[32..36].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(parse_err(&bytes, None), ParseError::NonFinite { offset: 32 });

        let mut bytes = encode(&sample());
        bytes.push(0);
        assert!(matches!(parse_err(&bytes, None), ParseError::TrailingBytes { .. }));
    }

    #[test]
    fn push_validates() {
        let mut s = EmbeddingShard::new(2).unwrap();
        assert!(s.push(WindowId(1), &[1.0]).is_err());
        assert!(s.push(WindowId(1), &[1.0, f32::INFINITY]).is_err());
        assert!(EmbeddingShard::new(0).is_err());
        assert!(EmbeddingShard::from_records(1, vec![(WindowId(1), [0.0]), (WindowId(1), [1.0])]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn shard_round_trip_is_bit_exact(
            dim in 1usize..6,
            rows in proptest::collection::btree_map(any::<u64>(), proptest::collection::vec(-1e30f32..1e30, 6), 0..12),
        ) {
            let shard = EmbeddingShard::from_records(dim, rows.iter().map(|(id, v)| (WindowId(*id), &v[..dim]))).unwrap();
            let bytes = encode(&shard);
            let back = EmbeddingShard::decode(&bytes[..], Some(dim)).unwrap();
            prop_assert_eq!(encode(&back), bytes);
            prop_assert_eq!(back, shard);
        }
    }
}
