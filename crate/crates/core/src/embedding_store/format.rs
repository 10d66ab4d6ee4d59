//! `GCEB` embedding files, little-endian throughout.
//!
//! ```text
//! header (16 bytes): magic "GCEB" | version u32 | dim u32 | record_count u32
//! record:            id u64 | label u8 | flags u8 (bit0: flipped present)
//!                    | image_emb dim*f32 | text_emb dim*f32
//!                    | [flipped_image_emb dim*f32 if bit0]
//!                    | [meta_tag u8, version 2 only]
//! ```
//!
//! Version 1 is what the extractor writes for real data; version 2 adds the
//! synthetic provenance tag.

use std::fs;
use std::path::Path;

use super::{Dataset, EmbeddingRecord, Label, MetaTag};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"GCEB";
pub const HEADER_LEN: usize = 16;

const FLAG_FLIPPED: u8 = 0b1;

pub fn encode_dataset(dataset: &Dataset) -> Result<Vec<u8>> {
    let dim = u32::try_from(dataset.dim())
        .map_err(|_| Error::InvalidArgument("dim does not fit in u32".into()))?;
    let count = u32::try_from(dataset.len())
        .map_err(|_| Error::InvalidArgument("record count does not fit in u32".into()))?;
    let version = dataset.format_version();

    let per_record = 10 + 2 * 4 * dataset.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + dataset.len() * (per_record + 1));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());

    for r in dataset.records() {
        out.extend_from_slice(&r.id.to_le_bytes());
        out.push(r.label.as_u8());
        out.push(if r.flipped_image_emb.is_some() {
            FLAG_FLIPPED
        } else {
            0
        });
        for v in [
            Some(&r.image_emb),
            Some(&r.text_emb),
            r.flipped_image_emb.as_ref(),
        ]
        .into_iter()
        .flatten()
        {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        if version == 2 {
            out.push(r.meta_tag.as_u8());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Option<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4)?)?;
        Some(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedHeader(format!(
            "{} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedHeader(format!(
            "{} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    let mut cur = Cursor { buf: bytes, pos: 4 };
    let version = cur.u32().unwrap();
    if version != 1 && version != 2 {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = cur.u32().unwrap() as usize;
    let count = cur.u32().unwrap() as usize;
    if dim == 0 {
        return Err(Error::InvalidArgument("header declares dim 0".into()));
    }

    let mut records = Vec::with_capacity(count.min(1 << 20));
    for record in 0..count {
        let truncated = || Error::TruncatedRecord { record };
        let id = cur.u64().ok_or_else(truncated)?;
        let label_byte = cur.u8().ok_or_else(truncated)?;
        let flags = cur.u8().ok_or_else(truncated)?;
        let image_emb = cur.f32s(dim).ok_or_else(truncated)?;
        let text_emb = cur.f32s(dim).ok_or_else(truncated)?;
        let flipped_image_emb = if flags & FLAG_FLIPPED != 0 {
            Some(cur.f32s(dim).ok_or_else(truncated)?)
        } else {
            None
        };
        let meta_tag = if version == 2 {
            let tag = cur.u8().ok_or_else(truncated)?;
            MetaTag::from_u8(tag).ok_or(Error::InvalidMetaTag { record, tag })?
        } else {
            MetaTag::None
        };
        if flags & !FLAG_FLIPPED != 0 {
            return Err(Error::InvalidArgument(format!(
                "record {record}: unknown flag bits {flags:#04x}"
            )));
        }
        let label = Label::from_u8(label_byte).ok_or(Error::InvalidLabel {
            record,
            label: label_byte,
        })?;
        records.push(EmbeddingRecord {
            id,
            label,
            image_emb,
            text_emb,
            flipped_image_emb,
            meta_tag,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::TrailingBytes {
            trailing: bytes.len() - cur.pos,
        });
    }
    Dataset::new(dim, records, version == 2)
}

pub fn write_embedding_file(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_dataset(dataset)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}
