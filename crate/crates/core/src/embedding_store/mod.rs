//! Embedding datasets: in-memory model, the `GCEB` file format, batching with
//! flip augmentation, and the synthetic cross-modal generator.

mod batching;
mod format;
mod synthetic;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batching::{make_batches, Batch};
pub use format::{
    decode_dataset, encode_dataset, read_embedding_file, write_embedding_file, HEADER_LEN, MAGIC,
};
pub use synthetic::{generate_synthetic, synthetic_directions, SyntheticConfig, SyntheticMode};

/// Largest tolerated deviation of an embedding's L2 norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-3;

/// Default embedding width of the frozen encoders.
pub const DEFAULT_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Benign,
    Hateful,
    Unlabeled,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Benign),
            1 => Some(Label::Hateful),
            255 => Some(Label::Unlabeled),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Benign => 0,
            Label::Hateful => 1,
            Label::Unlabeled => 255,
        }
    }

    pub fn from_bit(positive: bool) -> Self {
        if positive {
            Label::Hateful
        } else {
            Label::Benign
        }
    }

    /// Class index for a labeled example.
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Benign => Some(0),
            Label::Hateful => Some(1),
            Label::Unlabeled => None,
        }
    }
}

/// Which modality carries the label in a synthetic record.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum MetaTag {
    #[default]
    None,
    ImageSignal,
    TextSignal,
}

impl MetaTag {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(MetaTag::None),
            1 => Some(MetaTag::ImageSignal),
            2 => Some(MetaTag::TextSignal),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            MetaTag::None => 0,
            MetaTag::ImageSignal => 1,
            MetaTag::TextSignal => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetaTag::None => "none",
            MetaTag::ImageSignal => "image_signal",
            MetaTag::TextSignal => "text_signal",
        }
    }
}

impl fmt::Display for MetaTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetaTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MetaTag::None),
            "image_signal" => Ok(MetaTag::ImageSignal),
            "text_signal" => Ok(MetaTag::TextSignal),
            other => Err(Error::InvalidArgument(format!(
                "unknown meta tag {other:?}"
            ))),
        }
    }
}

/// One image/text pair with unit-norm embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: u64,
    pub label: Label,
    pub image_emb: Vec<f32>,
    pub text_emb: Vec<f32>,
    /// Embedding of the horizontally flipped image, when the extractor made one.
    pub flipped_image_emb: Option<Vec<f32>>,
    pub meta_tag: MetaTag,
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}

impl EmbeddingRecord {
    fn validate(&self, index: usize, dim: usize) -> Result<()> {
        let fields = [
            ("image_emb", Some(&self.image_emb)),
            ("text_emb", Some(&self.text_emb)),
            ("flipped_image_emb", self.flipped_image_emb.as_ref()),
        ];
        for (field, v) in fields {
            let Some(v) = v else { continue };
            if v.len() != dim {
                return Err(Error::DimMismatch {
                    record: index,
                    field,
                    expected: dim,
                    found: v.len(),
                });
            }
            let norm = l2_norm(v);
            if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
                return Err(Error::NormViolation {
                    record: index,
                    field,
                    norm,
                });
            }
        }
        Ok(())
    }
}

/// An ordered, validated collection of records sharing one embedding width.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    tagged: bool,
}

impl Dataset {
    /// Validates dims, norms and id uniqueness. `tagged` datasets keep their
    /// meta tags on disk (format version 2).
    pub fn new(dim: usize, records: Vec<EmbeddingRecord>, tagged: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be >= 1".into()));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            r.validate(i, dim)?;
            if !seen.insert(r.id) {
                return Err(Error::DuplicateId(r.id));
            }
        }
        Ok(Self {
            dim,
            records,
            tagged,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_tagged(&self) -> bool {
        self.tagged
    }

    /// True when at least one record carries a flipped-image embedding.
    pub fn has_flip(&self) -> bool {
        self.records.iter().any(|r| r.flipped_image_emb.is_some())
    }

    /// On-disk format version this dataset is written with.
    pub fn format_version(&self) -> u32 {
        if self.tagged {
            2
        } else {
            1
        }
    }

    /// `(benign, hateful, unlabeled)` counts.
    pub fn label_counts(&self) -> (usize, usize, usize) {
        self.records
            .iter()
            .fold((0, 0, 0), |(b, h, u), r| match r.label {
                Label::Benign => (b + 1, h, u),
                Label::Hateful => (b, h + 1, u),
                Label::Unlabeled => (b, h, u + 1),
            })
    }

    /// Errors on the first unlabeled record.
    pub fn require_labeled(&self) -> Result<()> {
        match self
            .records
            .iter()
            .position(|r| r.label == Label::Unlabeled)
        {
            Some(index) => Err(Error::Unlabeled { index }),
            None => Ok(()),
        }
    }

    /// The first `n` records and the rest, as two datasets.
    pub fn split_at(&self, n: usize) -> Result<(Self, Self)> {
        if n > self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot split {} records at {n}",
                self.len()
            )));
        }
        let (head, tail) = self.records.split_at(n);
        let part = |records: &[EmbeddingRecord]| Self {
            dim: self.dim,
            records: records.to_vec(),
            tagged: self.tagged,
        };
        Ok((part(head), part(tail)))
    }

    /// A copy with every record repeated `times` times, ids remapped to stay
    /// unique (`id * times + k`).
    pub fn repeated(&self, times: usize) -> Result<Self> {
        let times_u = times as u64;
        let records = self
            .records
            .iter()
            .flat_map(|r| {
                (0..times_u).map(move |k| EmbeddingRecord {
                    id: r.id * times_u + k,
                    ..r.clone()
                })
            })
            .collect();
        Dataset::new(self.dim, records, self.tagged)
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    pub fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| (x / n) as f32).collect()
    }

    pub fn random_dataset(n: usize, dim: usize, with_flip: bool, seed: u64) -> Dataset {
        let mut rng = crate::rng::stream(seed);
        let records = (0..n)
            .map(|i| EmbeddingRecord {
                id: i as u64 * 3 + 1,
                label: Label::from_bit(rng.random::<bool>()),
                image_emb: unit_vector(&mut rng, dim),
                text_emb: unit_vector(&mut rng, dim),
                flipped_image_emb: with_flip.then(|| unit_vector(&mut rng, dim)),
                meta_tag: MetaTag::None,
            })
            .collect();
        Dataset::new(dim, records, false).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn split_keeps_order_and_flags() {
        let d = random_dataset(10, 4, true, 3);
        let (a, b) = d.split_at(7).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        assert_eq!(a.records(), &d.records()[..7]);
        assert_eq!(b.records(), &d.records()[7..]);
        assert!(d.split_at(11).is_err());
        assert_eq!(d.split_at(10).unwrap().1.len(), 0);
    }

    #[test]
    fn rejects_non_unit_embedding() {
        let mut d = random_dataset(3, 8, false, 1).records().to_vec();
        d[2].text_emb[0] += 0.5;
        match Dataset::new(8, d, false) {
            Err(Error::NormViolation { record, field, .. }) => {
                assert_eq!((record, field), (2, "text_emb"))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_ids_and_wrong_dims() {
        let mut d = random_dataset(3, 8, false, 2).records().to_vec();
        d[1].id = d[0].id;
        assert!(matches!(
            Dataset::new(8, d, false),
            Err(Error::DuplicateId(_))
        ));
        let d = random_dataset(3, 8, false, 2).records().to_vec();
        assert!(matches!(
            Dataset::new(9, d, false),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn label_codes_round_trip() {
        for v in [0u8, 1, 255] {
            assert_eq!(Label::from_u8(v).unwrap().as_u8(), v);
        }
        assert!(Label::from_u8(2).is_none());
        assert!(MetaTag::from_u8(3).is_none());
        assert_eq!(
            "text_signal".parse::<MetaTag>().unwrap(),
            MetaTag::TextSignal
        );
    }

    #[test]
    fn repeated_keeps_ids_unique() {
        let d = random_dataset(5, 4, false, 3);
        let r = d.repeated(2).unwrap();
        assert_eq!(r.len(), 10);
        assert_eq!(r.records()[1].image_emb, d.records()[0].image_emb);
    }
}
