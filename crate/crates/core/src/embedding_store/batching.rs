use rand::seq::SliceRandom;

use super::{Dataset, Label};
use crate::error::{Error, Result};
use crate::nn_core::Matrix;
use crate::rng::{self, Purpose};

/// A contiguous slice of examples. Row `i` of each matrix belongs to
/// `ids[i]` / `labels[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub image: Matrix<f32>,
    pub text: Matrix<f32>,
    pub labels: Vec<Label>,
    pub ids: Vec<u64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Splits one epoch of `dataset` into batches.
///
/// Every record appears exactly once. With `shuffle`, the order is a
/// permutation keyed on `(seed, epoch)`. A record that has a flipped-image
/// embedding uses it in place of `image_emb` when the uniform draw keyed on
/// `(seed, epoch, id)` falls below `flip_prob`. The last batch may be short.
pub fn make_batches(
    dataset: &Dataset,
    batch_size: usize,
    shuffle: bool,
    flip_prob: f64,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(Error::InvalidArgument(format!(
            "flip_prob must be in [0, 1], got {flip_prob}"
        )));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if shuffle {
        order.shuffle(&mut rng::keyed(seed, Purpose::Shuffle, epoch, 0));
    }

    let dim = dataset.dim();
    let records = dataset.records();
    let batches = order
        .chunks(batch_size)
        .map(|chunk| {
            let mut image = Vec::with_capacity(chunk.len() * dim);
            let mut text = Vec::with_capacity(chunk.len() * dim);
            let mut labels = Vec::with_capacity(chunk.len());
            let mut ids = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let r = &records[i];
                let img = match &r.flipped_image_emb {
                    Some(flipped)
                        if flip_prob > 0.0
                            && rng::unit_uniform(seed, Purpose::Flip, epoch, r.id) < flip_prob =>
                    {
                        flipped
                    }
                    _ => &r.image_emb,
                };
                image.extend_from_slice(img);
                text.extend_from_slice(&r.text_emb);
                labels.push(r.label);
                ids.push(r.id);
            }
            let n = chunk.len();
            Batch {
                image: Matrix::from_vec(n, dim, image).expect("rows have dataset dim"),
                text: Matrix::from_vec(n, dim, text).expect("rows have dataset dim"),
                labels,
                ids,
            }
        })
        .collect();
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::super::test_support::random_dataset;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sizes_in_file_order() {
        let d = random_dataset(10, 4, false, 1);
        let b = make_batches(&d, 4, false, 0.0, 0, 0).unwrap();
        let sizes: Vec<_> = b.iter().map(Batch::len).collect();
        assert_eq!(sizes, [4, 4, 2]);
        let ids: Vec<u64> = b.iter().flat_map(|b| b.ids.clone()).collect();
        let file: Vec<u64> = d.records().iter().map(|r| r.id).collect();
        assert_eq!(ids, file);
    }

    #[test]
    fn zero_flip_prob_uses_stored_image() {
        let d = random_dataset(20, 6, true, 2);
        for b in make_batches(&d, 7, true, 0.0, 5, 3).unwrap() {
            for (row, id) in b.ids.iter().enumerate() {
                let r = d.records().iter().find(|r| r.id == *id).unwrap();
                assert_eq!(b.image.row(row), r.image_emb.as_slice());
                assert_eq!(b.text.row(row), r.text_emb.as_slice());
            }
        }
    }

    #[test]
    fn full_flip_prob_uses_flipped_image() {
        let d = random_dataset(9, 6, true, 3);
        for b in make_batches(&d, 4, false, 1.0, 5, 0).unwrap() {
            for (row, id) in b.ids.iter().enumerate() {
                let r = d.records().iter().find(|r| r.id == *id).unwrap();
                assert_eq!(
                    b.image.row(row),
                    r.flipped_image_emb.as_ref().unwrap().as_slice()
                );
            }
        }
    }

    #[test]
    fn half_flip_prob_flips_about_half() {
        let d = random_dataset(2000, 2, true, 4);
        let batches = make_batches(&d, 64, false, 0.5, 9, 1).unwrap();
        let flipped = batches
            .iter()
            .flat_map(|b| b.ids.iter().enumerate().map(move |(row, id)| (b, row, *id)))
            .filter(|(b, row, id)| {
                let r = d.records().iter().find(|r| r.id == *id).unwrap();
                b.image.row(*row) != r.image_emb.as_slice()
            })
            .count();
        assert!((900..1100).contains(&flipped), "{flipped}");
    }

    #[test]
    fn deterministic_and_epoch_dependent() {
        let d = random_dataset(50, 3, true, 5);
        let a = make_batches(&d, 8, true, 0.5, 42, 2).unwrap();
        let b = make_batches(&d, 8, true, 0.5, 42, 2).unwrap();
        let c = make_batches(&d, 8, true, 0.5, 42, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn errors() {
        let empty = crate::embedding_store::Dataset::new(4, vec![], false).unwrap();
        assert!(matches!(
            make_batches(&empty, 4, false, 0.0, 0, 0),
            Err(Error::EmptyDataset)
        ));
        let d = random_dataset(3, 4, false, 6);
        assert!(make_batches(&d, 0, false, 0.0, 0, 0).is_err());
        assert!(make_batches(&d, 2, false, 1.5, 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn every_record_exactly_once(n in 1usize..80, bs in 1usize..20, seed in any::<u64>(), epoch in 0u64..5) {
            let d = random_dataset(n, 2, false, seed);
            let batches = make_batches(&d, bs, true, 0.5, seed, epoch).unwrap();
            prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= bs));
            let mut ids: Vec<u64> = batches.iter().flat_map(|b| b.ids.clone()).collect();
            ids.sort_unstable();
            let mut want: Vec<u64> = d.records().iter().map(|r| r.id).collect();
            want.sort_unstable();
            prop_assert_eq!(ids, want);
        }
    }
}
