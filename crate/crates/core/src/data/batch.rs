//! Mini-batching with head truncation and frame validity masks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::encoders::{FrameFeatures, TokenSequence};
use crate::numerics::Tensor;

/// One pair after truncation and padding.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    /// Position of the pair in the source dataset.
    pub index: usize,
    pub video_id: u32,
    /// `max_video_len × d`, zero rows past the valid length.
    pub frames: Tensor,
    /// `true` for the leading valid frames.
    pub mask: Vec<bool>,
    pub tokens: TokenSequence,
    /// Planted frames that survived truncation.
    pub planted: Vec<usize>,
    pub answer: Option<u32>,
}

impl BatchItem {
    pub fn valid_length(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// The unpadded `K' × d` frames the model consumes.
    pub fn valid_frames(&self) -> Tensor {
        self.frames
            .slice_rows(0, self.valid_length())
            .expect("mask never exceeds the padded length")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Iterator over the batches of one pass through a dataset.
pub struct Batches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    max_video_len: usize,
    max_text_len: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let items = self.order[self.pos..end]
            .iter()
            .map(|&i| {
                let ex = &self.dataset.examples[i];
                let (frames, mask) = pad_frames(&ex.features, self.max_video_len);
                let kept = mask.iter().filter(|&&m| m).count();
                BatchItem {
                    index: i,
                    video_id: ex.features.video_id,
                    frames,
                    mask,
                    tokens: ex.tokens.truncated(self.max_text_len),
                    planted: ex.planted.iter().copied().filter(|&p| p < kept).collect(),
                    answer: ex.answer,
                }
            })
            .collect();
        self.pos = end;
        Some(Batch { items })
    }

    fn nth(&mut self, n: usize) -> Option<Batch> {
        self.pos = self.pos.saturating_add(n.saturating_mul(self.batch_size));
        self.next()
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.order.len().saturating_sub(self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for Batches<'_> {}

fn pad_frames(features: &FrameFeatures, max_len: usize) -> (Tensor, Vec<bool>) {
    let (k, d) = (features.valid_length(), features.dim());
    let kept = k.min(max_len);
    let mut data = vec![0.0; max_len * d];
    data[..kept * d].copy_from_slice(&features.frames.data()[..kept * d]);
    let mask = (0..max_len).map(|i| i < kept).collect();
    (Tensor::new(vec![max_len, d], data).expect("sizes agree"), mask)
}

/// Batches `dataset` in order, or in a seeded random order.
///
/// # Panics
/// If `batch_size` or `max_video_len` is zero.
pub fn make_batches(
    dataset: &Dataset,
    batch_size: usize,
    max_video_len: usize,
    max_text_len: usize,
    shuffle_seed: Option<u64>,
) -> Batches<'_> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    assert!(max_video_len >= 1, "max_video_len must be at least 1");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Batches {
        dataset,
        order,
        pos: 0,
        batch_size,
        max_video_len,
        max_text_len,
    }
}
