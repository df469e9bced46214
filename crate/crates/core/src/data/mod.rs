//! Datasets: synthetic generation, on-disk formats and batching.

mod batch;
mod files;
mod synthetic;

pub use batch::{make_batches, Batch, BatchItem, Batches};
pub use files::{
    decode_features, encode_features, load_dataset, read_features, read_manifest, save_dataset, write_features,
    write_manifest, ManifestRecord, FEATURES_FILE, FEATURE_MAGIC, FEATURE_VERSION, MANIFEST_FILE,
};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use crate::encoders::{FrameFeatures, TokenSequence};

/// One aligned video-text pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairExample {
    pub features: FrameFeatures,
    pub tokens: TokenSequence,
    /// Frame indices that carry the text's topic; sorted, non-empty.
    pub planted: Vec<usize>,
    pub answer: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub examples: Vec<PairExample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}
