//! Synthetic video-text pairs with planted relevant frames.
//!
//! Every topic owns a prototype feature vector and a block of token ids. A
//! pair draws a topic, plants `ceil(relevant_fraction * K)` frames near that
//! topic's prototype at random positions, and fills the remaining frames
//! with prototypes of other topics. The text is drawn from the topic's
//! token block, so only the planted frames share its semantics.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, PairExample};
use crate::encoders::{FrameFeatures, TokenSequence};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_pairs: usize,
    pub num_topics: usize,
    pub frames_per_video: usize,
    pub relevant_fraction: f64,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub tokens_per_text: usize,
    pub vocab_size: usize,
    /// Answer labels are `topic % num_answers`; 0 leaves pairs unlabeled.
    #[serde(default)]
    pub num_answers: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_pairs: 200,
            num_topics: 16,
            frames_per_video: 32,
            relevant_fraction: 0.2,
            feature_dim: 32,
            noise_std: 0.5,
            tokens_per_text: 8,
            vocab_size: 256,
            num_answers: 0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn planted_count(&self) -> usize {
        (self.relevant_fraction * self.frames_per_video as f64).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(format!("synthetic spec: {m}")));
        if self.num_topics == 0 || self.frames_per_video == 0 || self.feature_dim == 0 || self.tokens_per_text == 0 {
            return fail("counts must be positive");
        }
        if self.frames_per_video > u16::MAX as usize || self.feature_dim > u16::MAX as usize {
            return fail("frames_per_video and feature_dim must fit in 16 bits");
        }
        if !(self.relevant_fraction > 0.0 && self.relevant_fraction <= 1.0) {
            return fail("relevant_fraction must lie in (0, 1]");
        }
        if self.planted_count() < 1 {
            return fail("no planted frames");
        }
        if self.planted_count() < self.frames_per_video && self.num_topics < 2 {
            return fail("irrelevant frames need at least two topics");
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return fail("noise_std must be >= 0");
        }
        if self.vocab_size < self.num_topics {
            return fail("vocab_size must be at least num_topics");
        }
        Ok(())
    }

    pub fn block_size(&self) -> usize {
        self.vocab_size / self.num_topics
    }
}

/// Deterministic dataset for `spec`. Features are rounded to 32-bit
/// precision so they survive the on-disk format unchanged.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.feature_dim;
    let prototypes: Vec<Vec<f64>> = (0..spec.num_topics)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let k = spec.frames_per_video;
    let planted_count = spec.planted_count();
    let block = spec.block_size();

    let mut examples = Vec::with_capacity(spec.num_pairs);
    for id in 0..spec.num_pairs {
        let topic = rng.random_range(0..spec.num_topics);
        let mut planted = sample(&mut rng, k, planted_count).into_vec();
        planted.sort_unstable();

        let mut data = Vec::with_capacity(k * d);
        for frame in 0..k {
            let source = if planted.binary_search(&frame).is_ok() {
                topic
            } else {
                let other = rng.random_range(0..spec.num_topics - 1);
                if other >= topic {
                    other + 1
                } else {
                    other
                }
            };
            for &p in &prototypes[source] {
                let x = if spec.noise_std > 0.0 {
                    p + noise.sample(&mut rng)
                } else {
                    p
                };
                data.push(x as f32 as f64);
            }
        }
        let tokens: Vec<u32> = (0..spec.tokens_per_text)
            .map(|_| (topic * block + rng.random_range(0..block)) as u32)
            .collect();
        let answer = (spec.num_answers > 0).then(|| (topic % spec.num_answers) as u32);
        examples.push(PairExample {
            features: FrameFeatures::new(id as u32, Tensor::new(vec![k, d], data)?)?,
            tokens: TokenSequence::new(tokens)?,
            planted,
            answer,
        });
    }
    Ok(Dataset { examples })
}
