//! Cross-modal frame selector and positive/negative frame assignment.
//!
//! The selector scores every frame of a video against the paired text with
//! a two-layer perceptron over `[frame; text]` and normalizes the logits with
//! a softmax across the video's frames. Assignment strategies then split the
//! frames into a positive set and a negative set. The split is discrete and
//! carries no gradient; gradients reach the selector through the scores.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{FrameEmbeddings, TextEmbedding};
use crate::error::{Error, Result};
use crate::numerics::{Bound, ParamSet, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub init_scale: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden: 64,
            init_scale: 0.1,
        }
    }
}

pub fn init_params(config: &SelectorConfig, rng: &mut impl rand::Rng, params: &mut ParamSet) {
    let s = config.init_scale;
    params.insert_uniform("selector.w1", &[2 * config.embed_dim, config.hidden], s, rng);
    params.insert_uniform("selector.b1", &[1, config.hidden], s, rng);
    params.insert_uniform("selector.w2", &[config.hidden, 1], s, rng);
}

/// Names of the selector's parameters.
pub const PARAM_NAMES: [&str; 3] = ["selector.w1", "selector.b1", "selector.w2"];

/// Per-frame relevance scores of one video's valid frames; sums to one.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameScores(Vec<f64>);

impl FrameScores {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::NoValidFrames);
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite("frame scores"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Scores laid out over `len` padded positions; padding scores exactly 0.
    pub fn padded(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len.max(self.0.len())];
        out[..self.0.len()].copy_from_slice(&self.0);
        out
    }

    /// Frame indices by descending score, ties to the lower index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.0.len()).collect();
        idx.sort_by(|&a, &b| self.0[b].total_cmp(&self.0[a]).then(a.cmp(&b)));
        idx
    }

    pub fn median(&self) -> f64 {
        let mut v = self.0.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

/// How many and which frames become positives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SamplingStrategy {
    /// Top `k` frames by score (all frames when the video is shorter).
    FixedK(usize),
    /// Frames scoring above the mean of the mini-batch's per-video medians.
    Median,
    /// Top `ceil(ratio * K)` frames.
    Ratio(f64),
    /// `k` frames drawn uniformly from a seeded generator.
    Random { k: usize, seed: u64 },
}

impl SamplingStrategy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SamplingStrategy::FixedK(0) | SamplingStrategy::Random { k: 0, .. } => {
                Err(Error::invalid("strategy needs k >= 1"))
            }
            SamplingStrategy::Ratio(r) if !(r > 0.0 && r <= 1.0) => {
                Err(Error::invalid(format!("ratio {r} outside (0, 1]")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SamplingStrategy::FixedK(_) => "fixed-k",
            SamplingStrategy::Median => "median",
            SamplingStrategy::Ratio(_) => "ratio",
            SamplingStrategy::Random { .. } => "random",
        }
    }

    /// The `k` or ratio parameter as text; empty for median.
    pub fn parameter(&self) -> String {
        match self {
            SamplingStrategy::FixedK(k) | SamplingStrategy::Random { k, .. } => k.to_string(),
            SamplingStrategy::Median => String::new(),
            SamplingStrategy::Ratio(r) => r.to_string(),
        }
    }
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingStrategy::FixedK(k) => write!(f, "fixed-k:{k}"),
            SamplingStrategy::Median => write!(f, "median"),
            SamplingStrategy::Ratio(r) => write!(f, "ratio:{r}"),
            SamplingStrategy::Random { k, seed } => write!(f, "random:{k}:{seed}"),
        }
    }
}

impl FromStr for SamplingStrategy {
    type Err = Error;

    /// Parses `fixed-k:K`, `median`, `ratio:R` or `random:K[:SEED]`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || Error::invalid(format!("unrecognized strategy {s:?}"));
        let num = |p: &str| p.parse::<usize>().map_err(|_| bad());
        let strategy = match parts.as_slice() {
            ["fixed-k", k] => SamplingStrategy::FixedK(num(k)?),
            ["median"] => SamplingStrategy::Median,
            ["ratio", r] => SamplingStrategy::Ratio(r.parse().map_err(|_| bad())?),
            ["random", k] => SamplingStrategy::Random { k: num(k)?, seed: 0 },
            ["random", k, seed] => SamplingStrategy::Random {
                k: num(k)?,
                seed: seed.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

impl Serialize for SamplingStrategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SamplingStrategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Disjoint positive and negative frame index sets, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PositiveAssignment {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl PositiveAssignment {
    /// Splits `0..len` into the given positives and the rest.
    pub fn from_positives(mut positives: Vec<usize>, len: usize) -> Result<Self> {
        positives.sort_unstable();
        positives.dedup();
        if positives.is_empty() {
            return Err(Error::EmptyPositives);
        }
        if positives.last().is_some_and(|&p| p >= len) {
            return Err(Error::invalid(format!("positive index out of 0..{len}")));
        }
        let negatives = (0..len).filter(|i| positives.binary_search(i).is_err()).collect();
        Ok(Self { positives, negatives })
    }

    pub fn count(&self) -> usize {
        self.positives.len()
    }
}

/// What the assignment of one video may look at beyond its own scores.
#[derive(Clone, Copy, Debug)]
pub struct BatchContext<'a> {
    /// Scores of every video in the current mini-batch.
    pub batch: &'a [FrameScores],
    /// Stream selector for the random strategy; distinct per draw site.
    pub nonce: u64,
}

/// Scores each frame against the text; returns a `1 × K` softmax row.
pub fn score_frames(tape: &mut Tape, params: &Bound, frames: FrameEmbeddings, text: TextEmbedding) -> Result<Var> {
    let logits = frame_logits(tape, params, frames, text)?;
    tape.softmax(logits, 1)
}

/// Pre-softmax perceptron outputs of [`score_frames`] as a `1 × K` row.
pub fn frame_logits(tape: &mut Tape, params: &Bound, frames: FrameEmbeddings, text: TextEmbedding) -> Result<Var> {
    let (k, fd) = (tape.value(frames.0).rows(), tape.value(frames.0).cols());
    let td = tape.value(text.0).cols();
    if k == 0 {
        return Err(Error::NoValidFrames);
    }
    if fd != td || tape.value(text.0).rows() != 1 {
        return Err(Error::shape(
            "score_frames",
            tape.value(frames.0).shape(),
            tape.value(text.0).shape(),
        ));
    }
    let repeated = tape.repeat_rows(text.0, k)?;
    let joint = tape.concat_cols(frames.0, repeated)?;
    let hidden = tape.matmul(joint, params.get("selector.w1")?)?;
    let hidden = tape.add_row(hidden, params.get("selector.b1")?)?;
    let hidden = tape.tanh(hidden);
    let logits = tape.matmul(hidden, params.get("selector.w2")?)?;
    tape.transpose(logits)
}

/// Splits one video's frames into positives and negatives.
pub fn assign_positives(
    scores: &FrameScores,
    strategy: SamplingStrategy,
    context: BatchContext<'_>,
) -> Result<PositiveAssignment> {
    strategy.validate()?;
    let len = scores.len();
    let ranking = scores.ranking();
    let positives: Vec<usize> = match strategy {
        SamplingStrategy::FixedK(k) => ranking[..k.min(len)].to_vec(),
        SamplingStrategy::Ratio(r) => {
            let count = ((r * len as f64).ceil() as usize).clamp(1, len);
            ranking[..count].to_vec()
        }
        SamplingStrategy::Median => {
            if context.batch.is_empty() {
                return Err(Error::invalid("median strategy needs the mini-batch scores"));
            }
            let threshold = context.batch.iter().map(FrameScores::median).sum::<f64>() / context.batch.len() as f64;
            let above: Vec<usize> = (0..len).filter(|&i| scores.values()[i] > threshold).collect();
            if above.is_empty() {
                vec![ranking[0]]
            } else {
                above
            }
        }
        SamplingStrategy::Random { k, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(context.nonce);
            rand::seq::index::sample(&mut rng, len, k.min(len)).into_vec()
        }
    };
    PositiveAssignment::from_positives(positives, len)
}

/// `(precision, recall)` of the positive set against planted relevant frames.
pub fn selector_metrics(assignment: &PositiveAssignment, planted: &[usize]) -> Result<(f64, f64)> {
    if planted.is_empty() {
        return Err(Error::invalid("planted set is empty"));
    }
    if assignment.positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    let hits = assignment.positives.iter().filter(|p| planted.contains(p)).count() as f64;
    Ok((hits / assignment.positives.len() as f64, hits / planted.len() as f64))
}
