//! Similarity matrices, Dual Softmax re-scoring and retrieval metrics.
//!
//! Rows are text queries and columns are videos. Rankings sort each row by
//! descending score; equal scores rank the lower column index first.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    scores: Tensor,
    ground_truth: Vec<usize>,
}

impl SimilarityMatrix {
    pub fn new(scores: Tensor, ground_truth: Vec<usize>) -> Result<Self> {
        let (m, n) = scores.matrix_dims("SimilarityMatrix")?;
        if scores.rank() != 2 || ground_truth.len() != m {
            return Err(Error::shape("SimilarityMatrix", scores.shape(), &[ground_truth.len()]));
        }
        if !scores.is_finite() {
            return Err(Error::NonFinite("similarity matrix"));
        }
        if let Some(&g) = ground_truth.iter().find(|&&g| g >= n) {
            return Err(Error::invalid(format!("ground truth column {g} out of 0..{n}")));
        }
        Ok(Self { scores, ground_truth })
    }

    /// Square matrix whose ground truth is the diagonal.
    pub fn with_diagonal_truth(scores: Tensor) -> Result<Self> {
        let m = scores.rows();
        Self::new(scores, (0..m).collect())
    }

    pub fn scores(&self) -> &Tensor {
        &self.scores
    }

    pub fn ground_truth(&self) -> &[usize] {
        &self.ground_truth
    }

    pub fn num_queries(&self) -> usize {
        self.scores.rows()
    }

    pub fn num_items(&self) -> usize {
        self.scores.cols()
    }

    /// 1-based rank of the ground-truth column in each row.
    pub fn ranks(&self) -> Vec<usize> {
        (0..self.num_queries())
            .map(|r| {
                let row = self.scores.row_slice(r);
                let gt = self.ground_truth[r];
                let target = row[gt];
                let ahead = row
                    .iter()
                    .enumerate()
                    .filter(|&(j, &s)| s > target || (s == target && j < gt))
                    .count();
                ahead + 1
            })
            .collect()
    }
}

/// Flat metric record: `r1`, `r5`, `r10`, `medr`, `accuracy`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RetrievalMetrics {
    pub r1: Option<f64>,
    pub r5: Option<f64>,
    pub r10: Option<f64>,
    pub medr: Option<f64>,
    pub accuracy: Option<f64>,
}

impl RetrievalMetrics {
    pub const FIELDS: [&'static str; 5] = ["r1", "r5", "r10", "medr", "accuracy"];

    /// R@1/5/10 (each `k` clamped to the number of items) and median rank.
    pub fn from_similarity(sim: &SimilarityMatrix) -> Result<Self> {
        let n = sim.num_items();
        let at = |k: usize| recall_at_k(sim, k.min(n));
        Ok(Self {
            r1: Some(at(1)?),
            r5: Some(at(5)?),
            r10: Some(at(10)?),
            medr: Some(median_rank(sim)?),
            accuracy: None,
        })
    }

    pub fn values(&self) -> [Option<f64>; 5] {
        [self.r1, self.r5, self.r10, self.medr, self.accuracy]
    }
}

/// Entry `(i, j)` is the dot product of text `i` and video `j`.
///
/// The exponentiated form of the score is strictly monotone in the dot
/// product, so rankings use the raw dot products.
pub fn similarity_matrix(texts: &[Vec<f64>], videos: &[Vec<f64>]) -> Result<SimilarityMatrix> {
    let dim = texts.first().or(videos.first()).map_or(0, Vec::len);
    if let Some(bad) = texts.iter().chain(videos).find(|v| v.len() != dim) {
        return Err(Error::shape("similarity_matrix", &[dim], &[bad.len()]));
    }
    let (m, n) = (texts.len(), videos.len());
    let mut data = Vec::with_capacity(m * n);
    for t in texts {
        for v in videos {
            data.push(t.iter().zip(v).map(|(a, b)| a * b).sum());
        }
    }
    let ground_truth = (0..m).map(|i| i.min(n.saturating_sub(1))).collect();
    SimilarityMatrix::new(Tensor::new(vec![m, n], data)?, ground_truth)
}

/// Re-scores `S` by a prior computed across queries: `P = softmax_col(S / τ)`
/// (normalized down each column), output `P ⊙ S`.
pub fn dual_softmax(sim: &SimilarityMatrix, temperature: f64) -> Result<SimilarityMatrix> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!(
            "dual softmax temperature {temperature} must be > 0"
        )));
    }
    let scaled = sim.scores.map(|x| x / temperature);
    let prior = scaled.softmax(0)?;
    let rescored = prior.zip_map(&sim.scores, "dual_softmax", |p, s| p * s)?;
    SimilarityMatrix::new(rescored, sim.ground_truth.clone())
}

/// Percentage of rows whose ground truth ranks within the top `k`.
pub fn recall_at_k(sim: &SimilarityMatrix, k: usize) -> Result<f64> {
    let n = sim.num_items();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("recall@{k} needs 1 <= k <= {n}")));
    }
    let m = sim.num_queries();
    if m == 0 {
        return Err(Error::invalid("no queries"));
    }
    let hits = sim.ranks().into_iter().filter(|&r| r <= k).count();
    Ok(100.0 * hits as f64 / m as f64)
}

/// Median of the 1-based ground-truth ranks; even counts average the middle two.
pub fn median_rank(sim: &SimilarityMatrix) -> Result<f64> {
    let mut ranks = sim.ranks();
    if ranks.is_empty() {
        return Err(Error::invalid("no queries"));
    }
    ranks.sort_unstable();
    let m = ranks.len();
    Ok(if m % 2 == 1 {
        ranks[m / 2] as f64
    } else {
        0.5 * (ranks[m / 2 - 1] + ranks[m / 2]) as f64
    })
}

/// Fraction of questions whose gold candidate scores highest against the video.
///
/// `candidates[q]` holds the candidate vectors of question `q`; ties go to
/// the lower candidate index.
pub fn multiple_choice_accuracy(videos: &[Vec<f64>], candidates: &[Vec<Vec<f64>>], gold: &[usize]) -> Result<f64> {
    if videos.is_empty() || videos.len() != candidates.len() || videos.len() != gold.len() {
        return Err(Error::invalid(format!(
            "multiple choice: {} videos, {} candidate lists, {} answers",
            videos.len(),
            candidates.len(),
            gold.len()
        )));
    }
    let mut correct = 0usize;
    for ((v, cands), &g) in videos.iter().zip(candidates).zip(gold) {
        if cands.len() < 2 {
            return Err(Error::invalid("multiple choice needs at least two candidates"));
        }
        if g >= cands.len() {
            return Err(Error::invalid(format!("gold index {g} out of 0..{}", cands.len())));
        }
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, c) in cands.iter().enumerate() {
            if c.len() != v.len() {
                return Err(Error::shape("multiple_choice_accuracy", &[v.len()], &[c.len()]));
            }
            let s: f64 = c.iter().zip(v).map(|(a, b)| a * b).sum();
            if s > best_score {
                best = i;
                best_score = s;
            }
        }
        if best == g {
            correct += 1;
        }
    }
    Ok(correct as f64 / videos.len() as f64)
}
