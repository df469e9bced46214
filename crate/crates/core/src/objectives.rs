//! Training objectives.
//!
//! All losses are minimized, so each is the negated log-likelihood of its
//! contrastive or classification form and is nonnegative.

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::selector::PositiveAssignment;

/// Exponentiated score mass of one pair's positive and negative frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairMass {
    pub positive: f64,
    pub negative: f64,
}

impl PairMass {
    /// `-log(A / (A + B))`.
    pub fn term(&self) -> f64 {
        -(self.positive / (self.positive + self.negative)).ln()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub masses: Vec<PairMass>,
}

/// `total = weight * l1 + l2`.
pub fn combined_loss(l1: f64, l2: f64, weight: f64, masses: Vec<PairMass>) -> Result<LossBreakdown> {
    if weight < 0.0 || !weight.is_finite() {
        return Err(Error::invalid(format!("loss weight {weight} must be >= 0")));
    }
    Ok(LossBreakdown {
        l1,
        l2,
        total: weight * l1 + l2,
        masses,
    })
}

/// Tape form of [`combined_loss`].
pub fn combine(tape: &mut Tape, l1: Var, l2: Var, weight: f64) -> Result<Var> {
    if weight < 0.0 || !weight.is_finite() {
        return Err(Error::invalid(format!("loss weight {weight} must be >= 0")));
    }
    let weighted = tape.scale(l1, weight);
    tape.add(weighted, l2)
}

/// Frame-level contrastive loss.
///
/// For pair `i` with scores `s` (a `1 × K` row), `A_i = Σ_{k∈P} exp(s_k)`,
/// `B_i = Σ_{k∈N} exp(s_k)` and the loss is the batch mean of
/// `-log(A_i / (A_i + B_i))`.
pub fn finegrained_loss(
    tape: &mut Tape,
    scores: &[Var],
    assignments: &[PositiveAssignment],
) -> Result<(Var, Vec<PairMass>)> {
    if scores.is_empty() || scores.len() != assignments.len() {
        return Err(Error::invalid(format!(
            "finegrained_loss: {} score rows for {} assignments",
            scores.len(),
            assignments.len()
        )));
    }
    let mut terms = Vec::with_capacity(scores.len());
    let mut masses = Vec::with_capacity(scores.len());
    for (&s, a) in scores.iter().zip(assignments) {
        if a.positives.is_empty() {
            return Err(Error::EmptyPositives);
        }
        let k = tape.value(s).numel();
        if a.positives.len() + a.negatives.len() != k {
            return Err(Error::invalid(format!(
                "assignment covers {} of {k} frames",
                a.positives.len() + a.negatives.len()
            )));
        }
        let e = tape.exp(s);
        let pos = tape.take(e, &a.positives)?;
        let pos_mass = tape.sum(pos);
        let all_mass = tape.sum(e);
        let exps = tape.value(e).data();
        masses.push(PairMass {
            positive: tape.value(pos_mass).item()?,
            negative: a.negatives.iter().map(|&i| exps[i]).sum(),
        });
        if a.negatives.is_empty() {
            // A / (A + 0) = 1 exactly.
            continue;
        }
        let log_all = tape.log(all_mass);
        let log_pos = tape.log(pos_mass);
        terms.push(tape.sub(log_all, log_pos)?);
    }
    let n = scores.len() as f64;
    let total = match terms.split_first() {
        None => tape.constant(Tensor::scalar(0.0)),
        Some((first, rest)) => {
            let mut acc = *first;
            for &t in rest {
                acc = tape.add(acc, t)?;
            }
            acc
        }
    };
    Ok((tape.scale(total, 1.0 / n), masses))
}

/// Symmetric in-batch InfoNCE over the `n × n` text-by-video dot products.
///
/// `videos[i]` and `texts[i]` are `1 × p` rows of the aligned pair `i`;
/// every other combination in the batch serves as a negative.
pub fn pairwise_nce_loss(tape: &mut Tape, videos: &[Var], texts: &[Var], temperature: f64) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature {temperature} must be > 0")));
    }
    if videos.is_empty() || videos.len() != texts.len() {
        return Err(Error::invalid(format!(
            "pairwise_nce_loss: {} videos, {} texts",
            videos.len(),
            texts.len()
        )));
    }
    let n = videos.len();
    let v = tape.stack_rows(videos)?;
    let t = tape.stack_rows(texts)?;
    if tape.value(v).cols() != tape.value(t).cols() {
        return Err(Error::shape(
            "pairwise_nce_loss",
            tape.value(v).shape(),
            tape.value(t).shape(),
        ));
    }
    let vt = tape.transpose(v)?;
    let sim = tape.matmul(t, vt)?;
    let sim = tape.scale(sim, 1.0 / temperature);
    let diag: Vec<usize> = (0..n).map(|i| i * n + i).collect();

    let text_to_video = tape.log_softmax(sim)?;
    let a = tape.take(text_to_video, &diag)?;
    let a = tape.sum(a);
    let sim_t = tape.transpose(sim)?;
    let video_to_text = tape.log_softmax(sim_t)?;
    let b = tape.take(video_to_text, &diag)?;
    let b = tape.sum(b);
    let both = tape.add(a, b)?;
    Ok(tape.scale(both, -0.5 / n as f64))
}

/// Negative log softmax probability of `answer` under `logits` (`1 × V`).
pub fn qa_cross_entropy_loss(tape: &mut Tape, logits: Var, answer: usize) -> Result<Var> {
    let v = tape.value(logits).numel();
    if answer >= v {
        return Err(Error::invalid(format!("answer {answer} outside vocabulary of {v}")));
    }
    let logp = tape.log_softmax(logits)?;
    let picked = tape.take(logp, &[answer])?;
    let s = tape.sum(picked);
    Ok(tape.scale(s, -1.0))
}
