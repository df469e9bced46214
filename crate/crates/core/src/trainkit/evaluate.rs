use serde::Serialize;

use super::config::Task;
use super::model::{Model, PairEmbedding};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::retrieval::{dual_softmax, similarity_matrix, RetrievalMetrics};
use crate::selector::{assign_positives, selector_metrics, BatchContext, FrameScores};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub metrics: RetrievalMetrics,
    /// Mean over pairs of the selector's positive set against planted frames.
    pub selector_precision: f64,
    pub selector_recall: f64,
}

/// Retrieval: text-to-video R@1/5/10 and MedR, optionally after Dual
/// Softmax. QA: fraction of pairs whose arg-max answer is correct.
/// Selector metrics use the training strategy, with mini-batches of the
/// training batch size taken in stored order.
pub fn evaluate(model: &Model, data: &Dataset, task: Task, use_dual_softmax: bool) -> Result<EvalReport> {
    if task != model.task() {
        return Err(Error::TaskMismatch {
            checkpoint: model.task().to_string(),
            requested: task.to_string(),
        });
    }
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let outputs: Vec<PairEmbedding> = data
        .examples
        .iter()
        .map(|ex| model.embed(&ex.features, &ex.tokens))
        .collect::<Result<_>>()?;

    let metrics = match task {
        Task::Retrieval => {
            let texts: Vec<Vec<f64>> = outputs.iter().map(|o| o.text.clone()).collect();
            let videos: Vec<Vec<f64>> = outputs.iter().map(|o| o.video.clone()).collect();
            let mut sim = similarity_matrix(&texts, &videos)?;
            if use_dual_softmax {
                sim = dual_softmax(&sim, model.config.tau_ds)?;
            }
            RetrievalMetrics::from_similarity(&sim)?
        }
        Task::Qa => {
            let mut correct = 0usize;
            for (o, ex) in outputs.iter().zip(&data.examples) {
                let answer = ex
                    .answer
                    .ok_or_else(|| Error::invalid(format!("pair {} has no answer label", ex.features.video_id)))?;
                let logits = o.qa_logits.as_ref().expect("qa model yields logits");
                if argmax(logits) == answer as usize {
                    correct += 1;
                }
            }
            RetrievalMetrics {
                accuracy: Some(correct as f64 / data.len() as f64),
                ..RetrievalMetrics::default()
            }
        }
    };

    let scores: Vec<FrameScores> = outputs.into_iter().map(|o| o.scores).collect();
    let max_len = model.config.max_video_len;
    let (mut precision, mut recall, mut counted) = (0.0, 0.0, 0usize);
    for (start, chunk) in scores
        .chunks(model.config.batch_size)
        .enumerate()
        .map(|(b, c)| (b * model.config.batch_size, c))
    {
        for (i, s) in chunk.iter().enumerate() {
            let planted: Vec<usize> = data.examples[start + i]
                .planted
                .iter()
                .copied()
                .filter(|&p| p < max_len)
                .collect();
            if planted.is_empty() {
                continue;
            }
            let ctx = BatchContext {
                batch: chunk,
                nonce: (start + i) as u64,
            };
            let assignment = assign_positives(s, model.config.strategy, ctx)?;
            let (p, r) = selector_metrics(&assignment, &planted)?;
            precision += p;
            recall += r;
            counted += 1;
        }
    }
    let denom = counted.max(1) as f64;
    Ok(EvalReport {
        metrics,
        selector_precision: precision / denom,
        selector_recall: recall / denom,
    })
}

/// Index of the largest value; ties go to the lower index.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::trainkit::TrainConfig;

    fn setup(task: Task) -> (Model, Dataset) {
        let config = TrainConfig {
            feature_dim: 6,
            embed_dim: 5,
            proj_dim: 4,
            vocab_size: 40,
            max_video_len: 8,
            task,
            num_answers: 3,
            ..TrainConfig::default()
        };
        let data = generate_synthetic(&SyntheticSpec {
            num_pairs: 9,
            num_topics: 4,
            frames_per_video: 8,
            feature_dim: 6,
            vocab_size: 40,
            num_answers: 3,
            ..SyntheticSpec::default()
        })
        .unwrap();
        (Model::new(config).unwrap(), data)
    }

    #[test]
    fn task_mismatch_is_an_error() {
        let (model, data) = setup(Task::Retrieval);
        assert!(matches!(
            evaluate(&model, &data, Task::Qa, false),
            Err(Error::TaskMismatch { .. })
        ));
    }

    #[test]
    fn single_query_dual_softmax_is_identity() {
        let (model, mut data) = setup(Task::Retrieval);
        data.examples.truncate(1);
        let a = evaluate(&model, &data, Task::Retrieval, false).unwrap();
        let b = evaluate(&model, &data, Task::Retrieval, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.metrics.r1, Some(100.0));
    }

    #[test]
    fn qa_reports_accuracy_only() {
        let (model, data) = setup(Task::Qa);
        let r = evaluate(&model, &data, Task::Qa, false).unwrap();
        let acc = r.metrics.accuracy.unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert!(r.metrics.r1.is_none());
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0]), 0);
    }
}
