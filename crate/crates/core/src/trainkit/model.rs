use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Task, TrainConfig};
use crate::data::BatchItem;
use crate::encoders::{self, FrameFeatures, TokenSequence};
use crate::error::{Error, Result};
use crate::numerics::{Bound, ParamSet, Tape, Tensor, Var};
use crate::objectives::{self, PairMass};
use crate::selector::{self, assign_positives, BatchContext, FrameScores, PositiveAssignment};

/// Parameters of the encoders, the frame selector and, for QA, the answer head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    pub params: ParamSet,
}

/// One pair's encodings on a tape.
#[derive(Clone, Copy, Debug)]
pub struct PairVars {
    pub video: Var,
    pub text: Var,
    /// `1 × K` selector scores over the valid frames.
    pub scores: Var,
}

/// The training objective of one mini-batch.
#[derive(Debug)]
pub struct Objective {
    pub total: Var,
    pub l1: Var,
    pub l2: Var,
    pub masses: Vec<PairMass>,
    pub assignments: Vec<PositiveAssignment>,
}

/// Inference outputs of one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairEmbedding {
    pub video: Vec<f64>,
    pub text: Vec<f64>,
    pub scores: FrameScores,
    pub qa_logits: Option<Vec<f64>>,
}

impl Model {
    /// Fresh parameters drawn from the config seed.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        encoders::init_params(&config.encoder(), &mut rng, &mut params);
        selector::init_params(&config.selector(), &mut rng, &mut params);
        if config.task == Task::Qa {
            let s = config.init_scale;
            params.insert_uniform("qa.w1", &[2 * config.proj_dim, config.qa_hidden], s, &mut rng);
            params.insert_uniform("qa.b1", &[1, config.qa_hidden], s, &mut rng);
            params.insert_uniform("qa.w2", &[config.qa_hidden, config.num_answers], s, &mut rng);
            params.insert_uniform("qa.b2", &[1, config.num_answers], s, &mut rng);
        }
        Ok(Self { config, params })
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    /// Encodes one pair whose frames are already truncated.
    pub fn pair(&self, tape: &mut Tape, bound: &Bound, frames: Tensor, tokens: &TokenSequence) -> Result<PairVars> {
        let enc = self.config.encoder();
        let frames = tape.constant(frames);
        let fe = encoders::encode_video(tape, bound, &enc, frames)?;
        let te = encoders::encode_text(tape, bound, &enc, tokens)?;
        let (video, text) = encoders::pool_and_project(tape, bound, fe, te)?;
        let (sf, st) = if self.config.selector_grad_to_encoder {
            (fe, te)
        } else {
            (
                encoders::FrameEmbeddings(tape.detach(fe.0)),
                encoders::TextEmbedding(tape.detach(te.0)),
            )
        };
        let mut logits = selector::frame_logits(tape, bound, sf, st)?;
        if self.config.selector_similarity > 0.0 {
            let per_frame = tape.matmul(sf.0, bound.get("proj.video")?)?;
            let text_proj = tape.matmul(st.0, bound.get("proj.text")?)?;
            let per_frame = tape.transpose(per_frame)?;
            let sim = tape.matmul(text_proj, per_frame)?;
            let sim = tape.scale(sim, self.config.selector_similarity);
            logits = tape.add(logits, sim)?;
        }
        let scores = tape.softmax(logits, 1)?;
        Ok(PairVars { video, text, scores })
    }

    /// Answer logits (`1 × num_answers`) from the projected pair.
    pub fn qa_logits(&self, tape: &mut Tape, bound: &Bound, video: Var, text: Var) -> Result<Var> {
        let joint = tape.concat_cols(video, text)?;
        let h = tape.matmul(joint, bound.get("qa.w1")?)?;
        let h = tape.add_row(h, bound.get("qa.b1")?)?;
        let h = tape.tanh(h);
        let out = tape.matmul(h, bound.get("qa.w2")?)?;
        tape.add_row(out, bound.get("qa.b2")?)
    }

    /// `λ·L1 + L2` over a mini-batch. `nonce` seeds the random strategy's
    /// stream for this batch; pair `i` uses `nonce + i`.
    pub fn objective(&self, tape: &mut Tape, bound: &Bound, items: &[BatchItem], nonce: u64) -> Result<Objective> {
        if items.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let pairs = items
            .iter()
            .map(|it| self.pair(tape, bound, it.valid_frames(), &it.tokens))
            .collect::<Result<Vec<_>>>()?;
        let frame_scores = pairs
            .iter()
            .map(|p| FrameScores::new(tape.value(p.scores).data().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let assignments = frame_scores
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let ctx = BatchContext {
                    batch: &frame_scores,
                    nonce: nonce.wrapping_add(i as u64),
                };
                assign_positives(s, self.config.strategy, ctx)
            })
            .collect::<Result<Vec<_>>>()?;

        let weight = self.config.l1_weight;
        let score_vars: Vec<Var> = if weight == 0.0 {
            // Logged only; the selector stays off the gradient path.
            pairs.iter().map(|p| tape.detach(p.scores)).collect()
        } else {
            pairs.iter().map(|p| p.scores).collect()
        };
        let (l1, masses) = objectives::finegrained_loss(tape, &score_vars, &assignments)?;

        let l2 = match self.config.task {
            Task::Retrieval => {
                let videos: Vec<Var> = pairs.iter().map(|p| p.video).collect();
                let texts: Vec<Var> = pairs.iter().map(|p| p.text).collect();
                objectives::pairwise_nce_loss(tape, &videos, &texts, self.config.tau)?
            }
            Task::Qa => {
                let mut acc: Option<Var> = None;
                for (p, it) in pairs.iter().zip(items) {
                    let answer = it
                        .answer
                        .ok_or_else(|| Error::invalid(format!("pair {} has no answer label", it.video_id)))?;
                    let logits = self.qa_logits(tape, bound, p.video, p.text)?;
                    let ce = objectives::qa_cross_entropy_loss(tape, logits, answer as usize)?;
                    acc = Some(match acc {
                        None => ce,
                        Some(a) => tape.add(a, ce)?,
                    });
                }
                let sum = acc.expect("batch is non-empty");
                tape.scale(sum, 1.0 / items.len() as f64)
            }
        };
        let total = objectives::combine(tape, l1, l2, weight)?;
        Ok(Objective {
            total,
            l1,
            l2,
            masses,
            assignments,
        })
    }

    /// Inference on one stored pair, truncated to the configured lengths.
    pub fn embed(&self, features: &FrameFeatures, tokens: &TokenSequence) -> Result<PairEmbedding> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let keep = features.valid_length().min(self.config.max_video_len);
        let frames = features.frames.slice_rows(0, keep)?;
        let tokens = tokens.truncated(self.config.max_text_len);
        let p = self.pair(&mut tape, &bound, frames, &tokens)?;
        let qa_logits = match self.config.task {
            Task::Qa => {
                let l = self.qa_logits(&mut tape, &bound, p.video, p.text)?;
                Some(tape.value(l).data().to_vec())
            }
            Task::Retrieval => None,
        };
        Ok(PairEmbedding {
            video: tape.value(p.video).data().to_vec(),
            text: tape.value(p.text).data().to_vec(),
            scores: FrameScores::new(tape.value(p.scores).data().to_vec())?,
            qa_logits,
        })
    }
}
