//! Small stand-in text and video encoders.
//!
//! Text: embedding lookup, per-token `tanh` transform, mean pooling.
//! Video: per-frame `tanh` affine transform with an optional residual
//! self-attention layer. Both feed a pair of linear projections into a
//! shared retrieval space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Bound, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub proj_dim: usize,
    pub vocab_size: usize,
    pub max_video_len: usize,
    /// Residual self-attention over frames; off keeps frames independent.
    pub video_context: bool,
    /// Residual self-attention over tokens before pooling.
    pub text_attention: bool,
    pub init_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            embed_dim: 32,
            proj_dim: 32,
            vocab_size: 256,
            max_video_len: 32,
            video_context: false,
            text_attention: false,
            init_scale: 0.1,
        }
    }
}

/// Token ids of one text; never empty.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::invalid("empty token sequence"));
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Keeps the first `max_len` tokens.
    pub fn truncated(&self, max_len: usize) -> TokenSequence {
        let keep = max_len.max(1).min(self.0.len());
        TokenSequence(self.0[..keep].to_vec())
    }
}

/// One video as a `K × d` matrix of per-frame features.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatures {
    pub video_id: u32,
    pub frames: Tensor,
}

impl FrameFeatures {
    pub fn new(video_id: u32, frames: Tensor) -> Result<Self> {
        if frames.rank() != 2 || frames.rows() == 0 {
            return Err(Error::NoValidFrames);
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite("frame features"));
        }
        Ok(Self { video_id, frames })
    }

    pub fn valid_length(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

/// `K × d'` per-frame encoder outputs on a tape.
#[derive(Clone, Copy, Debug)]
pub struct FrameEmbeddings(pub Var);

/// `1 × d'` pooled text encoding on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TextEmbedding(pub Var);

pub fn init_params(config: &EncoderConfig, rng: &mut impl Rng, params: &mut ParamSet) {
    let (d, e, p) = (config.feature_dim, config.embed_dim, config.proj_dim);
    let s = config.init_scale;
    params.insert_uniform("text.embed", &[config.vocab_size, e], s, rng);
    params.insert_uniform("text.w", &[e, e], s, rng);
    params.insert_uniform("text.b", &[1, e], s, rng);
    if config.text_attention {
        for name in ["text.attn.q", "text.attn.k", "text.attn.v"] {
            params.insert_uniform(name, &[e, e], s, rng);
        }
    }
    params.insert_uniform("video.w", &[d, e], s, rng);
    params.insert_uniform("video.b", &[1, e], s, rng);
    if config.video_context {
        for name in ["video.attn.q", "video.attn.k", "video.attn.v"] {
            params.insert_uniform(name, &[e, e], s, rng);
        }
    }
    params.insert_uniform("proj.video", &[e, p], s, rng);
    params.insert_uniform("proj.text", &[e, p], s, rng);
}

/// `h + softmax(hQ (hK)^T / sqrt(d)) hV`, single head.
fn residual_attention(tape: &mut Tape, params: &Bound, prefix: &str, h: Var) -> Result<Var> {
    let q = tape.matmul(h, params.get(&format!("{prefix}.q"))?)?;
    let k = tape.matmul(h, params.get(&format!("{prefix}.k"))?)?;
    let v = tape.matmul(h, params.get(&format!("{prefix}.v"))?)?;
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, kt)?;
    let width = tape.value(h).cols() as f64;
    let logits = tape.scale(logits, 1.0 / width.sqrt());
    let weights = tape.softmax(logits, 1)?;
    let mixed = tape.matmul(weights, v)?;
    tape.add(h, mixed)
}

pub fn encode_text(
    tape: &mut Tape,
    params: &Bound,
    config: &EncoderConfig,
    tokens: &TokenSequence,
) -> Result<TextEmbedding> {
    let mut ids = Vec::with_capacity(tokens.len());
    for &id in tokens.ids() {
        let id = id as usize;
        if id >= config.vocab_size {
            return Err(Error::OutOfVocabulary {
                id,
                vocab: config.vocab_size,
            });
        }
        ids.push(id);
    }
    let embedded = tape.gather_rows(params.get("text.embed")?, &ids)?;
    let lin = tape.matmul(embedded, params.get("text.w")?)?;
    let lin = tape.add_row(lin, params.get("text.b")?)?;
    let mut h = tape.tanh(lin);
    if config.text_attention {
        h = residual_attention(tape, params, "text.attn", h)?;
    }
    Ok(TextEmbedding(tape.mean_rows(h)?))
}

/// Encodes the valid frames of one video (`K × d` on the tape).
pub fn encode_video(tape: &mut Tape, params: &Bound, config: &EncoderConfig, frames: Var) -> Result<FrameEmbeddings> {
    let x = tape.value(frames);
    let (k, d) = (x.rows(), x.cols());
    if x.rank() != 2 || k == 0 {
        return Err(Error::NoValidFrames);
    }
    if k > config.max_video_len {
        return Err(Error::TooManyFrames {
            len: k,
            max: config.max_video_len,
        });
    }
    if d != config.feature_dim {
        return Err(Error::shape("encode_video", x.shape(), &[k, config.feature_dim]));
    }
    let lin = tape.matmul(frames, params.get("video.w")?)?;
    let lin = tape.add_row(lin, params.get("video.b")?)?;
    let mut h = tape.tanh(lin);
    if config.video_context {
        h = residual_attention(tape, params, "video.attn", h)?;
    }
    Ok(FrameEmbeddings(h))
}

/// Mean-pools frames and projects video and text into the shared space.
/// Returns `(video, text)`, each `1 × proj_dim`.
pub fn pool_and_project(
    tape: &mut Tape,
    params: &Bound,
    frames: FrameEmbeddings,
    text: TextEmbedding,
) -> Result<(Var, Var)> {
    let pooled = tape.mean_rows(frames.0)?;
    let video = tape.matmul(pooled, params.get("proj.video")?)?;
    let text = tape.matmul(text.0, params.get("proj.text")?)?;
    Ok((video, text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(config: &EncoderConfig, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        init_params(config, &mut rng, &mut params);
        params
    }

    fn random_frames(k: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..k * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor::new(vec![k, d], data).unwrap()
    }

    fn text_vec(params: &ParamSet, config: &EncoderConfig, ids: Vec<u32>) -> Vec<f64> {
        let mut tape = Tape::new();
        let b = params.bind(&mut tape, false);
        let t = encode_text(&mut tape, &b, config, &TokenSequence::new(ids).unwrap()).unwrap();
        tape.value(t.0).data().to_vec()
    }

    #[test]
    fn single_token_is_its_transformed_embedding() {
        let config = EncoderConfig::default();
        let params = setup(&config, 1);
        let got = text_vec(&params, &config, vec![7]);
        let e = params.get("text.embed").unwrap().row_slice(7).to_vec();
        let row = Tensor::row(e);
        let lin = row.matmul(params.get("text.w").unwrap()).unwrap();
        let b = params.get("text.b").unwrap();
        for (j, g) in got.iter().enumerate() {
            let want = (lin.data()[j] + b.data()[j]).tanh();
            assert!((g - want).abs() < 1e-15);
        }
    }

    #[test]
    fn text_is_order_insensitive_and_idempotent() {
        let config = EncoderConfig::default();
        let params = setup(&config, 2);
        let a = text_vec(&params, &config, vec![3, 9, 200, 41]);
        let b = text_vec(&params, &config, vec![200, 41, 3, 9]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let single = text_vec(&params, &config, vec![5]);
        let doubled = text_vec(&params, &config, vec![5, 5]);
        for (x, y) in single.iter().zip(&doubled) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn text_attention_keeps_order_insensitivity() {
        let config = EncoderConfig {
            text_attention: true,
            ..EncoderConfig::default()
        };
        let params = setup(&config, 3);
        let a = text_vec(&params, &config, vec![1, 2, 3]);
        let b = text_vec(&params, &config, vec![3, 1, 2]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_vocabulary_rejected() {
        let config = EncoderConfig::default();
        let params = setup(&config, 4);
        let mut tape = Tape::new();
        let b = params.bind(&mut tape, false);
        let err = encode_text(&mut tape, &b, &config, &TokenSequence::new(vec![256]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::OutOfVocabulary { id: 256, vocab: 256 }));
    }

    fn video_rows(params: &ParamSet, config: &EncoderConfig, frames: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let b = params.bind(&mut tape, false);
        let x = tape.constant(frames.clone());
        let f = encode_video(&mut tape, &b, config, x).unwrap();
        tape.value(f.0).clone()
    }

    #[test]
    fn frames_are_local_without_context() {
        let config = EncoderConfig::default();
        let params = setup(&config, 5);
        let frames = random_frames(4, 32, 6);
        let base = video_rows(&params, &config, &frames);
        let mut perturbed = frames.clone();
        for c in 0..32 {
            perturbed.data_mut()[2 * 32 + c] += 0.5;
        }
        let after = video_rows(&params, &config, &perturbed);
        for r in [0, 1, 3] {
            assert_eq!(base.row_slice(r), after.row_slice(r));
        }
        assert_ne!(base.row_slice(2), after.row_slice(2));
    }

    #[test]
    fn context_layer_mixes_frames() {
        let config = EncoderConfig {
            video_context: true,
            ..EncoderConfig::default()
        };
        let params = setup(&config, 5);
        let frames = random_frames(4, 32, 6);
        let base = video_rows(&params, &config, &frames);
        let mut perturbed = frames.clone();
        perturbed.data_mut()[2 * 32] += 0.5;
        let after = video_rows(&params, &config, &perturbed);
        assert_ne!(base.row_slice(0), after.row_slice(0));
    }

    #[test]
    fn identical_frames_identical_rows() {
        let config = EncoderConfig::default();
        let params = setup(&config, 7);
        let one = random_frames(1, 32, 8);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let frames = Tensor::new(vec![2, 32], data).unwrap();
        let rows = video_rows(&params, &config, &frames);
        assert_eq!(rows.row_slice(0), rows.row_slice(1));
    }

    #[test]
    fn too_many_frames_rejected() {
        let config = EncoderConfig {
            max_video_len: 3,
            ..EncoderConfig::default()
        };
        let params = setup(&config, 7);
        let mut tape = Tape::new();
        let b = params.bind(&mut tape, false);
        let x = tape.constant(random_frames(4, 32, 1));
        assert!(matches!(
            encode_video(&mut tape, &b, &config, x),
            Err(Error::TooManyFrames { len: 4, max: 3 })
        ));
    }

    #[test]
    fn video_row_jacobian_matches_finite_differences() {
        let config = EncoderConfig {
            feature_dim: 6,
            embed_dim: 5,
            ..EncoderConfig::default()
        };
        let params = setup(&config, 9);
        let frames = random_frames(3, 6, 10);
        // Each output coordinate of row 1 as its own scalar function of row 1.
        for out_col in 0..5 {
            let others = frames.clone();
            let report = finite_diff_check(
                |tape, v| {
                    let b = params.bind(tape, false);
                    let before = tape.constant(others.slice_rows(0, 1)?);
                    let after = tape.constant(others.slice_rows(2, 3)?);
                    let stacked = tape.stack_rows(&[before, v[0], after])?;
                    let f = encode_video(tape, &b, &config, stacked)?;
                    let picked = tape.take(f.0, &[5 + out_col])?;
                    Ok(tape.sum(picked))
                },
                &[frames.slice_rows(1, 2).unwrap()],
                1e-3,
                1e-4,
            )
            .unwrap();
            assert!(report.passed(), "{report:?}");
        }
    }

    #[test]
    fn pooling_matches_direct_average() {
        let config = EncoderConfig::default();
        let params = setup(&config, 11);
        let frames = random_frames(5, 32, 12);
        let mut tape = Tape::new();
        let b = params.bind(&mut tape, false);
        let x = tape.constant(frames);
        let f = encode_video(&mut tape, &b, &config, x).unwrap();
        let t = encode_text(&mut tape, &b, &config, &TokenSequence::new(vec![1]).unwrap()).unwrap();
        let (v, _) = pool_and_project(&mut tape, &b, f, t).unwrap();
        let rows = tape.value(f.0).clone();
        let mut avg = vec![0.0; 32];
        for r in 0..5 {
            for c in 0..32 {
                avg[c] += rows.get(r, c) / 5.0;
            }
        }
        let expected = Tensor::row(avg).matmul(params.get("proj.video").unwrap()).unwrap();
        for (g, w) in tape.value(v).data().iter().zip(expected.data()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn single_frame_pooling_is_projection_of_that_frame() {
        let config = EncoderConfig::default();
        let params = setup(&config, 13);
        let mut tape = Tape::new();
        let b = params.bind(&mut tape, false);
        let x = tape.constant(random_frames(1, 32, 14));
        let f = encode_video(&mut tape, &b, &config, x).unwrap();
        let t = encode_text(&mut tape, &b, &config, &TokenSequence::new(vec![1]).unwrap()).unwrap();
        let (v, _) = pool_and_project(&mut tape, &b, f, t).unwrap();
        let expected = tape.value(f.0).matmul(params.get("proj.video").unwrap()).unwrap();
        assert_eq!(tape.value(v).data(), expected.data());
    }
}
