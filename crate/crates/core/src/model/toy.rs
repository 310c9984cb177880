use std::ptr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_frame, EmissionModel, ModelState, ScoreRow, Vocabulary, BOS, MAX_CONTEXT_ORDER};
use crate::error::{Error, Result};
use crate::hyps::Token;
use crate::math::log_softmax;

/// Shape and seed of a [`ToyModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub seed: u64,
    pub context_order: usize,
    pub vocab_size: usize,
    pub hidden: usize,
    pub max_frames: usize,
    /// Fraction of encoder frames that carry a token.
    pub token_rate: f64,
    /// Standard deviation of the encoder noise; larger is less confident.
    pub noise: f64,
}

impl ToyConfig {
    pub fn new(seed: u64, context_order: usize, vocab_size: usize, max_frames: usize) -> Self {
        Self {
            seed,
            context_order,
            vocab_size,
            hidden: 32,
            max_frames,
            token_rate: 0.4,
            noise: 1.5,
        }
    }
}

/// Seeded stateless transducer: the prediction network embeds the last `n`
/// tokens, the joint is `log_softmax(tanh(enc_t + pred) · W + b)`.
#[derive(Clone, Debug)]
pub struct ToyModel {
    cfg: ToyConfig,
    /// `[order][V + 1][hidden]`; row `V` embeds the BOS pad.
    embeddings: Vec<f64>,
    /// `[hidden][V + 1]`, row-major.
    joint: Vec<f64>,
    bias: Vec<f64>,
    /// Unit-norm output directions, `[V + 1][hidden]`.
    directions: Vec<f64>,
}

const ENC_GAIN: f64 = 1.6;
const REPEAT_PENALTY: f64 = 1.4;
const BLANK_PULL: f64 = 0.5;
const SHARPNESS: f64 = 2.2;

pub fn make_toy(seed: u64, context_order: usize, vocab_size: usize, max_frames: usize) -> Result<ToyModel> {
    ToyModel::new(ToyConfig::new(seed, context_order, vocab_size, max_frames))
}

impl ToyModel {
    pub fn new(cfg: ToyConfig) -> Result<Self> {
        if cfg.vocab_size == 0 || cfg.hidden == 0 || cfg.max_frames == 0 {
            return Err(Error::InvalidArgument("toy model dimensions must be positive".into()));
        }
        if cfg.context_order > MAX_CONTEXT_ORDER {
            return Err(Error::InvalidArgument(format!(
                "context order {} exceeds {MAX_CONTEXT_ORDER}",
                cfg.context_order
            )));
        }
        if !(0.0..=1.0).contains(&cfg.token_rate) || cfg.noise.is_nan() || cfg.noise < 0.0 {
            return Err(Error::InvalidArgument("token_rate must be in [0, 1] and noise >= 0".into()));
        }
        let d = cfg.hidden;
        let width = cfg.vocab_size + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");

        let mut directions = vec![0.0; width * d];
        for row in directions.chunks_mut(d) {
            for v in row.iter_mut() {
                *v = normal.sample(&mut rng);
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
        }

        let scale = SHARPNESS * (d as f64).sqrt();
        let mut joint = vec![0.0; d * width];
        for k in 0..width {
            for i in 0..d {
                joint[i * width + k] = scale * directions[k * d + i];
            }
        }
        let bias: Vec<f64> = (0..width).map(|_| 0.1 * normal.sample(&mut rng)).collect();

        let n = cfg.context_order;
        let blank = cfg.vocab_size;
        let root_d = (d as f64).sqrt();
        let mut embeddings = vec![0.0; n * width * d];
        for p in 0..n {
            for k in 0..width {
                let row = &mut embeddings[(p * width + k) * d..(p * width + k + 1) * d];
                for (i, v) in row.iter_mut().enumerate() {
                    *v = 0.15 * normal.sample(&mut rng);
                    // the most recent token discourages its own repetition
                    if p + 1 == n && k < blank {
                        *v += root_d * (BLANK_PULL * directions[blank * d + i] - REPEAT_PENALTY * directions[k * d + i]);
                    }
                }
            }
        }
        Ok(Self {
            cfg,
            embeddings,
            joint,
            bias,
            directions,
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::synthetic(self.cfg.vocab_size)
    }

    /// Samples an utterance: a reference transcript and encoder frames that
    /// point at its tokens (or at blank) with seeded noise.
    pub fn stream(&self, utterance_seed: u64, num_frames: usize) -> Result<ToyStream<'_>> {
        if num_frames == 0 || num_frames > self.cfg.max_frames {
            return Err(Error::InvalidArgument(format!(
                "num_frames {num_frames} outside 1..={}",
                self.cfg.max_frames
            )));
        }
        let d = self.cfg.hidden;
        let v = self.cfg.vocab_size;
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.cfg.seed ^ utterance_seed.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let normal = Normal::new(0.0, self.cfg.noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
        let root_d = (d as f64).sqrt();
        let mut frames = vec![0.0; num_frames * d];
        let mut reference = Vec::new();
        let mut prev: Option<Token> = None;
        for t in 0..num_frames {
            let target = if rng.random::<f64>() < self.cfg.token_rate {
                let mut tok = rng.random_range(0..v) as Token;
                if v > 1 && Some(tok) == prev {
                    tok = (tok + 1) % v as Token;
                }
                prev = Some(tok);
                reference.push(tok);
                tok as usize
            } else {
                v
            };
            let row = &mut frames[t * d..(t + 1) * d];
            for (i, x) in row.iter_mut().enumerate() {
                let noise = if self.cfg.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                *x = ENC_GAIN * root_d * self.directions[target * d + i] + noise;
            }
        }
        Ok(ToyStream {
            model: self,
            frames,
            num_frames,
            reference,
        })
    }

    fn hidden_row(&self, enc: &[f64], state: &ModelState, out: &mut [f64]) {
        let d = self.cfg.hidden;
        let width = self.cfg.vocab_size + 1;
        out.copy_from_slice(enc);
        for (p, &tok) in state.window().iter().enumerate() {
            let k = if tok == BOS { self.cfg.vocab_size } else { tok as usize };
            let e = &self.embeddings[(p * width + k) * d..(p * width + k + 1) * d];
            for (o, x) in out.iter_mut().zip(e) {
                *o += x;
            }
        }
        for o in out.iter_mut() {
            *o = o.tanh();
        }
    }

    fn check_state(&self, state: &ModelState) -> Result<()> {
        if state.order() != self.cfg.context_order {
            return Err(Error::InvalidArgument(format!(
                "state order {} does not match model order {}",
                state.order(),
                self.cfg.context_order
            )));
        }
        Ok(())
    }

    /// `hidden` is `[rows][d]`; `out` receives `[rows][V + 1]` log-probs.
    fn joint_rows(&self, hidden: &[f64], rows: usize, out: &mut [f64]) {
        let d = self.cfg.hidden;
        let width = self.cfg.vocab_size + 1;
        // SAFETY: slice lengths match the [rows x d] * [d x width] shapes and strides below.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                d,
                width,
                1.0,
                hidden.as_ptr(),
                d as isize,
                1,
                self.joint.as_ptr(),
                width as isize,
                1,
                0.0,
                out.as_mut_ptr(),
                width as isize,
                1,
            );
        }
        for row in out.chunks_mut(width) {
            for (o, b) in row.iter_mut().zip(&self.bias) {
                *o += b;
            }
            log_softmax(row);
        }
    }
}

/// One utterance's encoder output bound to a [`ToyModel`].
#[derive(Clone, Debug)]
pub struct ToyStream<'m> {
    model: &'m ToyModel,
    frames: Vec<f64>,
    num_frames: usize,
    reference: Vec<Token>,
}

impl ToyStream<'_> {
    /// Transcript the encoder frames were generated from.
    pub fn reference(&self) -> &[Token] {
        &self.reference
    }

    pub fn model(&self) -> &ToyModel {
        self.model
    }

    fn frame(&self, t: usize) -> &[f64] {
        let d = self.model.cfg.hidden;
        &self.frames[t * d..(t + 1) * d]
    }
}

impl EmissionModel for ToyStream<'_> {
    fn vocab_size(&self) -> usize {
        self.model.cfg.vocab_size
    }

    fn context_order(&self) -> usize {
        self.model.cfg.context_order
    }

    fn num_frames(&self) -> usize {
        self.num_frames
    }

    fn log_probs(&self, frame: usize, state: &ModelState, out: &mut [f64]) -> Result<()> {
        check_frame(frame, self.num_frames)?;
        self.model.check_state(state)?;
        let mut h = vec![0.0; self.model.cfg.hidden];
        self.model.hidden_row(self.frame(frame), state, &mut h);
        self.model.joint_rows(&h, 1, out);
        Ok(())
    }

    fn score_batch(streams: &[Self], rows: &[ScoreRow], out: &mut [f64]) -> Result<()> {
        let Some(first) = streams.first() else {
            return Ok(());
        };
        let model = first.model;
        if !streams.iter().all(|s| ptr::eq(s.model, model)) {
            let width = model.cfg.vocab_size + 1;
            for (row, dst) in rows.iter().zip(out.chunks_mut(width)) {
                streams[row.stream].log_probs(row.frame, &row.state, dst)?;
            }
            return Ok(());
        }
        let d = model.cfg.hidden;
        let mut hidden = vec![0.0; rows.len() * d];
        for (row, h) in rows.iter().zip(hidden.chunks_mut(d)) {
            let s = &streams[row.stream];
            check_frame(row.frame, s.num_frames)?;
            model.check_state(&row.state)?;
            model.hidden_row(s.frame(row.frame), &row.state, h);
        }
        model.joint_rows(&hidden, rows.len(), out);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::log_sum_exp;

    #[test]
    fn deterministic_and_normalized() {
        let a = make_toy(7, 2, 5, 10).unwrap();
        let b = make_toy(7, 2, 5, 10).unwrap();
        let sa = a.stream(3, 8).unwrap();
        let sb = b.stream(3, 8).unwrap();
        assert_eq!(sa.reference(), sb.reference());
        let state = ModelState::from_tokens(2, &[1, 4]);
        let mut x = vec![0.0; 6];
        let mut y = vec![0.0; 6];
        for t in 0..8 {
            sa.log_probs(t, &state, &mut x).unwrap();
            sb.log_probs(t, &state, &mut y).unwrap();
            assert_eq!(x, y);
            assert!(log_sum_exp(&x).abs() < 1e-9);
        }
        assert!(matches!(sa.log_probs(8, &state, &mut x), Err(Error::InvalidFrame { .. })));
        assert!(a.stream(0, 11).is_err());
    }

    #[test]
    fn batched_rows_match_single_rows() {
        let m = make_toy(11, 2, 6, 12).unwrap();
        let streams = vec![m.stream(0, 12).unwrap(), m.stream(1, 9).unwrap()];
        let rows = vec![
            ScoreRow { stream: 0, frame: 3, state: ModelState::initial(2) },
            ScoreRow { stream: 1, frame: 8, state: ModelState::from_tokens(2, &[2]) },
            ScoreRow { stream: 0, frame: 11, state: ModelState::from_tokens(2, &[5, 0]) },
        ];
        let mut batched = vec![0.0; rows.len() * 7];
        ToyStream::score_batch(&streams, &rows, &mut batched).unwrap();
        let mut single = vec![0.0; 7];
        for (r, got) in rows.iter().zip(batched.chunks(7)) {
            streams[r.stream].log_probs(r.frame, &r.state, &mut single).unwrap();
            for (a, b) in got.iter().zip(&single) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
