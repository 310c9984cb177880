//! Transducer emission interface and its backends.
//!
//! A transducer is seen by the decoders only through [`EmissionModel`]: given
//! an input frame and the prediction state (the last `n` emitted tokens) it
//! yields a normalized log-distribution over the `V` vocabulary tokens plus the
//! blank symbol, which sits at index `V`.

mod lattice;
mod toy;

use std::fs;
use std::path::Path;

pub use lattice::{LatticeEntry, LatticeModel};
pub use toy::{make_toy, ToyConfig, ToyModel, ToyStream};

use crate::error::{Error, Result};
use crate::hyps::Token;

/// Largest supported prediction context.
pub const MAX_CONTEXT_ORDER: usize = 8;

/// Padding value of an unfilled context position.
pub const BOS: i32 = -1;

/// Token strings; `blank_id() == len()`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("vocabulary must not be empty".into()));
        }
        Ok(Self { tokens })
    }

    /// `size` word-initial tokens named `▁w0`, `▁w1`, ...
    pub fn synthetic(size: usize) -> Self {
        Self {
            tokens: (0..size.max(1)).map(|i| format!("\u{2581}w{i}")).collect(),
        }
    }

    /// Token table: one token per line, line number is the id.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_owned).collect();
        if tokens.is_empty() {
            return Err(Error::parse(path.display().to_string(), 1, "empty token table"));
        }
        Self::new(tokens)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn blank_id(&self) -> Token {
        self.tokens.len() as Token
    }

    pub fn token(&self, id: Token) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<Token> {
        self.tokens.iter().position(|t| t == token).map(|i| i as Token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Joins tokens into text: `▁` starts a new word, other tokens glue on.
    pub fn detokenize(&self, ids: &[Token]) -> String {
        let mut out = String::new();
        for &id in ids {
            match self.token(id) {
                Some(t) => out.push_str(&t.replace('\u{2581}', " ")),
                None => out.push_str(" <bad>"),
            }
        }
        out.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

/// Prediction-network state of a stateless decoder: the last `n` tokens,
/// oldest first, padded with [`BOS`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelState {
    window: [i32; MAX_CONTEXT_ORDER],
    order: u8,
}

impl ModelState {
    pub fn initial(order: usize) -> Self {
        assert!(order <= MAX_CONTEXT_ORDER, "context order {order} > {MAX_CONTEXT_ORDER}");
        Self {
            window: [BOS; MAX_CONTEXT_ORDER],
            order: order as u8,
        }
    }

    /// State reached after emitting `tokens` from the initial state.
    pub fn from_tokens(order: usize, tokens: &[Token]) -> Self {
        tokens.iter().fold(Self::initial(order), |s, &t| s.push(t))
    }

    pub fn from_window(window: &[i32]) -> Result<Self> {
        if window.len() > MAX_CONTEXT_ORDER {
            return Err(Error::InvalidArgument(format!(
                "context of length {} exceeds {MAX_CONTEXT_ORDER}",
                window.len()
            )));
        }
        let mut s = Self::initial(window.len());
        s.window[..window.len()].copy_from_slice(window);
        Ok(s)
    }

    pub fn order(&self) -> usize {
        self.order as usize
    }

    pub fn window(&self) -> &[i32] {
        &self.window[..self.order as usize]
    }

    /// Shift left and append `token`; no blank check.
    #[inline]
    pub fn push(mut self, token: Token) -> Self {
        let n = self.order as usize;
        if n > 0 {
            self.window.copy_within(1..n, 0);
            self.window[n - 1] = token as i32;
        }
        self
    }

    pub fn advance(self, token: Token, blank_id: Token) -> Result<Self> {
        if token >= blank_id {
            return Err(Error::Contract(format!(
                "blank (or out-of-range token {token}) cannot advance the prediction state"
            )));
        }
        Ok(self.push(token))
    }
}

/// One row of a batched scoring request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ScoreRow {
    pub stream: usize,
    pub frame: usize,
    pub state: ModelState,
}

/// Emission source for one utterance.
pub trait EmissionModel: Sync {
    /// `|V|`, excluding blank.
    fn vocab_size(&self) -> usize;

    fn context_order(&self) -> usize;

    fn num_frames(&self) -> usize;

    fn blank_id(&self) -> Token {
        self.vocab_size() as Token
    }

    /// Log-distribution over `V + 1` outputs for one (frame, state).
    fn log_probs(&self, frame: usize, state: &ModelState, out: &mut [f64]) -> Result<()>;

    /// Scores `rows` against `streams`, writing `rows.len() * (V + 1)` values.
    /// Backends override this to share work across rows.
    fn score_batch(streams: &[Self], rows: &[ScoreRow], out: &mut [f64]) -> Result<()>
    where
        Self: Sized,
    {
        let Some(first) = streams.first() else {
            return Ok(());
        };
        let width = first.vocab_size() + 1;
        for (row, dst) in rows.iter().zip(out.chunks_mut(width)) {
            streams[row.stream].log_probs(row.frame, &row.state, dst)?;
        }
        Ok(())
    }
}

pub(crate) fn check_frame(frame: usize, num_frames: usize) -> Result<()> {
    if frame >= num_frames {
        return Err(Error::InvalidFrame { frame, num_frames });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_shifts() {
        let s = ModelState::initial(2);
        assert_eq!(s.window(), &[BOS, BOS]);
        let s = s.advance(4, 9).unwrap();
        assert_eq!(s.window(), &[BOS, 4]);
        let s = s.advance(5, 9).unwrap().advance(6, 9).unwrap();
        assert_eq!(s.window(), &[5, 6]);
        assert!(matches!(s.advance(9, 9), Err(Error::Contract(_))));
        assert_eq!(ModelState::from_tokens(2, &[1, 5, 6]), s);
        assert_eq!(ModelState::initial(0).push(3).window(), &[] as &[i32]);
    }

    #[test]
    fn detokenize_joins_word_pieces() {
        let v = Vocabulary::new(
            ["\u{2581}he", "llo", "\u{2581}world", "\u{2581}x"].iter().map(|s| s.to_string()).collect(),
        )
        .unwrap();
        assert_eq!(v.detokenize(&[0, 1, 2]), "hello world");
        assert_eq!(v.blank_id(), 4);
        assert_eq!(v.id("llo"), Some(1));
        assert_eq!(Vocabulary::synthetic(3).detokenize(&[2, 0]), "w2 w0");
    }
}
