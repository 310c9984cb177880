//! Decoders over a batch of utterances.
//!
//! [`decode`] dispatches on [`Algorithm`]. The batched searches keep all
//! hypotheses in one [`crate::hyps::BatchedBeamHyps`]; the `-ref` variants are
//! slow per-utterance implementations kept for cross-checking.

mod greedy;
mod oracle;
mod reference;
mod search;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::hyps::{HashParams, Token};
use crate::lm::NGramLm;
use crate::model::EmissionModel;

pub use oracle::{enumerate_alignments, ORACLE_LIMITS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "greedy")]
    Greedy,
    #[serde(rename = "alsd++")]
    AlsdPlusPlus,
    #[serde(rename = "aes++")]
    AesPlusPlus,
    #[serde(rename = "alsd-ref")]
    AlsdRef,
    #[serde(rename = "aes-ref")]
    AesRef,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Greedy,
        Algorithm::AlsdPlusPlus,
        Algorithm::AesPlusPlus,
        Algorithm::AlsdRef,
        Algorithm::AesRef,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Greedy => "greedy",
            Algorithm::AlsdPlusPlus => "alsd++",
            Algorithm::AesPlusPlus => "aes++",
            Algorithm::AlsdRef => "alsd-ref",
            Algorithm::AesRef => "aes-ref",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown algorithm '{s}' (expected greedy, alsd++, aes++, alsd-ref or aes-ref)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam: usize,
    /// Scoring rounds allowed per frame, counting the final blank-only round,
    /// so at most `max_symbols_per_frame - 1` tokens are emitted per frame.
    pub max_symbols_per_frame: usize,
    /// Non-blank expansion rounds per frame for AES; one blank-only round follows.
    pub aes_expansions_per_frame: usize,
    /// Maximum transcript length in tokens.
    pub max_len: usize,
    pub fusion: Option<FusionConfig>,
    pub return_nbest: usize,
    /// AES prefix search: fold `A + x` into an existing hypothesis equal to it.
    pub prefix_search: bool,
    pub hash: HashParams,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam: 4,
            max_symbols_per_frame: 10,
            aes_expansions_per_frame: 2,
            max_len: 256,
            fusion: None,
            return_nbest: 1,
            prefix_search: true,
            hash: HashParams::default(),
        }
    }
}

impl DecodeConfig {
    pub fn with_beam(beam: usize) -> Self {
        Self { beam, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::InvalidArgument("beam must be at least 1".into()));
        }
        if self.max_symbols_per_frame == 0 {
            return Err(Error::InvalidArgument("max_symbols_per_frame must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be at least 1".into()));
        }
        if self.return_nbest == 0 {
            return Err(Error::InvalidArgument("return_nbest must be at least 1".into()));
        }
        if let Some(f) = &self.fusion {
            if !f.lambda.is_finite() || f.lambda < 0.0 {
                return Err(Error::InvalidArgument(format!("LM weight must be finite and >= 0, got {}", f.lambda)));
            }
        }
        Ok(())
    }

    /// Fusion settings that actually touch the LM.
    pub(crate) fn active_fusion<'l>(&self, lm: Option<&'l NGramLm>) -> Result<Option<(FusionConfig, &'l NGramLm)>> {
        match (self.fusion, lm) {
            (Some(f), Some(lm)) if f.lambda != 0.0 => Ok(Some((f, lm))),
            (Some(f), None) if f.lambda != 0.0 => {
                Err(Error::InvalidArgument("an LM weight was given without an LM".into()))
            }
            _ => Ok(None),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<Token>,
    /// Total search score (fused when an LM is active).
    pub score: f64,
    /// LM share of `score` along the surviving path.
    pub lm_score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamResult {
    /// Best first; transcripts are distinct.
    pub nbest: Vec<Hypothesis>,
    pub num_frames: usize,
    /// Scoring rounds in which this stream had at least one row.
    pub scoring_rounds: usize,
}

impl StreamResult {
    pub fn best(&self) -> Option<&Hypothesis> {
        self.nbest.first()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    /// Calls into the emission model (one per batched round).
    pub model_calls: u64,
    pub rows_scored: u64,
    /// Single-token LM lookups; a full-vocabulary query counts `|V|`.
    pub lm_queries: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub streams: Vec<StreamResult>,
    pub counters: Counters,
    pub wall_seconds: f64,
}

impl DecodeResult {
    pub fn best_tokens(&self) -> Vec<Vec<Token>> {
        self.streams
            .iter()
            .map(|s| s.best().map(|h| h.tokens.clone()).unwrap_or_default())
            .collect()
    }
}

/// Decodes every stream in one batch.
pub fn decode<M: EmissionModel>(
    algorithm: Algorithm,
    streams: &[M],
    cfg: &DecodeConfig,
    lm: Option<&NGramLm>,
) -> Result<DecodeResult> {
    cfg.validate()?;
    check_streams(streams)?;
    if let Some(lm) = lm {
        if lm.vocab_size() != streams[0].vocab_size() {
            return Err(Error::InvalidArgument(format!(
                "LM vocabulary has {} tokens, model has {}",
                lm.vocab_size(),
                streams[0].vocab_size()
            )));
        }
    }
    let start = Instant::now();
    let mut result = match algorithm {
        Algorithm::Greedy => greedy::greedy_batched(streams, cfg, lm)?,
        Algorithm::AlsdPlusPlus => search::beam_search(streams, cfg, lm, false)?,
        Algorithm::AesPlusPlus => search::beam_search(streams, cfg, lm, true)?,
        Algorithm::AlsdRef => reference::reference_search(streams, cfg, lm, false)?,
        Algorithm::AesRef => reference::reference_search(streams, cfg, lm, true)?,
    };
    result.wall_seconds = start.elapsed().as_secs_f64();
    Ok(result)
}

fn check_streams<M: EmissionModel>(streams: &[M]) -> Result<()> {
    let first = streams
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to decode: empty batch".into()))?;
    for (i, s) in streams.iter().enumerate() {
        if s.vocab_size() != first.vocab_size() || s.context_order() != first.context_order() {
            return Err(Error::InvalidArgument(format!("stream {i} has a different vocabulary or context order")));
        }
        if s.vocab_size() == 0 {
            return Err(Error::InvalidArgument("empty vocabulary".into()));
        }
    }
    Ok(())
}

/// Rounds per frame for the two beam searches.
pub(crate) fn rounds_per_frame(cfg: &DecodeConfig, aes: bool) -> usize {
    if aes {
        cfg.aes_expansions_per_frame + 1
    } else {
        cfg.max_symbols_per_frame
    }
}
