//! Shallow fusion of transducer and n-gram LM scores.
//!
//! Two blank treatments are supported. [`BlankScoring::Omit`] adds
//! `λ ln p_LM[k]` to non-blank tokens and leaves blank alone.
//! [`BlankScoring::Scored`] treats the LM as the expert
//! `q[k] = (1 - p[∅]) p_LM[k]`, `q[∅] = p[∅]`, which sums to one, so tokens
//! get `λ (ln(1 - p[∅]) + ln p_LM[k])` and blank becomes `(1 + λ) ln p[∅]`.
//!
//! Pruning decides where the LM enters: late pruning fuses every `|V| + 1`
//! expansion before selecting the beam, early pruning selects by ASR score and
//! rescores only the survivors.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyps::{topk_indices, Token};
use crate::lm::{LmState, NGramLm};
use crate::math::log1m_exp;

/// Floor applied to LM log-probabilities before weighting.
pub const LM_FLOOR: f64 = -1e9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlankScoring {
    #[default]
    Omit,
    Scored,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pruning {
    Early,
    #[default]
    Late,
}

impl FromStr for BlankScoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "omit" => Ok(Self::Omit),
            "scored" => Ok(Self::Scored),
            _ => Err(Error::Usage(format!("unknown blank scoring '{s}' (expected omit or scored)"))),
        }
    }
}

impl FromStr for Pruning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(Self::Early),
            "late" => Ok(Self::Late),
            _ => Err(Error::Usage(format!("unknown pruning '{s}' (expected early or late)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub lambda: f64,
    pub blank_scoring: BlankScoring,
    pub pruning: Pruning,
    pub eos: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            blank_scoring: BlankScoring::Omit,
            pruning: Pruning::Late,
            eos: false,
        }
    }
}

impl FusionConfig {
    pub fn new(lambda: f64, blank_scoring: BlankScoring, pruning: Pruning) -> Self {
        Self {
            lambda,
            blank_scoring,
            pruning,
            eos: false,
        }
    }

    /// LM term added to a non-blank token.
    #[inline]
    pub fn token_term(&self, log_p_blank: f64, lm_logprob: f64) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        let lm = lm_logprob.max(LM_FLOOR);
        match self.blank_scoring {
            BlankScoring::Omit => self.lambda * lm,
            BlankScoring::Scored => self.lambda * (log1m_exp(log_p_blank) + lm),
        }
    }

    /// LM term added to blank.
    #[inline]
    pub fn blank_term(&self, log_p_blank: f64) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        match self.blank_scoring {
            BlankScoring::Omit => 0.0,
            BlankScoring::Scored => self.lambda * log_p_blank,
        }
    }
}

/// Fuses one `V + 1` ASR row with a `V` LM row into `out`.
pub fn fuse_row(asr: &[f64], lm: &[f64], cfg: &FusionConfig, out: &mut [f64]) {
    let v = lm.len();
    let log_blank = asr[v];
    for k in 0..v {
        out[k] = asr[k] + cfg.token_term(log_blank, lm[k]);
    }
    out[v] = log_blank + cfg.blank_term(log_blank);
}

/// Row-wise [`fuse_row`] over `[N, V + 1]` ASR and `[N, V]` LM tensors.
pub fn fuse_scores(asr: &[f64], lm: &[f64], vocab_size: usize, cfg: &FusionConfig) -> Vec<f64> {
    let w = vocab_size + 1;
    let mut out = vec![0.0; asr.len()];
    for ((a, l), o) in asr.chunks(w).zip(lm.chunks(vocab_size)).zip(out.chunks_mut(w)) {
        fuse_row(a, l, cfg, o);
    }
    out
}

/// One selected expansion of a per-stream candidate pool.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selected {
    pub parent: usize,
    /// Emitted token; equal to the blank id for blank or carry.
    pub token: Token,
    pub score: f64,
    /// LM contribution added by this expansion.
    pub lm_delta: f64,
}

/// Late pruning over a `[beam, V + 1]` pool.
///
/// `asr` holds per-slot ASR rows with disallowed entries at `-inf`; `lm_rows`
/// holds `[beam, V]` LM rows (ignored without fusion). `merge` sees the fused
/// candidate scores just before selection.
pub fn late_prune_step(
    asr: &[f64],
    lm_rows: Option<&[f64]>,
    base: &[f64],
    fusion: Option<&FusionConfig>,
    k: usize,
    merge: impl FnOnce(&mut [f64]),
) -> Vec<Selected> {
    let beam = base.len();
    let w = asr.len() / beam;
    let v = w - 1;
    let mut fused = vec![0.0; asr.len()];
    let mut cand = vec![f64::NEG_INFINITY; asr.len()];
    for i in 0..beam {
        let row = &asr[i * w..(i + 1) * w];
        let out = &mut fused[i * w..(i + 1) * w];
        match (fusion, lm_rows) {
            (Some(cfg), Some(lm)) => fuse_row(row, &lm[i * v..(i + 1) * v], cfg, out),
            (Some(cfg), None) => {
                // blank-only rows: tokens are masked, blank may still be scored
                out[..v].copy_from_slice(&row[..v]);
                out[v] = row[v] + cfg.blank_term(row[v]);
            }
            (None, _) => out.copy_from_slice(row),
        }
        if base[i] > f64::NEG_INFINITY {
            for (c, f) in cand[i * w..(i + 1) * w].iter_mut().zip(out.iter()) {
                *c = base[i] + f;
            }
        }
    }
    merge(&mut cand);
    topk_indices(&cand, k)
        .into_iter()
        .map(|idx| {
            let (parent, tok) = (idx / w, idx % w);
            Selected {
                parent,
                token: tok as Token,
                score: cand[idx],
                lm_delta: if asr[idx].is_finite() { fused[idx] - asr[idx] } else { 0.0 },
            }
        })
        .collect()
}

/// Early pruning: select `k` expansions by ASR score, then add LM terms to
/// exactly those. Each selected non-blank expansion costs one LM query.
pub fn early_prune_step(
    asr: &[f64],
    base: &[f64],
    fusion: Option<&FusionConfig>,
    lm: Option<(&NGramLm, &[LmState])>,
    k: usize,
    lm_queries: &mut u64,
) -> Vec<Selected> {
    let beam = base.len();
    let w = asr.len() / beam;
    let v = w - 1;
    let mut cand = vec![f64::NEG_INFINITY; asr.len()];
    for i in 0..beam {
        if base[i] > f64::NEG_INFINITY {
            for (c, a) in cand[i * w..(i + 1) * w].iter_mut().zip(&asr[i * w..(i + 1) * w]) {
                *c = base[i] + a;
            }
        }
    }
    topk_indices(&cand, k)
        .into_iter()
        .map(|idx| {
            let (parent, tok) = (idx / w, idx % w);
            let log_blank = asr[parent * w + v];
            let lm_delta = match fusion {
                Some(cfg) if cand[idx] > f64::NEG_INFINITY => {
                    if tok == v {
                        cfg.blank_term(log_blank)
                    } else {
                        match lm {
                            Some((lm, states)) if cfg.lambda != 0.0 => {
                                *lm_queries += 1;
                                cfg.token_term(log_blank, lm.score_token(states[parent], tok as Token))
                            }
                            _ => cfg.token_term(log_blank, 0.0),
                        }
                    }
                }
                _ => 0.0,
            };
            Selected {
                parent,
                token: tok as Token,
                score: cand[idx] + lm_delta,
                lm_delta,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln(x: f64) -> f64 {
        x.ln()
    }

    #[test]
    fn zero_lambda_is_identity() {
        let asr = [ln(0.2), ln(0.3), ln(0.5)];
        let lm = [ln(0.9), ln(0.1)];
        for mode in [BlankScoring::Omit, BlankScoring::Scored] {
            let cfg = FusionConfig::new(0.0, mode, Pruning::Late);
            let mut out = [0.0; 3];
            fuse_row(&asr, &lm, &cfg, &mut out);
            assert_eq!(out, asr);
        }
    }

    #[test]
    fn worked_values() {
        // p[blank] = 0.5, p[a] = 0.5, p_LM[a] = 1, lambda = 1
        let asr = [ln(0.5), ln(0.5)];
        let lm = [0.0];
        let mut out = [0.0; 2];
        fuse_row(&asr, &lm, &FusionConfig::new(1.0, BlankScoring::Scored, Pruning::Late), &mut out);
        assert!((out[0] - ln(0.25)).abs() < 1e-12);
        assert!((out[1] - ln(0.25)).abs() < 1e-12);
        fuse_row(&asr, &lm, &FusionConfig::new(1.0, BlankScoring::Omit, Pruning::Late), &mut out);
        assert!((out[0] - ln(0.5)).abs() < 1e-12);
        assert!((out[1] - ln(0.5)).abs() < 1e-12);
    }

    #[test]
    fn certain_blank_kills_tokens_under_scored() {
        let asr = [f64::NEG_INFINITY, 0.0];
        let mut out = [0.0; 2];
        fuse_row(&asr, &[ln(0.5)], &FusionConfig::new(0.7, BlankScoring::Scored, Pruning::Late), &mut out);
        assert_eq!(out, [f64::NEG_INFINITY, 0.0]);
    }

    #[test]
    fn zero_lm_probability_is_floored() {
        let asr = [f64::NEG_INFINITY, ln(0.5), ln(0.5)];
        let lm = [f64::NEG_INFINITY, f64::NEG_INFINITY];
        let mut out = [0.0; 3];
        fuse_row(&asr, &lm, &FusionConfig::new(1.0, BlankScoring::Scored, Pruning::Late), &mut out);
        assert!(out.iter().all(|v| !v.is_nan()));
        assert!((out[1] - (ln(0.5) + ln(0.5) + LM_FLOOR)).abs() < 1e-6);
    }

    #[test]
    fn late_step_matches_sort_oracle() {
        let asr = [ln(0.1), ln(0.6), ln(0.3), ln(0.5), ln(0.25), ln(0.25)];
        let lm = [ln(0.9), ln(0.1), ln(0.2), ln(0.8)];
        let base = [-1.0, -1.5];
        let cfg = FusionConfig::new(1.0, BlankScoring::Omit, Pruning::Late);
        let got = late_prune_step(&asr, Some(&lm), &base, Some(&cfg), 3, |_| {});
        let fused = fuse_scores(&asr, &lm, 2, &cfg);
        let mut all: Vec<(f64, usize)> = (0..6).map(|i| (base[i / 3] + fused[i], i)).collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let want: Vec<usize> = all[..3].iter().map(|x| x.1).collect();
        let got_idx: Vec<usize> = got.iter().map(|s| s.parent * 3 + s.token as usize).collect();
        assert_eq!(got_idx, want);
    }
}
