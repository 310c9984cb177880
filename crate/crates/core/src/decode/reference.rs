//! Straightforward per-utterance beam search used to cross-check the batched
//! engine. Hypotheses are plain token vectors, duplicates are found by
//! comparing whole transcripts, emission states and LM states are rebuilt from
//! the transcript on every query, and LM rows are filled one token at a time.

use super::{rounds_per_frame, Counters, DecodeConfig, DecodeResult, Hypothesis, StreamResult};
use crate::error::Result;
use crate::fusion::{fuse_row, FusionConfig, Pruning};
use crate::hyps::Token;
use crate::lm::{LmState, NGramLm};
use crate::math::log_add_exp;
use crate::model::{EmissionModel, ModelState};

#[derive(Clone, Debug)]
struct Hyp {
    tokens: Vec<Token>,
    score: f64,
    lm_score: f64,
    done: bool,
}

impl Hyp {
    fn dead() -> Self {
        Hyp { tokens: Vec::new(), score: f64::NEG_INFINITY, lm_score: 0.0, done: true }
    }

    fn live(&self) -> bool {
        self.score > f64::NEG_INFINITY
    }
}

pub(crate) fn reference_search<M: EmissionModel>(
    streams: &[M],
    cfg: &DecodeConfig,
    lm: Option<&NGramLm>,
    aes: bool,
) -> Result<DecodeResult> {
    let fusion = cfg.active_fusion(lm)?;
    let mut counters = Counters::default();
    let mut out = Vec::with_capacity(streams.len());
    for s in streams {
        out.push(search_one(s, cfg, fusion, aes, &mut counters)?);
    }
    Ok(DecodeResult { streams: out, counters, wall_seconds: 0.0 })
}

fn lm_state_of(lm: &NGramLm, tokens: &[Token]) -> Result<LmState> {
    let mut st = lm.start_state();
    for &t in tokens {
        st = lm.advance(st, t)?;
    }
    Ok(st)
}

fn search_one<M: EmissionModel>(
    model: &M,
    cfg: &DecodeConfig,
    fusion: Option<(FusionConfig, &NGramLm)>,
    aes: bool,
    counters: &mut Counters,
) -> Result<StreamResult> {
    let beam = cfg.beam;
    let v = model.vocab_size();
    let w = v + 1;
    let order = model.context_order();
    let late = !matches!(fusion, Some((f, _)) if f.pruning == Pruning::Early);
    let rounds = rounds_per_frame(cfg, aes);

    let mut hyps = vec![Hyp::dead(); beam];
    hyps[0] = Hyp { tokens: Vec::new(), score: 0.0, lm_score: 0.0, done: false };
    let mut scoring_rounds = 0;

    for t in 0..model.num_frames() {
        for h in hyps.iter_mut() {
            h.done = false;
        }
        for r in 0..rounds {
            let last = r + 1 == rounds;
            let active: Vec<bool> = hyps.iter().map(|h| h.live() && !h.done).collect();
            if !active.iter().any(|&a| a) {
                break;
            }
            scoring_rounds += 1;
            counters.model_calls += 1;

            let mut asr = vec![0.0; beam * w];
            let mut lm_rows = vec![0.0; beam * v];
            for j in 0..beam {
                let row = &mut asr[j * w..(j + 1) * w];
                if !active[j] {
                    row[..v].fill(f64::NEG_INFINITY);
                    row[v] = 0.0;
                    continue;
                }
                counters.rows_scored += 1;
                model.log_probs(t, &ModelState::from_tokens(order, &hyps[j].tokens), row)?;
                if last || hyps[j].tokens.len() >= cfg.max_len {
                    row[..v].fill(f64::NEG_INFINITY);
                }
                if let Some((_, lm)) = fusion {
                    if late && !last {
                        let st = lm_state_of(lm, &hyps[j].tokens)?;
                        for x in 0..v {
                            lm_rows[j * v + x] = lm.score_token(st, x as Token);
                        }
                        counters.lm_queries += v as u64;
                    }
                }
            }
            let have_lm_rows = fusion.is_some() && late && !last;

            let mut base: Vec<f64> = hyps.iter().map(|h| h.score).collect();
            if aes && cfg.prefix_search {
                let mut by_len: Vec<usize> = (0..beam).filter(|&j| active[j]).collect();
                by_len.sort_by_key(|&j| (hyps[j].tokens.len(), j));
                for &long in &by_len {
                    let lt = &hyps[long].tokens;
                    if lt.is_empty() {
                        continue;
                    }
                    let Some(&short) = by_len.iter().find(|&&a| hyps[a].tokens[..] == lt[..lt.len() - 1]) else {
                        continue;
                    };
                    let x = lt[lt.len() - 1] as usize;
                    let asr_x = asr[short * w + x];
                    if asr_x == f64::NEG_INFINITY {
                        continue;
                    }
                    let fused = match fusion {
                        None => asr_x,
                        Some((f, lm)) => {
                            let lm_x = if have_lm_rows {
                                lm_rows[short * v + x]
                            } else {
                                counters.lm_queries += 1;
                                lm.score_token(lm_state_of(lm, &hyps[short].tokens)?, x as Token)
                            };
                            asr_x + f.token_term(asr[short * w + v], lm_x)
                        }
                    };
                    base[long] = log_add_exp(base[long], base[short] + fused);
                    asr[short * w + x] = f64::NEG_INFINITY;
                }
            }

            // (score, pool index, lm delta)
            let mut cands: Vec<(f64, usize, f64)> = Vec::with_capacity(beam * w);
            if late {
                let mut fused = vec![0.0; w];
                for j in 0..beam {
                    let row = &asr[j * w..(j + 1) * w];
                    match fusion {
                        Some((f, _)) if have_lm_rows => fuse_row(row, &lm_rows[j * v..(j + 1) * v], &f, &mut fused),
                        Some((f, _)) => {
                            fused[..v].copy_from_slice(&row[..v]);
                            fused[v] = row[v] + f.blank_term(row[v]);
                        }
                        None => fused.copy_from_slice(row),
                    }
                    for x in 0..w {
                        let score = if base[j] > f64::NEG_INFINITY { base[j] + fused[x] } else { f64::NEG_INFINITY };
                        let delta = if row[x].is_finite() { fused[x] - row[x] } else { 0.0 };
                        cands.push((score, j * w + x, delta));
                    }
                }
                // blank column: equal transcripts are the same finished hypothesis
                for a in 0..beam {
                    let ia = a * w + v;
                    if cands[ia].0 == f64::NEG_INFINITY {
                        continue;
                    }
                    for b in a + 1..beam {
                        let ib = b * w + v;
                        if cands[ib].0 > f64::NEG_INFINITY && hyps[a].tokens == hyps[b].tokens {
                            cands[ia].0 = log_add_exp(cands[ia].0, cands[ib].0);
                            cands[ib].0 = f64::NEG_INFINITY;
                        }
                    }
                }
                cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                cands.truncate(beam);
            } else {
                for j in 0..beam {
                    for x in 0..w {
                        let score = if base[j] > f64::NEG_INFINITY { base[j] + asr[j * w + x] } else { f64::NEG_INFINITY };
                        cands.push((score, j * w + x, 0.0));
                    }
                }
                cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                cands.truncate(beam);
                let (f, lm) = fusion.expect("early pruning only runs with an LM");
                for c in cands.iter_mut() {
                    if c.0 == f64::NEG_INFINITY {
                        continue;
                    }
                    let (j, x) = (c.1 / w, c.1 % w);
                    let log_blank = asr[j * w + v];
                    let delta = if x == v {
                        f.blank_term(log_blank)
                    } else {
                        counters.lm_queries += 1;
                        f.token_term(log_blank, lm.score_token(lm_state_of(lm, &hyps[j].tokens)?, x as Token))
                    };
                    c.0 += delta;
                    c.2 = delta;
                }
            }

            let mut next = Vec::with_capacity(beam);
            for &(score, idx, delta) in &cands {
                if score == f64::NEG_INFINITY {
                    next.push(Hyp::dead());
                    continue;
                }
                let (j, x) = (idx / w, idx % w);
                let parent = &hyps[j];
                let mut tokens = parent.tokens.clone();
                if x != v {
                    tokens.push(x as Token);
                }
                next.push(Hyp {
                    tokens,
                    score,
                    lm_score: parent.lm_score + delta,
                    done: parent.done || x == v,
                });
            }
            if !late {
                for a in 0..beam {
                    if !next[a].live() {
                        continue;
                    }
                    for b in a + 1..beam {
                        if next[b].live() && next[a].done == next[b].done && next[a].tokens == next[b].tokens {
                            next[a].score = log_add_exp(next[a].score, next[b].score);
                            next[b].score = f64::NEG_INFINITY;
                        }
                    }
                }
            }
            hyps = next;
        }
    }

    if let Some((f, lm)) = fusion {
        if f.eos {
            for h in hyps.iter_mut().filter(|h| h.live()) {
                let term = f.lambda * lm.score_eos(lm_state_of(lm, &h.tokens)?);
                counters.lm_queries += 1;
                h.score += term;
                h.lm_score += term;
            }
        }
    }
    let mut ranked: Vec<(usize, &Hyp)> = hyps.iter().enumerate().filter(|(_, h)| h.live()).collect();
    ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
    Ok(StreamResult {
        nbest: ranked
            .into_iter()
            .take(cfg.return_nbest)
            .map(|(_, h)| Hypothesis { tokens: h.tokens.clone(), score: h.score, lm_score: h.lm_score })
            .collect(),
        num_frames: model.num_frames(),
        scoring_rounds,
    })
}
