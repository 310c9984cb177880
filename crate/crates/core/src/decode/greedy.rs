//! Batched greedy decoding. Every stream advances at its own pace: a token
//! keeps the stream on its frame, a blank (or an exhausted frame budget)
//! moves it to the next one.

use super::{Counters, DecodeConfig, DecodeResult, Hypothesis, StreamResult};
use crate::error::Result;
use crate::fusion::{fuse_row, Pruning};
use crate::hyps::Token;
use crate::lm::LmState;
use crate::model::{EmissionModel, ModelState, ScoreRow};

struct Cursor {
    frame: usize,
    round: usize,
    rounds: usize,
    state: ModelState,
    lm_state: Option<LmState>,
    tokens: Vec<Token>,
    score: f64,
    lm_score: f64,
}

pub(crate) fn greedy_batched<M: EmissionModel>(
    streams: &[M],
    cfg: &DecodeConfig,
    lm: Option<&crate::lm::NGramLm>,
) -> Result<DecodeResult> {
    let fusion = cfg.active_fusion(lm)?;
    let v = streams[0].vocab_size();
    let w = v + 1;
    let order = streams[0].context_order();
    let s = cfg.max_symbols_per_frame;
    let late = !matches!(fusion, Some((f, _)) if f.pruning == Pruning::Early);
    let mut cursors: Vec<Cursor> = streams
        .iter()
        .map(|_| Cursor {
            frame: 0,
            round: 0,
            rounds: 0,
            state: ModelState::initial(order),
            lm_state: fusion.map(|(_, lm)| lm.start_state()),
            tokens: Vec::new(),
            score: 0.0,
            lm_score: 0.0,
        })
        .collect();
    let mut counters = Counters::default();
    let mut rows = Vec::with_capacity(streams.len());
    let mut which = Vec::with_capacity(streams.len());
    let mut asr = Vec::new();
    let mut fused = vec![0.0; w];
    let mut lm_row = vec![0.0; v];

    loop {
        rows.clear();
        which.clear();
        for (b, c) in cursors.iter().enumerate() {
            if c.frame < streams[b].num_frames() {
                rows.push(ScoreRow { stream: b, frame: c.frame, state: c.state });
                which.push(b);
            }
        }
        if rows.is_empty() {
            break;
        }
        asr.resize(rows.len() * w, 0.0);
        M::score_batch(streams, &rows, &mut asr)?;
        counters.model_calls += 1;
        counters.rows_scored += rows.len() as u64;

        for (ri, &b) in which.iter().enumerate() {
            let c = &mut cursors[b];
            c.rounds += 1;
            let row = &mut asr[ri * w..(ri + 1) * w];
            let last = c.round + 1 == s;
            if last || c.tokens.len() >= cfg.max_len {
                row[..v].fill(f64::NEG_INFINITY);
            }
            let (token, score, delta) = match fusion {
                None => {
                    let k = argmax(row.iter().map(|x| c.score + x));
                    (k, c.score + row[k], 0.0)
                }
                Some((f, lm)) if late => {
                    let st = c.lm_state.expect("fusion keeps an LM state");
                    if last {
                        fused[..v].copy_from_slice(&row[..v]);
                        fused[v] = row[v] + f.blank_term(row[v]);
                    } else {
                        lm.score_vocab(st, &mut lm_row);
                        counters.lm_queries += v as u64;
                        fuse_row(row, &lm_row, &f, &mut fused);
                    }
                    let k = argmax(fused.iter().map(|x| c.score + x));
                    let delta = if row[k].is_finite() { fused[k] - row[k] } else { 0.0 };
                    (k, c.score + fused[k], delta)
                }
                Some((f, lm)) => {
                    let k = argmax(row.iter().map(|x| c.score + x));
                    let delta = if k == v {
                        f.blank_term(row[v])
                    } else {
                        counters.lm_queries += 1;
                        f.token_term(row[v], lm.score_token(c.lm_state.expect("fusion keeps an LM state"), k as Token))
                    };
                    (k, (c.score + row[k]) + delta, delta)
                }
            };
            c.score = score;
            c.lm_score += delta;
            if token == v || score == f64::NEG_INFINITY {
                c.frame += 1;
                c.round = 0;
            } else {
                let tok = token as Token;
                c.tokens.push(tok);
                c.state = c.state.push(tok);
                if let (Some((_, lm)), Some(st)) = (fusion, c.lm_state) {
                    c.lm_state = Some(lm.advance(st, tok)?);
                }
                c.round += 1;
            }
        }
    }

    let mut out = Vec::with_capacity(streams.len());
    for (b, c) in cursors.into_iter().enumerate() {
        let mut score = c.score;
        let mut lm_score = c.lm_score;
        if let Some((f, lm)) = fusion {
            if f.eos {
                let term = f.lambda * lm.score_eos(c.lm_state.expect("fusion keeps an LM state"));
                counters.lm_queries += 1;
                score += term;
                lm_score += term;
            }
        }
        out.push(StreamResult {
            nbest: vec![Hypothesis { tokens: c.tokens, score, lm_score }],
            num_frames: streams[b].num_frames(),
            scoring_rounds: c.rounds,
        });
    }
    Ok(DecodeResult { streams: out, counters, wall_seconds: 0.0 })
}

/// First index of the maximum; ties go to the lower index.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in values.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}
