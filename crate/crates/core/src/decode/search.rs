//! Batched label-synchronous beam search over the shared hypothesis store.
//!
//! Each round scores every live, unfinished slot of the batch in one call,
//! builds a `beam * (V + 1)` candidate pool per stream, merges and prunes it,
//! and writes one new store column. Slots that already took a blank this frame
//! ride along through the blank column of the pool with a zero-cost "carry".

use std::collections::HashMap;

use super::{rounds_per_frame, Counters, DecodeConfig, DecodeResult, Hypothesis, StreamResult};
use crate::error::Result;
use crate::fusion::{early_prune_step, late_prune_step, FusionConfig, Pruning, Selected};
use crate::hyps::{merge_by_key, BatchedBeamHyps, HypKey, Token};
use crate::lm::{LmState, NGramLm};
use crate::math::log_add_exp;
use crate::model::{EmissionModel, ModelState, ScoreRow};

const NO_ROW: usize = usize::MAX;

pub(crate) fn beam_search<M: EmissionModel>(
    streams: &[M],
    cfg: &DecodeConfig,
    lm: Option<&NGramLm>,
    aes: bool,
) -> Result<DecodeResult> {
    let fusion = cfg.active_fusion(lm)?;
    let batch = streams.len();
    let beam = cfg.beam;
    let v = streams[0].vocab_size();
    let w = v + 1;
    let order = streams[0].context_order();
    let blank = v as Token;
    let n = batch * beam;
    let late = !matches!(fusion, Some((FusionConfig { pruning: Pruning::Early, .. }, _)));

    let mut store = BatchedBeamHyps::with_hash_params(batch, beam, cfg.max_len, blank, cfg.hash)?;
    let mut model_states = vec![ModelState::initial(order); n];
    let mut lm_states: Vec<LmState> = match fusion {
        Some((_, lm)) => vec![lm.start_state(); n],
        None => Vec::new(),
    };
    let mut lm_scores = vec![0.0; n];
    let mut done = vec![false; n];
    let mut counters = Counters::default();
    let mut stream_rounds = vec![0usize; batch];

    let frames: Vec<usize> = streams.iter().map(|s| s.num_frames()).collect();
    let t_max = frames.iter().copied().max().unwrap_or(0);
    let rounds = rounds_per_frame(cfg, aes);

    let mut rows: Vec<ScoreRow> = Vec::with_capacity(n);
    let mut row_of = vec![NO_ROW; n];
    let mut asr: Vec<f64> = Vec::new();
    let mut pool = vec![0.0; beam * w];
    let mut lm_pool = vec![0.0; beam * v];
    let mut parents = vec![0usize; n];
    let mut tokens = vec![blank; n];
    let mut deltas = vec![0.0; n];
    let mut exact = vec![0.0; n];
    let mut lm_delta = vec![0.0; n];
    let mut touched = vec![false; batch];
    let mut seen: HashMap<ModelState, usize> = HashMap::new();
    let mut slot_rows: Vec<usize> = Vec::with_capacity(n);
    let mut lm_row_of = vec![NO_ROW; n];

    for t in 0..t_max {
        for b in 0..batch {
            if t < frames[b] {
                done[b * beam..(b + 1) * beam].fill(false);
            }
        }
        for r in 0..rounds {
            let last = r + 1 == rounds;
            rows.clear();
            slot_rows.clear();
            for b in 0..batch {
                seen.clear();
                for j in 0..beam {
                    let k = b * beam + j;
                    row_of[k] = NO_ROW;
                    if t < frames[b] && store.is_live(b, j) && !done[k] {
                        // slots sharing a context at this frame share a row
                        row_of[k] = *seen.entry(model_states[k]).or_insert_with(|| {
                            rows.push(ScoreRow { stream: b, frame: t, state: model_states[k] });
                            rows.len() - 1
                        });
                        slot_rows.push(k);
                    }
                }
            }
            if rows.is_empty() {
                break;
            }
            asr.resize(rows.len() * w, 0.0);
            M::score_batch(streams, &rows, &mut asr)?;
            counters.model_calls += 1;
            counters.rows_scored += rows.len() as u64;

            for (i, &k) in slot_rows.iter().enumerate() {
                lm_row_of[k] = i;
            }
            let lm_rows = match fusion {
                Some((_, lm)) if late && !last => {
                    let states: Vec<LmState> = slot_rows.iter().map(|&k| lm_states[k]).collect();
                    counters.lm_queries += (states.len() * v) as u64;
                    Some(lm.score_vocab_batch(&states))
                }
                _ => None,
            };

            for k in 0..n {
                parents[k] = k % beam;
                tokens[k] = blank;
                exact[k] = store.scores()[k];
                lm_delta[k] = 0.0;
            }
            for b in 0..batch {
                let range = b * beam..(b + 1) * beam;
                touched[b] = row_of[range.clone()].iter().any(|&x| x != NO_ROW);
                if !touched[b] {
                    continue;
                }
                stream_rounds[b] += 1;
                let mut active = vec![false; beam];
                for j in 0..beam {
                    let k = b * beam + j;
                    let dst = &mut pool[j * w..(j + 1) * w];
                    match row_of[k] {
                        NO_ROW => {
                            dst[..v].fill(f64::NEG_INFINITY);
                            dst[v] = 0.0;
                            if lm_rows.is_some() {
                                lm_pool[j * v..(j + 1) * v].fill(0.0);
                            }
                        }
                        ri => {
                            active[j] = true;
                            dst.copy_from_slice(&asr[ri * w..(ri + 1) * w]);
                            if last || store.length(b, j) >= cfg.max_len {
                                dst[..v].fill(f64::NEG_INFINITY);
                            }
                            if let Some(lr) = &lm_rows {
                                let li = lm_row_of[k];
                                lm_pool[j * v..(j + 1) * v].copy_from_slice(&lr[li * v..(li + 1) * v]);
                            }
                        }
                    }
                }
                let mut base = store.stream_scores(b).to_vec();
                if aes && cfg.prefix_search {
                    let lm_view = fusion.map(|(f, lm)| (f, lm, &lm_states[range.clone()]));
                    prefix_search(
                        &store,
                        b,
                        &active,
                        &mut pool,
                        lm_rows.as_ref().map(|_| &lm_pool[..]),
                        &mut base,
                        lm_view,
                        &mut counters.lm_queries,
                    );
                }
                let fcfg = fusion.map(|(f, _)| f);
                let selected: Vec<Selected> = if late {
                    let keys: Vec<HypKey> = (0..beam).map(|j| store.key(b, j)).collect();
                    late_prune_step(
                        &pool,
                        lm_rows.as_ref().map(|_| &lm_pool[..]),
                        &base,
                        fcfg.as_ref(),
                        beam,
                        |cand| merge_blank_column(cand, &keys, w),
                    )
                } else {
                    let (f, lm) = fusion.expect("early pruning only runs with an LM");
                    early_prune_step(
                        &pool,
                        &base,
                        Some(&f),
                        Some((lm, &lm_states[range.clone()])),
                        beam,
                        &mut counters.lm_queries,
                    )
                };
                for (j, s) in selected.iter().enumerate() {
                    let k = b * beam + j;
                    parents[k] = s.parent;
                    tokens[k] = s.token;
                    exact[k] = s.score;
                    lm_delta[k] = s.lm_delta;
                }
                for (j, &s) in base.iter().enumerate() {
                    store.set_score(b, j, s);
                }
            }

            for k in 0..n {
                deltas[k] = if exact[k] == f64::NEG_INFINITY { f64::NEG_INFINITY } else { 0.0 };
            }
            store.expand(&parents, &tokens, &deltas)?;
            permute(&mut model_states, &parents, beam, |k, s| {
                if tokens[k] == blank {
                    s
                } else {
                    s.push(tokens[k])
                }
            });
            if let Some((_, lm)) = fusion {
                let old = lm_states.clone();
                for k in 0..n {
                    let p = (k / beam) * beam + parents[k];
                    lm_states[k] = if tokens[k] == blank || exact[k] == f64::NEG_INFINITY {
                        old[p]
                    } else {
                        lm.advance(old[p], tokens[k])?
                    };
                }
            }
            permute(&mut lm_scores, &parents, beam, |k, s| s + lm_delta[k]);
            let old_done = done.clone();
            for k in 0..n {
                let b = k / beam;
                store.set_score(b, k % beam, exact[k]);
                if touched[b] {
                    done[k] = old_done[b * beam + parents[k]] || tokens[k] == blank;
                }
            }
            if !late {
                let groups: Vec<u32> = done.iter().map(|&d| d as u32).collect();
                store.merge_duplicates_within(&groups);
            }
        }
    }

    if let Some((f, lm)) = fusion {
        if f.eos {
            for k in 0..n {
                let (b, j) = (k / beam, k % beam);
                if store.is_live(b, j) {
                    let term = f.lambda * lm.score_eos(lm_states[k]);
                    counters.lm_queries += 1;
                    store.set_score(b, j, store.score(b, j) + term);
                    lm_scores[k] += term;
                }
            }
        }
    }

    let mut out = Vec::with_capacity(batch);
    for b in 0..batch {
        let mut live: Vec<usize> = (0..beam).filter(|&j| store.is_live(b, j)).collect();
        live.sort_by(|&x, &y| store.score(b, y).total_cmp(&store.score(b, x)).then(x.cmp(&y)));
        let mut nbest = Vec::new();
        for &j in live.iter().take(cfg.return_nbest) {
            nbest.push(Hypothesis {
                tokens: store.retrieve_transcript(b, j)?,
                score: store.score(b, j),
                lm_score: lm_scores[b * beam + j],
            });
        }
        out.push(StreamResult { nbest, num_frames: frames[b], scoring_rounds: stream_rounds[b] });
    }
    Ok(DecodeResult { streams: out, counters, wall_seconds: 0.0 })
}

/// Reorders a per-slot side array by the parents chosen this round.
fn permute<T: Copy>(values: &mut [T], parents: &[usize], beam: usize, f: impl Fn(usize, T) -> T) {
    let old = values.to_vec();
    for k in 0..values.len() {
        values[k] = f(k, old[(k / beam) * beam + parents[k]]);
    }
}

/// Blank and carry candidates keep their parent's transcript and all end up
/// finished, so equal keys among them are the same hypothesis.
fn merge_blank_column(cand: &mut [f64], keys: &[HypKey], w: usize) {
    let v = w - 1;
    let mut col: Vec<f64> = (0..keys.len()).map(|j| cand[j * w + v]).collect();
    if merge_by_key(keys, &mut col) > 0 {
        for (j, s) in col.into_iter().enumerate() {
            cand[j * w + v] = s;
        }
    }
}

/// For unfinished `A` and `B = A + [x]` in the same stream, folds the path
/// `A -> x` into `B` and masks it in `A`'s row so it is not counted twice.
#[allow(clippy::too_many_arguments)]
fn prefix_search(
    store: &BatchedBeamHyps,
    b: usize,
    active: &[bool],
    pool: &mut [f64],
    lm_pool: Option<&[f64]>,
    base: &mut [f64],
    lm: Option<(FusionConfig, &NGramLm, &[LmState])>,
    lm_queries: &mut u64,
) {
    let beam = active.len();
    let w = pool.len() / beam;
    let v = w - 1;
    let mut order: Vec<usize> = (0..beam).filter(|&j| active[j]).collect();
    order.sort_by_key(|&j| (store.length(b, j), j));
    for &long in &order {
        let len = store.length(b, long);
        if len == 0 {
            continue;
        }
        let prefix = store.prefix_hash(b, long);
        let x = store.last_token(b, long) as usize;
        let Some(&short) = order
            .iter()
            .find(|&&a| store.length(b, a) + 1 == len && store.hash(b, a) == prefix)
        else {
            continue;
        };
        let asr_x = pool[short * w + x];
        if asr_x == f64::NEG_INFINITY {
            continue;
        }
        let fused = match lm {
            None => asr_x,
            Some((f, lm, states)) => {
                let lm_x = match lm_pool {
                    Some(rows) => rows[short * v + x],
                    None => {
                        *lm_queries += 1;
                        lm.score_token(states[short], x as Token)
                    }
                };
                asr_x + f.token_term(pool[short * w + v], lm_x)
            }
        };
        base[long] = log_add_exp(base[long], base[short] + fused);
        pool[short * w + x] = f64::NEG_INFINITY;
    }
}
