//! Exhaustive alignment enumeration for tiny inputs.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::hyps::Token;
use crate::model::{EmissionModel, ModelState};

/// Largest (frames, vocabulary, transcript length) accepted by [`enumerate_alignments`].
pub const ORACLE_LIMITS: (usize, usize, usize) = (6, 4, 6);

/// Sums the probability of every alignment path, grouped by transcript.
///
/// Paths may emit any number of tokens per frame, but no transcript grows
/// beyond `max_len`; each frame ends with exactly one blank.
pub fn enumerate_alignments<M: EmissionModel>(model: &M, max_len: usize) -> Result<BTreeMap<Vec<Token>, f64>> {
    let (t_lim, v_lim, u_lim) = ORACLE_LIMITS;
    let (t, v) = (model.num_frames(), model.vocab_size());
    if t > t_lim || v > v_lim || max_len > u_lim {
        return Err(Error::InvalidArgument(format!(
            "alignment enumeration is limited to T <= {t_lim}, |V| <= {v_lim}, U <= {u_lim} (got {t}, {v}, {max_len})"
        )));
    }
    let mut out = BTreeMap::new();
    let mut tokens = Vec::with_capacity(max_len);
    visit(model, max_len, 0, &mut tokens, 0.0, &mut out)?;
    Ok(out)
}

fn visit<M: EmissionModel>(
    model: &M,
    max_len: usize,
    frame: usize,
    tokens: &mut Vec<Token>,
    logp: f64,
    out: &mut BTreeMap<Vec<Token>, f64>,
) -> Result<()> {
    let v = model.vocab_size();
    let mut row = vec![0.0; v + 1];
    model.log_probs(frame, &ModelState::from_tokens(model.context_order(), tokens), &mut row)?;
    let after_blank = logp + row[v];
    if after_blank > f64::NEG_INFINITY {
        if frame + 1 == model.num_frames() {
            *out.entry(tokens.clone()).or_insert(0.0) += after_blank.exp();
        } else {
            visit(model, max_len, frame + 1, tokens, after_blank, out)?;
        }
    }
    if tokens.len() < max_len {
        for k in 0..v {
            if row[k] > f64::NEG_INFINITY {
                tokens.push(k as Token);
                visit(model, max_len, frame, tokens, logp + row[k], out)?;
                tokens.pop();
            }
        }
    }
    Ok(())
}
