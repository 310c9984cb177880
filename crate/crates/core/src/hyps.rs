//! Fixed-capacity batched hypothesis storage.
//!
//! Every stream owns exactly `beam` slots for the whole decode. Transcripts
//! live in a backlink trie: each expansion step appends one column holding,
//! per slot, the emitted symbol and the index of the parent slot in the
//! previous column. Common prefixes are therefore stored once, and extending
//! a hypothesis costs one write instead of a transcript copy.
//!
//! Slots are compared through [`HypKey`]: an incremental polynomial hash of
//! the non-blank tokens together with the token count and last token. Dead
//! slots are marked with a score of `-inf` and keep their stale data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::log_add_exp;

/// Token id. Real tokens are `0..V`; the blank symbol is `V`.
pub type Token = u32;

/// `last_token` value of an empty transcript.
pub const NO_TOKEN: Token = Token::MAX;

/// Parameters of the rolling transcript hash `H' = (H * base + token + 1) mod modulus`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashParams {
    pub base: u64,
    pub modulus: u64,
}

impl Default for HashParams {
    fn default() -> Self {
        Self {
            base: 1_000_003,
            modulus: (1 << 61) - 1,
        }
    }
}

impl HashParams {
    /// Hash of the transcript extended by `token`. The `+1` keeps token 0
    /// distinguishable from the empty transcript (hash 0).
    #[inline]
    pub fn update(&self, h_prev: u64, token: Token) -> u64 {
        let m = self.modulus as u128;
        ((h_prev as u128 * self.base as u128 + token as u128 + 1) % m) as u64
    }

    /// Like [`HashParams::update`] but rejects the blank id.
    pub fn update_checked(&self, h_prev: u64, token: Token, blank_id: Token) -> Result<u64> {
        if token >= blank_id {
            return Err(Error::Contract(format!(
                "token {token} cannot be hashed (blank id is {blank_id})"
            )));
        }
        Ok(self.update(h_prev, token))
    }

    pub fn fold(&self, tokens: &[Token]) -> u64 {
        tokens.iter().fold(0, |h, &t| self.update(h, t))
    }
}

/// Hash step with the default parameters.
pub fn update_hash(h_prev: u64, token: Token) -> u64 {
    HashParams::default().update(h_prev, token)
}

/// Constant-size identity of a transcript.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HypKey {
    pub hash: u64,
    pub length: u32,
    pub last_token: Token,
}

#[derive(Clone, Debug)]
pub struct BatchedBeamHyps {
    batch: usize,
    beam: usize,
    max_len: usize,
    blank_id: Token,
    hash_params: HashParams,
    steps: usize,
    /// `[steps][batch][beam]`: symbol written at each step (blank included).
    transcripts: Vec<Token>,
    /// `[steps][batch][beam]`: parent slot in the previous column.
    transcripts_ptrs: Vec<u32>,
    scores: Vec<f64>,
    lengths: Vec<u32>,
    hashes: Vec<u64>,
    prefix_hashes: Vec<u64>,
    last_tokens: Vec<Token>,
}

impl BatchedBeamHyps {
    pub fn new(batch: usize, beam: usize, max_len: usize, blank_id: Token) -> Result<Self> {
        Self::with_hash_params(batch, beam, max_len, blank_id, HashParams::default())
    }

    pub fn with_hash_params(
        batch: usize,
        beam: usize,
        max_len: usize,
        blank_id: Token,
        hash_params: HashParams,
    ) -> Result<Self> {
        if batch == 0 || beam == 0 || max_len == 0 {
            return Err(Error::InvalidArgument(format!(
                "store dimensions must be positive (batch={batch}, beam={beam}, max_len={max_len})"
            )));
        }
        if hash_params.modulus < 2 || hash_params.base == 0 {
            return Err(Error::InvalidArgument("hash modulus must be >= 2 and base > 0".into()));
        }
        let n = batch * beam;
        let mut scores = vec![f64::NEG_INFINITY; n];
        for b in 0..batch {
            scores[b * beam] = 0.0;
        }
        let reserve = n * max_len.min(256);
        Ok(Self {
            batch,
            beam,
            max_len,
            blank_id,
            hash_params,
            steps: 0,
            transcripts: Vec::with_capacity(reserve),
            transcripts_ptrs: Vec::with_capacity(reserve),
            scores,
            lengths: vec![0; n],
            hashes: vec![0; n],
            prefix_hashes: vec![0; n],
            last_tokens: vec![NO_TOKEN; n],
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn beam(&self) -> usize {
        self.beam
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn blank_id(&self) -> Token {
        self.blank_id
    }

    pub fn hash_params(&self) -> HashParams {
        self.hash_params
    }

    /// Number of expansion steps (trie columns) written so far.
    pub fn num_steps(&self) -> usize {
        self.steps
    }

    #[inline]
    fn idx(&self, stream: usize, slot: usize) -> usize {
        stream * self.beam + slot
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn stream_scores(&self, stream: usize) -> &[f64] {
        &self.scores[stream * self.beam..(stream + 1) * self.beam]
    }

    pub fn score(&self, stream: usize, slot: usize) -> f64 {
        self.scores[self.idx(stream, slot)]
    }

    pub fn set_score(&mut self, stream: usize, slot: usize, score: f64) {
        let i = self.idx(stream, slot);
        self.scores[i] = score;
    }

    pub fn kill(&mut self, stream: usize, slot: usize) {
        self.set_score(stream, slot, f64::NEG_INFINITY);
    }

    pub fn is_live(&self, stream: usize, slot: usize) -> bool {
        self.score(stream, slot) > f64::NEG_INFINITY
    }

    pub fn length(&self, stream: usize, slot: usize) -> usize {
        self.lengths[self.idx(stream, slot)] as usize
    }

    pub fn hash(&self, stream: usize, slot: usize) -> u64 {
        self.hashes[self.idx(stream, slot)]
    }

    /// Hash of the transcript without its last token (0 for empty transcripts).
    pub fn prefix_hash(&self, stream: usize, slot: usize) -> u64 {
        self.prefix_hashes[self.idx(stream, slot)]
    }

    pub fn last_token(&self, stream: usize, slot: usize) -> Token {
        self.last_tokens[self.idx(stream, slot)]
    }

    pub fn key(&self, stream: usize, slot: usize) -> HypKey {
        let i = self.idx(stream, slot);
        HypKey {
            hash: self.hashes[i],
            length: self.lengths[i],
            last_token: self.last_tokens[i],
        }
    }

    /// Raw trie entry `(symbol, parent slot)` at `step` for `(stream, slot)`.
    pub fn entry(&self, step: usize, stream: usize, slot: usize) -> (Token, usize) {
        let i = step * self.batch * self.beam + self.idx(stream, slot);
        (self.transcripts[i], self.transcripts_ptrs[i] as usize)
    }

    /// Replaces every slot with an expansion of a parent slot from the same stream.
    ///
    /// `parents`, `tokens` and `score_deltas` are `[batch * beam]`. A token equal
    /// to the blank id keeps the parent transcript; any other token appends it.
    /// Children whose resulting score is `-inf` are stored as dead blank copies.
    pub fn expand(&mut self, parents: &[usize], tokens: &[Token], score_deltas: &[f64]) -> Result<()> {
        let n = self.batch * self.beam;
        if parents.len() != n || tokens.len() != n || score_deltas.len() != n {
            return Err(Error::InvalidArgument(format!(
                "expand expects {n} entries per argument, got {}/{}/{}",
                parents.len(),
                tokens.len(),
                score_deltas.len()
            )));
        }
        for b in 0..self.batch {
            for j in 0..self.beam {
                let k = self.idx(b, j);
                if parents[k] >= self.beam {
                    return Err(Error::InvalidArgument(format!(
                        "parent index {} out of range for beam {}",
                        parents[k], self.beam
                    )));
                }
                if tokens[k] > self.blank_id {
                    return Err(Error::Contract(format!(
                        "token {} exceeds blank id {}",
                        tokens[k], self.blank_id
                    )));
                }
                let p = self.idx(b, parents[k]);
                let score = self.scores[p] + score_deltas[k];
                if tokens[k] != self.blank_id
                    && score > f64::NEG_INFINITY
                    && self.lengths[p] as usize >= self.max_len
                {
                    return Err(Error::CapacityExhausted {
                        stream: b,
                        slot: j,
                        max_len: self.max_len,
                    });
                }
            }
        }

        let mut scores = vec![0.0; n];
        let mut lengths = vec![0u32; n];
        let mut hashes = vec![0u64; n];
        let mut prefix_hashes = vec![0u64; n];
        let mut last_tokens = vec![NO_TOKEN; n];
        self.transcripts.reserve(n);
        self.transcripts_ptrs.reserve(n);
        for k in 0..n {
            let b = k / self.beam;
            let p = self.idx(b, parents[k]);
            let score = self.scores[p] + score_deltas[k];
            let token = if score == f64::NEG_INFINITY { self.blank_id } else { tokens[k] };
            scores[k] = score;
            if token == self.blank_id {
                lengths[k] = self.lengths[p];
                hashes[k] = self.hashes[p];
                prefix_hashes[k] = self.prefix_hashes[p];
                last_tokens[k] = self.last_tokens[p];
            } else {
                lengths[k] = self.lengths[p] + 1;
                hashes[k] = self.hash_params.update(self.hashes[p], token);
                prefix_hashes[k] = self.hashes[p];
                last_tokens[k] = token;
            }
            self.transcripts.push(token);
            self.transcripts_ptrs.push(parents[k] as u32);
        }
        self.scores = scores;
        self.lengths = lengths;
        self.hashes = hashes;
        self.prefix_hashes = prefix_hashes;
        self.last_tokens = last_tokens;
        self.steps += 1;
        Ok(())
    }

    /// Token sequence of a live slot, recovered by walking backlinks from the
    /// latest column to the first.
    pub fn retrieve_transcript(&self, stream: usize, slot: usize) -> Result<Vec<Token>> {
        if stream >= self.batch || slot >= self.beam || !self.is_live(stream, slot) {
            return Err(Error::InvalidSlot { stream, slot });
        }
        Ok(self.walk(stream, slot))
    }

    fn walk(&self, stream: usize, slot: usize) -> Vec<Token> {
        let len = self.length(stream, slot);
        let mut out = Vec::with_capacity(len);
        let mut cur = slot;
        let mut step = self.steps;
        while out.len() < len && step > 0 {
            step -= 1;
            let (token, parent) = self.entry(step, stream, cur);
            if token != self.blank_id {
                out.push(token);
            }
            cur = parent;
        }
        out.reverse();
        out
    }

    /// The last `n` tokens of a live slot (fewer if the transcript is shorter).
    pub fn suffix(&self, stream: usize, slot: usize, n: usize) -> Vec<Token> {
        let mut out = Vec::with_capacity(n);
        let mut cur = slot;
        let mut step = self.steps;
        let want = n.min(self.length(stream, slot));
        while out.len() < want && step > 0 {
            step -= 1;
            let (token, parent) = self.entry(step, stream, cur);
            if token != self.blank_id {
                out.push(token);
            }
            cur = parent;
        }
        out.reverse();
        out
    }

    /// Collapses live slots with equal [`HypKey`] in every stream: the lowest
    /// slot survives with the log-sum-exp of the group, the rest become `-inf`.
    pub fn merge_duplicates(&mut self) {
        let groups = vec![0u32; self.batch * self.beam];
        self.merge_duplicates_within(&groups);
    }

    /// Like [`BatchedBeamHyps::merge_duplicates`], only merging slots that also
    /// share the same `groups` tag.
    pub fn merge_duplicates_within(&mut self, groups: &[u32]) {
        for b in 0..self.batch {
            let base = b * self.beam;
            let keys: Vec<(HypKey, u32)> = (0..self.beam)
                .map(|j| (self.key(b, j), groups[base + j]))
                .collect();
            merge_by_key(&keys, &mut self.scores[base..base + self.beam]);
        }
    }
}

/// Pairwise merge over a pool: for each live entry, every later live entry
/// with an equal key is folded into it and killed.
pub fn merge_by_key<K: PartialEq>(keys: &[K], scores: &mut [f64]) -> usize {
    let mut merged = 0;
    for i in 0..keys.len() {
        if scores[i] == f64::NEG_INFINITY {
            continue;
        }
        for j in i + 1..keys.len() {
            if scores[j] > f64::NEG_INFINITY && keys[i] == keys[j] {
                scores[i] = log_add_exp(scores[i], scores[j]);
                scores[j] = f64::NEG_INFINITY;
                merged += 1;
            }
        }
    }
    merged
}

/// Indices of the `k` largest scores, best first; ties go to the lower index.
/// `-inf` entries are only returned when fewer than `k` finite scores exist.
pub fn topk_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(scores.len());
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < idx.len() && k > 0 {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx.truncate(k);
    idx
}

/// Batched top-k over `[batch, n]` candidate scores.
pub fn prune_topk(candidate_scores: &[f64], batch: usize, k: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    if batch == 0 || !candidate_scores.len().is_multiple_of(batch) {
        return Err(Error::InvalidArgument("candidate tensor is not [batch, n]".into()));
    }
    let n = candidate_scores.len() / batch;
    if k > n {
        return Err(Error::InvalidArgument(format!("k={k} exceeds {n} candidates")));
    }
    let mut indices = Vec::with_capacity(batch * k);
    let mut values = Vec::with_capacity(batch * k);
    for row in candidate_scores.chunks(n) {
        for i in topk_indices(row, k) {
            indices.push(i);
            values.push(row[i]);
        }
    }
    Ok((indices, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BLANK: Token = 10;

    #[test]
    fn fresh_store_layout() {
        let s = BatchedBeamHyps::new(2, 4, 8, BLANK).unwrap();
        for b in 0..2 {
            assert_eq!(s.stream_scores(b), &[0.0, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY]);
            assert_eq!(s.retrieve_transcript(b, 0).unwrap(), Vec::<Token>::new());
        }
        assert!(BatchedBeamHyps::new(1, 1, 1, BLANK).is_ok());
        assert!(matches!(BatchedBeamHyps::new(0, 1, 1, BLANK), Err(Error::InvalidArgument(_))));
        assert!(matches!(BatchedBeamHyps::new(1, 0, 1, BLANK), Err(Error::InvalidArgument(_))));
        assert!(matches!(BatchedBeamHyps::new(1, 1, 0, BLANK), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn hash_values() {
        let p = HashParams::default();
        assert_eq!(p.update(0, 7), 8);
        assert_eq!(update_hash(0, 0), 1);
        let h5 = p.update(0, 5);
        assert_eq!(p.update(h5, 7), 6_000_026);
        assert_ne!(p.fold(&[1, 2]), p.fold(&[2, 1]));
        assert!(matches!(p.update_checked(0, BLANK, BLANK), Err(Error::Contract(_))));
    }

    #[test]
    fn expand_token_and_blank() {
        let mut s = BatchedBeamHyps::new(1, 2, 4, BLANK).unwrap();
        s.expand(&[0, 0], &[3, BLANK], &[-0.5, -1.0]).unwrap();
        assert_eq!(s.retrieve_transcript(0, 0).unwrap(), vec![3]);
        assert_eq!(s.retrieve_transcript(0, 1).unwrap(), Vec::<Token>::new());
        // [3] + 4 and [3] + blank
        s.expand(&[0, 0], &[4, BLANK], &[-0.1, -0.2]).unwrap();
        assert_eq!(s.retrieve_transcript(0, 0).unwrap(), vec![3, 4]);
        assert_eq!(s.length(0, 0), 2);
        assert_eq!(s.entry(1, 0, 0), (4, 0));
        assert_eq!(s.retrieve_transcript(0, 1).unwrap(), vec![3]);
        assert_eq!(s.length(0, 1), 1);
        assert_eq!(s.hash(0, 1), HashParams::default().fold(&[3]));
        assert!((s.score(0, 0) - (-0.6)).abs() < 1e-12);
        assert_eq!(s.prefix_hash(0, 0), s.hash(0, 1));
    }

    #[test]
    fn shared_prefix_is_stored_once() {
        let mut s = BatchedBeamHyps::new(1, 2, 4, BLANK).unwrap();
        s.expand(&[0, 0], &[1, BLANK], &[0.0, f64::NEG_INFINITY]).unwrap();
        s.expand(&[0, 0], &[2, 3], &[0.0, 0.0]).unwrap();
        assert_eq!(s.retrieve_transcript(0, 0).unwrap(), vec![1, 2]);
        assert_eq!(s.retrieve_transcript(0, 1).unwrap(), vec![1, 3]);
        // both children point at the single stored copy of token 1
        assert_eq!(s.entry(1, 0, 0).1, 0);
        assert_eq!(s.entry(1, 0, 1).1, 0);
        assert_eq!(s.entry(0, 0, 0).0, 1);
    }

    #[test]
    fn capacity_and_dead_slots() {
        let mut s = BatchedBeamHyps::new(1, 1, 1, BLANK).unwrap();
        s.expand(&[0], &[2], &[0.0]).unwrap();
        let err = s.expand(&[0], &[2], &[0.0]).unwrap_err();
        assert!(matches!(err, Error::CapacityExhausted { .. }));
        // a dead child never trips the capacity check
        s.expand(&[0], &[2], &[f64::NEG_INFINITY]).unwrap();
        assert!(matches!(s.retrieve_transcript(0, 0), Err(Error::InvalidSlot { .. })));
    }

    #[test]
    fn merge_collapses_equal_transcripts() {
        // two alignments of [1, 2]: 1 blank 2 and 1 2 blank
        let mut s = BatchedBeamHyps::new(1, 3, 4, BLANK).unwrap();
        s.expand(&[0, 0, 0], &[1, BLANK, BLANK], &[-0.1, f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap();
        s.expand(&[0, 0, 0], &[BLANK, 2, 5], &[-0.2, -0.3, -2.0]).unwrap();
        s.expand(&[0, 1, 2], &[2, BLANK, BLANK], &[-0.4, -0.5, -0.1]).unwrap();
        let (a, b) = (s.score(0, 0), s.score(0, 1));
        s.merge_duplicates();
        assert!((s.score(0, 0) - log_add_exp(a, b)).abs() < 1e-12);
        assert_eq!(s.score(0, 1), f64::NEG_INFINITY);
        assert!(s.is_live(0, 2));
        let before = s.scores().to_vec();
        s.merge_duplicates();
        assert_eq!(before, s.scores());
    }

    #[test]
    fn three_way_merge_adds_ln3() {
        let keys = [1, 1, 1];
        let mut scores = [-2.0, -2.0, -2.0];
        merge_by_key(&keys, &mut scores);
        assert!((scores[0] - (-2.0 + 3f64.ln())).abs() < 1e-12);
        assert_eq!(&scores[1..], &[f64::NEG_INFINITY; 2]);
    }

    #[test]
    fn topk_basics() {
        let ninf = f64::NEG_INFINITY;
        assert_eq!(topk_indices(&[3.0, 1.0, 2.0, ninf], 2), vec![0, 2]);
        assert_eq!(topk_indices(&[ninf, 1.0, ninf, ninf], 2), vec![1, 0]);
        assert_eq!(topk_indices(&[1.0, 1.0, 1.0], 2), vec![0, 1]);
        let (i, v) = prune_topk(&[3.0, 1.0, 2.0, ninf, 0.0, 5.0, 5.0, 1.0], 2, 2).unwrap();
        assert_eq!(i, vec![0, 2, 1, 2]);
        assert_eq!(v, vec![3.0, 2.0, 5.0, 5.0]);
        assert!(prune_topk(&[1.0, 2.0], 1, 3).is_err());
    }
}
