//! Back-off n-gram language model over the ASR token vocabulary.
//!
//! N-grams are stored in a forward trie; each node carries the natural-log
//! probability of its n-gram, its back-off weight as a context, and a link to
//! its longest proper suffix present in the trie. An [`LmState`] is the node of
//! the longest matched context, so a query walks the suffix chain, adding
//! back-off weights, until the requested token is found as a child.

pub mod arpa;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hyps::Token;
use crate::model::Vocabulary;

pub use arpa::{parse_arpa_text, write_arpa_text, ArpaEntry, ArpaFile};

/// Score of a token the model cannot assign any probability to.
pub const OOV_LOGPROB: f64 = -1e9;

const ROOT: u32 = 0;

#[derive(Clone, Debug)]
struct Node {
    /// `None` for nodes that only exist as a prefix of a longer n-gram.
    logp: Option<f64>,
    backoff: f64,
    suffix: u32,
    children: Vec<(u32, u32)>,
}

/// Node reference for the longest matched context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LmState(u32);

#[derive(Clone, Debug)]
pub struct NGramLm {
    order: usize,
    vocab_size: usize,
    nodes: Vec<Node>,
    start: LmState,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ArpaOptions {
    /// Reject n-grams with words outside the vocabulary instead of mapping them to `<unk>`.
    pub strict: bool,
}

impl NGramLm {
    pub fn load(path: impl AsRef<Path>, vocab: &Vocabulary, opts: ArpaOptions) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_arpa_str(&text, vocab, opts, &path.display().to_string())
    }

    pub fn from_arpa_str(text: &str, vocab: &Vocabulary, opts: ArpaOptions, source_name: &str) -> Result<Self> {
        let file = parse_arpa_text(text, source_name)?;
        Self::from_arpa(&file, vocab, opts, source_name)
    }

    pub fn from_arpa(file: &ArpaFile, vocab: &Vocabulary, opts: ArpaOptions, source_name: &str) -> Result<Self> {
        let v = vocab.len() as u32;
        let (bos, eos, unk) = (v, v + 1, v + 2);
        let words = arpa::word_table(vocab.tokens());
        let mut ids: HashMap<Vec<u32>, u32> = HashMap::new();
        let mut seqs: Vec<Vec<u32>> = vec![Vec::new()];
        let mut nodes = vec![Node {
            logp: None,
            backoff: 0.0,
            suffix: ROOT,
            children: Vec::new(),
        }];
        ids.insert(Vec::new(), ROOT);

        let mut unmapped = 0usize;
        for (order_idx, section) in file.sections.iter().enumerate() {
            for (i, entry) in section.iter().enumerate() {
                let mut seq = Vec::with_capacity(entry.words.len());
                for w in &entry.words {
                    let id = match w.as_str() {
                        "<s>" => bos,
                        "</s>" => eos,
                        "<unk>" => unk,
                        other => match words.get(other) {
                            Some(&id) => id,
                            None if opts.strict => {
                                return Err(Error::parse(
                                    source_name,
                                    0,
                                    format!(
                                        "\\{}-grams: entry {} uses token '{other}' absent from the vocabulary",
                                        order_idx + 1,
                                        i + 1
                                    ),
                                ))
                            }
                            None => {
                                unmapped += 1;
                                unk
                            }
                        },
                    };
                    seq.push(id);
                }
                // create missing prefixes as context-only nodes
                let mut parent = ROOT;
                for depth in 1..=seq.len() {
                    let prefix = &seq[..depth];
                    parent = match ids.get(prefix) {
                        Some(&id) => id,
                        None => {
                            let id = nodes.len() as u32;
                            nodes.push(Node {
                                logp: None,
                                backoff: 0.0,
                                suffix: ROOT,
                                children: Vec::new(),
                            });
                            nodes[parent as usize].children.push((seq[depth - 1], id));
                            ids.insert(prefix.to_vec(), id);
                            seqs.push(prefix.to_vec());
                            id
                        }
                    };
                }
                let node = &mut nodes[parent as usize];
                if node.logp.is_some() {
                    log::warn!("{source_name}: duplicate n-gram {:?} ignored", entry.words);
                    continue;
                }
                node.logp = Some(entry.log10_prob * std::f64::consts::LN_10);
                node.backoff = entry.log10_backoff.unwrap_or(0.0) * std::f64::consts::LN_10;
            }
        }
        if unmapped > 0 {
            log::warn!("{source_name}: {unmapped} out-of-vocabulary word occurrences mapped to <unk>");
        }

        for (id, seq) in seqs.iter().enumerate().skip(1) {
            let mut suffix = ROOT;
            for start in 1..seq.len() {
                if let Some(&s) = ids.get(&seq[start..]) {
                    suffix = s;
                    break;
                }
            }
            nodes[id].suffix = suffix;
        }
        for n in nodes.iter_mut() {
            n.children.sort_unstable();
        }
        let start = LmState(ids.get(&vec![bos]).copied().unwrap_or(ROOT));
        Ok(Self {
            order: file.order(),
            vocab_size: vocab.len(),
            nodes,
            start,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// State after `<s>` (the empty context if `<s>` is not in the model).
    pub fn start_state(&self) -> LmState {
        self.start
    }

    pub fn empty_state(&self) -> LmState {
        LmState(ROOT)
    }

    fn eos_id(&self) -> u32 {
        self.vocab_size as u32 + 1
    }

    fn unk_id(&self) -> u32 {
        self.vocab_size as u32 + 2
    }

    #[inline]
    fn child(&self, node: u32, token: u32) -> Option<u32> {
        let children = &self.nodes[node as usize].children;
        children
            .binary_search_by_key(&token, |&(t, _)| t)
            .ok()
            .map(|i| children[i].1)
    }

    fn lookup(&self, state: LmState, token: u32) -> Option<f64> {
        let mut acc = 0.0;
        let mut node = state.0;
        loop {
            if let Some(c) = self.child(node, token) {
                if let Some(p) = self.nodes[c as usize].logp {
                    return Some(acc + p);
                }
            }
            if node == ROOT {
                return None;
            }
            acc += self.nodes[node as usize].backoff;
            node = self.nodes[node as usize].suffix;
        }
    }

    fn unk_score(&self, state: LmState) -> f64 {
        self.lookup(state, self.unk_id()).unwrap_or(OOV_LOGPROB)
    }

    /// `ln P(token | state)` for a single vocabulary token.
    pub fn score_token(&self, state: LmState, token: Token) -> f64 {
        if token as usize >= self.vocab_size {
            return OOV_LOGPROB;
        }
        self.lookup(state, token).unwrap_or_else(|| self.unk_score(state))
    }

    /// `ln P(</s> | state)`.
    pub fn score_eos(&self, state: LmState) -> f64 {
        self.lookup(state, self.eos_id()).unwrap_or(OOV_LOGPROB)
    }

    /// Full-vocabulary query: walks the back-off chain once, filling each token
    /// the first time it appears as an n-gram continuation.
    pub fn score_vocab(&self, state: LmState, out: &mut [f64]) {
        let v = self.vocab_size;
        debug_assert_eq!(out.len(), v);
        let mut filled = vec![false; v];
        let mut remaining = v;
        let mut acc = 0.0;
        let mut node = state.0;
        loop {
            for &(tok, c) in &self.nodes[node as usize].children {
                let t = tok as usize;
                if t >= v {
                    break;
                }
                if filled[t] {
                    continue;
                }
                if let Some(p) = self.nodes[c as usize].logp {
                    out[t] = acc + p;
                    filled[t] = true;
                    remaining -= 1;
                }
            }
            if node == ROOT || remaining == 0 {
                break;
            }
            acc += self.nodes[node as usize].backoff;
            node = self.nodes[node as usize].suffix;
        }
        if remaining > 0 {
            let unk = self.unk_score(state);
            for (o, f) in out.iter_mut().zip(&filled) {
                if !f {
                    *o = unk;
                }
            }
        }
    }

    /// `[states.len(), V]` log-probabilities.
    pub fn score_vocab_batch(&self, states: &[LmState]) -> Vec<f64> {
        let v = self.vocab_size;
        let mut out = vec![0.0; states.len() * v];
        for (s, row) in states.iter().zip(out.chunks_mut(v)) {
            self.score_vocab(*s, row);
        }
        out
    }

    /// Longest suffix of (context + token) present in the trie.
    pub fn advance(&self, state: LmState, token: Token) -> Result<LmState> {
        if token as usize >= self.vocab_size {
            return Err(Error::Contract(format!(
                "token {token} is blank or outside the {}-token LM vocabulary",
                self.vocab_size
            )));
        }
        let mut node = state.0;
        loop {
            if let Some(c) = self.child(node, token) {
                return Ok(LmState(c));
            }
            if node == ROOT {
                return Ok(LmState(ROOT));
            }
            node = self.nodes[node as usize].suffix;
        }
    }

    pub fn advance_batch(&self, states: &[LmState], tokens: &[Token]) -> Result<Vec<LmState>> {
        if states.len() != tokens.len() {
            return Err(Error::InvalidArgument("states and tokens differ in length".into()));
        }
        states.iter().zip(tokens).map(|(&s, &t)| self.advance(s, t)).collect()
    }

    /// Sum of token log-probabilities of `tokens` starting from `state`.
    pub fn score_sequence(&self, mut state: LmState, tokens: &[Token]) -> Result<f64> {
        let mut total = 0.0;
        for &t in tokens {
            total += self.score_token(state, t);
            state = self.advance(state, t)?;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(words: &[&str]) -> Vocabulary {
        Vocabulary::new(words.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    const LN10: f64 = std::f64::consts::LN_10;

    #[test]
    fn unigram_lookup() {
        let v = vocab(&["a", "b"]);
        let text = "\\data\\\nngram 1=3\n\n\\1-grams:\n-0.3\ta\n-0.5\tb\n-1\t</s>\n\n\\end\\\n";
        let lm = NGramLm::from_arpa_str(text, &v, ArpaOptions::default(), "t").unwrap();
        let mut row = [0.0; 2];
        lm.score_vocab(lm.start_state(), &mut row);
        assert!((row[0] + 0.3 * LN10).abs() < 1e-12);
        assert!((lm.score_eos(lm.start_state()) + LN10).abs() < 1e-12);
        let s = lm.advance(lm.start_state(), 1).unwrap();
        let mut row2 = [0.0; 2];
        lm.score_vocab(s, &mut row2);
        assert_eq!(row, row2);
        assert!(matches!(lm.advance(s, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn bigram_backoff() {
        let v = vocab(&["a", "b"]);
        let text = "\\data\\\nngram 1=3\nngram 2=1\n\n\\1-grams:\n-99\t<s>\t-0.1\n-0.4\ta\t-0.25\n-0.2\tb\n\n\\2-grams:\n-0.05\t<s> a\n\n\\end\\\n";
        let lm = NGramLm::from_arpa_str(text, &v, ArpaOptions::default(), "t").unwrap();
        let after_a = lm.advance(lm.start_state(), 0).unwrap();
        // P(b | a) is absent: backoff(a) * P(b)
        assert!((lm.score_token(after_a, 1) - (-0.25 - 0.2) * LN10).abs() < 1e-12);
        // P(a | <s>) is explicit
        assert!((lm.score_token(lm.start_state(), 0) + 0.05 * LN10).abs() < 1e-12);
        // P(b | <s>) backs off through <s>
        assert!((lm.score_token(lm.start_state(), 1) - (-0.1 - 0.2) * LN10).abs() < 1e-12);
        let after_b = lm.advance(after_a, 1).unwrap();
        assert_eq!(lm.advance(after_b, 0).unwrap(), lm.advance(lm.empty_state(), 0).unwrap());
    }

    #[test]
    fn oov_policy() {
        let v = vocab(&["a", "b", "c"]);
        let text = "\\data\\\nngram 1=2\n\n\\1-grams:\n-0.3\ta\n-0.5\tzzz\n\n\\end\\\n";
        let lm = NGramLm::from_arpa_str(text, &v, ArpaOptions::default(), "t").unwrap();
        // zzz became <unk>, which now covers b and c
        assert!((lm.score_token(lm.start_state(), 2) + 0.5 * LN10).abs() < 1e-12);
        assert!(NGramLm::from_arpa_str(text, &v, ArpaOptions { strict: true }, "t").is_err());
        let no_unk = "\\data\\\nngram 1=1\n\n\\1-grams:\n-0.3\ta\n\n\\end\\\n";
        let lm = NGramLm::from_arpa_str(no_unk, &v, ArpaOptions::default(), "t").unwrap();
        assert_eq!(lm.score_token(lm.start_state(), 1), OOV_LOGPROB);
        assert_eq!(lm.advance(lm.start_state(), 1).unwrap(), lm.empty_state());
    }
}
