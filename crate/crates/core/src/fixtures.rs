//! Seeded test fixtures: tiny lattices, normalized ARPA models, and the
//! hand-built cases used by the examples, the CLI and the test suites.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::hyps::Token;
use crate::lm::{ArpaEntry, ArpaFile};
use crate::model::{LatticeEntry, LatticeModel, ModelState, Vocabulary, BOS};

const NEG_INF: f64 = f64::NEG_INFINITY;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random point on the simplex with `n` coordinates.
fn dirichlet(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).map(|x: f64| x + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Token `z` may follow `seq` in a DAG lattice. Order 1 only allows strictly
/// increasing tokens; order 2 allows non-decreasing ones with no token
/// repeated three times in a row.
fn dag_allows(order: usize, seq: &[Token], z: Token) -> bool {
    match seq.last() {
        None => true,
        Some(&last) if order == 1 => z > last,
        Some(&last) => z >= last && !(seq.len() >= 2 && seq[seq.len() - 2] == z && last == z),
    }
}

/// Lattice whose reachable transcripts form a finite DAG, so every path ends
/// in a blank-only row and transcript probabilities sum to one without any
/// length cap. Longest transcript: `|V|` for order 1, `2|V|` for order 2.
pub fn dag_lattice(seed: u64, frames: usize, vocab: usize, order: usize) -> Result<LatticeModel> {
    if !(1..=2).contains(&order) {
        return Err(Error::InvalidArgument(format!("DAG lattices support order 1 or 2, got {order}")));
    }
    let mut windows: BTreeSet<Vec<i32>> = BTreeSet::new();
    let mut allowed: HashMap<Vec<i32>, Vec<Token>> = HashMap::new();
    let mut stack: Vec<Vec<Token>> = vec![Vec::new()];
    while let Some(seq) = stack.pop() {
        let window = ModelState::from_tokens(order, &seq).window().to_vec();
        let next: Vec<Token> = (0..vocab as Token).filter(|&z| dag_allows(order, &seq, z)).collect();
        for &z in &next {
            let mut s = seq.clone();
            s.push(z);
            stack.push(s);
        }
        allowed.insert(window.clone(), next);
        windows.insert(window);
    }
    let mut r = rng(seed);
    let mut entries = Vec::new();
    for t in 0..frames {
        for w in &windows {
            let next = &allowed[w];
            let mut logprobs = vec![NEG_INF; vocab + 1];
            let p = dirichlet(&mut r, next.len() + 1);
            for (i, &z) in next.iter().enumerate() {
                logprobs[z as usize] = p[i].ln();
            }
            logprobs[vocab] = if next.is_empty() { 0.0 } else { p[next.len()].ln() };
            entries.push(LatticeEntry { frame: t, context: w.clone(), logprobs });
        }
    }
    LatticeModel::new(frames, vocab, order, entries)
}

/// Every context window of length `order` over `vocab` tokens, BOS-padded.
fn all_windows(vocab: usize, order: usize) -> Vec<Vec<i32>> {
    let mut out = vec![Vec::new()];
    for _ in 0..order {
        let mut next = Vec::new();
        for w in &out {
            for t in BOS..vocab as i32 {
                let mut x = w.clone();
                x.push(t);
                next.push(x);
            }
        }
        out = next;
    }
    // BOS may only pad the left edge
    out.retain(|w| {
        let first_real = w.iter().position(|&t| t != BOS).unwrap_or(w.len());
        w[first_real..].iter().all(|&t| t != BOS)
    });
    out
}

/// Row with `p` on `token`, `blank` on blank and the rest spread evenly.
fn peaked_row(vocab: usize, token: Option<usize>, p: f64, blank: f64) -> Vec<f64> {
    let others = vocab - usize::from(token.is_some());
    let rest = (1.0 - p - blank).max(0.0);
    let mut row = vec![0.0; vocab + 1];
    for (k, x) in row.iter_mut().enumerate().take(vocab) {
        *x = if Some(k) == token { p } else if others > 0 { rest / others as f64 } else { 0.0 };
    }
    row[vocab] = blank;
    let s: f64 = row.iter().sum();
    row.into_iter().map(|x| if x > 0.0 { (x / s).ln() } else { NEG_INF }).collect()
}

// ---------------------------------------------------------------------------
// ARPA generation

/// Straightforward map-backed back-off scorer, kept separate from the trie.
#[derive(Clone, Debug)]
pub struct ArpaOracle {
    order: usize,
    table: HashMap<Vec<String>, (f64, f64)>,
}

impl ArpaOracle {
    pub fn new(file: &ArpaFile) -> Self {
        let mut table = HashMap::new();
        for section in &file.sections {
            for e in section {
                table.entry(e.words.clone()).or_insert((e.log10_prob, e.log10_backoff.unwrap_or(0.0)));
            }
        }
        Self { order: file.order(), table }
    }

    /// `log10 P(word | history)`, or `None` if no order knows the word.
    pub fn log10_prob(&self, history: &[String], word: &str) -> Option<f64> {
        let keep = history.len().min(self.order.saturating_sub(1));
        let h = &history[history.len() - keep..];
        let mut key = h.to_vec();
        key.push(word.to_string());
        if let Some(&(p, _)) = self.table.get(&key) {
            return Some(p);
        }
        if h.is_empty() {
            return None;
        }
        let bo = self.table.get(h).map_or(0.0, |e| e.1);
        self.log10_prob(&h[1..], word).map(|p| bo + p)
    }

    pub fn ln_prob(&self, history: &[String], word: &str) -> Option<f64> {
        self.log10_prob(history, word).map(|p| p * std::f64::consts::LN_10)
    }
}

/// n-grams of one order: words to (log10 prob, log10 back-off).
type Level = BTreeMap<Vec<String>, (f64, Option<f64>)>;

/// Random back-off model over `vocab` whose conditional distributions are
/// normalized over the vocabulary (plus `</s>` when `with_eos`). Back-off
/// weights are solved so every context, explicit or not, sums to one.
pub fn random_arpa(seed: u64, vocab: &Vocabulary, order: usize, with_eos: bool) -> Result<ArpaFile> {
    if order == 0 {
        return Err(Error::InvalidArgument("ARPA order must be at least 1".into()));
    }
    let mut r = rng(seed);
    let mut outcomes: Vec<String> = vocab.tokens().to_vec();
    if with_eos {
        outcomes.push("</s>".into());
    }
    let mut levels: Vec<Level> = vec![BTreeMap::new(); order];
    let uni = dirichlet(&mut r, outcomes.len());
    for (w, p) in outcomes.iter().zip(&uni) {
        levels[0].insert(vec![w.clone()], (p.log10(), None));
    }
    levels[0].insert(vec!["<s>".into()], (-99.0, None));

    for m in 1..order {
        let contexts: Vec<Vec<String>> = levels[m - 1]
            .keys()
            .filter(|k| k.last().map(String::as_str) != Some("</s>"))
            .cloned()
            .collect();
        if contexts.is_empty() || outcomes.len() < 2 {
            break;
        }
        let mut chosen: Vec<&Vec<String>> = contexts.iter().filter(|_| r.random_bool(0.6)).collect();
        if chosen.is_empty() {
            chosen.push(contexts.choose(&mut r).expect("lower order has contexts"));
        }
        let mut new_entries = Vec::new();
        let mut backoffs = Vec::new();
        for h in chosen {
            let oracle = oracle_from_levels(&levels, m);
            let mut idx: Vec<usize> = (0..outcomes.len()).collect();
            idx.shuffle(&mut r);
            let size = r.random_range(1..outcomes.len());
            let subset = &idx[..size];
            let lower: f64 = subset
                .iter()
                .map(|&i| 10f64.powf(oracle.log10_prob(&h[1..], &outcomes[i]).expect("unigrams cover outcomes")))
                .sum();
            let total = r.random_range(0.2..0.95);
            let share = dirichlet(&mut r, size);
            for (j, &i) in subset.iter().enumerate() {
                let mut key = h.clone();
                key.push(outcomes[i].clone());
                new_entries.push((key, (total * share[j]).log10()));
            }
            backoffs.push((h.clone(), ((1.0 - total) / (1.0 - lower)).log10()));
        }
        for (h, bo) in backoffs {
            levels[m - 1].get_mut(&h).expect("context exists").1 = Some(bo);
        }
        for (k, p) in new_entries {
            levels[m].insert(k, (p, None));
        }
    }
    // drop empty top orders so the declared order matches the content
    while levels.len() > 1 && levels.last().is_some_and(|l| l.is_empty()) {
        levels.pop();
    }
    Ok(ArpaFile {
        sections: levels
            .into_iter()
            .map(|l| {
                l.into_iter()
                    .map(|(words, (p, bo))| ArpaEntry { words, log10_prob: p, log10_backoff: bo })
                    .collect()
            })
            .collect(),
    })
}

fn oracle_from_levels(levels: &[Level], upto: usize) -> ArpaOracle {
    let mut table = HashMap::new();
    for l in &levels[..upto] {
        for (k, (p, bo)) in l {
            table.insert(k.clone(), (*p, bo.unwrap_or(0.0)));
        }
    }
    ArpaOracle { order: upto, table }
}

/// Unigram model with the given probabilities (no `</s>`).
pub fn unigram_arpa(vocab: &Vocabulary, probs: &[f64]) -> ArpaFile {
    let mut section: Vec<ArpaEntry> = vocab
        .tokens()
        .iter()
        .zip(probs)
        .map(|(w, p)| ArpaEntry { words: vec![w.clone()], log10_prob: p.log10(), log10_backoff: None })
        .collect();
    section.push(ArpaEntry { words: vec!["<s>".into()], log10_prob: -99.0, log10_backoff: None });
    ArpaFile { sections: vec![section] }
}

// ---------------------------------------------------------------------------
// Constructed decoding fixtures

/// Utterances whose token frames are only moderately confident, paired with
/// their references and a uniform unigram LM.
#[derive(Clone, Debug)]
pub struct DeletionSuite {
    pub vocab: Vocabulary,
    pub utterances: Vec<LatticeModel>,
    pub references: Vec<Vec<Token>>,
    pub lm: ArpaFile,
}

pub fn low_confidence_suite(seed: u64, count: usize) -> Result<DeletionSuite> {
    const V: usize = 4;
    let mut r = rng(seed);
    let vocab = Vocabulary::synthetic(V);
    let windows = all_windows(V, 1);
    let mut utterances = Vec::with_capacity(count);
    let mut references = Vec::with_capacity(count);
    for _ in 0..count {
        let frames = r.random_range(10..=16);
        let mut reference = Vec::new();
        let mut entries = Vec::new();
        for t in 0..frames {
            let target = if r.random_bool(0.5) {
                let mut z = r.random_range(0..V);
                while reference.last() == Some(&(z as Token)) {
                    z = r.random_range(0..V);
                }
                reference.push(z as Token);
                Some(z)
            } else {
                None
            };
            let p_tok = r.random_range(0.3..0.9);
            for w in &windows {
                let row = match target {
                    Some(z) if w[0] != z as i32 => peaked_row(V, Some(z), p_tok, (1.0 - p_tok) * 0.85),
                    _ => peaked_row(V, None, 0.0, 0.9),
                };
                entries.push(LatticeEntry { frame: t, context: w.clone(), logprobs: row });
            }
        }
        utterances.push(LatticeModel::new(frames, V, 1, entries)?);
        references.push(reference);
    }
    let lm = unigram_arpa(&vocab, &[1.0 / V as f64; V]);
    Ok(DeletionSuite { vocab, utterances, references, lm })
}

/// One frame over `{a, b, c}` where ASR ranks `a > b > c` but the LM strongly
/// prefers `c`. At beam 2 late pruning keeps `c`; early pruning never sees it.
pub fn early_late_fixture() -> Result<(LatticeModel, Vocabulary, ArpaFile)> {
    let vocab = Vocabulary::new(vec!["▁a".into(), "▁b".into(), "▁c".into()])?;
    let ln = f64::ln;
    let mut entries = vec![LatticeEntry {
        frame: 0,
        context: vec![BOS],
        logprobs: vec![ln(0.4), ln(0.3), ln(0.25), ln(0.05)],
    }];
    for z in 0..3 {
        entries.push(LatticeEntry { frame: 0, context: vec![z], logprobs: vec![NEG_INF, NEG_INF, NEG_INF, 0.0] });
    }
    let lm = unigram_arpa(&vocab, &[0.01, 0.01, 0.98]);
    Ok((LatticeModel::new(1, 3, 1, entries)?, vocab, lm))
}

/// Two frames over `{a, b}` built so `[a]` and `[a, b]` are both unfinished at
/// the start of frame 1. With prefix search at beam 3 the final `[a, b]`
/// probability is exactly 0.55.
pub fn prefix_fixture() -> Result<LatticeModel> {
    let ln = f64::ln;
    let mut entries = Vec::new();
    for frame in 0..2 {
        let start = if frame == 0 { vec![ln(0.6), NEG_INF, ln(0.4)] } else { vec![ln(0.5), NEG_INF, ln(0.5)] };
        entries.push(LatticeEntry { frame, context: vec![BOS], logprobs: start });
        entries.push(LatticeEntry { frame, context: vec![0], logprobs: vec![NEG_INF, ln(0.5), ln(0.5)] });
        entries.push(LatticeEntry { frame, context: vec![1], logprobs: vec![NEG_INF, NEG_INF, 0.0] });
    }
    LatticeModel::new(2, 2, 1, entries)
}

/// Deterministic lattice that emits `a, blank, b, blank`.
pub fn hand_greedy_fixture() -> Result<LatticeModel> {
    let one = |k: usize| {
        let mut row = vec![NEG_INF; 3];
        row[k] = 0.0;
        row
    };
    LatticeModel::new(
        2,
        2,
        1,
        vec![
            LatticeEntry { frame: 0, context: vec![BOS], logprobs: one(0) },
            LatticeEntry { frame: 0, context: vec![0], logprobs: one(2) },
            LatticeEntry { frame: 1, context: vec![0], logprobs: one(1) },
            LatticeEntry { frame: 1, context: vec![1], logprobs: one(2) },
        ],
    )
    .map(|m| m.strict(true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{ArpaOptions, NGramLm};
    use crate::model::EmissionModel;

    #[test]
    fn dag_lattice_is_normalized_and_finite() {
        for order in 1..=2 {
            let m = dag_lattice(3, 3, 3, order).unwrap();
            assert_eq!(m.num_frames(), 3);
            assert!(!m.entries().is_empty());
        }
        assert!(dag_lattice(0, 2, 2, 3).is_err());
    }

    #[test]
    fn generated_arpa_normalizes() {
        let vocab = Vocabulary::synthetic(5);
        for seed in 0..5 {
            let file = random_arpa(seed, &vocab, 3, seed % 2 == 0).unwrap();
            let lm = NGramLm::from_arpa(&file, &vocab, ArpaOptions { strict: true }, "gen").unwrap();
            let oracle = ArpaOracle::new(&file);
            let mut state = lm.start_state();
            let mut hist = vec!["<s>".to_string()];
            for step in 0..6 {
                let mut row = vec![0.0; 5];
                lm.score_vocab(state, &mut row);
                let mut total: f64 = row.iter().map(|x| x.exp()).sum();
                if seed % 2 == 0 {
                    total += lm.score_eos(state).exp();
                }
                assert!((total - 1.0).abs() < 1e-9, "seed {seed} step {step}: {total}");
                let tok = ((seed as usize) + step * 3) % 5;
                let want = oracle.ln_prob(&hist, vocab.token(tok as Token).unwrap()).unwrap();
                assert!((row[tok] - want).abs() < 1e-12);
                hist.push(vocab.token(tok as Token).unwrap().to_string());
                state = lm.advance(state, tok as Token).unwrap();
            }
        }
    }
}
