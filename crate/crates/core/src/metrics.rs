//! Word error rate and throughput accounting.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_words: usize,
    pub wer: f64,
}

/// Minimum-edit alignment of one pair. Among equal-cost alignments the one
/// with the most substitutions is preferred, then fewer deletions.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    // (cost, subs, dels, ins) per cell, two rows at a time
    let mut prev: Vec<(usize, usize, usize, usize)> = (0..=m).map(|j| (j, 0, 0, j)).collect();
    let mut cur = vec![(0, 0, 0, 0); m + 1];
    for i in 1..=n {
        cur[0] = (i, 0, i, 0);
        for j in 1..=m {
            let same = reference[i - 1] == hypothesis[j - 1];
            let d = prev[j - 1];
            let diag = (d.0 + usize::from(!same), d.1 + usize::from(!same), d.2, d.3);
            let u = prev[j];
            let del = (u.0 + 1, u.1, u.2 + 1, u.3);
            let l = cur[j - 1];
            let ins = (l.0 + 1, l.1, l.2, l.3 + 1);
            cur[j] = [diag, del, ins]
                .into_iter()
                .min_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)))
                .expect("three options");
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let c = prev[m];
    EditCounts { substitutions: c.1, deletions: c.2, insertions: c.3 }
}

/// Corpus WER: per-pair alignments pooled before dividing.
pub fn wer<S: AsRef<str>>(refs: &[S], hyps: &[S]) -> Result<WerReport> {
    if refs.len() != hyps.len() {
        return Err(Error::InvalidArgument(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let mut total = EditCounts::default();
    let mut ref_words = 0;
    for (r, h) in refs.iter().zip(hyps) {
        let rw: Vec<&str> = r.as_ref().split_whitespace().collect();
        let hw: Vec<&str> = h.as_ref().split_whitespace().collect();
        let c = align(&rw, &hw);
        total.substitutions += c.substitutions;
        total.insertions += c.insertions;
        total.deletions += c.deletions;
        ref_words += rw.len();
    }
    if ref_words == 0 {
        return Err(Error::UndefinedWer);
    }
    Ok(WerReport {
        substitutions: total.substitutions,
        insertions: total.insertions,
        deletions: total.deletions,
        ref_words,
        wer: (total.substitutions + total.insertions + total.deletions) as f64 / ref_words as f64,
    })
}

/// Reads `id<TAB>text` lines. Duplicate ids and lines without a tab are errors.
pub fn read_transcripts(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_transcripts(&text, &path.display().to_string())
}

pub fn parse_transcripts(text: &str, source_name: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, words) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(source_name, i + 1, "expected 'id<TAB>text'"))?;
        if out.insert(id.to_string(), words.trim().to_string()).is_some() {
            return Err(Error::parse(source_name, i + 1, format!("duplicate utterance id '{id}'")));
        }
    }
    Ok(out)
}

/// Pairs two transcript maps by id; every id must appear on both sides.
pub fn pair_transcripts(refs: &BTreeMap<String, String>, hyps: &BTreeMap<String, String>) -> Result<(Vec<String>, Vec<String>)> {
    let missing_hyp: Vec<&str> = refs.keys().filter(|k| !hyps.contains_key(*k)).map(String::as_str).collect();
    let missing_ref: Vec<&str> = hyps.keys().filter(|k| !refs.contains_key(*k)).map(String::as_str).collect();
    if !missing_hyp.is_empty() || !missing_ref.is_empty() {
        return Err(Error::Validation(format!(
            "utterance ids differ: missing from hypotheses {missing_hyp:?}, missing from references {missing_ref:?}"
        )));
    }
    Ok(refs.iter().map(|(k, r)| (r.clone(), hyps[k].clone())).unzip())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    /// Mean wall time of the timed repeats.
    pub wall_seconds: f64,
    pub frames: u64,
    pub frames_per_second: f64,
    /// Audio seconds per wall second, when a frame duration is known.
    pub rtfx: Option<f64>,
    pub repeats: usize,
}

/// Runs `run` `warmup` times untimed, then `repeats` times timed. `run`
/// returns the number of frames it decoded.
pub fn bench<F: FnMut() -> Result<u64>>(
    mut run: F,
    warmup: usize,
    repeats: usize,
    frame_seconds: Option<f64>,
) -> Result<ThroughputReport> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    for _ in 0..warmup {
        run()?;
    }
    let mut frames = 0;
    let start = Instant::now();
    for _ in 0..repeats {
        frames = run()?;
    }
    let wall = (start.elapsed().as_secs_f64() / repeats as f64).max(f64::MIN_POSITIVE);
    let fps = frames as f64 / wall;
    Ok(ThroughputReport {
        wall_seconds: wall,
        frames,
        frames_per_second: fps,
        rtfx: frame_seconds.map(|d| fps * d),
        repeats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_cases() {
        let r = wer(&["a b c"], &["a b c"]).unwrap();
        assert_eq!(r.wer, 0.0);
        let r = wer(&["a b c"], &["a x c"]).unwrap();
        assert_eq!((r.substitutions, r.insertions, r.deletions), (1, 0, 0));
        assert!((r.wer - 1.0 / 3.0).abs() < 1e-15);
        let r = wer(&["a b"], &["a b c d"]).unwrap();
        assert_eq!(r.insertions, 2);
        let r = wer(&["a b c"], &[""]).unwrap();
        assert_eq!(r.deletions, 3);
        assert!(matches!(wer(&[""], &["x"]), Err(Error::UndefinedWer)));
        assert!(wer(&["a"], &[]).is_err());
    }

    #[test]
    fn bench_counts_runs() {
        let mut calls = 0;
        let rep = bench(
            || {
                calls += 1;
                Ok(10)
            },
            1,
            3,
            Some(0.08),
        )
        .unwrap();
        assert_eq!(calls, 4);
        assert_eq!(rep.frames, 10);
        assert!(rep.frames_per_second > 0.0);
        assert!(bench(|| Ok(1), 0, 0, None).is_err());
    }

    #[test]
    fn transcript_files() {
        let m = parse_transcripts("u1\ta b\nu2\t\n", "t").unwrap();
        assert_eq!(m["u1"], "a b");
        assert_eq!(m["u2"], "");
        assert!(parse_transcripts("u1 a b\n", "t").is_err());
        assert!(parse_transcripts("u1\ta\nu1\tb\n", "t").is_err());
        let other = parse_transcripts("u1\ta b\nu3\tc\n", "h").unwrap();
        let e = pair_transcripts(&m, &other).unwrap_err().to_string();
        assert!(e.contains("u2") && e.contains("u3"), "{e}");
    }
}
