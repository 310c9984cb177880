//! Word error rate over an `id<TAB>text` reference/hypothesis pair.
//!
//! ```bash
//! cargo run --example wer_eval
//! ```

use tbeam::metrics::{align, pair_transcripts, parse_transcripts, wer};

const REFS: &str = "a\tthe cat sat on the mat\nb\tit is raining\n";
const HYPS: &str = "a\tthe cat sit on mat\nb\tit is is raining\n";

fn main() -> tbeam::Result<()> {
    let refs = parse_transcripts(REFS, "refs")?;
    let hyps = parse_transcripts(HYPS, "hyps")?;
    for (id, r) in &refs {
        let h = &hyps[id];
        let words = |s: &str| s.split_whitespace().map(str::to_owned).collect::<Vec<_>>();
        let c = align(&words(r), &words(h));
        println!("{id}: S={} D={} I={}", c.substitutions, c.deletions, c.insertions);
    }
    let (r, h) = pair_transcripts(&refs, &hyps)?;
    let report = wer(&r, &h)?;
    println!("corpus WER {:.2}% over {} words", 100.0 * report.wer, report.ref_words);
    Ok(())
}
