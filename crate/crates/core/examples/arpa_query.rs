//! Load an ARPA model and query it: single tokens, whole sentences and a
//! full-vocabulary row for a batch of contexts.
//!
//! ```bash
//! cargo run --example arpa_query
//! ```

use tbeam::lm::{ArpaOptions, NGramLm};
use tbeam::model::Vocabulary;

const ARPA: &str = "\\data\\
ngram 1=5
ngram 2=3

\\1-grams:
-0.6990\t</s>
-99\t<s>\t-0.3010
-0.5229\tthe\t-0.2218
-0.6990\tcat\t-0.1249
-0.6021\tsat

\\2-grams:
-0.1549\t<s> the
-0.3010\tthe cat
-0.2218\tcat sat

\\end\\
";

fn main() -> tbeam::Result<()> {
    let vocab = Vocabulary::new(vec!["the".into(), "cat".into(), "sat".into()])?;
    let lm = NGramLm::from_arpa_str(ARPA, &vocab, ArpaOptions { strict: true }, "inline")?;
    let (the, cat, sat) = (0, 1, 2);

    let s = lm.start_state();
    println!("ln P(the | <s>)     = {:.4}", lm.score_token(s, the));
    let s1 = lm.advance(s, the)?;
    println!("ln P(cat | the)     = {:.4}", lm.score_token(s1, cat));
    // "the sat" is unseen: back off through the weight of "the"
    println!("ln P(sat | the)     = {:.4}", lm.score_token(s1, sat));
    println!("ln P(the cat sat)   = {:.4}", lm.score_sequence(s, &[the, cat, sat])?);
    let end = lm.advance(lm.advance(s1, cat)?, sat)?;
    println!("ln P(</s> | cat sat) = {:.4}", lm.score_eos(end));

    let rows = lm.score_vocab_batch(&[s, s1, end]);
    for (name, row) in ["<s>", "<s> the", "... sat"].iter().zip(rows.chunks(vocab.len())) {
        let formatted: Vec<String> = row.iter().map(|x| format!("{x:7.3}")).collect();
        println!("{name:>9}: [{}]", formatted.join(", "));
    }
    Ok(())
}
