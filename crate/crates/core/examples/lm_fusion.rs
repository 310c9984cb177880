//! Shallow fusion: how the blank treatment and the pruning point change
//! decoding.
//!
//! Part one sweeps the LM weight on utterances with weakly confident tokens
//! and counts deletions. Part two runs the one-frame fixture where early and
//! late pruning pick different words.
//!
//! ```bash
//! cargo run --release --example lm_fusion
//! ```

use tbeam::decode::{decode, Algorithm, DecodeConfig};
use tbeam::fixtures::{early_late_fixture, low_confidence_suite};
use tbeam::fusion::{BlankScoring, FusionConfig, Pruning};
use tbeam::lm::{ArpaOptions, NGramLm};
use tbeam::metrics::align;

fn main() -> tbeam::Result<()> {
    let suite = low_confidence_suite(6, 200)?;
    let lm = NGramLm::from_arpa(&suite.lm, &suite.vocab, ArpaOptions { strict: true }, "suite")?;
    let ref_tokens: usize = suite.references.iter().map(Vec::len).sum();
    println!("{} utterances, {ref_tokens} reference tokens", suite.utterances.len());
    println!("{:>6} {:>10} {:>10}", "lambda", "omit del", "scored del");
    for lambda in [0.0, 0.25, 0.5, 1.0, 2.0] {
        let mut row = Vec::new();
        for mode in [BlankScoring::Omit, BlankScoring::Scored] {
            let cfg = DecodeConfig {
                fusion: Some(FusionConfig::new(lambda, mode, Pruning::Late)),
                ..DecodeConfig::with_beam(4)
            };
            let r = decode(Algorithm::AlsdPlusPlus, &suite.utterances, &cfg, Some(&lm))?;
            let del: usize = r
                .best_tokens()
                .iter()
                .zip(&suite.references)
                .map(|(h, reference)| align(reference, h).deletions)
                .sum();
            row.push(del);
        }
        println!("{lambda:>6} {:>10} {:>10}", row[0], row[1]);
    }

    let (lattice, vocab, arpa) = early_late_fixture()?;
    let lm = NGramLm::from_arpa(&arpa, &vocab, ArpaOptions { strict: true }, "fixture")?;
    for pruning in [Pruning::Late, Pruning::Early] {
        let cfg = DecodeConfig {
            fusion: Some(FusionConfig::new(1.0, BlankScoring::Omit, pruning)),
            ..DecodeConfig::with_beam(2)
        };
        let r = decode(Algorithm::AlsdPlusPlus, &[lattice.clone()], &cfg, Some(&lm))?;
        let best = &r.streams[0].nbest[0];
        println!(
            "{pruning:?} pruning: '{}' (score {:.3}, LM part {:.3}, {} LM queries)",
            vocab.detokenize(&best.tokens),
            best.score,
            best.lm_score,
            r.counters.lm_queries
        );
    }
    Ok(())
}
