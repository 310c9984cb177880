//! Decode a batch of synthetic utterances with every algorithm and score the
//! transcripts against the references the toy model was sampled from.
//!
//! ```bash
//! cargo run --release --example toy_decode -- 1.8
//! ```

use tbeam::decode::{decode, Algorithm, DecodeConfig};
use tbeam::metrics::wer;
use tbeam::model::{ToyConfig, ToyModel};

fn main() -> tbeam::Result<()> {
    let noise = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1.8);
    let mut cfg = ToyConfig::new(7, 2, 64, 60);
    cfg.hidden = 384;
    cfg.noise = noise;
    let toy = ToyModel::new(cfg)?;
    let vocab = toy.vocab();
    let streams = (0..16).map(|i| toy.stream(i, 60)).collect::<tbeam::Result<Vec<_>>>()?;
    let refs: Vec<String> = streams.iter().map(|s| vocab.detokenize(s.reference())).collect();
    println!("ref[0]: {}", refs[0]);

    for (algo, beam) in [(Algorithm::Greedy, 1), (Algorithm::AlsdPlusPlus, 6), (Algorithm::AesPlusPlus, 6)] {
        let r = decode(algo, &streams, &DecodeConfig::with_beam(beam), None)?;
        let hyps: Vec<String> = r.best_tokens().iter().map(|t| vocab.detokenize(t)).collect();
        let w = wer(&refs, &hyps)?;
        println!(
            "{algo:>7} beam {beam}: WER {:5.2}% (S={} D={} I={})  {} model calls, {:.3}s",
            100.0 * w.wer,
            w.substitutions,
            w.deletions,
            w.insertions,
            r.counters.model_calls,
            r.wall_seconds
        );
    }
    Ok(())
}
