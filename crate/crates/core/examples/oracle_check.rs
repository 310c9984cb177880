//! Exhaustive alignment enumeration on a tiny lattice, compared with what the
//! beam searches return at a saturating beam and at beam 1.
//!
//! ```bash
//! cargo run --example oracle_check -- 3
//! ```

use tbeam::decode::{decode, enumerate_alignments, Algorithm, DecodeConfig};
use tbeam::fixtures::dag_lattice;

fn main() -> tbeam::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let lattice = dag_lattice(seed, 3, 3, 2)?;
    let oracle = enumerate_alignments(&lattice, 6)?;

    let mut ranked: Vec<_> = oracle.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(a.1));
    println!("{} transcripts, total probability {:.12}", oracle.len(), oracle.values().sum::<f64>());
    for (tokens, p) in ranked.iter().take(5) {
        println!("  {tokens:?}  {p:.6}");
    }

    for beam in [1, 2, 256] {
        let cfg = DecodeConfig { max_symbols_per_frame: 7, aes_expansions_per_frame: 6, ..DecodeConfig::with_beam(beam) };
        for algo in [Algorithm::AlsdPlusPlus, Algorithm::AesPlusPlus] {
            let r = decode(algo, &[lattice.clone()], &cfg, None)?;
            let best = &r.streams[0].nbest[0];
            println!("{algo:>7} beam {beam:>3}: {:?} p={:.6}", best.tokens, best.score.exp());
        }
    }
    Ok(())
}
