//! The batched hypothesis store: expand, merge duplicates, read transcripts.
//!
//! ```bash
//! cargo run --example hyp_trie
//! ```

use tbeam::hyps::BatchedBeamHyps;

fn main() -> tbeam::Result<()> {
    // one stream, beam 3, vocabulary {0, 1}, blank = 2
    let blank = 2;
    let mut store = BatchedBeamHyps::new(1, 3, 8, blank)?;
    let ln = f64::ln;

    // step 1: slot 0 emits token 0, slot 1 emits token 1, slot 2 emits blank
    store.expand(&[0, 0, 0], &[0, 1, blank], &[ln(0.5), ln(0.3), ln(0.2)])?;
    // step 2: "0" + blank, "1" + blank, "" + 0; slots 0 and 2 now both read "0"
    store.expand(&[0, 1, 2], &[blank, blank, 0], &[ln(0.6), ln(0.9), ln(0.5)])?;

    for slot in 0..3 {
        println!(
            "slot {slot}: {:?} p={:.3} key={:?}",
            store.retrieve_transcript(0, slot)?,
            store.score(0, slot).exp(),
            store.key(0, slot)
        );
    }

    // equal keys collapse into the lowest slot with the summed probability
    store.merge_duplicates();
    println!("after merge:");
    for slot in 0..3 {
        if store.is_live(0, slot) {
            println!("slot {slot}: {:?} p={:.3}", store.retrieve_transcript(0, slot)?, store.score(0, slot).exp());
        } else {
            println!("slot {slot}: dead");
        }
    }
    Ok(())
}
