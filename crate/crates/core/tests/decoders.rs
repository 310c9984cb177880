use tbeam::decode::{decode, enumerate_alignments, Algorithm, DecodeConfig};
use tbeam::fixtures::{dag_lattice, early_late_fixture, hand_greedy_fixture, prefix_fixture, random_arpa};
use tbeam::fusion::{BlankScoring, FusionConfig, Pruning};
use tbeam::lm::{ArpaOptions, NGramLm};
use tbeam::model::{make_toy, EmissionModel, Vocabulary};

#[test]
fn greedy_follows_hand_lattice() {
    let m = hand_greedy_fixture().unwrap();
    let r = decode(Algorithm::Greedy, &[m.clone()], &DecodeConfig::default(), None).unwrap();
    assert_eq!(r.best_tokens(), vec![vec![0, 1]]);
    for algo in [Algorithm::AlsdPlusPlus, Algorithm::AesPlusPlus] {
        let r = decode(algo, &[m.clone()], &DecodeConfig::with_beam(3), None).unwrap();
        assert_eq!(r.best_tokens(), vec![vec![0, 1]], "{algo}");
        assert!(r.streams[0].nbest[0].score.abs() < 1e-12);
    }
}

#[test]
fn prefix_search_folds_shorter_hypothesis() {
    let m = prefix_fixture().unwrap();
    let cfg = DecodeConfig { return_nbest: 3, ..DecodeConfig::with_beam(3) };
    let with = decode(Algorithm::AesPlusPlus, &[m.clone()], &cfg, None).unwrap();
    let best = &with.streams[0].nbest[0];
    assert_eq!(best.tokens, vec![0, 1]);
    assert!((best.score - 0.55f64.ln()).abs() < 1e-12, "{}", best.score.exp());
    let total: f64 = with.streams[0].nbest.iter().map(|h| h.score.exp()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let without = decode(
        Algorithm::AesPlusPlus,
        &[m.clone()],
        &DecodeConfig { prefix_search: false, ..cfg.clone() },
        None,
    )
    .unwrap();
    let ab = without.streams[0].nbest.iter().find(|h| h.tokens == vec![0, 1]).unwrap();
    assert!((ab.score - best.score).abs() > 1e-3);
    let reference = decode(Algorithm::AesRef, &[m], &cfg, None).unwrap();
    assert_eq!(reference.streams[0].nbest, with.streams[0].nbest);
}

#[test]
fn early_and_late_pruning_disagree_on_fixture() {
    let (m, vocab, arpa) = early_late_fixture().unwrap();
    let lm = NGramLm::from_arpa(&arpa, &vocab, ArpaOptions { strict: true }, "fixture").unwrap();
    let run = |pruning| {
        let cfg = DecodeConfig {
            fusion: Some(FusionConfig::new(1.0, BlankScoring::Omit, pruning)),
            ..DecodeConfig::with_beam(2)
        };
        decode(Algorithm::AlsdPlusPlus, &[m.clone()], &cfg, Some(&lm)).unwrap()
    };
    let late = run(Pruning::Late);
    let early = run(Pruning::Early);
    assert_eq!(late.best_tokens(), vec![vec![2]]);
    assert_eq!(early.best_tokens(), vec![vec![0]]);
}

#[test]
fn saturated_search_matches_oracle() {
    for seed in 0..40 {
        let order = 1 + (seed % 2) as usize;
        let m = dag_lattice(seed, 1 + (seed % 4) as usize, 3, order).unwrap();
        let oracle = enumerate_alignments(&m, 6).unwrap();
        let total: f64 = oracle.values().sum();
        assert!((total - 1.0).abs() < 1e-9, "seed {seed}: {total}");
        let (best, p) = oracle.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let cfg = DecodeConfig { return_nbest: 64, ..DecodeConfig::with_beam(256) };
        for algo in [Algorithm::AlsdPlusPlus, Algorithm::AesPlusPlus] {
            let cfg = DecodeConfig { aes_expansions_per_frame: 6, ..cfg.clone() };
            let r = decode(algo, &[m.clone()], &cfg, None).unwrap();
            let top = &r.streams[0].nbest[0];
            assert_eq!(&top.tokens, best, "seed {seed} {algo}");
            assert!((top.score.exp() - p).abs() < 1e-9);
            assert_eq!(r.streams[0].nbest.len(), oracle.len(), "seed {seed} {algo}");
        }
    }
}

#[test]
fn batched_engine_matches_reference() {
    let toy = make_toy(11, 2, 6, 10).unwrap();
    let vocab = Vocabulary::synthetic(6);
    let arpa = random_arpa(5, &vocab, 3, true).unwrap();
    let lm = NGramLm::from_arpa(&arpa, &vocab, ArpaOptions { strict: true }, "gen").unwrap();
    let streams: Vec<_> = (0..6).map(|i| toy.stream(i, 4 + i as usize).unwrap()).collect();
    for beam in [1, 2, 4, 6] {
        for fusion in [
            None,
            Some(FusionConfig { eos: true, ..FusionConfig::new(0.6, BlankScoring::Scored, Pruning::Late) }),
            Some(FusionConfig::new(0.8, BlankScoring::Omit, Pruning::Early)),
        ] {
            let cfg = DecodeConfig { fusion, return_nbest: beam, ..DecodeConfig::with_beam(beam) };
            for (fast, slow) in [(Algorithm::AlsdPlusPlus, Algorithm::AlsdRef), (Algorithm::AesPlusPlus, Algorithm::AesRef)] {
                let a = decode(fast, &streams, &cfg, Some(&lm)).unwrap();
                let b = decode(slow, &streams, &cfg, Some(&lm)).unwrap();
                for (x, y) in a.streams.iter().zip(&b.streams) {
                    assert_eq!(x.nbest.len(), y.nbest.len());
                    for (h, g) in x.nbest.iter().zip(&y.nbest) {
                        assert_eq!(h.tokens, g.tokens, "{fast} beam {beam} {fusion:?}");
                        assert!((h.score - g.score).abs() < 1e-9);
                    }
                }
            }
        }
    }
    let _ = streams[0].num_frames();
}
