use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use tbeam::cli::{self, Cli, Command};
use tbeam::lm::{ArpaOptions, NGramLm};
use tbeam::model::{LatticeModel, Vocabulary};
use tempfile::TempDir;

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("tbeam").chain(args.iter().copied()))
}

fn parse(args: &[&str]) -> Command {
    Cli::try_parse_from(std::iter::once("tbeam").chain(args.iter().copied()))
        .expect("arguments parse")
        .command
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixtures(dir: &TempDir) -> PathBuf {
    let out = dir.path().join("fx");
    assert_eq!(run(&["gen-fixtures", "--seed", "11", "--out", s(&out)]), 0);
    out
}

const TOY: [&str; 8] = ["--toy", "5", "--utterances", "6", "--frames", "30", "--vocab-size", "32"];

fn decode(dir: &Path, name: &str, extra: &[&str]) -> String {
    let out = dir.join(name);
    let mut args = vec!["decode", "--out", s(&out)];
    args.extend_from_slice(extra);
    assert_eq!(run(&args), 0, "decode {extra:?}");
    read(out.join("transcripts.txt"))
}

#[test]
fn beam_one_matches_greedy_byte_for_byte() {
    let dir = TempDir::new().unwrap();
    let mut a = TOY.to_vec();
    a.extend(["--algo", "alsd++", "--beam", "1"]);
    let mut g = TOY.to_vec();
    g.extend(["--algo", "greedy"]);
    assert_eq!(decode(dir.path(), "a", &a), decode(dir.path(), "g", &g));
}

#[test]
fn zero_lm_weight_is_a_no_op() {
    let dir = TempDir::new().unwrap();
    let fx = fixtures(&dir);
    let lattice = fx.join("deletion");
    let lm = lattice.join("lm.arpa");
    let plain = decode(dir.path(), "plain", &["--lattice", s(&lattice), "--beam", "3"]);
    let fused = decode(
        dir.path(),
        "fused",
        &["--lattice", s(&lattice), "--beam", "3", "--lm", s(&lm), "--lm-weight", "0"],
    );
    assert_eq!(plain, fused);
}

#[test]
fn batch_and_threads_do_not_change_transcripts() {
    let dir = TempDir::new().unwrap();
    let mut one = TOY.to_vec();
    one.extend(["--batch", "1", "--beam", "3"]);
    let mut all = TOY.to_vec();
    all.extend(["--batch", "32", "--beam", "3"]);
    assert_eq!(decode(dir.path(), "one", &one), decode(dir.path(), "all", &all));
}

#[test]
fn manifest_rerun_reproduces_transcripts() {
    let dir = TempDir::new().unwrap();
    let mut a = TOY.to_vec();
    a.extend(["--algo", "aes++", "--beam", "4", "--nbest", "3"]);
    let first = decode(dir.path(), "first", &a);
    let manifest = dir.path().join("first/manifest.json");
    let second = decode(dir.path(), "second", &["--manifest", s(&manifest)]);
    assert_eq!(first, second);
    assert_eq!(read(dir.path().join("first/nbest.txt")), read(dir.path().join("second/nbest.txt")));
    let m: serde_json::Value = serde_json::from_str(&read(&manifest)).unwrap();
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["decode"]["beam"], 4);
    assert_eq!(m["results"].as_array().unwrap().len(), 6);
}

#[test]
fn usage_and_data_errors_create_no_output() {
    let dir = TempDir::new().unwrap();
    let fx = fixtures(&dir);
    let out = dir.path().join("never");
    let o = s(&out);
    // conflicting model sources
    assert_eq!(run(&["decode", "--toy", "1", "--lattice", s(&fx.join("tiny")), "--out", o]), 2);
    // LM weight without an LM
    assert_eq!(run(&["decode", "--toy", "1", "--lm-weight", "0.5", "--out", o]), 2);
    assert_eq!(run(&["decode", "--out", o]), 2);
    assert_eq!(run(&["decode", "--toy", "1", "--beam", "0", "--out", o]), 2);
    assert_eq!(run(&["decode", "--toy", "1", "--algo", "viterbi", "--out", o]), 2);
    // LM over a different vocabulary
    let wrong_lm = fx.join("lm/lm3.arpa");
    assert_eq!(
        run(&["decode", "--lattice", s(&fx.join("tiny")), "--lm", s(&wrong_lm), "--lm-weight", "1", "--lm-strict", "--out", o]),
        3
    );
    assert_eq!(run(&["decode", "--lattice", s(&dir.path().join("missing")), "--out", o]), 3);
    assert!(!out.exists());
}

#[test]
fn eval_reports_hand_counts_and_missing_ids() {
    let dir = TempDir::new().unwrap();
    let fx = fixtures(&dir);
    let r = fx.join("eval/ref.txt");
    let h = fx.join("eval/hyp.txt");
    let Command::Eval(args) = parse(&["eval", "--ref", s(&r), "--hyp", s(&h)]) else {
        unreachable!()
    };
    let report = cli::cmd_eval(&args).unwrap();
    assert_eq!((report.substitutions, report.deletions, report.insertions, report.ref_words), (1, 1, 1, 9));

    let Command::Eval(same) = parse(&["eval", "--ref", s(&r), "--hyp", s(&r)]) else {
        unreachable!()
    };
    assert_eq!(cli::cmd_eval(&same).unwrap().wer, 0.0);

    let partial = dir.path().join("partial.txt");
    fs::write(&partial, "utt1\tthe cat\n").unwrap();
    let Command::Eval(missing) = parse(&["eval", "--ref", s(&r), "--hyp", s(&partial)]) else {
        unreachable!()
    };
    let err = cli::cmd_eval(&missing).unwrap_err();
    assert!(err.to_string().contains("utt2"), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn bench_grid_rows_and_defaults() {
    let Command::Bench(args) = parse(&["bench", "--toy", "2", "--utterances", "8", "--frames", "20", "--vocab-size", "16", "--hidden", "96"])
    else {
        unreachable!()
    };
    assert_eq!((args.warmup, args.repeats), (1, 3));
    let rows = cli::cmd_bench(&args).unwrap();
    let grid: Vec<(usize, usize)> = rows.iter().map(|r| (r.batch, r.beam)).collect();
    assert_eq!(grid, vec![(1, 1), (1, 6), (4, 1), (4, 6), (8, 1), (8, 6)]);
    assert!(rows.iter().all(|r| r.report.frames == 160 && r.report.repeats == 3));
}

#[test]
fn larger_batch_is_not_slower() {
    let Command::Bench(args) = parse(&[
        "bench", "--toy", "4", "--utterances", "16", "--frames", "40", "--vocab-size", "256", "--hidden", "256",
        "--batch", "1,4,16", "--beam", "4",
    ]) else {
        unreachable!()
    };
    let rows = cli::cmd_bench(&args).unwrap();
    for w in rows.windows(2) {
        let (small, large) = (w[0].report.frames_per_second, w[1].report.frames_per_second);
        assert!(large >= 0.9 * small, "batch {} {small:.0} fps vs batch {} {large:.0} fps", w[0].batch, w[1].batch);
    }
}

#[test]
fn fixtures_are_deterministic_and_valid() {
    let dir = TempDir::new().unwrap();
    let a = fixtures(&dir);
    let b = dir.path().join("again");
    assert_eq!(run(&["gen-fixtures", "--seed", "11", "--out", s(&b)]), 0);
    let mut files = Vec::new();
    collect(&a, &mut files);
    assert!(files.len() > 40);
    for f in &files {
        let rel = f.strip_prefix(&a).unwrap();
        assert_eq!(fs::read(f).unwrap(), fs::read(b.join(rel)).unwrap(), "{}", rel.display());
        match f.extension().and_then(|x| x.to_str()) {
            Some("json") if rel.starts_with("tiny") || rel.starts_with("deletion") => {
                // loading re-validates every row's normalization
                LatticeModel::load(f).unwrap();
            }
            Some("arpa") => {
                let vocab = Vocabulary::load(f.parent().unwrap().join("tokens.txt")).unwrap();
                NGramLm::load(f, &vocab, ArpaOptions { strict: true }).unwrap();
            }
            _ => {}
        }
    }
    let c = dir.path().join("other");
    assert_eq!(run(&["gen-fixtures", "--seed", "12", "--out", s(&c)]), 0);
    assert_ne!(read(a.join("lm/lm3.arpa")), read(c.join("lm/lm3.arpa")));
}

#[test]
fn generated_toy_manifest_decodes() {
    let dir = TempDir::new().unwrap();
    let fx = fixtures(&dir);
    let t = decode(dir.path(), "toy", &["--manifest", s(&fx.join("toy/manifest.json"))]);
    assert_eq!(t.lines().count(), 8);
}

#[test]
fn early_and_late_pruning_differ_from_the_command_line() {
    let dir = TempDir::new().unwrap();
    let fx = fixtures(&dir);
    let lat = fx.join("early_late");
    let lm = lat.join("lm.arpa");
    let base = ["--lattice", s(&lat), "--lm", s(&lm), "--lm-weight", "1", "--beam", "2"];
    let mut early = base.to_vec();
    early.extend(["--pruning", "early"]);
    assert_eq!(decode(dir.path(), "late", &base), "utt\tc\n");
    assert_eq!(decode(dir.path(), "early", &early), "utt\ta\n");
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) {
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            collect(&p, out);
        } else {
            out.push(p);
        }
    }
}
