use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use serde::{Deserialize, Serialize};

use super::{thread_count, to_json, usage, write_atomic, BenchArgs, DecodeArgs, EvalArgs, GenFixturesArgs};
use crate::decode::{decode, Algorithm, Counters, DecodeConfig, Hypothesis, StreamResult};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::lm::{write_arpa_text, ArpaOptions, NGramLm};
use crate::metrics::{bench, pair_transcripts, read_transcripts, wer, ThroughputReport, WerReport};
use crate::model::{EmissionModel, LatticeModel, ToyConfig, ToyModel, ToyStream, Vocabulary};

const TOOL: &str = "tbeam";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSource {
    Toy {
        config: ToyConfig,
        utterances: usize,
        frames: usize,
    },
    Lattice {
        dir: PathBuf,
    },
}

/// Everything that determines the transcripts of a decode run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub source: ModelSource,
    pub algo: Algorithm,
    pub batch: usize,
    pub decode: DecodeConfig,
    pub lm: Option<PathBuf>,
    #[serde(default)]
    pub lm_strict: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceResult {
    pub id: String,
    pub text: String,
    pub nbest: Vec<Hypothesis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub inputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub frames: u64,
    #[serde(default)]
    pub counters: Counters,
    #[serde(default)]
    pub wall_seconds: f64,
    #[serde(default)]
    pub results: Vec<UtteranceResult>,
}

impl RunManifest {
    fn new(config: RunConfig) -> Self {
        let seed = match &config.source {
            ModelSource::Toy { config, .. } => Some(config.seed),
            ModelSource::Lattice { .. } => None,
        };
        Self {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
            inputs: Vec::new(),
            seed,
            frames: 0,
            counters: Counters::default(),
            wall_seconds: 0.0,
            results: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub algo: Algorithm,
    pub batch: usize,
    pub beam: usize,
    pub report: ThroughputReport,
}

/// Utterances and vocabulary of a resolved [`ModelSource`].
enum Inputs {
    Toy {
        model: ToyModel,
        ids: Vec<String>,
        frames: usize,
    },
    Lattice {
        vocab: Vocabulary,
        ids: Vec<String>,
        models: Vec<LatticeModel>,
        files: Vec<PathBuf>,
    },
}

impl Inputs {
    fn load(source: &ModelSource) -> Result<Self> {
        match source {
            ModelSource::Toy { config, utterances, frames } => {
                if *utterances == 0 || *frames == 0 {
                    return Err(Error::Usage("--utterances and --frames must be at least 1".into()));
                }
                let mut cfg = config.clone();
                cfg.max_frames = cfg.max_frames.max(*frames);
                let model = ToyModel::new(cfg).map_err(usage)?;
                let ids = (0..*utterances).map(|i| format!("toy{}-{i:04}", config.seed)).collect();
                Ok(Inputs::Toy { model, ids, frames: *frames })
            }
            ModelSource::Lattice { dir } => {
                let vocab = Vocabulary::load(dir.join("tokens.txt"))?;
                let mut files: Vec<PathBuf> = fs::read_dir(dir)
                    .map_err(|e| Error::io(dir, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "json"))
                    .collect();
                files.sort();
                if files.is_empty() {
                    return Err(Error::Validation(format!("no *.json lattices in {}", dir.display())));
                }
                let mut ids = Vec::with_capacity(files.len());
                let mut models = Vec::with_capacity(files.len());
                for f in &files {
                    let lattice = LatticeModel::load(f)?;
                    if lattice.vocab_size() != vocab.len() {
                        return Err(Error::Validation(format!(
                            "{}: lattice vocabulary has {} tokens, tokens.txt has {}",
                            f.display(),
                            lattice.vocab_size(),
                            vocab.len()
                        )));
                    }
                    ids.push(f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
                    models.push(lattice);
                }
                files.insert(0, dir.join("tokens.txt"));
                Ok(Inputs::Lattice { vocab, ids, models, files })
            }
        }
    }

    fn vocab(&self) -> Vocabulary {
        match self {
            Inputs::Toy { model, .. } => model.vocab(),
            Inputs::Lattice { vocab, .. } => vocab.clone(),
        }
    }

    fn ids(&self) -> &[String] {
        match self {
            Inputs::Toy { ids, .. } | Inputs::Lattice { ids, .. } => ids,
        }
    }

    fn input_paths(&self) -> Vec<PathBuf> {
        match self {
            Inputs::Toy { .. } => Vec::new(),
            Inputs::Lattice { files, .. } => files.clone(),
        }
    }

    fn streams(&self) -> Result<Streams<'_>> {
        match self {
            Inputs::Toy { model, ids, frames } => Ok(Streams::Toy(
                (0..ids.len())
                    .map(|i| model.stream(i as u64, *frames))
                    .collect::<Result<Vec<_>>>()?,
            )),
            Inputs::Lattice { models, .. } => Ok(Streams::Lattice(models)),
        }
    }

    fn frames(&self) -> u64 {
        match self {
            Inputs::Toy { ids, frames, .. } => (ids.len() * frames) as u64,
            Inputs::Lattice { models, .. } => models.iter().map(|l| l.num_frames() as u64).sum(),
        }
    }

}

enum Streams<'a> {
    Toy(Vec<ToyStream<'a>>),
    Lattice(&'a [LatticeModel]),
}

impl Streams<'_> {
    /// Decodes every utterance in batches of `batch`.
    fn run(
        &self,
        algo: Algorithm,
        cfg: &DecodeConfig,
        lm: Option<&NGramLm>,
        batch: usize,
        threads: usize,
    ) -> Result<(Vec<StreamResult>, Counters)> {
        match self {
            Streams::Toy(s) => run_batches(algo, s, cfg, lm, batch, threads),
            Streams::Lattice(s) => run_batches(algo, s, cfg, lm, batch, threads),
        }
    }

    fn references(&self, vocab: &Vocabulary) -> Option<Vec<String>> {
        match self {
            Streams::Toy(s) => Some(s.iter().map(|s| vocab.detokenize(s.reference())).collect()),
            Streams::Lattice(_) => None,
        }
    }
}

/// Splits `streams` into batches and decodes them, on `threads` workers when
/// more than one is available. Results keep the input order.
fn run_batches<M: EmissionModel>(
    algo: Algorithm,
    streams: &[M],
    cfg: &DecodeConfig,
    lm: Option<&NGramLm>,
    batch: usize,
    threads: usize,
) -> Result<(Vec<StreamResult>, Counters)> {
    if batch == 0 {
        return Err(Error::Usage("--batch must be at least 1".into()));
    }
    let chunks: Vec<&[M]> = streams.chunks(batch).collect();
    let outputs = if threads <= 1 || chunks.len() <= 1 {
        chunks.iter().map(|c| decode(algo, c, cfg, lm)).collect::<Vec<_>>()
    } else {
        let workers = threads.min(chunks.len());
        let mut slots: Vec<Option<Result<_>>> = (0..chunks.len()).map(|_| None).collect();
        thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let chunks = &chunks;
                    s.spawn(move || {
                        (w..chunks.len())
                            .step_by(workers)
                            .map(|i| (i, decode(algo, chunks[i], cfg, lm)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("decode worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|r| r.expect("every chunk decoded")).collect()
    };
    let mut results = Vec::with_capacity(streams.len());
    let mut counters = Counters::default();
    for out in outputs {
        let out = out?;
        counters.model_calls += out.counters.model_calls;
        counters.rows_scored += out.counters.rows_scored;
        counters.lm_queries += out.counters.lm_queries;
        results.extend(out.streams);
    }
    Ok((results, counters))
}

fn load_lm(path: Option<&Path>, strict: bool, vocab: &Vocabulary) -> Result<Option<NGramLm>> {
    path.map(|p| NGramLm::load(p, vocab, ArpaOptions { strict })).transpose()
}

fn resolve_decode(args: &DecodeArgs) -> Result<RunConfig> {
    if let Some(path) = &args.manifest {
        return Ok(RunManifest::load(path)?.config);
    }
    if args.batch == 0 {
        return Err(Error::Usage("--batch must be at least 1".into()));
    }
    Ok(RunConfig {
        source: args.source.resolve()?,
        algo: args.search.algo,
        batch: args.batch,
        decode: args.search.decode_config(args.beam)?,
        lm: args.search.fusion.lm.clone(),
        lm_strict: args.search.fusion.lm_strict,
    })
}

/// Decodes, then writes `transcripts.txt`, `nbest.txt`, `manifest.json` and,
/// for toy runs, `refs.txt` under `--out`.
pub fn cmd_decode(args: &DecodeArgs) -> Result<RunManifest> {
    let threads = thread_count()?;
    let config = resolve_decode(args)?;
    config.decode.validate().map_err(usage)?;
    if config.batch == 0 {
        return Err(Error::Usage("batch must be at least 1".into()));
    }
    let inputs = Inputs::load(&config.source)?;
    let vocab = inputs.vocab();
    let lm = load_lm(config.lm.as_deref(), config.lm_strict, &vocab)?;

    let start = std::time::Instant::now();
    let streams = inputs.streams()?;
    let (results, counters) = streams.run(config.algo, &config.decode, lm.as_ref(), config.batch, threads)?;
    let wall_seconds = start.elapsed().as_secs_f64();

    let mut manifest = RunManifest::new(config);
    manifest.inputs = inputs.input_paths();
    manifest.inputs.extend(manifest.config.lm.clone());
    manifest.frames = inputs.frames();
    manifest.counters = counters;
    manifest.wall_seconds = wall_seconds;
    manifest.results = inputs
        .ids()
        .iter()
        .cloned()
        .zip(results)
        .map(|(id, s)| UtteranceResult {
            text: s.best().map(|h| vocab.detokenize(&h.tokens)).unwrap_or_default(),
            id,
            nbest: s.nbest,
        })
        .collect();

    let mut transcripts = String::new();
    let mut nbest = String::new();
    for r in &manifest.results {
        let _ = writeln!(transcripts, "{}\t{}", r.id, r.text);
        for (rank, h) in r.nbest.iter().enumerate() {
            let _ = writeln!(
                nbest,
                "{}\t{}\t{:.6}\t{:.6}\t{}",
                r.id,
                rank + 1,
                h.score,
                h.lm_score,
                vocab.detokenize(&h.tokens)
            );
        }
    }
    write_atomic(&args.out.join("transcripts.txt"), transcripts.as_bytes())?;
    write_atomic(&args.out.join("nbest.txt"), nbest.as_bytes())?;
    if let Some(refs) = streams.references(&vocab) {
        let text: String = manifest.results.iter().zip(refs).map(|(r, t)| format!("{}\t{t}\n", r.id)).collect();
        write_atomic(&args.out.join("refs.txt"), text.as_bytes())?;
    }
    write_atomic(&args.out.join("manifest.json"), to_json(&manifest).as_bytes())?;
    Ok(manifest)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<WerReport> {
    let refs = read_transcripts(&args.reference)?;
    let hyps = read_transcripts(&args.hyp)?;
    let (r, h) = pair_transcripts(&refs, &hyps)?;
    wer(&r, &h)
}

/// One row per (batch, beam) grid point, batches outermost.
pub fn cmd_bench(args: &BenchArgs) -> Result<Vec<BenchRow>> {
    let threads = thread_count()?;
    if args.batch.is_empty() || args.beam.is_empty() {
        return Err(Error::Usage("--batch and --beam grids must not be empty".into()));
    }
    if args.batch.contains(&0) || args.beam.contains(&0) {
        return Err(Error::Usage("grid values must be at least 1".into()));
    }
    if args.repeats == 0 {
        return Err(Error::Usage("--repeats must be at least 1".into()));
    }
    if let Some(ms) = args.frame_ms {
        if ms.is_nan() || ms <= 0.0 {
            return Err(Error::Usage("--frame-ms must be positive".into()));
        }
    }
    let configs = args
        .beam
        .iter()
        .map(|&b| args.search.decode_config(b))
        .collect::<Result<Vec<_>>>()?;
    let inputs = Inputs::load(&args.source.resolve()?)?;
    let lm = load_lm(args.search.fusion.lm.as_deref(), args.search.fusion.lm_strict, &inputs.vocab())?;
    let frames = inputs.frames();
    let streams = inputs.streams()?;
    let frame_seconds = args.frame_ms.map(|ms| ms / 1000.0);

    let mut rows = Vec::new();
    for &batch in &args.batch {
        for (cfg, &beam) in configs.iter().zip(&args.beam) {
            log::debug!("bench {} batch {batch} beam {beam}", args.search.algo);
            let report = bench(
                || {
                    streams.run(args.search.algo, cfg, lm.as_ref(), batch, threads)?;
                    Ok(frames)
                },
                args.warmup,
                args.repeats,
                frame_seconds,
            )?;
            rows.push(BenchRow { algo: args.search.algo, batch, beam, report });
        }
    }
    if let Some(out) = &args.out {
        write_atomic(out, to_json(&rows).as_bytes())?;
    }
    Ok(rows)
}

/// Hand-counted evaluation pair: 1 substitution, 1 deletion, 1 insertion over 9 words.
const EVAL_REF: &str = "utt1\tthe cat sat on the mat\nutt2\ta b c\n";
const EVAL_HYP: &str = "utt1\tthe cat sit on mat\nutt2\ta x b c\n";

/// Builds the whole fixture set in memory, validates it, then writes it.
/// Returns the written paths in write order.
pub fn cmd_gen_fixtures(args: &GenFixturesArgs) -> Result<Vec<PathBuf>> {
    let seed = args.seed;
    let mut files: Vec<(String, String)> = Vec::new();
    let mut lattices: Vec<(String, String)> = Vec::new();
    let mut arpas: Vec<(String, String, Vocabulary)> = Vec::new();

    let tiny_vocab = Vocabulary::synthetic(3);
    files.push(("tiny/tokens.txt".into(), tiny_vocab.to_text()));
    for i in 0..20u64 {
        let frames = 2 + (i % 3) as usize;
        let order = 1 + (i % 2) as usize;
        let lat = fixtures::dag_lattice(seed.wrapping_mul(1000).wrapping_add(i), frames, 3, order)?;
        lattices.push((format!("tiny/tiny-{i:03}.json"), lat.to_json()));
    }

    let suite = fixtures::low_confidence_suite(seed, 20)?;
    files.push(("deletion/tokens.txt".into(), suite.vocab.to_text()));
    let mut refs = String::new();
    for (i, (lat, r)) in suite.utterances.iter().zip(&suite.references).enumerate() {
        lattices.push((format!("deletion/utt-{i:03}.json"), lat.to_json()));
        let _ = writeln!(refs, "utt-{i:03}\t{}", suite.vocab.detokenize(r));
    }
    files.push(("deletion/ref.txt".into(), refs));
    arpas.push(("deletion/lm.arpa".into(), write_arpa_text(&suite.lm), suite.vocab.clone()));

    let (lat, vocab, lm) = fixtures::early_late_fixture()?;
    files.push(("early_late/tokens.txt".into(), vocab.to_text()));
    lattices.push(("early_late/utt.json".into(), lat.to_json()));
    arpas.push(("early_late/lm.arpa".into(), write_arpa_text(&lm), vocab));

    let prefix_vocab = Vocabulary::new(vec!["\u{2581}a".into(), "\u{2581}b".into()])?;
    files.push(("prefix/tokens.txt".into(), prefix_vocab.to_text()));
    lattices.push(("prefix/utt.json".into(), fixtures::prefix_fixture()?.to_json()));

    let lm_vocab = Vocabulary::synthetic(12);
    files.push(("lm/tokens.txt".into(), lm_vocab.to_text()));
    arpas.push(("lm/lm3.arpa".into(), write_arpa_text(&fixtures::random_arpa(seed, &lm_vocab, 3, true)?), lm_vocab));

    let mut toy_config = ToyConfig::new(seed, 2, 64, 50);
    toy_config.hidden = 384;
    let toy = RunConfig {
        source: ModelSource::Toy {
            config: toy_config,
            utterances: 8,
            frames: 50,
        },
        algo: Algorithm::AlsdPlusPlus,
        batch: 4,
        decode: DecodeConfig::default(),
        lm: None,
        lm_strict: false,
    };
    ToyModel::new(match &toy.source {
        ModelSource::Toy { config, .. } => config.clone(),
        ModelSource::Lattice { .. } => unreachable!(),
    })?;
    files.push(("toy/manifest.json".into(), to_json(&RunManifest::new(toy))));

    files.push(("eval/ref.txt".into(), EVAL_REF.into()));
    files.push(("eval/hyp.txt".into(), EVAL_HYP.into()));
    let expected = wer(&["the cat sat on the mat", "a b c"], &["the cat sit on mat", "a x b c"])?;
    files.push(("eval/expected.json".into(), to_json(&expected)));

    // validation pass: lattices re-parse (rows normalized), LMs load strictly
    for (name, text) in &lattices {
        LatticeModel::from_json(text, name)?;
    }
    for (name, text, vocab) in &arpas {
        NGramLm::from_arpa_str(text, vocab, ArpaOptions { strict: true }, name)?;
    }

    files.extend(lattices);
    files.extend(arpas.into_iter().map(|(n, t, _)| (n, t)));
    let mut written = Vec::with_capacity(files.len());
    for (rel, text) in files {
        let path = args.out.join(rel);
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
