//! `tbeam` command line: decode, eval, bench and gen-fixtures.
//!
//! Every subcommand builds and validates all of its inputs before it creates
//! an output file; files are written to a temporary sibling and renamed.
//! Exit codes are 0 on success, 2 for usage errors and 3 for data errors.

mod commands;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::decode::{Algorithm, DecodeConfig};
use crate::error::{Error, Result};
use crate::fusion::{BlankScoring, FusionConfig, Pruning};

pub use commands::{
    cmd_bench, cmd_decode, cmd_eval, cmd_gen_fixtures, BenchRow, ModelSource, RunConfig, RunManifest, UtteranceResult,
};

/// Environment variable holding the number of decode worker threads.
pub const THREADS_ENV: &str = "TBEAM_THREADS";

#[derive(Parser, Debug)]
#[command(name = "tbeam", version, about = "Batched transducer beam search with n-gram fusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Decode toy or lattice utterances and write transcripts.
    Decode(DecodeArgs),
    /// Word error rate of a hypothesis file against a reference file.
    Eval(EvalArgs),
    /// Throughput over a grid of batch sizes and beams.
    Bench(BenchArgs),
    /// Write the seeded fixture set used by the tests.
    GenFixtures(GenFixturesArgs),
}

#[derive(Args, Clone, Debug)]
pub struct SourceArgs {
    /// Seed of a synthetic toy transducer.
    #[arg(long, value_name = "SEED", conflicts_with = "lattice")]
    pub toy: Option<u64>,
    /// Directory holding tokens.txt and one <id>.json lattice per utterance.
    #[arg(long, value_name = "DIR")]
    pub lattice: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 2)]
    pub context_order: usize,
    /// Toy hidden size; keep it several times the vocabulary size or the
    /// output directions crowd together and the model starts looping.
    #[arg(long, default_value_t = 384)]
    pub hidden: usize,
    #[arg(long, default_value_t = 8)]
    pub utterances: usize,
    #[arg(long, default_value_t = 50)]
    pub frames: usize,
    /// Encoder noise of the toy model; larger is less confident.
    #[arg(long, default_value_t = 1.5)]
    pub noise: f64,
}

impl SourceArgs {
    pub fn resolve(&self) -> Result<ModelSource> {
        match (self.toy, &self.lattice) {
            (Some(_), Some(_)) => Err(Error::Usage("--toy and --lattice are mutually exclusive".into())),
            (None, None) => Err(Error::Usage("a model source is required: --toy SEED or --lattice DIR".into())),
            (None, Some(dir)) => Ok(ModelSource::Lattice { dir: dir.clone() }),
            (Some(seed), None) => {
                let mut toy = crate::model::ToyConfig::new(seed, self.context_order, self.vocab_size, self.frames);
                toy.hidden = self.hidden;
                toy.noise = self.noise;
                Ok(ModelSource::Toy {
                    config: toy,
                    utterances: self.utterances,
                    frames: self.frames,
                })
            }
        }
    }
}

#[derive(Args, Clone, Debug)]
pub struct SearchArgs {
    #[arg(long, default_value = "alsd++")]
    pub algo: Algorithm,
    /// Scoring rounds per frame, including the final blank-only round.
    #[arg(long, default_value_t = 10)]
    pub max_symbols: usize,
    #[arg(long, default_value_t = 2)]
    pub aes_expansions: usize,
    #[arg(long, default_value_t = 256)]
    pub max_len: usize,
    #[arg(long, default_value_t = 1)]
    pub nbest: usize,
    /// Disable AES prefix search.
    #[arg(long)]
    pub no_prefix_search: bool,
    #[command(flatten)]
    pub fusion: FusionArgs,
}

impl SearchArgs {
    pub fn decode_config(&self, beam: usize) -> Result<DecodeConfig> {
        let cfg = DecodeConfig {
            beam,
            max_symbols_per_frame: self.max_symbols,
            aes_expansions_per_frame: self.aes_expansions,
            max_len: self.max_len,
            fusion: self.fusion.config()?,
            return_nbest: self.nbest,
            prefix_search: !self.no_prefix_search,
            ..DecodeConfig::default()
        };
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

#[derive(Args, Clone, Debug)]
pub struct FusionArgs {
    /// ARPA language model; its words are mapped through the model vocabulary.
    #[arg(long, value_name = "ARPA")]
    pub lm: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub lm_weight: f64,
    #[arg(long, default_value = "omit", value_name = "omit|scored")]
    pub blank_scoring: BlankScoring,
    #[arg(long, default_value = "late", value_name = "early|late")]
    pub pruning: Pruning,
    /// Add the end-of-sentence LM term to final hypotheses.
    #[arg(long)]
    pub lm_eos: bool,
    /// Reject ARPA words missing from the vocabulary.
    #[arg(long)]
    pub lm_strict: bool,
}

impl FusionArgs {
    fn config(&self) -> Result<Option<FusionConfig>> {
        if self.lm_weight > 0.0 && self.lm.is_none() {
            return Err(Error::Usage("--lm-weight > 0 needs --lm".into()));
        }
        if self.lm.is_none() {
            return Ok(None);
        }
        Ok(Some(FusionConfig {
            lambda: self.lm_weight,
            blank_scoring: self.blank_scoring,
            pruning: self.pruning,
            eos: self.lm_eos,
        }))
    }
}

#[derive(Args, Clone, Debug)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, default_value_t = 4)]
    pub beam: usize,
    /// Utterances decoded together in one batched search.
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Output directory for transcripts.txt, nbest.txt and manifest.json.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Re-run the configuration recorded in a manifest; other model and search flags are ignored.
    #[arg(long, value_name = "JSON", conflicts_with_all = ["toy", "lattice"])]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct EvalArgs {
    /// Reference transcripts, one `id<TAB>text` per line.
    #[arg(long = "ref", value_name = "FILE")]
    pub reference: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub hyp: PathBuf,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Clone, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,4,8")]
    pub batch: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,6")]
    pub beam: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Frame duration in milliseconds, used for RTFx.
    #[arg(long)]
    pub frame_ms: Option<f64>,
    /// Also write the rows as JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct GenFixturesArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("tbeam: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Decode(args) => {
            let m = cmd_decode(&args)?;
            println!(
                "decoded {} utterances ({} frames) in {:.3}s -> {}",
                m.results.len(),
                m.frames,
                m.wall_seconds,
                args.out.display()
            );
        }
        Command::Eval(args) => {
            let r = cmd_eval(&args)?;
            if args.json {
                println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
            } else {
                println!(
                    "WER {:.2}% (S={} D={} I={} N={})",
                    100.0 * r.wer,
                    r.substitutions,
                    r.deletions,
                    r.insertions,
                    r.ref_words
                );
            }
        }
        Command::Bench(args) => {
            let rows = cmd_bench(&args)?;
            println!("{:<8} {:>5} {:>4} {:>10} {:>12} {:>8}", "algo", "batch", "beam", "wall_s", "frames/s", "rtfx");
            for r in &rows {
                let rtfx = r.report.rtfx.map(|x| format!("{x:.1}")).unwrap_or_else(|| "-".into());
                println!(
                    "{:<8} {:>5} {:>4} {:>10.4} {:>12.1} {:>8}",
                    r.algo.name(),
                    r.batch,
                    r.beam,
                    r.report.wall_seconds,
                    r.report.frames_per_second,
                    rtfx
                );
            }
        }
        Command::GenFixtures(args) => {
            let files = cmd_gen_fixtures(&args)?;
            println!("wrote {} files under {}", files.len(), args.out.display());
        }
    }
    Ok(())
}

/// Worker threads from [`THREADS_ENV`], defaulting to one.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
    }
}

fn usage(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Usage(m),
        other => other,
    }
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Serialized form used in manifests and bench output.
pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}
