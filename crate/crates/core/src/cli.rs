//! Command-line front end. `run` takes the full argument vector and returns
//! the process exit code: 0 on success, 1 on usage errors, 2 on runtime
//! errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::context::{ContextMode, Mechanism, OutputMode};
use crate::corpus::{
    build_vocab, concat_pairs, gen_synthetic, vocab_from_lines, Corpus, SentencePair, SyntheticTaskSpec, TaskKind,
    Vocabulary, DEFAULT_BOUNDARIES,
};
use crate::error::{Error, Result};
use crate::eval::{bleu4, bucketed_report, final_token_accuracy, paired_bootstrap, token_accuracy};
use crate::model::{loss_and_grad_check, Dims};
use crate::search::{translate_corpus, MaxLen, SearchOptions};
use crate::training::{train_logged, Checkpoint, Profile, TrainConfig};
use crate::viz::{collect_heatmaps, correlation, export_heatmap, ExportFormat};

#[derive(Debug, Parser)]
#[command(name = "rnmt", version, about = "Recurrent-contexter NMT lab", args_override_self = true)]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for batch gradients and decoding.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Dimension and batch defaults: desk or paper.
    #[arg(long, global = true, default_value = "desk")]
    pub profile: String,
    /// Flat key=value file; each key is a long flag name. Command-line
    /// flags win over file values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a frequency-ranked vocabulary from a token file.
    BuildVocab(BuildVocabArgs),
    /// Generate a synthetic parallel corpus.
    Synth(SynthArgs),
    /// Join consecutive sentence pairs into long pairs.
    Concat(ConcatArgs),
    /// Train a model and write the best-BLEU checkpoint.
    Train(TrainArgs),
    /// Beam-search translate a source file.
    Translate(TranslateArgs),
    /// Corpus BLEU and token accuracy.
    Score(ScoreArgs),
    /// Scores split by source length.
    BucketScore(BucketScoreArgs),
    /// Paired bootstrap significance of system A over system B.
    Signif(SignifArgs),
    /// Finite-difference check of the full model's gradients.
    Gradcheck(GradcheckArgs),
    /// Export contexter gate heatmaps for one sentence pair.
    Viz(VizArgs),
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of corpus tokens to keep, not counting the four reserved
    /// entries (default 1000, or 30000 with the paper profile).
    #[arg(long)]
    pub max_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// copy, reverse, sort-digits or long-agreement.
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub alphabet: usize,
    #[arg(long, default_value_t = 2)]
    pub min_len: usize,
    #[arg(long, default_value_t = 10)]
    pub max_len: usize,
    /// Output directory; receives PREFIX.src, PREFIX.tgt, vocab.src, vocab.tgt.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "data")]
    pub prefix: String,
}

#[derive(Debug, Args)]
pub struct ConcatArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long)]
    pub out_src: PathBuf,
    #[arg(long)]
    pub out_tgt: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train_src: PathBuf,
    #[arg(long)]
    pub train_tgt: PathBuf,
    #[arg(long)]
    pub dev_src: PathBuf,
    #[arg(long)]
    pub dev_tgt: PathBuf,
    /// Vocabulary files; built from the training data when absent.
    #[arg(long)]
    pub src_vocab: Option<PathBuf>,
    #[arg(long)]
    pub tgt_vocab: Option<PathBuf>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// attention or contexter.
    #[arg(long, default_value = "contexter")]
    pub mechanism: String,
    /// mean-pooling or last-state (contexter only).
    #[arg(long, default_value = "last-state")]
    pub output_mode: String,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub d_w: Option<usize>,
    #[arg(long)]
    pub d_h: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub validate_every: Option<usize>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Beam width (default 5, or 10 with the paper profile).
    #[arg(long)]
    pub beam: Option<usize>,
    /// Rank final hypotheses by raw log-probability.
    #[arg(long)]
    pub no_length_norm: bool,
    #[arg(long, default_value_t = 2)]
    pub max_len_factor: usize,
    #[arg(long, default_value_t = 10)]
    pub max_len_offset: usize,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
}

#[derive(Debug, Args)]
pub struct BucketScoreArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Source file whose line lengths route each pair to a bucket.
    #[arg(long)]
    pub src: PathBuf,
    /// Comma-separated inclusive upper bounds, e.g. 10,20,30.
    #[arg(long, value_delimiter = ',')]
    pub boundaries: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct SignifArgs {
    #[arg(long)]
    pub hyp_a: PathBuf,
    #[arg(long)]
    pub hyp_b: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "contexter")]
    pub mechanism: String,
    #[arg(long, default_value = "last-state")]
    pub output_mode: String,
    #[arg(long, default_value_t = 8)]
    pub d_w: usize,
    #[arg(long, default_value_t = 12)]
    pub d_h: usize,
    #[arg(long, default_value_t = 20)]
    pub vocab: usize,
    #[arg(long, default_value_t = 5)]
    pub src_len: usize,
    #[arg(long, default_value_t = 5)]
    pub tgt_len: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Half-width of the uniform weight distribution.
    #[arg(long, default_value_t = crate::model::GRADCHECK_SCALE)]
    pub scale: f64,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    /// Zero-based line of the pair to visualize.
    #[arg(long, default_value_t = 0)]
    pub line: usize,
    /// csv or pgm.
    #[arg(long, default_value = "csv")]
    pub format: String,
    /// Output prefix; writes PREFIX.update.EXT and PREFIX.reset.EXT.
    #[arg(long)]
    pub out: PathBuf,
}

/// Inserts `--key value` pairs from the `--config` file right after the
/// subcommand so that later command-line flags override them.
fn expand_config(argv: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if a == "--config" {
            path = strs.get(i + 1).cloned();
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("{path}:{}: expected key=value", n + 1))?;
        let (k, v) = (k.trim().replace('_', "-"), v.trim());
        match v {
            "true" => extra.push(OsString::from(format!("--{k}"))),
            "false" => {}
            _ => {
                extra.push(OsString::from(format!("--{k}")));
                extra.push(OsString::from(v));
            }
        }
    }
    let subcommands = [
        "build-vocab",
        "synth",
        "concat",
        "train",
        "translate",
        "score",
        "bucket-score",
        "signif",
        "gradcheck",
        "viz",
    ];
    let Some(pos) = strs.iter().position(|a| subcommands.contains(&a.as_str())) else {
        return Ok(argv);
    };
    let mut out: Vec<OsString> = argv[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

/// Parses `argv` (program name first) and runs the chosen subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(m) => {
            eprintln!("error: {m}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let profile: Profile = match cli.profile.parse() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match dispatch(&cli, profile) {
        Ok(()) => 0,
        Err(e @ Error::Input(_)) if is_usage(&e) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn is_usage(e: &Error) -> bool {
    matches!(e, Error::Input(m) if m.starts_with("unknown "))
}

fn mode_from(mechanism: &str, output: &str) -> Result<ContextMode> {
    let mechanism: Mechanism = mechanism.parse()?;
    let output: OutputMode = output.parse()?;
    Ok(ContextMode { mechanism, output })
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?.lines().map(str::to_string).collect())
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for l in lines {
        writeln!(f, "{l}")?;
    }
    f.flush()?;
    Ok(())
}

fn dispatch(cli: &Cli, profile: Profile) -> Result<()> {
    match &cli.command {
        Command::BuildVocab(a) => {
            let max = a.max_size.unwrap_or(match profile {
                Profile::Desk => 1000,
                Profile::Paper => 30000,
            });
            let v = build_vocab(&a.input, max)?;
            v.save(&a.out)?;
            println!("vocab_size={}", v.len());
        }
        Command::Synth(a) => {
            let task: TaskKind = a.task.parse()?;
            let corpus = gen_synthetic(&SyntheticTaskSpec {
                task,
                alphabet: a.alphabet,
                min_len: a.min_len,
                max_len: a.max_len,
                samples: a.n,
                seed: cli.seed,
            })?;
            fs::create_dir_all(&a.out)?;
            corpus.write_files(
                a.out.join(format!("{}.src", a.prefix)),
                a.out.join(format!("{}.tgt", a.prefix)),
            )?;
            corpus.src_vocab.save(a.out.join("vocab.src"))?;
            corpus.tgt_vocab.save(a.out.join("vocab.tgt"))?;
            println!("pairs={}", corpus.len());
        }
        Command::Concat(a) => {
            let src = fs::read_to_string(&a.src)?;
            let tgt = fs::read_to_string(&a.tgt)?;
            let sv = vocab_from_lines(src.lines(), usize::MAX);
            let tv = vocab_from_lines(tgt.lines(), usize::MAX);
            let joined = concat_pairs(&Corpus::from_lines(&src, &tgt, sv, tv)?);
            joined.write_files(&a.out_src, &a.out_tgt)?;
            println!("pairs={}", joined.len());
        }
        Command::Train(a) => train_command(cli, profile, a)?,
        Command::Translate(a) => {
            let ck = Checkpoint::load(&a.checkpoint)?;
            let sources: Vec<Vec<usize>> = read_lines(&a.input)?
                .iter()
                .map(|l| {
                    let toks: Vec<&str> = l.split_whitespace().collect();
                    ck.src_vocab.encode(&toks)
                })
                .collect();
            if let Some(i) = sources.iter().position(|s| s.is_empty()) {
                return Err(Error::Input(format!("input line {} is empty", i + 1)));
            }
            let opts = SearchOptions {
                beam_width: a.beam.unwrap_or(match profile {
                    Profile::Desk => 5,
                    Profile::Paper => 10,
                }),
                max_len: MaxLen {
                    factor: a.max_len_factor,
                    offset: a.max_len_offset,
                },
                length_normalize: !a.no_length_norm,
            };
            let out = translate_corpus(&ck.params, &sources, &ck.tgt_vocab, &opts, cli.threads)?;
            write_lines(&a.out, &out)?;
        }
        Command::Score(a) => {
            let (h, r) = (read_lines(&a.hyp)?, read_lines(&a.reference)?);
            print!("{}", bleu4(&h, &r)?.key_values(""));
            println!("token_accuracy={:.6}", token_accuracy(&h, &r)?);
            println!("final_token_accuracy={:.6}", final_token_accuracy(&h, &r)?);
        }
        Command::BucketScore(a) => {
            let (h, r) = (read_lines(&a.hyp)?, read_lines(&a.reference)?);
            let lens: Vec<usize> = read_lines(&a.src)?.iter().map(|l| l.split_whitespace().count()).collect();
            let b = a.boundaries.clone().unwrap_or_else(|| DEFAULT_BOUNDARIES.to_vec());
            print!("{}", bucketed_report(&lens, &h, &r, &b)?.key_values(""));
        }
        Command::Signif(a) => {
            let ha = read_lines(&a.hyp_a)?;
            let hb = read_lines(&a.hyp_b)?;
            let r = read_lines(&a.reference)?;
            print!("{}", paired_bootstrap(&ha, &hb, &r, a.resamples, cli.seed)?.key_values());
        }
        Command::Gradcheck(a) => {
            let mode = mode_from(&a.mechanism, &a.output_mode)?;
            let dims = Dims::square(a.d_w, a.d_h, a.vocab, a.vocab);
            // Ids 0..4 are reserved, so draw words from the rest of the vocabulary.
            if a.vocab <= 4 || a.src_len == 0 {
                return Err(Error::Precondition("gradcheck needs vocab > 4 and src-len >= 1".into()));
            }
            let word = |i: usize| 4 + (i * 7 + 3) % (a.vocab - 4);
            let pair = SentencePair::new((0..a.src_len).map(word).collect(), (0..a.tgt_len).map(|i| word(i + 11)).collect());
            let report = loss_and_grad_check(dims, mode, a.scale, cli.seed, &pair, a.epsilon, a.tolerance)?;
            println!("{report}");
            println!("max_rel_err={:e}", report.max_rel_err());
            println!("max_abs_err={:e}", report.max_abs_err());
            if !report.passed {
                return Err(Error::Numeric("gradient check failed".into()));
            }
        }
        Command::Viz(a) => {
            let ck = Checkpoint::load(&a.checkpoint)?;
            let format: ExportFormat = a.format.parse()?;
            let src = read_lines(&a.src)?;
            let tgt = read_lines(&a.tgt)?;
            let (s, t) = src
                .get(a.line)
                .zip(tgt.get(a.line))
                .ok_or_else(|| Error::Input(format!("line {} is past the end of the input", a.line)))?;
            let st: Vec<&str> = s.split_whitespace().collect();
            let tt: Vec<&str> = t.split_whitespace().collect();
            let pair = SentencePair::new(ck.src_vocab.encode(&st), ck.tgt_vocab.encode(&tt));
            let (mut update, mut reset) = collect_heatmaps(&ck.params, &pair)?;
            update.relabel(&pair, &ck.src_vocab, &ck.tgt_vocab);
            reset.relabel(&pair, &ck.src_vocab, &ck.tgt_vocab);
            let ext = match format {
                ExportFormat::Csv => "csv",
                ExportFormat::Pgm => "pgm",
            };
            let prefix = a.out.to_string_lossy();
            export_heatmap(&update, format!("{prefix}.update.{ext}"), format)?;
            export_heatmap(&reset, format!("{prefix}.reset.{ext}"), format)?;
            println!("rows={}\ncols={}", update.rows(), update.cols());
            println!("update_monotone_fraction={:.6}", update.monotone_fraction());
            match correlation(&update, &reset)? {
                Some(c) => println!("reset_update_correlation={c:.6}"),
                None => println!("reset_update_correlation=undefined"),
            }
        }
    }
    Ok(())
}

fn load_vocab(path: &Option<PathBuf>, lines: &[String], max: usize) -> Result<Vocabulary> {
    match path {
        Some(p) => Vocabulary::load(p),
        None => Ok(vocab_from_lines(lines.iter().map(String::as_str), max)),
    }
}

fn train_command(cli: &Cli, profile: Profile, a: &TrainArgs) -> Result<()> {
    let mode = mode_from(&a.mechanism, &a.output_mode)?;
    let base = TrainConfig::profile(profile);
    let config = TrainConfig {
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        max_len: a.max_len.unwrap_or(base.max_len),
        epochs: a.epochs.unwrap_or(base.epochs),
        seed: cli.seed,
        rho: a.rho.unwrap_or(base.rho),
        epsilon: a.epsilon.unwrap_or(base.epsilon),
        clip_norm: a.clip.unwrap_or(base.clip_norm),
        validate_every: a.validate_every.unwrap_or(base.validate_every),
        d_w: a.d_w.unwrap_or(base.d_w),
        d_h: a.d_h.unwrap_or(base.d_h),
        threads: cli.threads,
    };
    let max_vocab = a.vocab_size.unwrap_or(match profile {
        Profile::Desk => 1000,
        Profile::Paper => 30000,
    });
    let train_src = fs::read_to_string(&a.train_src)?;
    let train_tgt = fs::read_to_string(&a.train_tgt)?;
    let src_lines: Vec<String> = train_src.lines().map(str::to_string).collect();
    let tgt_lines: Vec<String> = train_tgt.lines().map(str::to_string).collect();
    let sv = load_vocab(&a.src_vocab, &src_lines, max_vocab)?;
    let tv = load_vocab(&a.tgt_vocab, &tgt_lines, max_vocab)?;
    let corpus = Corpus::from_lines(&train_src, &train_tgt, sv.clone(), tv.clone())?;
    let dev = Corpus::from_lines(
        &fs::read_to_string(&a.dev_src)?,
        &fs::read_to_string(&a.dev_tgt)?,
        sv,
        tv,
    )?;
    let (ck, log) = train_logged(&config, &corpus, &dev, mode)?;
    for e in &log {
        match e.dev_bleu {
            Some(b) => println!("epoch={} updates={} loss={:.6} dev_bleu={:.4}", e.epoch, e.updates, e.mean_loss, b),
            None => println!("epoch={} updates={} loss={:.6}", e.epoch, e.updates, e.mean_loss),
        }
    }
    ck.save(&a.out)?;
    println!("best_bleu={:.4}", ck.best_bleu.unwrap_or(0.0));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(run(["rnmt", "frobnicate"]), 1);
        assert_eq!(run(["rnmt"]), 1);
        assert_eq!(run(["rnmt", "score", "--bogus"]), 1);
    }

    #[test]
    fn help_succeeds() {
        assert_eq!(run(["rnmt", "--help"]), 0);
        assert_eq!(run(["rnmt", "train", "--help"]), 0);
    }

    #[test]
    fn missing_file_is_runtime_error() {
        assert_eq!(run(["rnmt", "score", "--hyp", "/nonexistent/h", "--ref", "/nonexistent/r"]), 2);
    }

    #[test]
    fn bad_profile_is_usage_error() {
        assert_eq!(run(["rnmt", "--profile", "huge", "score", "--hyp", "a", "--ref", "b"]), 1);
    }

    #[test]
    fn help_lists_every_flag() {
        use clap::CommandFactory;
        let mut cmd = Cli::command();
        for sub in cmd.get_subcommands_mut() {
            let help = sub.render_long_help().to_string();
            for arg in sub.get_arguments() {
                if let Some(long) = arg.get_long() {
                    assert!(help.contains(&format!("--{long}")), "{} help misses --{long}", sub.get_name());
                }
            }
        }
    }

    #[test]
    fn config_values_are_overridden_by_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.conf");
        fs::write(&cfg, "# comment\nd_h=6\nseed=3\nepsilon=1e-6\n").unwrap();
        let argv: Vec<OsString> = ["rnmt", "--config", cfg.to_str().unwrap(), "gradcheck", "--d-h", "7"]
            .iter()
            .map(OsString::from)
            .collect();
        let expanded = expand_config(argv).unwrap();
        let cli = Cli::try_parse_from(&expanded).unwrap();
        assert_eq!(cli.seed, 3);
        let Command::Gradcheck(g) = &cli.command else { panic!() };
        assert_eq!((g.d_h, g.epsilon), (7, 1e-6));
    }
}
