//! Adadelta training with best-BLEU model selection, and the checkpoint
//! file format.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::context::{ContextMode, Mechanism, OutputMode};
use crate::corpus::{filter_max_len, Corpus, SentencePair, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::bleu4;
use crate::model::{backward_threaded, Dims, ModelParams};
use crate::numerics::{Matrix, ParamSet};
use crate::search::{translate_corpus, SearchOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Input(format!("unknown profile {other:?} (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_len: usize,
    pub epochs: usize,
    pub seed: u64,
    pub rho: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
    /// Validate on the dev set every this many epochs (the last epoch is
    /// always validated).
    pub validate_every: usize,
    pub d_w: usize,
    pub d_h: usize,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::profile(Profile::Desk)
    }
}

impl TrainConfig {
    pub fn profile(profile: Profile) -> Self {
        let (d_w, d_h) = match profile {
            Profile::Desk => (32, 64),
            Profile::Paper => (620, 1000),
        };
        Self {
            batch_size: 80,
            max_len: 50,
            epochs: 10,
            seed: 0,
            rho: 0.95,
            epsilon: 1e-6,
            clip_norm: 1.0,
            validate_every: 1,
            d_w,
            d_h,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("max_len", self.max_len),
            ("epochs", self.epochs),
            ("validate_every", self.validate_every),
            ("d_w", self.d_w),
            ("d_h", self.d_h),
            ("threads", self.threads),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Precondition(format!("{name} must be positive")));
            }
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Precondition(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.epsilon > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Precondition("epsilon and clip norm must be positive".into()));
        }
        Ok(())
    }

    pub fn dims(&self, v_src: usize, v_tgt: usize) -> Dims {
        Dims::square(self.d_w, self.d_h, v_src, v_tgt)
    }
}

/// Running averages of squared gradients and squared updates, one matrix per
/// parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState {
    pub sq_grad: Vec<Matrix>,
    pub sq_update: Vec<Matrix>,
}

impl AdadeltaState {
    pub fn new<P: ParamSet>(params: &P) -> Self {
        let zeros: Vec<Matrix> = params
            .tensors()
            .iter()
            .map(|(_, t)| Matrix::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            sq_grad: zeros.clone(),
            sq_update: zeros,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adadelta {
    pub rho: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
}

impl Adadelta {
    pub fn from_config(c: &TrainConfig) -> Self {
        Self {
            rho: c.rho,
            epsilon: c.epsilon,
            clip_norm: c.clip_norm,
        }
    }
}

/// Clips `grads` to the global norm limit, then applies one Adadelta step.
/// Returns the gradient norm before clipping.
pub fn adadelta_update<P: ParamSet>(state: &mut AdadeltaState, params: &mut P, grads: &P, opt: &Adadelta) -> f64 {
    let norm = grads.global_norm();
    let scale = if norm > opt.clip_norm { opt.clip_norm / norm } else { 1.0 };
    let (rho, eps) = (opt.rho, opt.epsilon);
    let grads = grads.tensors();
    for (k, (_, p)) in params.tensors_mut().into_iter().enumerate() {
        let g = grads[k].1.data();
        let eg = state.sq_grad[k].data_mut();
        let ed = state.sq_update[k].data_mut();
        for (i, x) in p.data_mut().iter_mut().enumerate() {
            let gi = g[i] * scale;
            eg[i] = rho * eg[i] + (1.0 - rho) * gi * gi;
            let dx = -((ed[i] + eps).sqrt() / (eg[i] + eps).sqrt()) * gi;
            ed[i] = rho * ed[i] + (1.0 - rho) * dx * dx;
            *x += dx;
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub updates: usize,
    pub mean_loss: f64,
    pub dev_bleu: Option<f64>,
}

/// Epoch-by-epoch training state.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: ModelParams,
    pub optimizer: AdadeltaState,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pairs: Vec<SentencePair>,
    shuffle_rng: ChaCha8Rng,
    pub epoch: usize,
    pub updates: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, corpus: &Corpus, mode: ContextMode) -> Result<Self> {
        config.validate()?;
        let kept = filter_max_len(corpus, config.max_len);
        if kept.is_empty() {
            return Err(Error::Precondition(format!(
                "no training pairs within max length {} ({} before filtering)",
                config.max_len,
                corpus.len()
            )));
        }
        let dims = config.dims(corpus.src_vocab.len(), corpus.tgt_vocab.len());
        let model = ModelParams::init(dims, mode, config.seed);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(1);
        Ok(Self {
            optimizer: AdadeltaState::new(&model),
            model,
            config,
            src_vocab: corpus.src_vocab.clone(),
            tgt_vocab: corpus.tgt_vocab.clone(),
            pairs: kept.pairs,
            shuffle_rng,
            epoch: 0,
            updates: 0,
        })
    }

    /// Training pairs left after length filtering.
    pub fn pairs(&self) -> &[SentencePair] {
        &self.pairs
    }

    /// One Adadelta update on `batch`; returns the batch mean loss.
    pub fn step(&mut self, batch: &[SentencePair]) -> Result<f64> {
        let (grads, loss) = backward_threaded(&self.model, batch, self.config.threads).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("diverged at update {}: {m}", self.updates + 1)),
            other => other,
        })?;
        adadelta_update(&mut self.optimizer, &mut self.model, &grads, &Adadelta::from_config(&self.config));
        self.updates += 1;
        if !self.model.is_finite() {
            return Err(Error::Numeric(format!("parameters became non-finite at update {}", self.updates)));
        }
        Ok(loss)
    }

    /// Shuffles the training pairs and runs one pass of minibatch updates.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(self.config.batch_size) {
            let batch: Vec<SentencePair> = idx.iter().map(|&i| self.pairs[i].clone()).collect();
            total += self.step(&batch)?;
            batches += 1;
        }
        self.epoch += 1;
        let mean = total / batches as f64;
        info!("epoch {} updates {} mean loss {:.4}", self.epoch, self.updates, mean);
        Ok(mean)
    }

    /// Greedy-decoded lines for the sources of `dev`.
    pub fn decode(&self, dev: &Corpus) -> Result<Vec<String>> {
        let sources: Vec<Vec<usize>> = dev.pairs.iter().map(|p| p.source.clone()).collect();
        translate_corpus(&self.model, &sources, &self.tgt_vocab, &SearchOptions::new(1), self.config.threads)
    }

    /// Greedy-decode BLEU on `dev`.
    pub fn dev_bleu(&self, dev: &Corpus) -> Result<f64> {
        Ok(bleu4(&self.decode(dev)?, &dev.target_lines())?.bleu)
    }

    pub fn checkpoint(&self, best_bleu: Option<f64>) -> Checkpoint {
        Checkpoint::new(
            self.model.clone(),
            self.src_vocab.clone(),
            self.tgt_vocab.clone(),
            Some(self.optimizer.clone()),
            best_bleu,
        )
    }
}

/// Trains for `config.epochs` epochs and returns the checkpoint with the best
/// dev BLEU (the earliest one on ties).
pub fn train(config: &TrainConfig, corpus: &Corpus, dev: &Corpus, mode: ContextMode) -> Result<Checkpoint> {
    train_logged(config, corpus, dev, mode).map(|(c, _)| c)
}

pub fn train_logged(
    config: &TrainConfig,
    corpus: &Corpus,
    dev: &Corpus,
    mode: ContextMode,
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    if dev.is_empty() {
        return Err(Error::Precondition("empty dev corpus".into()));
    }
    let mut trainer = Trainer::new(config.clone(), corpus, mode)?;
    let mut best: Option<Checkpoint> = None;
    let mut log = Vec::new();
    for e in 1..=config.epochs {
        let mean_loss = trainer.run_epoch()?;
        let mut dev_bleu = None;
        if e % config.validate_every == 0 || e == config.epochs {
            let bleu = trainer.dev_bleu(dev)?;
            info!("epoch {e} dev BLEU {bleu:.2}");
            if best.as_ref().is_none_or(|b| bleu > b.best_bleu.unwrap_or(f64::NEG_INFINITY)) {
                best = Some(trainer.checkpoint(Some(bleu)));
            }
            dev_bleu = Some(bleu);
        }
        log.push(EpochLog {
            epoch: e,
            updates: trainer.updates,
            mean_loss,
            dev_bleu,
        });
    }
    Ok((best.expect("the last epoch is always validated"), log))
}

pub const MAGIC: &[u8] = b"RNMT1\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub params: ModelParams,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub optimizer: Option<AdadeltaState>,
    pub best_bleu: Option<f64>,
}

impl Checkpoint {
    /// Builds a checkpoint, rounding all tensors to the stored `f32` width so
    /// that save and load are exact inverses.
    pub fn new(
        mut params: ModelParams,
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
        mut optimizer: Option<AdadeltaState>,
        best_bleu: Option<f64>,
    ) -> Self {
        params.quantize_f32();
        if let Some(o) = optimizer.as_mut() {
            for t in o.sq_grad.iter_mut().chain(o.sq_update.iter_mut()) {
                t.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
            }
        }
        Self {
            format_version: FORMAT_VERSION,
            params,
            src_vocab,
            tgt_vocab,
            optimizer,
            best_bleu,
        }
    }

    pub fn mode(&self) -> ContextMode {
        self.params.mode
    }

    fn manifest(&self) -> Vec<(String, &Matrix)> {
        let mut m = self.params.tensors();
        if let Some(o) = &self.optimizer {
            let names: Vec<String> = m.iter().map(|(n, _)| n.clone()).collect();
            for (n, t) in names.iter().zip(&o.sq_grad) {
                m.push((format!("opt.sq_grad.{n}"), t));
            }
            for (n, t) in names.iter().zip(&o.sq_update) {
                m.push((format!("opt.sq_update.{n}"), t));
            }
        }
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = &self.params.dims;
        let mode = self.params.mode;
        let mut h = String::new();
        let _ = writeln!(h, "format_version={}", self.format_version);
        let _ = writeln!(h, "mechanism={}", mode.mechanism);
        let _ = writeln!(h, "output_mode={}", mode.output);
        let _ = writeln!(h, "d_w={}\nd_h={}\nd_a={}\nd_r={}", d.d_w, d.d_h, d.d_a, d.d_r);
        let _ = writeln!(h, "V_src={}\nV_tgt={}", d.v_src, d.v_tgt);
        let _ = writeln!(h, "optimizer={}", if self.optimizer.is_some() { "adadelta" } else { "none" });
        if let Some(b) = self.best_bleu {
            let _ = writeln!(h, "best_bleu={b:?}");
        }
        let manifest = self.manifest();
        for (name, t) in &manifest {
            let _ = writeln!(h, "tensor={name}:{}:{}", t.rows(), t.cols());
        }
        let src = self.src_vocab.entries();
        let tgt = self.tgt_vocab.entries();
        let _ = writeln!(h, "src_vocab_lines={}\ntgt_vocab_lines={}", src.len(), tgt.len());
        h.push('\n');
        for tok in src.iter().chain(tgt) {
            h.push_str(tok);
            h.push('\n');
        }
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(h.as_bytes());
        for (_, t) in manifest {
            for &x in t.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: String| Error::Format(m);
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| fmt("bad magic: expected \"RNMT1\\n\" at the start of the file".into()))?;
        let mut lines = LineReader { data: rest, pos: 0 };

        let mut kv: Vec<(String, String)> = Vec::new();
        loop {
            let line = lines.next_line()?;
            if line.is_empty() {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fmt(format!("malformed header line {line:?}")))?;
            kv.push((k.to_string(), v.to_string()));
        }
        let get = |k: &str| -> Result<&str> {
            kv.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| fmt(format!("missing header key {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| fmt(format!("header key {k} is not a count")))
        };
        let version: u32 = get("format_version")?
            .parse()
            .map_err(|_| fmt("unreadable format_version".into()))?;
        if version != FORMAT_VERSION {
            return Err(fmt(format!("unsupported format version {version} (expected {FORMAT_VERSION})")));
        }
        let mechanism: Mechanism = get("mechanism")?.parse().map_err(|e: Error| fmt(e.to_string()))?;
        let output: OutputMode = get("output_mode")?.parse().map_err(|e: Error| fmt(e.to_string()))?;
        let dims = Dims {
            d_w: num("d_w")?,
            d_h: num("d_h")?,
            d_a: num("d_a")?,
            d_r: num("d_r")?,
            v_src: num("V_src")?,
            v_tgt: num("V_tgt")?,
        };
        let with_opt = match get("optimizer")? {
            "adadelta" => true,
            "none" => false,
            other => return Err(fmt(format!("unknown optimizer {other:?}"))),
        };
        let best_bleu = match kv.iter().find(|(k, _)| k == "best_bleu") {
            Some((_, v)) => Some(v.parse().map_err(|_| fmt("unreadable best_bleu".into()))?),
            None => None,
        };
        let manifest: Vec<&str> = kv.iter().filter(|(k, _)| k == "tensor").map(|(_, v)| v.as_str()).collect();

        let n_src = num("src_vocab_lines")?;
        let n_tgt = num("tgt_vocab_lines")?;
        let mut src_tokens = Vec::with_capacity(n_src);
        for _ in 0..n_src {
            src_tokens.push(lines.next_line()?.to_string());
        }
        let mut tgt_tokens = Vec::with_capacity(n_tgt);
        for _ in 0..n_tgt {
            tgt_tokens.push(lines.next_line()?.to_string());
        }
        let src_vocab = Vocabulary::from_tokens(&src_tokens);
        let tgt_vocab = Vocabulary::from_tokens(&tgt_tokens);
        if src_vocab.entries().len() != n_src || tgt_vocab.entries().len() != n_tgt {
            return Err(fmt("vocabulary section has duplicate or reserved tokens".into()));
        }

        let mut params = ModelParams::zeros(dims, ContextMode { mechanism, output });
        let mut optimizer = with_opt.then(|| AdadeltaState::new(&params));
        let expected: Vec<String> = {
            let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
            let mut all = names.clone();
            if with_opt {
                all.extend(names.iter().map(|n| format!("opt.sq_grad.{n}")));
                all.extend(names.iter().map(|n| format!("opt.sq_update.{n}")));
            }
            all
        };
        if manifest.len() != expected.len() {
            return Err(fmt(format!(
                "manifest lists {} tensors, expected {}",
                manifest.len(),
                expected.len()
            )));
        }

        let mut data = &rest[lines.pos..];
        let mut targets: Vec<&mut Matrix> = params.tensors_mut().into_iter().map(|(_, t)| t).collect();
        if let Some(o) = optimizer.as_mut() {
            targets.extend(o.sq_grad.iter_mut());
            targets.extend(o.sq_update.iter_mut());
        }
        for ((entry, name), t) in manifest.iter().zip(&expected).zip(targets) {
            let want = format!("{name}:{}:{}", t.rows(), t.cols());
            if *entry != want {
                return Err(fmt(format!("manifest entry {entry:?} does not match expected {want:?}")));
            }
            let need = 4 * t.len();
            if data.len() < need {
                return Err(fmt(format!("truncated file while reading tensor {name}")));
            }
            for (x, chunk) in t.data_mut().iter_mut().zip(data[..need].chunks_exact(4)) {
                *x = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64;
            }
            data = &data[need..];
        }
        if !data.is_empty() {
            return Err(fmt(format!("{} unexpected trailing bytes", data.len())));
        }
        Ok(Self {
            format_version: version,
            params,
            src_vocab,
            tgt_vocab,
            optimizer,
            best_bleu,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let ckpt = Self::from_bytes(&bytes)?;
        if !ckpt.params.is_finite() {
            warn!("checkpoint contains non-finite parameters");
        }
        Ok(ckpt)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

struct LineReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> LineReader<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        let rest = &self.data[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("truncated file in the text section".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Format("text section is not UTF-8".into()))
    }
}
