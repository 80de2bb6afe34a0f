//! Beam search and greedy decoding.

use std::cmp::Ordering;

use crate::corpus::{TokenId, Vocabulary, BOS, EOS};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::Vector;

/// Decoding step limit as a function of source length: `factor * n + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxLen {
    pub factor: usize,
    pub offset: usize,
}

impl Default for MaxLen {
    fn default() -> Self {
        Self { factor: 2, offset: 10 }
    }
}

impl MaxLen {
    pub fn steps(&self, source_len: usize) -> usize {
        self.factor * source_len + self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted target ids, EOS excluded.
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub finished: bool,
    pub state: Vector,
}

impl Hypothesis {
    /// Decoding steps taken, counting the EOS step.
    pub fn steps(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }

    /// Ranking score: cumulative log-probability, divided by the step count
    /// when `normalize` is set.
    pub fn score(&self, normalize: bool) -> f64 {
        if normalize {
            self.log_prob / self.steps().max(1) as f64
        } else {
            self.log_prob
        }
    }

    fn last(&self) -> TokenId {
        self.tokens.last().copied().unwrap_or(BOS)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Beam {
    /// Sorted by descending cumulative log-probability.
    pub active: Vec<Hypothesis>,
    pub finished: Vec<Hypothesis>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub beam_width: usize,
    pub max_len: MaxLen,
    pub length_normalize: bool,
}

impl SearchOptions {
    pub fn new(beam_width: usize) -> Self {
        Self {
            beam_width,
            max_len: MaxLen::default(),
            length_normalize: true,
        }
    }
}

/// Beam search with the default step limit and length-normalized ranking.
pub fn beam_search(model: &ModelParams, source: &[TokenId], beam_width: usize, max_len: usize) -> Result<Vec<Hypothesis>> {
    let opts = SearchOptions::new(beam_width);
    search_steps(model, source, &opts, max_len)
}

pub fn beam_search_with(model: &ModelParams, source: &[TokenId], opts: &SearchOptions) -> Result<Vec<Hypothesis>> {
    search_steps(model, source, opts, opts.max_len.steps(source.len()))
}

fn by_score_then_id(a: &(f64, TokenId, usize), b: &(f64, TokenId, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}

fn search_steps(model: &ModelParams, source: &[TokenId], opts: &SearchOptions, max_len: usize) -> Result<Vec<Hypothesis>> {
    if opts.beam_width == 0 {
        return Err(Error::Precondition("beam width must be at least 1".into()));
    }
    let src = model.start(source)?;
    let mut beam = Beam {
        active: vec![Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
            state: src.s0.clone(),
        }],
        finished: Vec::new(),
    };

    for _ in 0..max_len {
        let budget = opts.beam_width - beam.finished.len();
        if budget == 0 || beam.active.is_empty() {
            break;
        }
        let mut expansions = Vec::with_capacity(beam.active.len());
        let mut candidates: Vec<(f64, TokenId, usize)> = Vec::new();
        for (h, hyp) in beam.active.iter().enumerate() {
            let step = model.step(&src, &hyp.state, hyp.last());
            for (v, lp) in step.readout.log_probs.iter().enumerate() {
                candidates.push((hyp.log_prob + lp, v, h));
            }
            expansions.push(step);
        }
        candidates.sort_by(by_score_then_id);
        candidates.truncate(budget);

        let mut next = Vec::with_capacity(candidates.len());
        for (score, v, h) in candidates {
            let parent = &beam.active[h];
            let mut hyp = Hypothesis {
                tokens: parent.tokens.clone(),
                log_prob: score,
                finished: v == EOS,
                state: expansions[h].state().to_vec(),
            };
            if hyp.finished {
                beam.finished.push(hyp);
            } else {
                hyp.tokens.push(v);
                next.push(hyp);
            }
        }
        beam.active = next;
    }

    let mut pool = beam.finished;
    pool.extend(beam.active);
    pool.sort_by(|a, b| b.score(opts.length_normalize).total_cmp(&a.score(opts.length_normalize)));
    pool.truncate(opts.beam_width);
    Ok(pool)
}

/// Argmax decoding; ties go to the lower token id.
pub fn greedy_decode(model: &ModelParams, source: &[TokenId], max_len: usize) -> Result<Vec<TokenId>> {
    let src = model.start(source)?;
    let mut state = src.s0.clone();
    let mut out = Vec::new();
    let mut y_prev = BOS;
    for _ in 0..max_len {
        let step = model.step(&src, &state, y_prev);
        let mut best = 0;
        for (v, lp) in step.readout.log_probs.iter().enumerate() {
            if *lp > step.readout.log_probs[best] {
                best = v;
            }
        }
        if best == EOS {
            break;
        }
        out.push(best);
        state = step.state().to_vec();
        y_prev = best;
    }
    Ok(out)
}

/// Best hypothesis ids for one source sentence (empty if nothing survives).
pub fn translate_ids(model: &ModelParams, source: &[TokenId], opts: &SearchOptions) -> Result<Vec<TokenId>> {
    if opts.beam_width == 1 {
        return greedy_decode(model, source, opts.max_len.steps(source.len()));
    }
    Ok(beam_search_with(model, source, opts)?
        .into_iter()
        .next()
        .map(|h| h.tokens)
        .unwrap_or_default())
}

/// Translates every source sentence, one output line each, using up to
/// `threads` workers over contiguous chunks.
pub fn translate_corpus(
    model: &ModelParams,
    sources: &[Vec<TokenId>],
    tgt_vocab: &Vocabulary,
    opts: &SearchOptions,
    threads: usize,
) -> Result<Vec<String>> {
    let run = |chunk: &[Vec<TokenId>]| -> Result<Vec<String>> {
        chunk
            .iter()
            .map(|s| Ok(tgt_vocab.decode(&translate_ids(model, s, opts)?).join(" ")))
            .collect()
    };
    let threads = threads.clamp(1, sources.len().max(1));
    if threads == 1 {
        return run(sources);
    }
    let size = sources.len().div_ceil(threads);
    let parts: Vec<Result<Vec<String>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sources.chunks(size).map(|c| scope.spawn(move || run(c))).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(sources.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
