//! Corpus BLEU-4, token accuracy, paired bootstrap and length-bucket reports.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{bucket_label, bucket_of, check_boundaries};
use crate::error::{Error, Result};

const MAX_N: usize = 4;

fn check_lines<A, B>(hyps: &[A], refs: &[B]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(Error::Input(format!(
            "{} hypothesis lines but {} reference lines",
            hyps.len(),
            refs.len()
        )));
    }
    Ok(())
}

fn fold_tokens(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_lowercase).collect()
}

/// Sufficient statistics of one sentence (or a sum of sentences).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_N],
    pub totals: [usize; MAX_N],
    /// Reference n-gram counts, used only to decide the empty-order case.
    pub ref_totals: [usize; MAX_N],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn sentence(hyp: &str, reference: &str) -> Self {
        let h = fold_tokens(hyp);
        let r = fold_tokens(reference);
        let mut s = Self {
            hyp_len: h.len(),
            ref_len: r.len(),
            ..Self::default()
        };
        for n in 1..=MAX_N {
            let mut ref_counts: HashMap<&[String], usize> = HashMap::new();
            for g in r.windows(n) {
                *ref_counts.entry(g).or_default() += 1;
            }
            let mut hyp_counts: HashMap<&[String], usize> = HashMap::new();
            for g in h.windows(n) {
                *hyp_counts.entry(g).or_default() += 1;
            }
            s.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
            s.totals[n - 1] = h.len().saturating_sub(n - 1);
            s.ref_totals[n - 1] = r.len().saturating_sub(n - 1);
        }
        s
    }

    pub fn add(&mut self, o: &BleuStats) {
        for n in 0..MAX_N {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
            self.ref_totals[n] += o.ref_totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }

    pub fn report(&self) -> BleuReport {
        let mut precisions = [0.0; MAX_N];
        for n in 0..MAX_N {
            precisions[n] = if self.totals[n] > 0 {
                self.matches[n] as f64 / self.totals[n] as f64
            } else if self.ref_totals[n] == 0 {
                // Neither side has n-grams of this order: nothing to miss.
                1.0
            } else {
                0.0
            };
        }
        let (h, r) = (self.hyp_len as f64, self.ref_len as f64);
        let brevity_penalty = if self.hyp_len == 0 {
            if self.ref_len == 0 {
                1.0
            } else {
                0.0
            }
        } else if h < r {
            (1.0 - r / h).exp()
        } else {
            1.0
        };
        let bleu = if precisions.iter().any(|&p| p == 0.0) {
            0.0
        } else {
            let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_N as f64;
            100.0 * brevity_penalty * log_mean.exp()
        };
        BleuReport {
            bleu,
            precisions,
            brevity_penalty,
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// Corpus BLEU in [0, 100].
    pub bleu: f64,
    pub precisions: [f64; MAX_N],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuReport {
    /// Flat `key=value` lines, each key prefixed by `prefix`.
    pub fn key_values(&self, prefix: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{prefix}bleu={:.4}", self.bleu);
        for (n, p) in self.precisions.iter().enumerate() {
            let _ = writeln!(s, "{prefix}p{}={:.6}", n + 1, p);
        }
        let _ = writeln!(s, "{prefix}bp={:.6}", self.brevity_penalty);
        let _ = writeln!(s, "{prefix}hyp_len={}", self.hyp_len);
        let _ = writeln!(s, "{prefix}ref_len={}", self.ref_len);
        s
    }
}

fn sentence_stats<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Vec<BleuStats> {
    hyps.iter()
        .zip(refs)
        .map(|(h, r)| BleuStats::sentence(h.as_ref(), r.as_ref()))
        .collect()
}

/// Case-insensitive corpus BLEU-4 against a single reference per line.
pub fn bleu4<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<BleuReport> {
    check_lines(hyps, refs)?;
    let mut total = BleuStats::default();
    for s in sentence_stats(hyps, refs) {
        total.add(&s);
    }
    Ok(total.report())
}

/// Position-wise exact token matches over `max(len_h, len_r)` per line,
/// pooled over the corpus.
pub fn token_accuracy<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<f64> {
    check_lines(hyps, refs)?;
    let (mut hits, mut total) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.as_ref().split_whitespace().collect();
        let r: Vec<&str> = r.as_ref().split_whitespace().collect();
        hits += h.iter().zip(&r).filter(|(a, b)| a == b).count();
        total += h.len().max(r.len());
    }
    Ok(if total == 0 { 1.0 } else { hits as f64 / total as f64 })
}

/// Fraction of lines whose last token matches the reference's last token.
pub fn final_token_accuracy<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<f64> {
    check_lines(hyps, refs)?;
    if hyps.is_empty() {
        return Ok(1.0);
    }
    let hits = hyps
        .iter()
        .zip(refs)
        .filter(|(h, r)| h.as_ref().split_whitespace().last() == r.as_ref().split_whitespace().last())
        .count();
    Ok(hits as f64 / hyps.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceReport {
    pub bleu_a: f64,
    pub bleu_b: f64,
    pub resamples: usize,
    pub wins_a: usize,
    pub ties: usize,
    /// `(wins_a + ties / 2) / resamples`.
    pub win_fraction: f64,
    pub p_value: f64,
}

impl SignificanceReport {
    pub fn key_values(&self) -> String {
        format!(
            "bleu_a={:.4}\nbleu_b={:.4}\nresamples={}\nwins_a={}\nties={}\nwin_fraction={:.6}\np_value={:.6}\n",
            self.bleu_a, self.bleu_b, self.resamples, self.wins_a, self.ties, self.win_fraction, self.p_value
        )
    }
}

/// Paired bootstrap resampling of sentence indices. Resample `k` draws from
/// its own ChaCha stream `k` under `seed`, so results do not depend on the
/// order resamples are evaluated in.
pub fn paired_bootstrap<A: AsRef<str>, B: AsRef<str>, R: AsRef<str>>(
    hyp_a: &[A],
    hyp_b: &[B],
    refs: &[R],
    resamples: usize,
    seed: u64,
) -> Result<SignificanceReport> {
    check_lines(hyp_a, refs)?;
    check_lines(hyp_b, refs)?;
    if resamples == 0 {
        return Err(Error::Precondition("resample count must be at least 1".into()));
    }
    let sa = sentence_stats(hyp_a, refs);
    let sb = sentence_stats(hyp_b, refs);
    let corpus = |s: &[BleuStats]| {
        let mut t = BleuStats::default();
        s.iter().for_each(|x| t.add(x));
        t.report().bleu
    };
    let n = refs.len();
    let (mut wins, mut ties) = (0, 0);
    for k in 0..resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let (mut ta, mut tb) = (BleuStats::default(), BleuStats::default());
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            ta.add(&sa[i]);
            tb.add(&sb[i]);
        }
        let (a, b) = (ta.report().bleu, tb.report().bleu);
        if a > b {
            wins += 1;
        } else if a == b {
            ties += 1;
        }
    }
    let win_fraction = (wins as f64 + 0.5 * ties as f64) / resamples as f64;
    Ok(SignificanceReport {
        bleu_a: corpus(&sa),
        bleu_b: corpus(&sb),
        resamples,
        wins_a: wins,
        ties,
        win_fraction,
        p_value: 1.0 - win_fraction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketScore {
    pub label: String,
    pub size: usize,
    /// Absent when the bucket is empty.
    pub report: Option<BleuReport>,
    pub token_accuracy: Option<f64>,
    pub final_token_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketReport {
    pub boundaries: Vec<usize>,
    pub buckets: Vec<BucketScore>,
}

impl BucketReport {
    pub fn key_values(&self, prefix: &str) -> String {
        let mut s = String::new();
        for b in &self.buckets {
            let p = format!("{prefix}bucket[{}].", b.label);
            let _ = writeln!(s, "{p}size={}", b.size);
            match &b.report {
                None => {
                    let _ = writeln!(s, "{p}bleu=absent");
                }
                Some(r) => {
                    s.push_str(&r.key_values(&p));
                    let _ = writeln!(s, "{p}token_accuracy={:.6}", b.token_accuracy.unwrap_or(0.0));
                    let _ = writeln!(s, "{p}final_token_accuracy={:.6}", b.final_token_accuracy.unwrap_or(0.0));
                }
            }
        }
        s
    }
}

/// Scores each source-length bucket independently; empty buckets have no report.
pub fn bucketed_report<H: AsRef<str>, R: AsRef<str>>(
    source_lens: &[usize],
    hyps: &[H],
    refs: &[R],
    boundaries: &[usize],
) -> Result<BucketReport> {
    check_boundaries(boundaries)?;
    check_lines(hyps, refs)?;
    check_lines(source_lens, refs)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); boundaries.len() + 1];
    for (i, &len) in source_lens.iter().enumerate() {
        members[bucket_of(boundaries, len)].push(i);
    }
    let mut buckets = Vec::with_capacity(members.len());
    for (b, idx) in members.iter().enumerate() {
        let h: Vec<&str> = idx.iter().map(|&i| hyps[i].as_ref()).collect();
        let r: Vec<&str> = idx.iter().map(|&i| refs[i].as_ref()).collect();
        let present = !idx.is_empty();
        buckets.push(BucketScore {
            label: bucket_label(boundaries, b),
            size: idx.len(),
            report: present.then(|| bleu4(&h, &r)).transpose()?,
            token_accuracy: present.then(|| token_accuracy(&h, &r)).transpose()?,
            final_token_accuracy: present.then(|| final_token_accuracy(&h, &r)).transpose()?,
        });
    }
    Ok(BucketReport {
        boundaries: boundaries.to_vec(),
        buckets,
    })
}
