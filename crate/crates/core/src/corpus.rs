//! Parallel corpora, vocabularies and the evaluation-set constructions
//! (length bucketing and neighbor concatenation).

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

/// Surface forms of the reserved ids, in id order.
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Default source-length group boundaries; the last group is unbounded.
pub const DEFAULT_BOUNDARIES: [usize; 5] = [10, 20, 30, 40, 50];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<String, TokenId>,
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::reserved_only()
    }
}

impl Vocabulary {
    pub fn reserved_only() -> Self {
        Self {
            ids: HashMap::new(),
            tokens: RESERVED.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Builds a vocabulary from tokens in id order (ids start at 4). Reserved
    /// surface forms and duplicates are skipped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self::reserved_only();
        for t in tokens {
            v.push(t.into());
        }
        v
    }

    fn push(&mut self, token: String) {
        if RESERVED.contains(&token.as_str()) || self.ids.contains_key(&token) {
            return;
        }
        self.ids.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of a non-reserved token, if present.
    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn entries(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        encode_sentence(self, tokens)
    }

    /// Renders ids back to tokens; unknown ids render as the UNK form.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }

    /// Reads a vocabulary file: one token per line, line k (0-based) is id k + 4.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(Self::from_tokens(text.lines().filter(|l| !l.is_empty())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for t in self.entries() {
            writeln!(f, "{t}")?;
        }
        Ok(())
    }
}

fn tokenize(line: &str) -> impl Iterator<Item = &str> {
    line.split(' ').filter(|t| !t.is_empty())
}

/// Counts token frequencies and keeps the `max_size` most frequent, ties
/// broken by first occurrence.
pub fn vocab_from_lines<'a, I>(lines: I, max_size: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut order = 0usize;
    for line in lines {
        for tok in tokenize(line) {
            if RESERVED.contains(&tok) {
                continue;
            }
            let e = counts.entry(tok).or_insert_with(|| {
                order += 1;
                (0, order)
            });
            e.0 += 1;
        }
    }
    let mut ranked: Vec<(&str, usize, usize)> =
        counts.into_iter().map(|(t, (c, first))| (t, c, first)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    Vocabulary::from_tokens(ranked.into_iter().take(max_size).map(|(t, _, _)| t))
}

pub fn build_vocab(token_file: impl AsRef<Path>, max_size: usize) -> Result<Vocabulary> {
    let path = token_file.as_ref();
    let text = fs::read_to_string(path)?;
    let vocab = vocab_from_lines(text.lines(), max_size);
    if vocab.entries().is_empty() {
        log::warn!("{} contains no tokens; vocabulary has reserved entries only", path.display());
    }
    Ok(vocab)
}

/// Maps tokens to ids, substituting UNK for anything out of vocabulary.
pub fn encode_sentence<S: AsRef<str>>(vocab: &Vocabulary, tokens: &[S]) -> Vec<TokenId> {
    tokens
        .iter()
        .map(|t| vocab.id(t.as_ref()).unwrap_or(UNK))
        .collect()
}

/// One training example. `target` always ends with EOS; neither side carries BOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

impl SentencePair {
    /// Builds a pair from a source and target token-id sequence, appending EOS.
    pub fn new(source: Vec<TokenId>, mut target_tokens: Vec<TokenId>) -> Self {
        target_tokens.push(EOS);
        Self {
            source,
            target: target_tokens,
        }
    }

    /// Target without the trailing EOS.
    pub fn target_tokens(&self) -> &[TokenId] {
        match self.target.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.target,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub pairs: Vec<SentencePair>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

impl Corpus {
    pub fn new(pairs: Vec<SentencePair>, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> Self {
        Self {
            pairs,
            src_vocab,
            tgt_vocab,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn with_pairs(&self, pairs: Vec<SentencePair>) -> Self {
        Self {
            pairs,
            src_vocab: self.src_vocab.clone(),
            tgt_vocab: self.tgt_vocab.clone(),
        }
    }

    /// Reads a line-aligned parallel corpus. Lines where either side is empty
    /// are skipped with a warning.
    pub fn from_files(
        src: impl AsRef<Path>,
        tgt: impl AsRef<Path>,
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
    ) -> Result<Self> {
        let src_text = fs::read_to_string(src.as_ref())?;
        let tgt_text = fs::read_to_string(tgt.as_ref())?;
        Self::from_lines(&src_text, &tgt_text, src_vocab, tgt_vocab)
    }

    pub fn from_lines(src_text: &str, tgt_text: &str, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> Result<Self> {
        let src_lines: Vec<&str> = src_text.lines().collect();
        let tgt_lines: Vec<&str> = tgt_text.lines().collect();
        if src_lines.len() != tgt_lines.len() {
            return Err(Error::Input(format!(
                "source has {} lines but target has {}",
                src_lines.len(),
                tgt_lines.len()
            )));
        }
        let mut pairs = Vec::with_capacity(src_lines.len());
        let mut skipped = 0;
        for (s, t) in src_lines.iter().zip(&tgt_lines) {
            let s: Vec<&str> = tokenize(s).collect();
            let t: Vec<&str> = tokenize(t).collect();
            if s.is_empty() || t.is_empty() {
                skipped += 1;
                continue;
            }
            pairs.push(SentencePair::new(src_vocab.encode(&s), tgt_vocab.encode(&t)));
        }
        if skipped > 0 {
            log::warn!("skipped {skipped} line pairs with an empty side");
        }
        Ok(Self::new(pairs, src_vocab, tgt_vocab))
    }

    /// Writes the corpus as two line-aligned token files.
    pub fn write_files(&self, src: impl AsRef<Path>, tgt: impl AsRef<Path>) -> Result<()> {
        let mut s = fs::File::create(src)?;
        let mut t = fs::File::create(tgt)?;
        for p in &self.pairs {
            writeln!(s, "{}", self.src_vocab.decode(&p.source).join(" "))?;
            writeln!(t, "{}", self.tgt_vocab.decode(p.target_tokens()).join(" "))?;
        }
        Ok(())
    }

    pub fn source_lines(&self) -> Vec<String> {
        self.pairs.iter().map(|p| self.src_vocab.decode(&p.source).join(" ")).collect()
    }

    pub fn target_lines(&self) -> Vec<String> {
        self.pairs
            .iter()
            .map(|p| self.tgt_vocab.decode(p.target_tokens()).join(" "))
            .collect()
    }

    pub fn mean_source_len(&self) -> f64 {
        mean(self.pairs.iter().map(|p| p.source.len()))
    }

    pub fn mean_target_len(&self) -> f64 {
        mean(self.pairs.iter().map(|p| p.target_tokens().len()))
    }

    /// Splits off the last `n` pairs as a held-out set.
    pub fn split_tail(mut self, n: usize) -> (Corpus, Corpus) {
        let at = self.pairs.len().saturating_sub(n);
        let tail = self.pairs.split_off(at);
        let held = self.with_pairs(tail);
        (self, held)
    }

    pub fn shuffled(&self, seed: u64) -> Corpus {
        let mut pairs = self.pairs.clone();
        pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        self.with_pairs(pairs)
    }
}

fn mean(it: impl Iterator<Item = usize>) -> f64 {
    let (sum, n) = it.fold((0usize, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Copy,
    Reverse,
    SortDigits,
    LongAgreement,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "reverse" => Ok(TaskKind::Reverse),
            "sort-digits" | "sort" => Ok(TaskKind::SortDigits),
            "long-agreement" => Ok(TaskKind::LongAgreement),
            other => Err(Error::Input(format!("unknown task '{other}'"))),
        }
    }
}

/// Number of distinct markers in the long-agreement task.
pub const AGREEMENT_MARKERS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticTaskSpec {
    pub task: TaskKind,
    pub alphabet: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub samples: usize,
    pub seed: u64,
}

/// Surface form of alphabet symbol `i`.
pub fn symbol(i: usize) -> String {
    const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    if i < LETTERS.len() {
        (LETTERS[i] as char).to_string()
    } else {
        format!("w{i}")
    }
}

/// Generates a synthetic parallel corpus.
///
/// For long-agreement the source is `M<k>` followed by `L` filler symbols
/// (`L` drawn from the length range) and the target is the same fillers
/// followed by `F<k>`, so the last target word depends on the first source
/// word across the whole sentence.
pub fn gen_synthetic(spec: &SyntheticTaskSpec) -> Result<Corpus> {
    if spec.alphabet < 2 {
        return Err(Error::Precondition("alphabet size must be at least 2".into()));
    }
    if spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(Error::Precondition(format!(
            "invalid length range {}..={}",
            spec.min_len, spec.max_len
        )));
    }
    let symbols: Vec<String> = (0..spec.alphabet).map(symbol).collect();
    let markers: Vec<String> = (0..AGREEMENT_MARKERS).map(|k| format!("M{k}")).collect();
    let finals: Vec<String> = (0..AGREEMENT_MARKERS).map(|k| format!("F{k}")).collect();

    let (src_vocab, tgt_vocab) = match spec.task {
        TaskKind::LongAgreement => (
            Vocabulary::from_tokens(markers.iter().chain(&symbols).cloned()),
            Vocabulary::from_tokens(symbols.iter().chain(&finals).cloned()),
        ),
        _ => (
            Vocabulary::from_tokens(symbols.iter().cloned()),
            Vocabulary::from_tokens(symbols.iter().cloned()),
        ),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pairs = Vec::with_capacity(spec.samples);
    for _ in 0..spec.samples {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let seq: Vec<usize> = (0..len).map(|_| rng.gen_range(0..spec.alphabet)).collect();
        let src_sym = |i: usize| src_vocab.id(&symbols[i]).expect("symbol in vocabulary");
        let tgt_sym = |i: usize| tgt_vocab.id(&symbols[i]).expect("symbol in vocabulary");
        let pair = match spec.task {
            TaskKind::Copy => SentencePair::new(
                seq.iter().map(|&i| src_sym(i)).collect(),
                seq.iter().map(|&i| tgt_sym(i)).collect(),
            ),
            TaskKind::Reverse => SentencePair::new(
                seq.iter().map(|&i| src_sym(i)).collect(),
                seq.iter().rev().map(|&i| tgt_sym(i)).collect(),
            ),
            TaskKind::SortDigits => {
                let mut sorted = seq.clone();
                sorted.sort_unstable();
                SentencePair::new(
                    seq.iter().map(|&i| src_sym(i)).collect(),
                    sorted.iter().map(|&i| tgt_sym(i)).collect(),
                )
            }
            TaskKind::LongAgreement => {
                let k = rng.gen_range(0..AGREEMENT_MARKERS);
                let mut source = vec![src_vocab.id(&markers[k]).expect("marker")];
                source.extend(seq.iter().map(|&i| src_sym(i)));
                let mut target: Vec<TokenId> = seq.iter().map(|&i| tgt_sym(i)).collect();
                target.push(tgt_vocab.id(&finals[k]).expect("final symbol"));
                SentencePair::new(source, target)
            }
        };
        pairs.push(pair);
    }
    Ok(Corpus::new(pairs, src_vocab, tgt_vocab))
}

/// Merges neighboring pairs (2k, 2k+1) into one longer pair; an odd trailing
/// pair is kept as is.
pub fn concat_pairs(dataset: &Corpus) -> Corpus {
    let pairs = dataset
        .pairs
        .chunks(2)
        .map(|chunk| match chunk {
            [a, b] => {
                let mut source = a.source.clone();
                source.extend_from_slice(&b.source);
                let mut target = a.target_tokens().to_vec();
                target.extend_from_slice(&b.target);
                SentencePair { source, target }
            }
            [a] => a.clone(),
            _ => unreachable!(),
        })
        .collect();
    dataset.with_pairs(pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthBuckets {
    pub boundaries: Vec<usize>,
    /// Indices into the bucketed dataset, one group per bucket.
    pub indices: Vec<Vec<usize>>,
    pub groups: Vec<Vec<SentencePair>>,
}

impl LengthBuckets {
    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Human-readable range label for bucket `b`, e.g. `11-20` or `>50`.
    pub fn label(&self, b: usize) -> String {
        bucket_label(&self.boundaries, b)
    }
}

pub fn bucket_label(boundaries: &[usize], b: usize) -> String {
    let lo = if b == 0 { 1 } else { boundaries[b - 1] + 1 };
    match boundaries.get(b) {
        Some(&hi) => format!("{lo}-{hi}"),
        None => format!(">{}", lo - 1),
    }
}

pub fn check_boundaries(boundaries: &[usize]) -> Result<()> {
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition(format!(
            "bucket boundaries must be strictly ascending: {boundaries:?}"
        )));
    }
    Ok(())
}

/// Index of the bucket a source of length `len` falls into.
pub fn bucket_of(boundaries: &[usize], len: usize) -> usize {
    boundaries
        .iter()
        .position(|&b| len <= b)
        .unwrap_or(boundaries.len())
}

pub fn bucket_by_length(dataset: &Corpus, boundaries: &[usize]) -> Result<LengthBuckets> {
    check_boundaries(boundaries)?;
    let mut indices = vec![Vec::new(); boundaries.len() + 1];
    for (i, p) in dataset.pairs.iter().enumerate() {
        indices[bucket_of(boundaries, p.source.len())].push(i);
    }
    let groups = indices
        .iter()
        .map(|ix| ix.iter().map(|&i| dataset.pairs[i].clone()).collect())
        .collect();
    Ok(LengthBuckets {
        boundaries: boundaries.to_vec(),
        indices,
        groups,
    })
}

/// Keeps pairs whose source and target (without EOS) are both at most `max_len` long.
pub fn filter_max_len(dataset: &Corpus, max_len: usize) -> Corpus {
    dataset.with_pairs(
        dataset
            .pairs
            .iter()
            .filter(|p| p.source.len() <= max_len && p.target_tokens().len() <= max_len)
            .cloned()
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn build_vocab_examples() {
        let f = write_tmp("a a b\n");
        let v = build_vocab(f.path(), 2).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id("b"), Some(5));
        assert_eq!(v.token(0), Some("<pad>"));
        assert_eq!(v.token(3), Some("<unk>"));

        let f = write_tmp("b a a\n");
        let v = build_vocab(f.path(), 1).unwrap();
        assert_eq!(v.entries(), &["a".to_string()]);

        let f = write_tmp("");
        let v = build_vocab(f.path(), 10).unwrap();
        assert_eq!(v.len(), 4);

        assert!(matches!(build_vocab("/definitely/not/here", 3), Err(Error::Io(_))));
    }

    #[test]
    fn vocab_ties_break_by_first_occurrence_and_skip_reserved() {
        let v = vocab_from_lines(["c b a", "a b c <unk> <s>", "d"], 10);
        // a, b, c all occur twice; c first.
        assert_eq!(v.entries(), &["c", "b", "a", "d"]);
        assert_eq!(v.id("<unk>"), None);
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = Vocabulary::from_tokens(["x", "y", "z"]);
        let f = tempfile::NamedTempFile::new().unwrap();
        v.save(f.path()).unwrap();
        assert_eq!(Vocabulary::load(f.path()).unwrap(), v);
        assert_eq!(Vocabulary::load(f.path()).unwrap().id("z"), Some(6));
    }

    #[test]
    fn encode_examples() {
        let v = Vocabulary::from_tokens(["a", "b"]);
        assert_eq!(v.encode(&["b", "a", "b"]), vec![5, 4, 5]);
        assert_eq!(v.encode(&["x", "y", "z"]), vec![UNK, UNK, UNK]);
        assert!(v.encode::<&str>(&[]).is_empty());
        // Reserved surface forms in text are not reserved ids.
        assert_eq!(v.encode(&["</s>"]), vec![UNK]);
    }

    fn spec(task: TaskKind, seed: u64) -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            task,
            alphabet: 6,
            min_len: 2,
            max_len: 7,
            samples: 50,
            seed,
        }
    }

    #[test]
    fn synthetic_tasks_follow_their_definitions() {
        let c = gen_synthetic(&spec(TaskKind::Copy, 1)).unwrap();
        let (src, tgt) = (c.source_lines(), c.target_lines());
        assert_eq!(src, tgt);

        let c = gen_synthetic(&spec(TaskKind::Reverse, 1)).unwrap();
        for (s, t) in c.source_lines().iter().zip(c.target_lines()) {
            let rev: Vec<&str> = s.split(' ').rev().collect();
            assert_eq!(rev.join(" "), t);
        }

        let c = gen_synthetic(&spec(TaskKind::SortDigits, 1)).unwrap();
        for (s, t) in c.source_lines().iter().zip(c.target_lines()) {
            let mut sorted: Vec<&str> = s.split(' ').collect();
            sorted.sort();
            assert_eq!(sorted.join(" "), t);
        }

        let c = gen_synthetic(&spec(TaskKind::LongAgreement, 1)).unwrap();
        for (s, t) in c.source_lines().iter().zip(c.target_lines()) {
            let s: Vec<&str> = s.split(' ').collect();
            let t: Vec<&str> = t.split(' ').collect();
            assert_eq!(&s[0][1..], &t[t.len() - 1][1..]);
            assert!(s[0].starts_with('M') && t[t.len() - 1].starts_with('F'));
            assert_eq!(&s[1..], &t[..t.len() - 1]);
            assert!(t.len() - 1 >= 2);
        }
    }

    #[test]
    fn copy_of_c_d_e() {
        let c = gen_synthetic(&spec(TaskKind::Copy, 7)).unwrap();
        let v = &c.src_vocab;
        let pair = c.pairs.iter().find(|p| p.source.len() >= 3).unwrap();
        assert_eq!(pair.target_tokens(), &pair.source[..]);
        let cde = v.encode(&["c", "d", "e"]);
        assert!(cde.iter().all(|&i| i != UNK));
    }

    #[test]
    fn synthetic_is_deterministic_and_validated() {
        assert_eq!(
            gen_synthetic(&spec(TaskKind::Copy, 3)).unwrap(),
            gen_synthetic(&spec(TaskKind::Copy, 3)).unwrap()
        );
        assert_ne!(
            gen_synthetic(&spec(TaskKind::Copy, 3)).unwrap(),
            gen_synthetic(&spec(TaskKind::Copy, 4)).unwrap()
        );
        let mut bad = spec(TaskKind::Copy, 0);
        bad.alphabet = 1;
        assert!(gen_synthetic(&bad).is_err());
        let mut bad = spec(TaskKind::Copy, 0);
        bad.min_len = 0;
        assert!(gen_synthetic(&bad).is_err());
    }

    fn corpus_of(pairs: &[(&[usize], &[usize])]) -> Corpus {
        Corpus::new(
            pairs
                .iter()
                .map(|(s, t)| SentencePair::new(s.to_vec(), t.to_vec()))
                .collect(),
            Vocabulary::default(),
            Vocabulary::default(),
        )
    }

    #[test]
    fn concat_pairs_examples() {
        let c = corpus_of(&[(&[4], &[5]), (&[6, 7], &[8]), (&[9], &[10, 11]), (&[12], &[13])]);
        let out = concat_pairs(&c);
        assert_eq!(out.pairs.len(), 2);
        assert_eq!(out.pairs[0], SentencePair::new(vec![4, 6, 7], vec![5, 8]));
        assert_eq!(out.pairs[1], SentencePair::new(vec![9, 12], vec![10, 11, 13]));

        let c = corpus_of(&[(&[4], &[5]), (&[6], &[7]), (&[8], &[9])]);
        let out = concat_pairs(&c);
        assert_eq!(out.pairs.len(), 2);
        assert_eq!(out.pairs[1], c.pairs[2]);

        assert!(concat_pairs(&corpus_of(&[])).is_empty());
    }

    #[test]
    fn bucket_examples() {
        let c = corpus_of(&[(&[4; 5], &[4]), (&[4; 15], &[4]), (&[4; 25], &[4])]);
        let b = bucket_by_length(&c, &[10, 20]).unwrap();
        assert_eq!(b.sizes(), vec![1, 1, 1]);

        let c = corpus_of(&[(&[4; 30], &[4]), (&[4; 21], &[4])]);
        assert_eq!(bucket_by_length(&c, &[10, 20]).unwrap().sizes(), vec![0, 0, 2]);

        assert_eq!(bucket_by_length(&corpus_of(&[]), &[10, 20]).unwrap().sizes(), vec![0, 0, 0]);
        assert!(bucket_by_length(&c, &[20, 10]).is_err());

        // Boundary value belongs to the lower bucket.
        assert_eq!(bucket_of(&[10, 20], 10), 0);
        assert_eq!(bucket_of(&[10, 20], 11), 1);
        assert_eq!(bucket_label(&[10, 20], 0), "1-10");
        assert_eq!(bucket_label(&[10, 20], 2), ">20");
    }

    #[test]
    fn filter_max_len_examples() {
        let long = vec![4; 51];
        let c = corpus_of(&[(&long, &[4]), (&[4; 50], &[4; 50])]);
        let out = filter_max_len(&c, 50);
        assert_eq!(out.len(), 1);
        assert_eq!(out.pairs[0].source.len(), 50);

        let c = corpus_of(&[(&[4; 3], &[4]), (&[4; 50], &[4; 50])]);
        assert_eq!(filter_max_len(&c, 50), c);
        assert!(filter_max_len(&c, 1).is_empty());
    }

    #[test]
    fn parallel_files_must_align() {
        let v = Vocabulary::from_tokens(["a"]);
        assert!(Corpus::from_lines("a\na\n", "a\n", v.clone(), v.clone()).is_err());
        let c = Corpus::from_lines("a b\n\na\n", "a\nb\nz\n", v.clone(), v).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.pairs[0], SentencePair::new(vec![4, UNK], vec![4]));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trips(words in prop::collection::vec(0usize..8, 0..12)) {
            let v = Vocabulary::from_tokens((0..8).map(symbol));
            let toks: Vec<String> = words.iter().map(|&i| symbol(i)).collect();
            prop_assert_eq!(v.decode(&v.encode(&toks)), toks);
        }

        #[test]
        fn concat_doubles_even_corpus_lengths(seed in 0u64..500, half in 1usize..20) {
            let c = gen_synthetic(&SyntheticTaskSpec {
                task: TaskKind::Reverse,
                alphabet: 5,
                min_len: 1,
                max_len: 9,
                samples: 2 * half,
                seed,
            }).unwrap();
            let out = concat_pairs(&c);
            prop_assert_eq!(out.len(), half);
            prop_assert!((out.mean_source_len() - 2.0 * c.mean_source_len()).abs() < 1e-9);
            prop_assert!((out.mean_target_len() - 2.0 * c.mean_target_len()).abs() < 1e-9);
        }

        #[test]
        fn buckets_partition_the_dataset(lens in prop::collection::vec(1usize..70, 0..40)) {
            let pairs: Vec<SentencePair> = lens.iter().map(|&n| SentencePair::new(vec![4; n], vec![4])).collect();
            let c = Corpus::new(pairs, Vocabulary::default(), Vocabulary::default());
            let b = bucket_by_length(&c, &DEFAULT_BOUNDARIES).unwrap();
            prop_assert_eq!(b.sizes().iter().sum::<usize>(), c.len());
            let mut all: Vec<usize> = b.indices.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..c.len()).collect::<Vec<_>>());
        }
    }
}
