//! Acceptance suite. Runs every criterion in order on one thread, prints one
//! `A<n> PASS|FAIL` line per criterion and exits non-zero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use rnmt::context::ContextMode;
use rnmt::corpus::{gen_synthetic, Corpus, SentencePair, SyntheticTaskSpec, TaskKind, BOS, EOS};
use rnmt::eval::{bleu4, bucketed_report, paired_bootstrap, token_accuracy};
use rnmt::model::{loss_and_grad_check, nll_loss, Dims, ModelParams, GRADCHECK_SCALE};
use rnmt::numerics::ParamSet;
use rnmt::search::beam_search;
use rnmt::training::{AdadeltaState, Checkpoint, TrainConfig, Trainer};
use rnmt::viz::{collect_heatmaps, correlation};
use rnmt::Error;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Copy-task training setup shared by A2, A3 and A10.
const TRAIN_PAIRS: usize = 5000;
const HELD_OUT: usize = 500;
const BATCH: usize = 20;

/// Long-agreement setup for A4. Lengths are fixed by the criterion; corpus
/// size and dimensions are reduced so the contexter's O(n*m) steps fit.
const LONG_TRAIN: usize = 1200;
const LONG_TEST: usize = 200;
const LONG_DW: usize = 16;
const LONG_DH: usize = 32;
const LONG_EPOCHS: usize = 10;

fn synthetic(task: TaskKind, min_len: usize, max_len: usize, train: usize, test: usize) -> (Corpus, Corpus) {
    gen_synthetic(&SyntheticTaskSpec {
        task,
        alphabet: 20,
        min_len,
        max_len,
        samples: train + test,
        seed: 0,
    })
    .unwrap()
    .split_tail(test)
}

struct Trained {
    trainer: Trainer,
    epochs: usize,
    accuracy: f64,
    elapsed: Duration,
}

/// Trains until held-out token accuracy reaches `target` or `max_epochs` pass.
fn train_until(train: &Corpus, test: &Corpus, config: TrainConfig, mode: ContextMode, target: f64, max_epochs: usize) -> Trained {
    let start = Instant::now();
    let mut trainer = Trainer::new(config, train, mode).unwrap();
    let refs = test.target_lines();
    let mut accuracy = 0.0;
    let mut epochs = 0;
    while epochs < max_epochs {
        trainer.run_epoch().unwrap();
        epochs += 1;
        accuracy = token_accuracy(&trainer.decode(test).unwrap(), &refs).unwrap();
        if accuracy >= target {
            break;
        }
    }
    Trained { trainer, epochs, accuracy, elapsed: start.elapsed() }
}

fn a1() -> Outcome {
    let start = Instant::now();
    let pair = SentencePair::new(vec![4, 9, 13, 6, 17], vec![10, 11, 12, 13, 14]);
    let one = SentencePair::new(vec![7], vec![10, 11, 12, 13, 14]);
    let configs = [
        ("attention", ContextMode::ATTENTION, &pair),
        ("mean-pooling", ContextMode::MEAN_POOLING, &pair),
        ("last-state", ContextMode::LAST_STATE, &pair),
        ("1-token", ContextMode::LAST_STATE, &one),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, mode, p) in configs {
        let r = loss_and_grad_check(Dims::square(8, 12, 20, 20), mode, GRADCHECK_SCALE, 0, p, 1e-5, 1e-4).unwrap();
        pass &= r.passed && r.max_rel_err() < 1e-4;
        parts.push(format!("{name} {:.2e}", r.max_rel_err()));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    Outcome::new(pass, format!("max rel err [{}] (tol 1e-4), {secs:.1}s (limit 120s)", parts.join(", ")))
}

fn copy_config() -> TrainConfig {
    TrainConfig { batch_size: BATCH, seed: 0, ..TrainConfig::default() }
}

fn a2(contexter: &mut Option<Trainer>) -> Outcome {
    let (train, test) = synthetic(TaskKind::Copy, 2, 10, TRAIN_PAIRS, HELD_OUT);
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, mode) in [("contexter", ContextMode::LAST_STATE), ("attention", ContextMode::ATTENTION)] {
        let t = train_until(&train, &test, copy_config(), mode, 0.99, 30);
        let secs = t.elapsed.as_secs_f64();
        pass &= t.accuracy >= 0.99 && secs < 900.0;
        parts.push(format!("{name} acc {:.4} at epoch {} in {secs:.0}s", t.accuracy, t.epochs));
        if mode == ContextMode::LAST_STATE {
            *contexter = Some(t.trainer);
        }
    }
    Outcome::new(pass, format!("{} (need >= 0.99 within 30 epochs, < 900s)", parts.join("; ")))
}

fn a3() -> Outcome {
    let (train, test) = synthetic(TaskKind::Reverse, 2, 10, TRAIN_PAIRS, HELD_OUT);
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, mode) in [("contexter", ContextMode::LAST_STATE), ("attention", ContextMode::ATTENTION)] {
        let t = train_until(&train, &test, copy_config(), mode, 0.95, 50);
        pass &= t.accuracy >= 0.95;
        parts.push(format!("{name} acc {:.4} at epoch {} in {:.0}s", t.accuracy, t.epochs, t.elapsed.as_secs_f64()));
    }
    Outcome::new(pass, format!("{} (need >= 0.95 within 50 epochs)", parts.join("; ")))
}

fn a4() -> Outcome {
    let (train, test) = synthetic(TaskKind::LongAgreement, 20, 40, LONG_TRAIN, LONG_TEST);
    let refs = test.target_lines();
    let lens: Vec<usize> = test.pairs.iter().map(|p| p.source.len()).collect();
    let config = TrainConfig { batch_size: BATCH, d_w: LONG_DW, d_h: LONG_DH, seed: 0, ..TrainConfig::default() };
    let mut hyps = Vec::new();
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, mode) in [("contexter", ContextMode::LAST_STATE), ("attention", ContextMode::ATTENTION)] {
        let start = Instant::now();
        let mut trainer = Trainer::new(config.clone(), &train, mode).unwrap();
        for _ in 0..LONG_EPOCHS {
            trainer.run_epoch().unwrap();
        }
        let hyp = trainer.decode(&test).unwrap();
        let report = bucketed_report(&lens, &hyp, &refs, &[25, 32]).unwrap();
        let longest = report.buckets.last().unwrap();
        let final_acc = longest.final_token_accuracy;
        pass &= report.buckets.len() == 3 && report.buckets.iter().all(|b| b.size > 0 && b.report.is_some()) && final_acc.is_some();
        lines.push(format!("    {name}: trained {LONG_EPOCHS} epochs in {:.0}s", start.elapsed().as_secs_f64()));
        for b in &report.buckets {
            lines.push(format!(
                "    {name} bucket {:>6}: size {:>3} bleu {:>7} token acc {} final-marker acc {}",
                b.label,
                b.size,
                b.report.as_ref().map_or("absent".into(), |r| format!("{:.2}", r.bleu)),
                b.token_accuracy.map_or("absent".into(), |a| format!("{a:.4}")),
                b.final_token_accuracy.map_or("absent".into(), |a| format!("{a:.4}")),
            ));
        }
        hyps.push((final_acc, hyp));
    }
    let sig = paired_bootstrap(&hyps[0].1, &hyps[1].1, &refs, 1000, 0).unwrap();
    let fmt = |a: Option<f64>| a.map_or("absent".into(), |a| format!("{a:.4}"));
    lines.push(format!(
        "    paired bootstrap (contexter vs attention, 1000 resamples): bleu {:.2} vs {:.2}, p = {:.3}",
        sig.bleu_a, sig.bleu_b, sig.p_value
    ));
    Outcome::new(
        pass,
        format!(
            "longest-bucket final-marker acc contexter {} vs attention {}, bootstrap p {:.3} (report only, no margin asserted)\n{}",
            fmt(hyps[0].0),
            fmt(hyps[1].0),
            sig.p_value,
            lines.join("\n")
        ),
    )
}

/// Log-probability of `tokens` under teacher forcing, from the model's own loss.
fn sequence_log_prob(model: &ModelParams, source: &[usize], tokens: &[usize]) -> f64 {
    -nll_loss(model, &SentencePair { source: source.to_vec(), target: tokens.to_vec() }).unwrap()
}

/// Best length-normalized sequence among all EOS-terminated sequences of at
/// most `max_len` steps and all unterminated sequences of exactly `max_len`.
fn enumerate_best(model: &ModelParams, source: &[usize], v: usize, max_len: usize) -> (Vec<usize>, f64) {
    let mut best: (Vec<usize>, f64) = (Vec::new(), f64::NEG_INFINITY);
    let mut prefixes: Vec<Vec<usize>> = vec![Vec::new()];
    for len in 1..=max_len {
        let mut next = Vec::new();
        for prefix in &prefixes {
            for y in 0..v {
                let mut seq = prefix.clone();
                seq.push(y);
                if y == EOS || len == max_len {
                    let score = sequence_log_prob(model, source, &seq) / len as f64;
                    if score > best.1 {
                        let mut out = seq.clone();
                        if y == EOS {
                            out.pop();
                        }
                        best = (out, score);
                    }
                }
                if y != EOS {
                    next.push(seq);
                }
            }
        }
        prefixes = next;
    }
    best
}

fn a5() -> Outcome {
    let modes = [ContextMode::ATTENTION, ContextMode::MEAN_POOLING, ContextMode::LAST_STATE];
    let mut agree = 0;
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let model = ModelParams::random_with_scale(Dims::square(4, 6, 9, 5), modes[seed as usize % 3], 1.0, 100 + seed);
        let source = [4, 5 + (seed as usize % 4), 8];
        let (tokens, score) = enumerate_best(&model, &source, 5, 3);
        let beam = beam_search(&model, &source, 125, 3).unwrap();
        let top = &beam[0];
        if top.tokens == tokens {
            agree += 1;
        }
        worst = worst.max((top.score(true) - score).abs());
    }
    Outcome::new(agree == 50, format!("{agree}/50 models agree with exhaustive enumeration (max score gap {worst:.1e})"))
}

fn a6() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let same = bleu4(&["the cat sat on the mat", "a b c d e"], &["the cat sat on the mat", "a b c d e"]).unwrap();
    pass &= same.bleu == 100.0;
    parts.push(format!("identical {:.1}", same.bleu));
    let disjoint = bleu4(&["u v w x y"], &["a b c d e"]).unwrap();
    pass &= disjoint.bleu == 0.0;
    parts.push(format!("disjoint {:.1}", disjoint.bleu));
    let clipped = bleu4(&["the the the the the the the"], &["the cat is on the mat"]).unwrap();
    pass &= (clipped.precisions[0] - 2.0 / 7.0).abs() < 1e-15 && clipped.bleu == 0.0;
    parts.push(format!("clipped p1 {:.6} (2/7) bleu {:.1}", clipped.precisions[0], clipped.bleu));

    let (_, test) = synthetic(TaskKind::Copy, 2, 10, 0, 50);
    let refs = test.target_lines();
    let selfscore = bleu4(&refs, &refs).unwrap().bleu;
    pass &= selfscore == 100.0;
    parts.push(format!("self-score {selfscore:.1}"));
    let p = paired_bootstrap(&refs, &refs, &refs, 1000, 0).unwrap().p_value;
    pass &= p == 0.5;
    parts.push(format!("bootstrap(A, A) p {p}"));
    Outcome::new(pass, parts.join(", "))
}

fn a7() -> Outcome {
    let dims = Dims::square(5, 7, 15, 11);
    let pair = SentencePair::new(vec![4, 8, 12, 6], vec![5, 9, 7]);
    let expected = pair.target.len() as f64 * 11f64.ln();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, mode) in [("attention", ContextMode::ATTENTION), ("mean-pooling", ContextMode::MEAN_POOLING), ("last-state", ContextMode::LAST_STATE)] {
        let model = ModelParams::zeros(dims, mode);
        let loss = nll_loss(&model, &pair).unwrap();
        pass &= (loss - expected).abs() <= 1e-12 * expected;
        let src = model.start(&pair.source).unwrap();
        let mut zero_contexts = true;
        let mut s = src.s0.clone();
        let mut y_prev = BOS;
        for &y in &pair.target {
            let step = model.step(&src, &s, y_prev);
            zero_contexts &= step.context.context.iter().all(|&x| x == 0.0);
            s = step.state().to_vec();
            y_prev = y;
        }
        pass &= zero_contexts;
        let mut gates = "n/a".to_string();
        if mode != ContextMode::ATTENTION {
            let (update, reset) = collect_heatmaps(&model, &pair).unwrap();
            let half = update.values.data().iter().chain(reset.values.data()).all(|&g| g == 0.5);
            pass &= half;
            gates = if half { "all 0.5".into() } else { "not 0.5".into() };
        }
        parts.push(format!("{name}: loss {loss:.6} (|y| ln V = {expected:.6}), contexts {}, gates {gates}", if zero_contexts { "zero" } else { "nonzero" }));
    }
    Outcome::new(pass, parts.join("; "))
}

fn a8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &std::path::Path| p.to_str().unwrap().to_string();
    let run = |args: Vec<String>| {
        let out = Command::new(env!("CARGO_BIN_EXE_rnmt")).args(&args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(vec!["synth".into(), "--task".into(), "copy".into(), "--n".into(), "200".into(), "--alphabet".into(), "8".into(), "--max-len".into(), "6".into(), "--out".into(), s(d)]);
    let mut artifacts = Vec::new();
    for k in 0..2 {
        let ck = d.join(format!("run{k}.ckpt"));
        let hyp = d.join(format!("run{k}.txt"));
        let mut train: Vec<String> = vec!["train", "--seed", "7", "--threads", "2", "--epochs", "3", "--batch-size", "16", "--d-w", "12", "--d-h", "16"]
            .into_iter()
            .map(String::from)
            .collect();
        for (flag, file) in [("--train-src", "data.src"), ("--train-tgt", "data.tgt"), ("--dev-src", "data.src"), ("--dev-tgt", "data.tgt"), ("--src-vocab", "vocab.src"), ("--tgt-vocab", "vocab.tgt")] {
            train.push(flag.into());
            train.push(s(&d.join(file)));
        }
        train.extend(["--out".into(), s(&ck)]);
        run(train);
        run(vec!["translate".into(), "--checkpoint".into(), s(&ck), "--input".into(), s(&d.join("data.src")), "--out".into(), s(&hyp), "--beam".into(), "4".into()]);
        artifacts.push((std::fs::read(&ck).unwrap(), std::fs::read(&hyp).unwrap()));
    }
    let same_ck = artifacts[0].0 == artifacts[1].0;
    let same_out = artifacts[0].1 == artifacts[1].1;
    Outcome::new(
        same_ck && same_out,
        format!(
            "checkpoints {} ({} bytes), translations {}",
            if same_ck { "identical" } else { "differ" },
            artifacts[0].0.len(),
            if same_out { "identical" } else { "differ" }
        ),
    )
}

fn a9() -> Outcome {
    let (train, _) = synthetic(TaskKind::Copy, 2, 10, 100, 0);
    let mut model = ModelParams::random_with_scale(Dims::square(6, 8, train.src_vocab.len(), train.tgt_vocab.len()), ContextMode::MEAN_POOLING, 0.5, 3);
    let mut opt = AdadeltaState::new(&model);
    let grads = ModelParams::random_with_scale(model.dims, model.mode, 0.1, 4);
    rnmt::training::adadelta_update(&mut opt, &mut model, &grads, &rnmt::training::Adadelta::from_config(&TrainConfig::default()));
    let ck = Checkpoint::new(model, train.src_vocab.clone(), train.tgt_vocab.clone(), Some(opt), Some(42.5));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let tensors_equal = back.params.tensors().iter().zip(ck.params.tensors()).all(|((na, a), (nb, b))| na == &nb && a.data() == b.data());
    let identical = back == ck && tensors_equal;

    let bytes = ck.to_bytes();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let truncated = bytes[..bytes.len() - 3].to_vec();
    let mut trailing = bytes.clone();
    trailing.push(0);
    let version = String::from_utf8_lossy(&bytes).replacen("format_version=1", "format_version=9", 1).into_bytes();
    let mut rejected = 0;
    let cases = [bad_magic, truncated, trailing, version, Vec::new()];
    for case in &cases {
        if matches!(Checkpoint::from_bytes(case), Err(Error::Format(_))) {
            rejected += 1;
        }
    }
    Outcome::new(
        identical && rejected == cases.len(),
        format!(
            "round trip {} over {} tensors, {rejected}/{} corrupted files rejected",
            if identical { "exact" } else { "differs" },
            ck.params.tensors().len(),
            cases.len()
        ),
    )
}

fn a10(contexter: &Option<Trainer>) -> Outcome {
    let Some(trainer) = contexter else {
        return Outcome::new(false, "no A2 contexter model");
    };
    let (_, test) = synthetic(TaskKind::Copy, 2, 10, TRAIN_PAIRS, HELD_OUT);
    let mut monotone = 0.0;
    let mut transitions = 0.0;
    let mut corrs = Vec::new();
    for pair in test.pairs.iter().take(10) {
        let (update, reset) = collect_heatmaps(&trainer.model, pair).unwrap();
        let t = update.rows().saturating_sub(1) as f64;
        monotone += update.monotone_fraction() * t;
        transitions += t;
        if let Some(c) = correlation(&reset, &update).unwrap() {
            corrs.push(c);
        }
    }
    let fraction = monotone / transitions;
    let mean_corr = corrs.iter().sum::<f64>() / corrs.len().max(1) as f64;
    Outcome::new(
        fraction >= 0.8,
        format!("update-gate row argmax monotone on {fraction:.3} of transitions (need >= 0.8); mean reset/update correlation {mean_corr:.3} over {} pairs", corrs.len()),
    )
}

fn main() {
    let mut contexter = None;
    let mut failed = Vec::new();
    let mut record = |id: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Outcome::new(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        println!(
            "{id} {} {} [{:.1}s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
        if !outcome.pass {
            failed.push(id.to_string());
        }
    };
    record("A1", &mut a1);
    record("A2", &mut || a2(&mut contexter));
    record("A3", &mut a3);
    record("A4", &mut a4);
    record("A5", &mut a5);
    record("A6", &mut a6);
    record("A7", &mut a7);
    record("A8", &mut a8);
    record("A9", &mut a9);
    record("A10", &mut || a10(&contexter));
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        std::process::exit(1);
    }
}
