//! End-to-end runs of the `rnmt` binary.

use std::path::Path;
use std::process::{Command, Output};

fn rnmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rnmt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rnmt(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn value<'a>(report: &'a str, key: &str) -> &'a str {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in\n{report}"))
}

#[test]
fn usage_errors_exit_with_one() {
    let out = rnmt(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(rnmt(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(rnmt(&["synth", "--task", "juggle", "--n", "3", "--out", "/tmp"]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_with_two() {
    let out = rnmt(&["score", "--hyp", "/no/such/file", "--ref", "/no/such/file"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn subcommand_help_lists_flags() {
    let help = ok(&["translate", "--help"]);
    for flag in ["--checkpoint", "--input", "--out", "--beam", "--no-length-norm", "--seed", "--threads", "--profile", "--config"] {
        assert!(help.contains(flag), "missing {flag}");
    }
}

#[test]
fn synth_train_translate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--task", "copy", "--n", "40", "--alphabet", "5", "--min-len", "2", "--max-len", "4", "--seed", "0", "--out", p(d), "--prefix", "train"]);
    ok(&["synth", "--task", "copy", "--n", "6", "--alphabet", "5", "--min-len", "2", "--max-len", "4", "--seed", "1", "--out", p(d), "--prefix", "dev"]);
    assert_eq!(std::fs::read_to_string(d.join("train.src")).unwrap().lines().count(), 40);
    assert!(d.join("vocab.src").exists() && d.join("vocab.tgt").exists());

    let train = |out: &str| {
        let ck = d.join(out);
        let log = ok(&[
            "train", "--train-src", p(&d.join("train.src")), "--train-tgt", p(&d.join("train.tgt")),
            "--dev-src", p(&d.join("dev.src")), "--dev-tgt", p(&d.join("dev.tgt")),
            "--src-vocab", p(&d.join("vocab.src")), "--tgt-vocab", p(&d.join("vocab.tgt")),
            "--mechanism", "contexter", "--output-mode", "last-state",
            "--d-w", "8", "--d-h", "12", "--epochs", "2", "--batch-size", "8", "--seed", "5", "--out", p(&ck),
        ]);
        assert!(log.contains("epoch=2"));
        std::fs::read(ck).unwrap()
    };
    let a = train("a.ckpt");
    let b = train("b.ckpt");
    assert_eq!(a, b);
    assert!(a.starts_with(b"RNMT1\n"));

    let translate = |out: &str| {
        let path = d.join(out);
        ok(&["translate", "--checkpoint", p(&d.join("a.ckpt")), "--input", p(&d.join("dev.src")), "--out", p(&path), "--beam", "3"]);
        std::fs::read_to_string(path).unwrap()
    };
    let t1 = translate("t1.txt");
    assert_eq!(t1, translate("t2.txt"));
    assert_eq!(t1.lines().count(), 6);

    let score = ok(&["score", "--hyp", p(&d.join("t1.txt")), "--ref", p(&d.join("dev.tgt"))]);
    let bleu: f64 = value(&score, "bleu").parse().unwrap();
    assert!((0.0..=100.0).contains(&bleu));

    let viz = ok(&["viz", "--checkpoint", p(&d.join("a.ckpt")), "--src", p(&d.join("dev.src")), "--tgt", p(&d.join("dev.tgt")), "--format", "pgm", "--out", p(&d.join("heat"))]);
    let pgm = std::fs::read_to_string(d.join("heat.update.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n"));
    let cols: usize = value(&viz, "cols").parse().unwrap();
    let src_len = std::fs::read_to_string(d.join("dev.src")).unwrap().lines().next().unwrap().split_whitespace().count();
    assert_eq!(cols, src_len);
    assert!(d.join("heat.reset.pgm").exists());
}

#[test]
fn attention_checkpoint_cannot_be_visualized() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--task", "reverse", "--n", "10", "--alphabet", "4", "--min-len", "2", "--max-len", "3", "--out", p(d)]);
    ok(&[
        "train", "--train-src", p(&d.join("data.src")), "--train-tgt", p(&d.join("data.tgt")),
        "--dev-src", p(&d.join("data.src")), "--dev-tgt", p(&d.join("data.tgt")),
        "--mechanism", "attention", "--d-w", "4", "--d-h", "6", "--epochs", "1", "--batch-size", "5", "--out", p(&d.join("m.ckpt")),
    ]);
    let out = rnmt(&["viz", "--checkpoint", p(&d.join("m.ckpt")), "--src", p(&d.join("data.src")), "--tgt", p(&d.join("data.tgt")), "--out", p(&d.join("h"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("contexter"));
}

#[test]
fn scoring_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let refs = "a b c d e\nf g h i j k l m n o p q\nx y\n";
    let sys_a = "a b c d e\nf g h i j k l m n o p q\nx y\n";
    let sys_b = "a b c\nf g h i z k l m n o p q\ny x\n";
    let src = "1 2 3 4 5\n1 2 3 4 5 6 7 8 9 10 11 12\n1 2\n";
    for (name, text) in [("ref", refs), ("a", sys_a), ("b", sys_b), ("src", src)] {
        std::fs::write(d.join(name), text).unwrap();
    }
    let s = ok(&["score", "--hyp", p(&d.join("a")), "--ref", p(&d.join("ref"))]);
    assert_eq!(value(&s, "bleu"), "100.0000");
    assert_eq!(value(&s, "token_accuracy"), "1.000000");

    let b = ok(&["bucket-score", "--hyp", p(&d.join("b")), "--ref", p(&d.join("ref")), "--src", p(&d.join("src")), "--boundaries", "5,10"]);
    assert_eq!(value(&b, "bucket[1-5].size"), "2");
    assert_eq!(value(&b, "bucket[6-10].bleu"), "absent");
    assert_eq!(value(&b, "bucket[>10].size"), "1");

    let same = ok(&["signif", "--hyp-a", p(&d.join("a")), "--hyp-b", p(&d.join("a")), "--ref", p(&d.join("ref")), "--resamples", "50"]);
    assert_eq!(value(&same, "p_value"), "0.500000");
    let diff = ok(&["signif", "--hyp-a", p(&d.join("a")), "--hyp-b", p(&d.join("b")), "--ref", p(&d.join("ref")), "--seed", "3"]);
    let again = ok(&["signif", "--hyp-a", p(&d.join("a")), "--hyp-b", p(&d.join("b")), "--ref", p(&d.join("ref")), "--seed", "3"]);
    assert_eq!(diff, again);
    assert!(value(&diff, "bleu_a").starts_with("100"));
}

#[test]
fn concat_and_vocab() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("s"), "a b\nc\nd e f\n").unwrap();
    std::fs::write(d.join("t"), "A B\nC\nD E F\n").unwrap();
    ok(&["concat", "--src", p(&d.join("s")), "--tgt", p(&d.join("t")), "--out-src", p(&d.join("s2")), "--out-tgt", p(&d.join("t2"))]);
    assert_eq!(std::fs::read_to_string(d.join("s2")).unwrap(), "a b c\nd e f\n");
    assert_eq!(std::fs::read_to_string(d.join("t2")).unwrap(), "A B C\nD E F\n");

    std::fs::write(d.join("tok"), "x y x\nz x y\n").unwrap();
    let out = ok(&["build-vocab", "--input", p(&d.join("tok")), "--out", p(&d.join("v")), "--max-size", "2"]);
    assert_eq!(value(&out, "vocab_size"), "6");
    assert_eq!(std::fs::read_to_string(d.join("v")).unwrap(), "x\ny\n");
}

#[test]
fn gradcheck_command() {
    let out = ok(&["gradcheck", "--mechanism", "contexter", "--output-mode", "mean-pooling", "--d-w", "3", "--d-h", "4", "--vocab", "9"]);
    assert!(out.contains("gradcheck PASS"));
    assert_eq!(rnmt(&["gradcheck", "--mechanism", "telepathy"]).status.code(), Some(1));
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.conf"), format!("task=copy\nn=7\nout={}\nprefix=cfg\n", p(d))).unwrap();
    ok(&["synth", "--config", p(&d.join("run.conf")), "--n", "9"]);
    assert_eq!(std::fs::read_to_string(d.join("cfg.src")).unwrap().lines().count(), 9);
    std::fs::write(d.join("bad.conf"), "warp_factor=9\n").unwrap();
    assert_eq!(rnmt(&["synth", "--config", p(&d.join("bad.conf")), "--task", "copy", "--n", "1", "--out", p(d)]).status.code(), Some(1));
}
