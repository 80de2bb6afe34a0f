//! Trains a contexter model on the synthetic copy task, saves a checkpoint,
//! reloads it and translates a few held-out sentences with beam search.
//!
//! `cargo run --release --example copy_task -- [epochs] [attention|mean|last]`

use rnmt::context::ContextMode;
use rnmt::corpus::{gen_synthetic, SyntheticTaskSpec, TaskKind};
use rnmt::eval::{bleu4, token_accuracy};
use rnmt::search::{translate_corpus, SearchOptions};
use rnmt::training::{Checkpoint, TrainConfig, Trainer};

fn main() -> rnmt::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(8, |a| a.parse().expect("epochs"));
    let mode = match args.next().as_deref() {
        Some("attention") => ContextMode::ATTENTION,
        Some("mean") => ContextMode::MEAN_POOLING,
        _ => ContextMode::LAST_STATE,
    };

    let data = gen_synthetic(&SyntheticTaskSpec {
        task: TaskKind::Copy,
        alphabet: 20,
        min_len: 2,
        max_len: 10,
        samples: 3200,
        seed: 0,
    })?;
    let (train, test) = data.split_tail(200);
    let config = TrainConfig { batch_size: 20, ..TrainConfig::default() };
    let mut trainer = Trainer::new(config, &train, mode)?;
    let refs = test.target_lines();
    for _ in 0..epochs {
        let loss = trainer.run_epoch()?;
        let acc = token_accuracy(&trainer.decode(&test)?, &refs)?;
        println!("epoch {:>2}  updates {:>5}  loss {loss:>8.4}  held-out token accuracy {acc:.4}", trainer.epoch, trainer.updates);
    }

    let dir = std::env::temp_dir().join("rnmt-copy-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("copy.ckpt");
    trainer.checkpoint(None).save(&path)?;
    let ck = Checkpoint::load(&path)?;
    println!("checkpoint written to {}", path.display());

    let sources: Vec<Vec<usize>> = test.pairs.iter().map(|p| p.source.clone()).collect();
    let hyps = translate_corpus(&ck.params, &sources, &ck.tgt_vocab, &SearchOptions::new(5), 1)?;
    println!("beam 5 BLEU {:.2}", bleu4(&hyps, &refs)?.bleu);
    for (src, hyp) in test.source_lines().iter().zip(&hyps).take(5) {
        println!("  {src:<22} -> {hyp}");
    }
    Ok(())
}
