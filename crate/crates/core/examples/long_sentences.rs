//! Long-sentence analysis: builds long pairs by concatenating neighbors,
//! trains both mechanisms on the long-agreement task and compares them per
//! source-length bucket.
//!
//! `cargo run --release --example long_sentences -- [epochs]`

use rnmt::context::ContextMode;
use rnmt::corpus::{concat_pairs, gen_synthetic, SyntheticTaskSpec, TaskKind};
use rnmt::eval::{bucketed_report, paired_bootstrap};
use rnmt::training::{TrainConfig, Trainer};

fn main() -> rnmt::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(4, |a| a.parse().expect("epochs"));

    let short = gen_synthetic(&SyntheticTaskSpec {
        task: TaskKind::Copy,
        alphabet: 20,
        min_len: 2,
        max_len: 10,
        samples: 6,
        seed: 0,
    })?;
    let joined = concat_pairs(&short);
    println!("neighbor concatenation: {} pairs -> {} pairs", short.len(), joined.len());
    for line in joined.source_lines() {
        println!("  {line}");
    }

    let data = gen_synthetic(&SyntheticTaskSpec {
        task: TaskKind::LongAgreement,
        alphabet: 20,
        min_len: 20,
        max_len: 40,
        samples: 700,
        seed: 0,
    })?;
    let (train, test) = data.split_tail(100);
    let refs = test.target_lines();
    let lens: Vec<usize> = test.pairs.iter().map(|p| p.source.len()).collect();
    let config = TrainConfig { batch_size: 20, d_w: 16, d_h: 32, ..TrainConfig::default() };

    let mut outputs = Vec::new();
    for (name, mode) in [("contexter", ContextMode::LAST_STATE), ("attention", ContextMode::ATTENTION)] {
        let mut trainer = Trainer::new(config.clone(), &train, mode)?;
        for _ in 0..epochs {
            let loss = trainer.run_epoch()?;
            println!("{name} epoch {} loss {loss:.4}", trainer.epoch);
        }
        let hyps = trainer.decode(&test)?;
        println!("\n{name} by source length:");
        print!("{}", bucketed_report(&lens, &hyps, &refs, &[25, 32])?.key_values("  "));
        outputs.push(hyps);
    }
    let sig = paired_bootstrap(&outputs[0], &outputs[1], &refs, 1000, 0)?;
    println!("\ncontexter vs attention:");
    print!("{}", sig.key_values());
    Ok(())
}
