//! Gate heatmaps of a briefly trained contexter: prints the update gate as a
//! character map and writes both gates as CSV and PGM.
//!
//! `cargo run --release --example gate_heatmap -- [out_dir]`

use rnmt::context::ContextMode;
use rnmt::corpus::{gen_synthetic, SyntheticTaskSpec, TaskKind};
use rnmt::training::{TrainConfig, Trainer};
use rnmt::viz::{collect_heatmaps, correlation, export_heatmap, ExportFormat, GateHeatmap};

fn shade(v: f64) -> char {
    const RAMP: &[u8] = b" .:-=+*#%@";
    RAMP[((v * (RAMP.len() - 1) as f64).round() as usize).min(RAMP.len() - 1)] as char
}

fn print_map(hm: &GateHeatmap) {
    println!("{} gate (rows: target steps, columns: source words)", hm.kind);
    println!("       {}", hm.col_labels.iter().map(|l| format!("{l:>3}")).collect::<String>());
    for (i, label) in hm.row_labels.iter().enumerate() {
        let cells: String = (0..hm.cols()).map(|j| format!("  {}", shade(hm.values.get(i, j)))).collect();
        println!("{label:>6} {cells}");
    }
}

fn main() -> rnmt::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("rnmt-heatmaps"), Into::into);
    let data = gen_synthetic(&SyntheticTaskSpec {
        task: TaskKind::Copy,
        alphabet: 20,
        min_len: 4,
        max_len: 10,
        samples: 3000,
        seed: 1,
    })?;
    let (train, test) = data.split_tail(10);
    let mut trainer = Trainer::new(TrainConfig { batch_size: 20, ..TrainConfig::default() }, &train, ContextMode::LAST_STATE)?;
    for _ in 0..6 {
        println!("epoch {} loss {:.4}", trainer.epoch + 1, trainer.run_epoch()?);
    }

    std::fs::create_dir_all(&out)?;
    for (k, pair) in test.pairs.iter().enumerate().take(3) {
        let (mut update, mut reset) = collect_heatmaps(&trainer.model, pair)?;
        update.relabel(pair, &trainer.src_vocab, &trainer.tgt_vocab);
        reset.relabel(pair, &trainer.src_vocab, &trainer.tgt_vocab);
        println!();
        print_map(&update);
        println!(
            "monotone argmax fraction {:.3}, reset/update correlation {}",
            update.monotone_fraction(),
            correlation(&reset, &update)?.map_or("undefined".into(), |c| format!("{c:.3}"))
        );
        for hm in [&update, &reset] {
            export_heatmap(hm, out.join(format!("pair{k}.{}.csv", hm.kind)), ExportFormat::Csv)?;
            export_heatmap(hm, out.join(format!("pair{k}.{}.pgm", hm.kind)), ExportFormat::Pgm)?;
        }
    }
    println!("\nheatmaps written to {}", out.display());
    Ok(())
}
