//! Beam search on a small random model: n-best lists at several widths,
//! compared with greedy decoding.
//!
//! `cargo run --release --example beam_search`

use rnmt::context::ContextMode;
use rnmt::model::{Dims, ModelParams};
use rnmt::search::{beam_search, beam_search_with, greedy_decode, SearchOptions};

fn main() -> rnmt::Result<()> {
    let model = ModelParams::random_with_scale(Dims::square(6, 8, 12, 8), ContextMode::LAST_STATE, 1.0, 7);
    let source = [4, 9, 6, 11];

    println!("greedy: {:?}", greedy_decode(&model, &source, 8)?);
    for width in [1, 3, 10] {
        println!("\nbeam {width}:");
        for h in beam_search(&model, &source, width, 8)? {
            println!(
                "  {:<24} log p {:>8.4}  normalized {:>8.4}  {}",
                format!("{:?}", h.tokens),
                h.log_prob,
                h.score(true),
                if h.finished { "eos" } else { "cut" }
            );
        }
    }

    let raw = SearchOptions { length_normalize: false, ..SearchOptions::new(10) };
    let best = &beam_search_with(&model, &source, &raw)?[0];
    println!("\nbest without length normalization: {:?} (log p {:.4})", best.tokens, best.log_prob);
    Ok(())
}
