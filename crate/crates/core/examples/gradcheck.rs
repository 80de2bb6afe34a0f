//! Finite-difference gradient check of the full model in every context mode.
//!
//! `cargo run --release --example gradcheck`

use rnmt::context::ContextMode;
use rnmt::corpus::SentencePair;
use rnmt::model::{loss_and_grad_check, Dims, GRADCHECK_SCALE};

fn main() -> rnmt::Result<()> {
    let dims = Dims::square(8, 12, 20, 20);
    let long = SentencePair::new(vec![4, 9, 13, 6, 17], vec![10, 11, 12, 13, 14]);
    let single = SentencePair::new(vec![7], vec![10, 11, 12]);
    for (name, mode, pair) in [
        ("attention", ContextMode::ATTENTION, &long),
        ("contexter, mean pooling", ContextMode::MEAN_POOLING, &long),
        ("contexter, last state", ContextMode::LAST_STATE, &long),
        ("contexter, one-token source", ContextMode::LAST_STATE, &single),
    ] {
        let report = loss_and_grad_check(dims, mode, GRADCHECK_SCALE, 0, pair, 1e-5, 1e-4)?;
        println!("== {name}");
        println!("{report}");
        println!("max relative error {:.3e}\n", report.max_rel_err());
    }
    Ok(())
}
