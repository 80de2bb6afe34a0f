//! Corpus BLEU, token accuracy and paired bootstrap significance on small
//! hand-written systems.
//!
//! `cargo run --release --example bleu_significance`

use rnmt::eval::{bleu4, paired_bootstrap, token_accuracy};

fn main() -> rnmt::Result<()> {
    let refs = [
        "the cat is on the mat",
        "there is a cat on the mat",
        "a dog sleeps in the garden",
        "the weather is nice today",
        "we went to the market together",
        "she reads a book every night",
    ];
    let system_a = [
        "the cat is on the mat",
        "there is a cat on a mat",
        "a dog sleeps in the garden",
        "the weather is good today",
        "we went to the market together",
        "she reads a book every evening",
    ];
    let system_b = [
        "cat the on mat",
        "a cat is on the mat",
        "dog sleeping garden",
        "weather nice today",
        "we go market",
        "she read book night",
    ];

    for (name, hyps) in [("A", &system_a), ("B", &system_b)] {
        let r = bleu4(hyps, &refs)?;
        println!("system {name}: BLEU {:.2}  token accuracy {:.3}", r.bleu, token_accuracy(hyps, &refs)?);
        print!("{}", r.key_values("  "));
    }

    let clipped = bleu4(&["the the the the the the the"], &["the cat is on the mat"])?;
    println!("clipped unigram precision {:.4} (2/7), BLEU {:.1}", clipped.precisions[0], clipped.bleu);

    let sig = paired_bootstrap(&system_a, &system_b, &refs, 1000, 0)?;
    println!("\nA vs B, 1000 resamples:");
    print!("{}", sig.key_values());
    let same = paired_bootstrap(&system_a, &system_a, &refs, 1000, 0)?;
    println!("A vs A p-value {:.3} (every resample ties)", same.p_value);
    Ok(())
}
