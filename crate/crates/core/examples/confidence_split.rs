//! Otsu split of maximum class probabilities into high and low confidence.
//!
//! `cargo run --release --example confidence_split`

use anne::prelude::*;
use rand::Rng;

fn main() -> Result<(), Error> {
    // a confident majority and an unsure minority
    let mut rng = anne::rng::stream(3, &[]);
    let scores: Vec<f64> = (0..1000)
        .map(|i| if i % 4 == 0 { rng.gen_range(0.2..0.6) } else { rng.gen_range(0.75..1.0) })
        .collect();
    let tau = otsu_threshold(&scores)?;
    println!("tau = {tau:.3}");

    let rows: Vec<Vec<f64>> = scores.iter().map(|&s| vec![s, 1.0 - s]).collect();
    let part = split_confidence(&Predictions::from_rows(&rows, 0)?)?;
    println!("hcs {} (mean {:.3}), lcs1 {}, lcs2 {} (lcs mean {:.3})", part.hcs.len(), part.mu_hcs, part.lcs1.len(), part.lcs2.len(), part.mu_lcs);

    // nothing to split: every score equal
    match otsu_threshold(&[0.7; 10]) {
        Err(Error::DegenerateScores) => println!("constant scores: degenerate, as expected"),
        other => println!("unexpected: {other:?}"),
    }
    Ok(())
}
