//! Adaptive neighbourhoods: the similarity threshold drops until each sample
//! has at least `k_min` neighbours, so dense regions get tight neighbourhoods.
//!
//! `cargo run --release --example adaptive_neighbors`

use anne::aknn::FeatureSimilarity;
use anne::prelude::*;

fn main() -> Result<(), Error> {
    let ds = normalize_features(&generate_clusters(&ClusterSpec { samples_per_class: 100, ..ClusterSpec::standard(5) })?)?;
    let sims = FeatureSimilarity::new(&ds);
    let pool: Vec<usize> = (0..ds.len()).collect();
    let config = AknnConfig::default();

    for (i, k_min) in [(0, 5), (0, 40), (500, 80)] {
        let nb = adaptive_neighborhood(i, &pool, k_min, &config, &sims)?;
        let sims_to_i: Vec<f64> = nb.neighbors.iter().map(|&j| cosine(&ds, i, j)).collect();
        let vote = knn_vote(&nb.neighbors, ds.noisy_labels(), &sims_to_i)?;
        println!(
            "sample {i:>3}, k_min {k_min:>2}: K = {:>3} at omega {:.2} after {} steps, vote {vote} (label {})",
            nb.k(),
            nb.omega,
            nb.trace.len(),
            ds.noisy_labels()[i]
        );
    }
    Ok(())
}

fn cosine(ds: &Dataset, i: usize, j: usize) -> f64 {
    let a: Vec<f64> = ds.row(i).iter().map(|&v| f64::from(v)).collect();
    let b: Vec<f64> = ds.row(j).iter().map(|&v| f64::from(v)).collect();
    cosine_similarity(&a, &b).unwrap_or(0.0)
}
