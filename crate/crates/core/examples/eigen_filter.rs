//! Per-class dominant eigenvectors and the alignment filter.
//!
//! `cargo run --release --example eigen_filter`

use anne::metrics::clean_set_metrics;
use anne::prelude::*;

fn main() -> Result<(), Error> {
    let clean = generate_clusters(&ClusterSpec { samples_per_class: 300, ..ClusterSpec::standard(2) })?;
    let ds = normalize_features(&inject_symmetric(&clean, 0.3, 2)?)?;

    let class0: Vec<f64> = (0..ds.len())
        .filter(|&i| ds.noisy_labels()[i] == 0)
        .flat_map(|i| ds.row(i).iter().map(|&v| f64::from(v)).collect::<Vec<_>>())
        .collect();
    let pair = class_dominant_eigenvector(&class0, ds.dim())?;
    println!("class 0: eigenvalue {:.3} after {} iterations", pair.value, pair.iterations);

    let everyone: Vec<usize> = (0..ds.len()).collect();
    for gamma_e in [0.05, 0.1, 0.2] {
        let out = fine_select(&everyone, &ds, gamma_e)?;
        let m = clean_set_metrics(&out.clean, &ds)?;
        println!("gamma_e {gamma_e:.2}: kept {:>4}, precision {:.3}, recall {:.3}", out.clean.len(), m.precision, m.recall);
    }
    Ok(())
}
