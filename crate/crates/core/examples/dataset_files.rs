//! Writing and reading the binary dataset format, and row normalisation.
//!
//! `cargo run --release --example dataset_files`

use anne::dataset::{load_predictions, save_predictions};
use anne::prelude::*;

fn main() -> Result<(), Error> {
    let dir = std::env::temp_dir().join("anne-dataset-example");
    std::fs::create_dir_all(&dir).expect("temp dir is writable");

    let ds = inject_symmetric(&generate_clusters(&ClusterSpec { samples_per_class: 50, ..ClusterSpec::standard(1) })?, 0.3, 1)?;
    let path = dir.join("train.anne");
    save_dataset(&ds, &path)?;
    let back = load_dataset(&path)?;
    assert_eq!(back, ds);
    println!("{}: {} rows x {} features, {} classes", path.display(), back.len(), back.dim(), back.class_count());

    let unit = normalize_features(&back)?;
    let norm: f32 = unit.row(0).iter().map(|v| v * v).sum::<f32>().sqrt();
    println!("row 0 norm after normalisation: {norm:.6}");

    let preds = Predictions::uniform(unit.len(), unit.class_count(), 0);
    let ppath = dir.join("preds.json");
    save_predictions(&preds, &ppath)?;
    println!("predictions round trip: {}", load_predictions(&ppath)? == preds);
    Ok(())
}
