//! Full hybrid selection on the predictions of a warmed-up model, with
//! per-subset quality and a comparison to single-method selectors.
//!
//! `cargo run --release --example select_samples`

use anne::dataset::normalize_features;
use anne::prelude::*;
use anne::trainer::predict_dataset;

fn main() -> Result<(), Error> {
    let clean = generate_clusters(&ClusterSpec { samples_per_class: 300, ..ClusterSpec::standard(4) })?;
    let train = normalize_features(&inject_symmetric(&clean, 0.5, 4)?)?;

    let warm = TrainConfig { epochs: 10, warmup_epochs: 10, seed: 4, ..TrainConfig::default() };
    let pipeline = PipelineConfig::default();
    let (model, _) = train_loop(&train, &train, &pipeline.with_selector(Selector::Passthrough), &warm)?;
    let preds = predict_dataset(&model, &train, 10)?;

    let result = anne_select(&train, &preds, &pipeline)?;
    let part = result.partition.as_ref().expect("split succeeded");
    println!("tau {:.3}: hcs {}, lcs1 {}, lcs2 {}; relabelled {}", part.tau, part.hcs.len(), part.lcs1.len(), part.lcs2.len(), result.relabel_count);
    let subsets = per_subset_metrics(&result, part, &train)?;
    for (name, m) in [("hcs", subsets.hcs), ("lcs1", subsets.lcs1), ("lcs2", subsets.lcs2)] {
        if let Some(m) = m {
            println!("  {name:<4} precision {:.3} recall {:.3}", m.precision, m.recall);
        }
    }

    for sel in [Selector::Anne, Selector::FineOnly, Selector::AknnOnly, Selector::SmallLossGmm, Selector::FixedKnn(40)] {
        let r = select(&train, &preds, &pipeline.with_selector(sel))?;
        let m = selection_metrics(&r, &train)?;
        println!("{:<18} kept {:>4}  F1 {:.3}  precision {:.3}  recall {:.3}", sel.to_string(), r.clean.len(), m.f1, m.precision, m.recall);
    }
    Ok(())
}
