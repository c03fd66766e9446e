//! Training with per-epoch selection against a plain cross-entropy run.
//!
//! `cargo run --release --example train_with_selection`

use anne::experiment;
use anne::prelude::*;

fn main() -> Result<(), Error> {
    let mut cfg = experiment::preset("bench-sym50")?;
    if let experiment::DataSource::Generate { spec, test_per_class, .. } = &mut cfg.data {
        spec.samples_per_class = 300;
        *test_per_class = 300;
    }
    cfg.train.epochs = 20;
    cfg.train.warmup_epochs = 8;

    let (_, history, report) = experiment::run_training(&cfg, 1, &cfg.pipeline)?;
    for r in history.epochs.iter().skip(cfg.train.warmup_epochs - 1) {
        let sel = r.selection.as_ref().map(|s| {
            let f1 = s.metrics.map_or(f64::NAN, |m| m.f1);
            format!("kept {:>4}  F1 {f1:.3}  mean K {:.1}", s.clean_size, s.mean_k.unwrap_or(f64::NAN))
        });
        println!("epoch {:>2}  acc {:.4}  {}", r.epoch, r.test_accuracy, sel.unwrap_or_else(|| "warm-up".into()));
    }
    let (_, _, base) = experiment::run_training(&cfg, 1, &cfg.pipeline.with_selector(Selector::Passthrough))?;
    println!("final accuracy: selection {:.4}, plain cross-entropy {:.4}", report.final_accuracy, base.final_accuracy);
    Ok(())
}
