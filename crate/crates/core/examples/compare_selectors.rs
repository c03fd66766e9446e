//! Selector comparison over seeds, as the `compare` subcommand runs it.
//!
//! `cargo run --release --example compare_selectors`

use anne::experiment::{self, CompareMode};
use anne::prelude::*;

fn main() -> Result<(), Error> {
    let mut cfg = experiment::preset("bench-sym80")?;
    if let experiment::DataSource::Generate { spec, .. } = &mut cfg.data {
        spec.samples_per_class = 300;
    }
    cfg.seeds = vec![1, 2, 3];
    cfg.compare_mode = CompareMode::Select;
    cfg.selectors = vec![Selector::Anne, Selector::FineOnly, Selector::AknnOnly, Selector::SmallLossGmm];
    cfg.out_dir = std::env::temp_dir().join("anne-compare-example");

    let table = experiment::cmd_compare(&cfg)?;
    println!("{:<16} {:>15} {:>12} {:>9}", "selector", "F1", "kept", "rank");
    for r in &table.rows {
        println!(
            "{:<16} {:.3} +- {:.3} {:>12.0} {:>9.2}",
            r.selector.to_string(),
            r.f1.mean,
            r.f1.std,
            r.selection_size.mean,
            r.mean_rank
        );
    }
    println!("tables written to {}", cfg.out_dir.display());
    Ok(())
}
