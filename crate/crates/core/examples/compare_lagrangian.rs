//! Bilevel, Lagrangian and unconstrained training at matched step sizes
//! on Adult; prints mean training BCE per epoch and a summary table.
//!
//! ```text
//! cargo run --release --example compare_lagrangian -- [epochs] [eta]
//! ```

use std::path::Path;

use fairbinn::cli::compare_runs;
use fairbinn::cli::render::{curves_csv, summary_csv};
use fairbinn::data::{load_train_test, DataSchema};
use fairbinn::model::Architecture;
use fairbinn::trainer::TrainConfig;

fn main() -> fairbinn::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let eta: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(10.0);

    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/adult");
    let data = load_train_test(
        root.join("adult_train.csv"),
        Some(&root.join("adult_test.csv")),
        0.0,
        0,
        &DataSchema::adult(),
    )?;
    let spec = Architecture::adult().into_spec(data.train.width())?;
    let base = TrainConfig { epochs, eta, ..TrainConfig::default() };
    println!("fairness rate {} = matched lambda {}", base.fairness_rate(), base.matched_lambda());
    let doc = compare_runs(&spec, &data, &base, &[0, 1], 3)?;
    print!("{}", curves_csv(&doc));
    println!();
    print!("{}", summary_csv(&doc));
    Ok(())
}
