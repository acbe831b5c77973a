//! Sweeps eta on Adult and prints the sweep table, its Pareto front and
//! the rank correlations of eta with DP and accuracy.
//!
//! ```text
//! cargo run --release --example pareto_sweep -- [epochs] [jobs]
//! ```

use std::path::Path;

use fairbinn::data::{load_train_test, DataSchema};
use fairbinn::model::Architecture;
use fairbinn::trainer::{pareto_sweep, spearman, TrainConfig};

fn main() -> fairbinn::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let jobs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);

    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/adult");
    let data = load_train_test(
        root.join("adult_train.csv"),
        Some(&root.join("adult_test.csv")),
        0.0,
        0,
        &DataSchema::adult(),
    )?;
    let spec = Architecture::adult().into_spec(data.train.width())?;
    let base = TrainConfig { epochs, ..TrainConfig::default() };
    let etas = [1.0, 10.0, 100.0, 1000.0];
    let sweep = pareto_sweep(&spec, &data.train, &data.test, &base, &etas, &[0, 1], jobs)?;

    print!("{}", sweep.to_csv());
    println!();
    print!("{}", sweep.front_csv());
    let rows: Vec<_> = sweep.aggregated().collect();
    let eta: Vec<f64> = rows.iter().map(|r| r.eta).collect();
    let dp: Vec<f64> = rows.iter().map(|r| r.mean_dp).collect();
    let acc: Vec<f64> = rows.iter().map(|r| r.mean_accuracy).collect();
    println!("\nspearman(eta, dp)  = {:?}", spearman(&eta, &dp));
    println!("spearman(eta, acc) = {:?}", spearman(&eta, &acc));
    Ok(())
}
