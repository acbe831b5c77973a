//! Trains the Adult preset with the bilevel loop and prints per-epoch
//! test metrics.
//!
//! ```text
//! cargo run --release --example train_adult -- [epochs] [eta]
//! ```

use std::path::Path;

use fairbinn::data::{load_train_test, DataSchema};
use fairbinn::model::Architecture;
use fairbinn::trainer::{evaluate_params, Trainer, TrainConfig};

fn main() -> fairbinn::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let eta: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(100.0);

    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/adult");
    let data = load_train_test(
        root.join("adult_train.csv"),
        Some(&root.join("adult_test.csv")),
        0.0,
        0,
        &DataSchema::adult(),
    )?;
    println!(
        "train {} rows, test {} rows, {} features",
        data.train.len(),
        data.test.len(),
        data.train.width()
    );

    let spec = Architecture::adult().into_spec(data.train.width())?;
    let cfg = TrainConfig { epochs, eta, ..TrainConfig::default() };
    let mut trainer = Trainer::new(&spec, &cfg)?;
    println!("epoch  bce_train  acc_test  dp_test  seconds");
    for _ in 0..epochs {
        let r = trainer.epoch_record(&data.train, &data.test)?;
        println!(
            "{:>5}  {:>9.4}  {:>8.4}  {:>7.4}  {:>7.3}",
            r.epoch, r.bce_train, r.acc_test, r.dp_test, r.epoch_seconds
        );
    }
    let report = evaluate_params(trainer.params(), &data.test)?;
    println!("final: accuracy {:.4}, dp {:.4}", report.accuracy, report.dp_diff);
    Ok(())
}
