//! Trains one network case on MNIST and reports test accuracy per epoch.
//!
//! `cargo run --release --example train_mnist -- [case] [epochs] [mnist dir]`

use std::path::PathBuf;

use ctt_engine::dataset::{load_split, Split};
use ctt_engine::trainer::{case_widths, evaluate, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let case: u8 = args.first().map_or(Ok(2), |s| s.parse())?;
    let epochs: u32 = args.get(1).map_or(Ok(5), |s| s.parse())?;
    let dir = args.get(2).map_or_else(|| PathBuf::from("data/mnist"), PathBuf::from);

    let train_set = load_split(&dir, Split::Train)?;
    let test_set = load_split(&dir, Split::Test)?;
    let cfg = TrainConfig {
        case,
        epochs,
        ..TrainConfig::default()
    };
    println!("case {case}: widths {:?}", case_widths(case)?);
    let outcome = train(&cfg, &train_set, Some(&test_set))?;
    for (e, (loss, acc)) in outcome.epoch_losses.iter().zip(&outcome.validation_accuracy).enumerate() {
        println!("epoch {:>2}  loss {loss:.4}  test {:.2}%", e + 1, 100.0 * acc);
    }
    println!("final test accuracy {:.2}%", 100.0 * evaluate(&outcome.model, &test_set)?);
    Ok(())
}
