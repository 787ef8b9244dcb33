//! Engine accuracy and saturation against interface resolution for one case.
//! Trains the model first unless `<out>/model-case<N>.cttm` exists.
//!
//! `cargo run --release --example resolution_sweep -- [case] [test images] [ranging]`
//! where ranging is `calibrated`, `worst_case` or `tracking`.

use ctt_engine::harness::{run_sweep, ExperimentConfig};
use ctt_engine::network::AdcRanging;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = ExperimentConfig {
        case: args.first().map_or(Ok(2), |s| s.parse())?,
        bits: (1..=16).collect(),
        subset: args.get(1).map(|s| s.parse()).transpose()?,
        ..ExperimentConfig::default()
    };
    cfg.adc.ranging = match args.get(2).map(String::as_str) {
        None | Some("calibrated") => AdcRanging::Calibrated,
        Some("worst_case") => AdcRanging::WorstCase,
        Some("tracking") => AdcRanging::Tracking,
        Some(other) => return Err(format!("unknown ranging {other:?}").into()),
    };
    let r = run_sweep(&cfg)?;
    println!("case {} float accuracy {:.2}% on {} images", cfg.case, 100.0 * r.float_accuracy, r.images);
    println!("{:>4} {:>9} {:>11} {:>10}", "bits", "accuracy", "saturation", "agreement");
    for row in &r.rows {
        println!(
            "{:>4} {:>8.2}% {:>11.3} {:>9.2}%",
            row.bits,
            100.0 * row.accuracy,
            row.saturation_rate,
            100.0 * row.float_agreement
        );
    }
    println!("wrote {}", r.csv_path.display());
    Ok(())
}
