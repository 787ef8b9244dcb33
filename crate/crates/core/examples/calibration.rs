//! Checks calibrated products of a programmed random array against exact
//! dot products on zero, basis and random probe vectors.

use ctt_engine::harness::{run_calibration_demo, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::default();
    let r = run_calibration_demo(&cfg)?;
    println!("{} x {} array, {}-bit weights", cfg.calibrate.m, cfg.calibrate.n, cfg.weight_bits);
    println!("zero-vector deviation    {:.3e}", r.zero_deviation);
    println!("basis deviation / bound  {:.4}", r.basis_bound_ratio);
    println!("random deviation / bound {:.4} over {} vectors", r.random_bound_ratio, r.vectors);
    println!("random max relative      {:.3e}", r.random_max_relative);
    println!("within bound: {}", r.within_bound());
    Ok(())
}
