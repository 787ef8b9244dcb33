//! Equivalent throughput of a 784 x 784 array against input resolution, and
//! the programming time set by the longest pulse train.

use ctt_engine::crossbar::ProgramOptions;
use ctt_engine::device::DevicePhysics;
use ctt_engine::harness::{run_throughput_report, worst_case_pulses};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let physics = DevicePhysics::default();
    let clock = 500e6;
    println!("{:>5} {:>12} {:>9} {:>13} {:>14}", "bits", "MACs/cycle", "TOPS", "longest train", "program cycles");
    let pulses = worst_case_pulses(&physics, 8, &ProgramOptions::default())?;
    for bits in [1, 2, 4, 8, 16] {
        let r = run_throughput_report(784, 784, bits, clock, Some(pulses))?;
        println!(
            "{bits:>5} {:>12} {:>9.3} {pulses:>13} {:>14}",
            r.macs_per_cycle,
            r.tops,
            r.programming_cycles.unwrap_or(0)
        );
    }
    for wb in [4, 6, 8] {
        println!("{wb}-bit weights: longest pulse train {}", worst_case_pulses(&physics, wb, &ProgramOptions::default())?);
    }
    Ok(())
}
