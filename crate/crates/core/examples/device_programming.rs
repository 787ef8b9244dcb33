//! Programs one device to a few thresholds with counted pulse trains and
//! compares the linear and quadratic triode currents at the landing point.

use ctt_engine::device::{apply_pulses, drain_current, pulses_for_target, CurrentModel, DevicePhysics, DeviceState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let physics = DevicePhysics::default();
    let fresh = DeviceState::new(physics.vt_max, &physics)?;
    println!("window {:.3}..{:.3} V, v_gs {:.2} V", physics.vt_min, physics.vt_max, physics.v_gs);
    println!("{:>8} {:>7} {:>8} {:>10} {:>10} {:>9}", "target", "pulses", "polarity", "landed", "error", "lin/quad");
    for target in [0.55, 0.5, 0.42, 0.31, 0.3] {
        let (n, polarity) = pulses_for_target(fresh, &physics, target)?;
        let landed = apply_pulses(fresh, &physics, n, polarity);
        let vds = 0.1;
        let lin = drain_current(&physics, landed.vt, vds, CurrentModel::Linear)?;
        let quad = drain_current(&physics, landed.vt, vds, CurrentModel::Quadratic)?;
        println!(
            "{target:>8.3} {n:>7} {:>8} {:>10.6} {:>10.2e} {:>9.4}",
            format!("{polarity:?}"),
            landed.vt,
            landed.vt - target,
            lin / quad
        );
    }

    // reprogramming from an arbitrary state takes the other polarity too
    let mid = DeviceState::new(0.4, &physics)?;
    let (n, polarity) = pulses_for_target(mid, &physics, 0.5)?;
    println!("0.400 -> 0.500: {n} {polarity:?} pulses");
    Ok(())
}
