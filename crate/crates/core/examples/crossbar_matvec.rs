//! One analog pass through a small array: raw row voltages, the digital
//! offset, and the calibrated product against the exact dot product.

use ctt_engine::crossbar::{program, CodeMatrix, ProgramOptions, ProgrammingMode, WeightCodec};
use ctt_engine::device::{CurrentModel, DevicePhysics};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let physics = DevicePhysics::default();
    let codec = WeightCodec::spanning(4, &physics);
    let weights = CodeMatrix::from_rows(&[vec![3, -8, 0], vec![7, 2, -1], vec![-5, 5, 4], vec![1, 0, -7]])?;
    let vds = [0.10, 0.02, 0.07, 0.05];
    let exact: Vec<f64> = (0..3)
        .map(|j| (0..4).map(|i| vds[i] * weights.get(i, j) as f64).sum())
        .collect();
    println!("codec c0 {:.4} V, c1 {:.5} V/LSB", codec.c0, codec.c1);
    println!("exact          {exact:.6?}");

    for mode in [ProgrammingMode::Continuous, ProgrammingMode::Pulsed] {
        let opts = ProgramOptions {
            mode,
            ..ProgramOptions::default()
        };
        let (array, report) = program(&weights, &physics, &codec, 1.0, &opts)?;
        let rows = array.forward(&vds, CurrentModel::Linear)?;
        let offset = array.offset_term(&vds)?;
        let got = array.calibrated_matvec(&vds)?;
        let bound = array.programming_error_bound(&vds)?;
        println!("{mode:?}: longest pulse train {}", report.max_pulses);
        println!("  row voltage  {rows:.6?}");
        println!("  offset       {offset:.6?}");
        println!("  calibrated   {got:.6?}");
        println!("  error bound  {:?}", bound.iter().map(|b| format!("{b:.2e}")).collect::<Vec<_>>());
    }
    Ok(())
}
