//! Bit-serial products through a row ADC, swept over ADC resolution. At and
//! above the exactness threshold the result matches integer arithmetic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctt_engine::crossbar::{program, CodeMatrix, ProgramOptions, WeightCodec};
use ctt_engine::device::DevicePhysics;
use ctt_engine::mixed_signal::{exactness_adc_bits, saf_matvec, worst_case_full_scale, AdcConfig, SafConfig, VoltageReference};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (m, n, wb, ib) = (8, 8, 4, 4);
    let physics = DevicePhysics::default();
    let codec = WeightCodec::spanning(wb, &physics);
    let (lo, hi) = codec.code_range();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let weights = CodeMatrix::new(m, n, (0..m * n).map(|_| rng.random_range(lo..=hi)).collect())?;
    let (array, _) = program(&weights, &physics, &codec, 1.0, &ProgramOptions::default())?;
    let vref = VoltageReference::for_array(0.1, &array)?;
    let saf = SafConfig {
        input_bits: ib,
        ..SafConfig::default()
    };
    let inputs: Vec<Vec<u32>> = (0..200).map(|_| (0..m).map(|_| rng.random_range(0..1 << ib)).collect()).collect();

    println!("threshold for m = {m}, {wb}-bit weights: {} ADC bits", exactness_adc_bits(m, wb));
    println!("{:>4} {:>12} {:>10}", "bits", "mean |err|", "clipped");
    for bits in 4..=12 {
        let adc = AdcConfig::new(bits, worst_case_full_scale(&array, &vref))?;
        let (mut err, mut clipped, mut count) = (0i64, 0u64, 0usize);
        for x in &inputs {
            let out = saf_matvec(&array, x, &saf, &adc, &vref)?;
            for j in 0..n {
                let want: i64 = (0..m).map(|i| x[i] as i64 * weights.get(i, j) as i64).sum();
                err += (out.values[j] - want).abs();
                count += 1;
            }
            clipped += out.saturated;
        }
        println!("{bits:>4} {:>12.4} {clipped:>10}", err as f64 / count as f64);
    }
    Ok(())
}
