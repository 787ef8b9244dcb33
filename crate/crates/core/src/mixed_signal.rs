//! Analog-digital interface: drain-drive reference, row ADC, and the
//! sequential analog fabric (SAF) that feeds inputs one bit plane at a time.
//!
//! Each plane drives `vds_i = bit_i * v_ref` and every row is sampled once.
//! The offset of that plane is known digitally from its popcount and is
//! subtracted at full precision after conversion. The per-plane partial sums
//! are then shifted and accumulated into full-resolution results.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crossbar::{ArrayState, CrossbarError};
use crate::device::CurrentModel;
use crate::fixed::round_half_away;

#[derive(Debug, Error)]
pub enum InterfaceError {
    #[error("invalid interface configuration: {0}")]
    Config(String),
    #[error("input {value} does not fit in {bits} bits")]
    InputRange { value: u64, bits: u32 },
    #[error(transparent)]
    Array(#[from] CrossbarError),
}

/// Uniform saturating quantizer over `[0, v_fs]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdcConfig {
    pub bits: u32,
    pub v_fs: f64,
}

impl AdcConfig {
    pub fn new(bits: u32, v_fs: f64) -> Result<Self, InterfaceError> {
        if !(1..=24).contains(&bits) {
            return Err(InterfaceError::Config(format!("ADC bits must be in 1..=24, got {bits}")));
        }
        if !(v_fs > 0.0) || !v_fs.is_finite() {
            return Err(InterfaceError::Config(format!("ADC full scale must be > 0, got {v_fs}")));
        }
        Ok(Self { bits, v_fs })
    }

    pub fn lsb(&self) -> f64 {
        self.v_fs / (1u64 << self.bits) as f64
    }

    pub fn max_code(&self) -> u32 {
        ((1u64 << self.bits) - 1) as u32
    }

    /// Output code and whether the sample clipped at either rail.
    pub fn sample(&self, v: f64) -> (u32, bool) {
        let raw = round_half_away(v / self.lsb());
        if raw < 0.0 {
            (0, true)
        } else if raw > self.max_code() as f64 {
            (self.max_code(), true)
        } else {
            (raw as u32, false)
        }
    }
}

/// `clamp(round(v / lsb), 0, 2^bits - 1)`.
pub fn quantize(adc: &AdcConfig, v: f64) -> u32 {
    adc.sample(v).0
}

/// Drain-drive voltage for a '1' bit, supplied by the tunable regulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageReference {
    pub v_ref: f64,
}

impl VoltageReference {
    /// Checks the global triode condition against a programmed array.
    pub fn for_array(v_ref: f64, array: &ArrayState) -> Result<Self, InterfaceError> {
        let limit = array.min_overdrive();
        if !(v_ref > 0.0) || v_ref >= limit {
            return Err(InterfaceError::Config(format!(
                "v_ref must satisfy 0 < v_ref < {limit} V (minimum array overdrive), got {v_ref}"
            )));
        }
        Ok(Self { v_ref })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BitOrder {
    #[default]
    MsbFirst,
    LsbFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafConfig {
    pub input_bits: u32,
    pub order: BitOrder,
}

impl Default for SafConfig {
    fn default() -> Self {
        Self {
            input_bits: 8,
            order: BitOrder::MsbFirst,
        }
    }
}

impl SafConfig {
    pub fn validate(&self) -> Result<(), InterfaceError> {
        if !(1..=32).contains(&self.input_bits) {
            return Err(InterfaceError::Config(format!(
                "SAF input bits must be in 1..=32, got {}",
                self.input_bits
            )));
        }
        Ok(())
    }

    /// Binary weights of the planes in drive order.
    fn plane_shifts(&self) -> Vec<u32> {
        let msb_first = (0..self.input_bits).rev();
        match self.order {
            BitOrder::MsbFirst => msb_first.collect(),
            BitOrder::LsbFirst => (0..self.input_bits).collect(),
        }
    }
}

/// MSB-first bit planes of `x`.
pub fn decompose(x: u64, input_bits: u32) -> Result<Vec<u8>, InterfaceError> {
    if input_bits == 0 || input_bits > 64 || (input_bits < 64 && x >> input_bits != 0) {
        return Err(InterfaceError::InputRange {
            value: x,
            bits: input_bits,
        });
    }
    Ok((0..input_bits).rev().map(|b| ((x >> b) & 1) as u8).collect())
}

/// How a row voltage becomes a number in the digital domain.
pub trait RowReadout {
    /// Digital estimate of `v` and whether the conversion clipped.
    /// `driven` is the number of drain lines high in the current plane.
    fn convert(&self, v: f64, driven: usize) -> (f64, bool);

    /// Sees every sampled row voltage; calibration probes record ranges here.
    fn observe(&mut self, _v: f64, _driven: usize) {}
}

impl RowReadout for AdcConfig {
    fn convert(&self, v: f64, _driven: usize) -> (f64, bool) {
        let (code, clipped) = self.sample(v);
        (code as f64 * self.lsb(), clipped)
    }
}

/// Infinite-resolution readout that records the largest voltage it saw.
/// Used for calibration passes.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PeakProbe {
    pub peak: f64,
    /// Largest `v / driven` seen.
    pub peak_per_line: f64,
}

impl RowReadout for PeakProbe {
    fn convert(&self, v: f64, _driven: usize) -> (f64, bool) {
        (v, false)
    }

    fn observe(&mut self, v: f64, driven: usize) {
        self.peak = self.peak.max(v);
        if driven > 0 {
            self.peak_per_line = self.peak_per_line.max(v / driven as f64);
        }
    }
}

/// ADC whose full scale follows the plane's drive count,
/// `v_fs = v_per_line * driven`. The count is known digitally, exactly like
/// the offset term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingAdc {
    pub bits: u32,
    pub v_per_line: f64,
}

impl RowReadout for TrackingAdc {
    fn convert(&self, v: f64, driven: usize) -> (f64, bool) {
        if driven == 0 {
            return (0.0, v > 0.0);
        }
        let adc = AdcConfig {
            bits: self.bits,
            v_fs: self.v_per_line * driven as f64,
        };
        adc.convert(v, driven)
    }
}

/// Result of one bit-serial matrix-vector product.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SafOutput {
    /// Integer estimates of `sum_i x_i * w_ij`.
    pub values: Vec<i64>,
    pub samples: u64,
    pub saturated: u64,
}

/// Bit-serial product through a real ADC.
pub fn saf_matvec(
    array: &ArrayState,
    inputs: &[u32],
    saf: &SafConfig,
    adc: &AdcConfig,
    vref: &VoltageReference,
) -> Result<SafOutput, InterfaceError> {
    let mut adc = *adc;
    saf_matvec_with(array, inputs, saf, vref, &mut adc)
}

/// Bit-serial product through any [`RowReadout`].
pub fn saf_matvec_with<R: RowReadout>(
    array: &ArrayState,
    inputs: &[u32],
    saf: &SafConfig,
    vref: &VoltageReference,
    readout: &mut R,
) -> Result<SafOutput, InterfaceError> {
    saf.validate()?;
    if inputs.len() != array.m() {
        return Err(CrossbarError::Dimension {
            expected: array.m(),
            got: inputs.len(),
        }
        .into());
    }
    if let Some(&x) = inputs
        .iter()
        .find(|&&x| saf.input_bits < 32 && x >> saf.input_bits != 0)
    {
        return Err(InterfaceError::InputRange {
            value: x as u64,
            bits: saf.input_bits,
        });
    }
    let per_lsb = array.r_row() * array.physics().g0 * array.codec().c1 * vref.v_ref;
    let mut out = SafOutput {
        values: vec![0; array.n()],
        ..SafOutput::default()
    };
    let mut vds = vec![0.0; array.m()];
    for shift in saf.plane_shifts() {
        let mut driven = 0usize;
        for (v, &x) in vds.iter_mut().zip(inputs) {
            let bit = (x >> shift) & 1;
            *v = if bit == 1 { vref.v_ref } else { 0.0 };
            driven += bit as usize;
        }
        if driven == 0 {
            // an all-zero plane drives nothing; the ADC still samples 0 V
            out.samples += array.n() as u64;
            for _ in 0..array.n() {
                readout.observe(0.0, 0);
                out.saturated += readout.convert(0.0, 0).1 as u64;
            }
            continue;
        }
        let rows = array.forward(&vds, CurrentModel::Linear)?;
        let offset = array.offset_term(&vds)?;
        for ((acc, &v), &off) in out.values.iter_mut().zip(&rows).zip(&offset) {
            readout.observe(v, driven);
            let (digital, clipped) = readout.convert(v, driven);
            out.samples += 1;
            out.saturated += clipped as u64;
            let partial = round_half_away((digital - off) / per_lsb) as i64;
            *acc += partial << shift;
        }
    }
    Ok(out)
}

/// ADC full scale equal to the largest row voltage any single plane can
/// produce: every input high, every device at the largest code.
pub fn worst_case_full_scale(array: &ArrayState, vref: &VoltageReference) -> f64 {
    let codec = array.codec();
    let (_, w_max) = codec.code_range();
    array.r_row() * array.physics().g0 * vref.v_ref * codec.overdrive(w_max) * array.m() as f64
}

/// ADC resolution from the dynamic-range argument:
/// `ceil(log2(m * 2^weight_bits)) + 2`. With a [`worst_case_full_scale`]
/// converter and the default device window, the half-step error is then
/// under 0.3 weight LSB per plane. The rest of the rounding margin absorbs
/// programming error, which is not bounded here; see
/// [`guaranteed_exact_adc_bits`].
pub fn exactness_adc_bits(m: usize, weight_bits: u32) -> u32 {
    let span = m.max(1) as u64 * (1u64 << weight_bits);
    (u64::BITS - (span - 1).leading_zeros()) + 2
}

/// Smallest ADC resolution at which [`saf_matvec`] with a
/// [`worst_case_full_scale`] converter is provably exact for every input on
/// this particular array, or `None` when worst-case programming error alone
/// could flip a rounding.
///
/// A plane's partial sum is exact when its total error stays below half a
/// weight LSB. Conversion contributes half an ADC step, or the clipping
/// excess at the top code, and programming contributes the row sum of
/// `|overdrive error| / c1`. Both are taken at their worst over the rows,
/// with every line driven.
pub fn guaranteed_exact_adc_bits(array: &ArrayState, vref: &VoltageReference) -> Option<u32> {
    let all = vec![vref.v_ref; array.m()];
    let peak = array
        .forward(&all, CurrentModel::Linear)
        .ok()?
        .into_iter()
        .fold(0.0f64, f64::max);
    let programming = array
        .programming_error_bound(&all)
        .ok()?
        .into_iter()
        .fold(0.0f64, f64::max)
        / vref.v_ref;
    let per_lsb = array.r_row() * array.physics().g0 * array.codec().c1 * vref.v_ref;
    let v_fs = worst_case_full_scale(array, vref);
    (1..=24).find(|&bits| {
        let step = v_fs / (1u64 << bits) as f64;
        let clip = peak - ((1u64 << bits) - 1) as f64 * step;
        (0.5 * step).max(clip) / per_lsb + programming < 0.5
    })
}

/// Equivalent MACs per clock: the array's `m * n` products are spread over
/// `saf_bits` sequential planes.
pub fn equivalent_macs_per_cycle(m: u64, n: u64, saf_bits: u64) -> u64 {
    assert!(saf_bits > 0, "saf_bits must be positive");
    m * n / saf_bits
}

pub fn throughput_tops(macs_per_cycle: u64, clock_hz: f64, ops_per_mac: f64) -> f64 {
    macs_per_cycle as f64 * clock_hz * ops_per_mac / 1e12
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crossbar::{program, CodeMatrix, ProgramOptions, WeightCodec};
    use crate::device::DevicePhysics;
    use proptest::prelude::*;

    #[test]
    fn decompose_examples() {
        assert_eq!(decompose(0, 8).unwrap(), vec![0; 8]);
        assert_eq!(decompose(255, 8).unwrap(), vec![1; 8]);
        assert_eq!(decompose(178, 8).unwrap(), vec![1, 0, 1, 1, 0, 0, 1, 0]);
        assert!(matches!(
            decompose(256, 8),
            Err(InterfaceError::InputRange { value: 256, bits: 8 })
        ));
    }

    #[test]
    fn quantize_examples() {
        let adc = AdcConfig::new(8, 1.0).unwrap();
        assert_eq!(quantize(&adc, -0.3), 0);
        assert_eq!(quantize(&adc, 0.0), 0);
        assert_eq!(quantize(&adc, 1.0), 255);
        assert_eq!(quantize(&adc, 7.0), 255);
        assert_eq!(quantize(&adc, 0.5), 128);
        assert!(adc.sample(1.0).1);
        assert!(!adc.sample(0.5).1);
    }

    #[test]
    fn adc_config_validation() {
        assert!(AdcConfig::new(0, 1.0).is_err());
        assert!(AdcConfig::new(25, 1.0).is_err());
        assert!(AdcConfig::new(8, 0.0).is_err());
        assert!(AdcConfig::new(24, 1.0).is_ok());
    }

    #[test]
    fn mac_accounting() {
        assert_eq!(equivalent_macs_per_cycle(784, 784, 8), 76_832);
        assert_eq!(exactness_adc_bits(6, 4), 9);
        assert_eq!(exactness_adc_bits(8, 4), 9);
        assert_eq!(exactness_adc_bits(1, 2), 4);
        assert_eq!(equivalent_macs_per_cycle(1, 1, 1), 1);
        assert_eq!(equivalent_macs_per_cycle(784, 784, 1), 614_656);
        assert!((throughput_tops(76_832, 500e6, 2.0) - 76.832).abs() < 1e-9);
        assert_eq!(throughput_tops(0, 500e6, 2.0), 0.0);
        assert!((throughput_tops(614_656, 500e6, 2.0) - 614.656).abs() < 1e-9);
    }

    fn one_row(weights: &[i32], wb: u32) -> (ArrayState, VoltageReference) {
        let p = DevicePhysics::default();
        let codec = WeightCodec::spanning(wb, &p);
        let rows: Vec<Vec<i32>> = weights.iter().map(|&w| vec![w]).collect();
        let (a, _) = program(
            &CodeMatrix::from_rows(&rows).unwrap(),
            &p,
            &codec,
            1.0,
            &ProgramOptions::default(),
        )
        .unwrap();
        let vref = VoltageReference::for_array(0.1, &a).unwrap();
        (a, vref)
    }

    #[test]
    fn saf_zero_input() {
        let (a, vref) = one_row(&[1, 2, 3, 4], 4);
        let adc = AdcConfig::new(12, worst_case_full_scale(&a, &vref)).unwrap();
        let out = saf_matvec(&a, &[0; 4], &SafConfig::default(), &adc, &vref).unwrap();
        assert_eq!(out.values, vec![0]);
    }

    #[test]
    fn saf_small_dot_product() {
        let (a, vref) = one_row(&[1, 2, 3, 4], 4);
        let adc = AdcConfig::new(24, worst_case_full_scale(&a, &vref)).unwrap();
        let out = saf_matvec(&a, &[1, 1, 1, 1], &SafConfig::default(), &adc, &vref).unwrap();
        assert_eq!(out.values, vec![10]);
        let lsb_first = SafConfig {
            order: BitOrder::LsbFirst,
            ..SafConfig::default()
        };
        let out = saf_matvec(&a, &[200, 3, 0, 255], &lsb_first, &adc, &vref).unwrap();
        assert_eq!(out.values, vec![200 + 6 + 4 * 255]);
    }

    #[test]
    fn saf_rejects_wide_inputs_and_bad_reference() {
        let (a, vref) = one_row(&[1, 2], 4);
        let adc = AdcConfig::new(10, worst_case_full_scale(&a, &vref)).unwrap();
        let saf = SafConfig {
            input_bits: 4,
            ..SafConfig::default()
        };
        assert!(matches!(
            saf_matvec(&a, &[16, 0], &saf, &adc, &vref),
            Err(InterfaceError::InputRange { value: 16, bits: 4 })
        ));
        assert!(VoltageReference::for_array(0.53, &a).is_err());
        assert!(VoltageReference::for_array(0.0, &a).is_err());
    }

    #[test]
    fn threshold_is_exact_and_tight() {
        let p = DevicePhysics::default();
        let codec = WeightCodec::spanning(3, &p);
        let w = CodeMatrix::from_rows(&[vec![3, -4], vec![-2, 1], vec![0, 3]]).unwrap();
        let opts = ProgramOptions {
            mode: crate::crossbar::ProgrammingMode::Continuous,
            ..ProgramOptions::default()
        };
        let (a, _) = program(&w, &p, &codec, 1.0, &opts).unwrap();
        let vref = VoltageReference::for_array(0.1, &a).unwrap();
        let bits = guaranteed_exact_adc_bits(&a, &vref).unwrap();
        let saf = SafConfig {
            input_bits: 3,
            ..SafConfig::default()
        };
        let adc = AdcConfig::new(bits, worst_case_full_scale(&a, &vref)).unwrap();
        for x0 in 0..8 {
            for x1 in 0..8 {
                for x2 in 0..8 {
                    let out = saf_matvec(&a, &[x0, x1, x2], &saf, &adc, &vref).unwrap();
                    let x = [x0 as i64, x1 as i64, x2 as i64];
                    let want: Vec<i64> = (0..2).map(|j| (0..3).map(|i| x[i] * w.get(i, j) as i64).sum()).collect();
                    assert_eq!(out.values, want, "x = {x:?}");
                }
            }
        }
        // two bits fewer loses exactness somewhere
        let coarse = AdcConfig::new(bits - 2, worst_case_full_scale(&a, &vref)).unwrap();
        let wrong = (0..512u32).any(|k| {
            let x = [k & 7, (k >> 3) & 7, k >> 6];
            let out = saf_matvec(&a, &x, &saf, &coarse, &vref).unwrap();
            (0..2).any(|j| out.values[j] != (0..3).map(|i| x[i] as i64 * w.get(i, j) as i64).sum::<i64>())
        });
        assert!(wrong);
    }

    #[test]
    fn coarse_adc_counts_clipping() {
        let (a, vref) = one_row(&[7, 7, 7, 7], 4);
        let adc = AdcConfig::new(2, 0.5 * worst_case_full_scale(&a, &vref)).unwrap();
        let out = saf_matvec(&a, &[15; 4], &SafConfig::default(), &adc, &vref).unwrap();
        assert_eq!(out.samples, 8);
        assert!(out.saturated > 0);
    }

    proptest! {
        #[test]
        fn planes_reassemble(bits in 1u32..=16, seed in any::<u64>()) {
            let x = seed & ((1u64 << bits) - 1);
            let planes = decompose(x, bits).unwrap();
            let back = planes
                .iter()
                .fold(0u64, |acc, &b| (acc << 1) | b as u64);
            prop_assert_eq!(back, x);
        }

        #[test]
        fn quantizer_is_monotone(bits in 1u32..=16, a in -0.5f64..1.5, b in -0.5f64..1.5) {
            let adc = AdcConfig::new(bits, 1.0).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize(&adc, lo) <= quantize(&adc, hi));
        }

        #[test]
        fn quantizer_stable_away_from_boundaries(bits in 1u32..=12, code in 0u32..4096) {
            let adc = AdcConfig::new(bits, 1.0).unwrap();
            let code = code.min(adc.max_code());
            let centre = code as f64 * adc.lsb();
            for d in [-0.24, 0.0, 0.24] {
                prop_assert_eq!(quantize(&adc, centre + d * adc.lsb()), code);
            }
        }
    }
}
