//! The M x N multiplication array.
//!
//! Input `i` drives drain line `i`; every device on that line sees the same
//! `vds_i` (row buffers are ideal). Output row `j` sums the currents of
//! devices `(0..m, j)` through `r_row`.
//!
//! A signed weight code `w` is stored as the overdrive `c0 + c1 * w`. The row
//! voltage then splits into the wanted `c1 * sum(vds_i * w_ij)` part and a
//! weight-independent `c0 * sum(vds_i)` part that is removed digitally.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{FormatError, LeReader, LeWriter};
use crate::device::{
    apply_pulses, pulses_for_target, CurrentModel, DeviceError, DevicePhysics, DeviceState,
    PulseConditions,
};

const SNAPSHOT_MAGIC: [u8; 4] = *b"CTTA";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CrossbarError {
    #[error("weight {value} at ({i}, {j}) outside code range [{min}, {max}]")]
    WeightOutOfRange {
        i: usize,
        j: usize,
        value: i32,
        min: i32,
        max: i32,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("negative drive {vds} V on input {i}")]
    NegativeDrive { i: usize, vds: f64 },
    #[error("device ({i}, {j}) leaves triode: vds {vds} V >= overdrive {overdrive} V")]
    NotTriode {
        i: usize,
        j: usize,
        vds: f64,
        overdrive: f64,
    },
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("snapshot: {0}")]
    Snapshot(#[from] FormatError),
}

/// Affine map between signed integer weights and device overdrive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightCodec {
    pub weight_bits: u32,
    /// Overdrive of a zero weight (V).
    pub c0: f64,
    /// Overdrive per weight LSB (V).
    pub c1: f64,
}

impl WeightCodec {
    /// Codec that spreads the full signed code range over the threshold window,
    /// with the most negative code at the smallest overdrive.
    pub fn spanning(weight_bits: u32, physics: &DevicePhysics) -> Self {
        let levels = 2f64.powi(weight_bits as i32);
        let c1 = physics.window() / levels;
        let c0 = physics.min_overdrive() + c1 * levels / 2.0;
        Self { weight_bits, c0, c1 }
    }

    pub fn code_range(&self) -> (i32, i32) {
        let half = 1i64 << (self.weight_bits - 1);
        (-half as i32, (half - 1) as i32)
    }

    pub fn overdrive(&self, code: i32) -> f64 {
        self.c0 + self.c1 * code as f64
    }

    pub fn target_vt(&self, code: i32, physics: &DevicePhysics) -> f64 {
        (physics.v_gs - self.overdrive(code)).clamp(physics.vt_min, physics.vt_max)
    }

    pub fn validate(&self, physics: &DevicePhysics) -> Result<(), CrossbarError> {
        if !(1..=16).contains(&self.weight_bits) {
            return Err(CrossbarError::Config(format!(
                "weight_bits must be in 1..=16, got {}",
                self.weight_bits
            )));
        }
        if !(self.c1 > 0.0) || !self.c0.is_finite() || !self.c1.is_finite() {
            return Err(CrossbarError::Config(format!(
                "codec needs finite c0 and c1 > 0, got c0={} c1={}",
                self.c0, self.c1
            )));
        }
        let (lo, hi) = self.code_range();
        let tol = 1e-12;
        let od_lo = self.overdrive(lo);
        let od_hi = self.overdrive(hi);
        if od_lo < physics.min_overdrive() - tol || od_hi > physics.max_overdrive() + tol {
            return Err(CrossbarError::Config(format!(
                "codec overdrive range [{od_lo}, {od_hi}] V exceeds device window [{}, {}] V",
                physics.min_overdrive(),
                physics.max_overdrive()
            )));
        }
        Ok(())
    }
}

/// Dense `m x n` integer weight codes, input-major: entry `(i, j)` at `i * n + j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeMatrix {
    m: usize,
    n: usize,
    data: Vec<i32>,
}

impl CodeMatrix {
    pub fn new(m: usize, n: usize, data: Vec<i32>) -> Result<Self, CrossbarError> {
        if data.len() != m * n {
            return Err(CrossbarError::Dimension {
                expected: m * n,
                got: data.len(),
            });
        }
        if m == 0 || n == 0 {
            return Err(CrossbarError::Config("array dimensions must be non-zero".into()));
        }
        Ok(Self { m, n, data })
    }

    pub fn from_rows(rows: &[Vec<i32>]) -> Result<Self, CrossbarError> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(CrossbarError::Config("ragged weight rows".into()));
        }
        Self::new(m, n, rows.concat())
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            m,
            n,
            data: vec![0; m * n],
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> i32 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProgrammingMode {
    /// Counted pulse trains; thresholds land on the pulse grid.
    #[default]
    Pulsed,
    /// Thresholds set exactly to target. Pulse counts are still reported.
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProgramOptions {
    pub mode: ProgrammingMode,
    /// Threshold of an unprogrammed device. `None` means `vt_max`.
    pub initial_vt: Option<f64>,
    /// Read-verify-retry passes after the first pulse train.
    pub verify_retries: u32,
    /// Acceptable |achieved - target| before a retry is issued (V).
    pub verify_tolerance: f64,
}

impl Default for ProgramOptions {
    fn default() -> Self {
        Self {
            mode: ProgrammingMode::Pulsed,
            initial_vt: None,
            verify_retries: 0,
            verify_tolerance: 1e-4,
        }
    }
}

/// Pulse accounting for one programming pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgrammingReport {
    pub max_pulses: u64,
    /// Programming clock cycles: columns are written one after another and a
    /// column takes as long as the longest pulse train in the array.
    pub total_cycles: u64,
    pub per_column_pulses: Vec<u64>,
    pub verify_retries_used: u64,
}

/// A programmed array.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayState {
    m: usize,
    n: usize,
    r_row: f64,
    physics: DevicePhysics,
    codec: WeightCodec,
    devices: Vec<DeviceState>,
    codes: CodeMatrix,
    overdrive: Vec<f64>,
    line_min_overdrive: Vec<f64>,
}

/// Programs `weights` into a fresh array.
pub fn program(
    weights: &CodeMatrix,
    physics: &DevicePhysics,
    codec: &WeightCodec,
    r_row: f64,
    options: &ProgramOptions,
) -> Result<(ArrayState, ProgrammingReport), CrossbarError> {
    physics.validate()?;
    codec.validate(physics)?;
    if !(r_row > 0.0) || !r_row.is_finite() {
        return Err(CrossbarError::Config(format!("r_row must be > 0, got {r_row}")));
    }
    let (lo, hi) = codec.code_range();
    let (m, n) = (weights.m(), weights.n());
    for i in 0..m {
        for j in 0..n {
            let value = weights.get(i, j);
            if value < lo || value > hi {
                return Err(CrossbarError::WeightOutOfRange {
                    i,
                    j,
                    value,
                    min: lo,
                    max: hi,
                });
            }
        }
    }
    let fresh = DeviceState::new(options.initial_vt.unwrap_or(physics.vt_max), physics)?;

    let mut devices = Vec::with_capacity(m * n);
    let mut per_column_pulses = vec![0u64; m];
    let mut retries_used = 0u64;
    for i in 0..m {
        // the n devices on drain line i are written in parallel
        for j in 0..n {
            let target = codec.target_vt(weights.get(i, j), physics);
            let (count, polarity) = pulses_for_target(fresh, physics, target)?;
            let mut pulses = count as u64;
            let state = match options.mode {
                ProgrammingMode::Continuous => DeviceState { vt: target },
                ProgrammingMode::Pulsed => {
                    let mut state = apply_pulses(fresh, physics, count, polarity);
                    for _ in 0..options.verify_retries {
                        if (state.vt - target).abs() <= options.verify_tolerance {
                            break;
                        }
                        let (extra, pol) = pulses_for_target(state, physics, target)?;
                        if extra == 0 {
                            break;
                        }
                        state = apply_pulses(state, physics, extra, pol);
                        pulses += extra as u64;
                        retries_used += 1;
                    }
                    state
                }
            };
            per_column_pulses[i] = per_column_pulses[i].max(pulses);
            devices.push(state);
        }
    }
    let max_pulses = per_column_pulses.iter().copied().max().unwrap_or(0);
    let report = ProgrammingReport {
        max_pulses,
        total_cycles: m as u64 * max_pulses,
        per_column_pulses,
        verify_retries_used: retries_used,
    };
    let array = ArrayState::from_parts(r_row, *physics, *codec, devices, weights.clone())?;
    Ok((array, report))
}

impl ArrayState {
    fn from_parts(
        r_row: f64,
        physics: DevicePhysics,
        codec: WeightCodec,
        devices: Vec<DeviceState>,
        codes: CodeMatrix,
    ) -> Result<Self, CrossbarError> {
        let (m, n) = (codes.m(), codes.n());
        if devices.len() != m * n {
            return Err(CrossbarError::Dimension {
                expected: m * n,
                got: devices.len(),
            });
        }
        for d in &devices {
            DeviceState::new(d.vt, &physics)?;
        }
        let overdrive: Vec<f64> = devices.iter().map(|d| d.overdrive(&physics)).collect();
        let line_min_overdrive = overdrive
            .chunks_exact(n)
            .map(|line| line.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        Ok(Self {
            m,
            n,
            r_row,
            physics,
            codec,
            devices,
            codes,
            overdrive,
            line_min_overdrive,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r_row(&self) -> f64 {
        self.r_row
    }

    pub fn physics(&self) -> &DevicePhysics {
        &self.physics
    }

    pub fn codec(&self) -> &WeightCodec {
        &self.codec
    }

    pub fn codes(&self) -> &CodeMatrix {
        &self.codes
    }

    pub fn device(&self, i: usize, j: usize) -> DeviceState {
        self.devices[i * self.n + j]
    }

    /// Smallest overdrive over all devices; the global triode bound on drive.
    pub fn min_overdrive(&self) -> f64 {
        self.line_min_overdrive
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Achieved minus target overdrive for device `(i, j)`.
    pub fn programming_error(&self, i: usize, j: usize) -> f64 {
        self.overdrive[i * self.n + j] - self.codec.overdrive(self.codes.get(i, j))
    }

    fn check_drive(&self, vds: &[f64]) -> Result<(), CrossbarError> {
        if vds.len() != self.m {
            return Err(CrossbarError::Dimension {
                expected: self.m,
                got: vds.len(),
            });
        }
        for (i, &v) in vds.iter().enumerate() {
            if !(v >= 0.0) {
                return Err(CrossbarError::NegativeDrive { i, vds: v });
            }
            if v > 0.0 && v >= self.line_min_overdrive[i] {
                let line = &self.overdrive[i * self.n..(i + 1) * self.n];
                let j = line.iter().position(|&od| v >= od).unwrap_or(0);
                return Err(CrossbarError::NotTriode {
                    i,
                    j,
                    vds: v,
                    overdrive: line[j],
                });
            }
        }
        Ok(())
    }

    /// Row voltages `r_row * sum_i I_D(i, j)`.
    pub fn forward(&self, vds: &[f64], model: CurrentModel) -> Result<Vec<f64>, CrossbarError> {
        self.check_drive(vds)?;
        let mut acc = vec![0.0; self.n];
        for (i, &v) in vds.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let line = &self.overdrive[i * self.n..(i + 1) * self.n];
            match model {
                CurrentModel::Linear => {
                    for (a, &od) in acc.iter_mut().zip(line) {
                        *a += v * od;
                    }
                }
                CurrentModel::Quadratic => {
                    let half_sq = 0.5 * v * v;
                    for (a, &od) in acc.iter_mut().zip(line) {
                        *a += v * od - half_sq;
                    }
                }
            }
        }
        let gain = self.r_row * self.physics.g0;
        acc.iter_mut().for_each(|a| *a *= gain);
        Ok(acc)
    }

    /// Weight-independent part of the linear-mode row voltage under ideal
    /// codec programming: `r_row * g0 * c0 * sum(vds)` on every row.
    pub fn offset_term(&self, vds: &[f64]) -> Result<Vec<f64>, CrossbarError> {
        self.check_drive(vds)?;
        let total: f64 = vds.iter().sum();
        Ok(vec![self.r_row * self.physics.g0 * self.codec.c0 * total; self.n])
    }

    /// Offset-free matrix-vector product in weight units: approximately
    /// `sum_i vds_i * w_ij`, off only by programming quantization.
    pub fn calibrated_matvec(&self, vds: &[f64]) -> Result<Vec<f64>, CrossbarError> {
        let out = self.forward(vds, CurrentModel::Linear)?;
        let offset = self.offset_term(vds)?;
        let gain = self.r_row * self.physics.g0 * self.codec.c1;
        Ok(out
            .iter()
            .zip(&offset)
            .map(|(o, off)| (o - off) / gain)
            .collect())
    }

    /// Per-row bound on `|calibrated_matvec - exact|` from the measured
    /// per-device programming errors.
    pub fn programming_error_bound(&self, vds: &[f64]) -> Result<Vec<f64>, CrossbarError> {
        self.check_drive(vds)?;
        let mut bound = vec![0.0; self.n];
        for (i, &v) in vds.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (j, b) in bound.iter_mut().enumerate() {
                *b += v * self.programming_error(i, j).abs();
            }
        }
        bound.iter_mut().for_each(|b| *b /= self.codec.c1);
        Ok(bound)
    }

    /// Writes the versioned little-endian snapshot: header, then per device
    /// `(code: i32, vt: f64)` in input-major order.
    pub fn write_snapshot<W: Write>(&self, out: W) -> Result<(), CrossbarError> {
        let mut w = LeWriter::new(out);
        let io = |e: std::io::Error| CrossbarError::Snapshot(FormatError::Io(e));
        (|| -> std::io::Result<()> {
            w.bytes(&SNAPSHOT_MAGIC)?;
            w.u32(SNAPSHOT_VERSION)?;
            w.u32(self.m as u32)?;
            w.u32(self.n as u32)?;
            w.f64(self.r_row)?;
            let p = &self.physics;
            for v in [p.g0, p.v_gs, p.vt_min, p.vt_max, p.tau_trap, p.tau_detrap] {
                w.f64(v)?;
            }
            let pc = &p.pulses;
            for v in [pc.trap_gate_v, pc.trap_drain_v, pc.detrap_gate_v, pc.detrap_drain_v] {
                w.f64(v)?;
            }
            w.u32(self.codec.weight_bits)?;
            w.f64(self.codec.c0)?;
            w.f64(self.codec.c1)?;
            for (code, dev) in self.codes.as_slice().iter().zip(&self.devices) {
                w.i32(*code)?;
                w.f64(dev.vt)?;
            }
            w.flush()
        })()
        .map_err(io)
    }

    pub fn read_snapshot<R: Read>(input: R) -> Result<Self, CrossbarError> {
        let mut r = LeReader::new(input);
        r.magic(SNAPSHOT_MAGIC)?;
        let version = r.u32("version")?;
        if version != SNAPSHOT_VERSION {
            return Err(FormatError::Version(version).into());
        }
        let m = r.u32("m")? as usize;
        let n = r.u32("n")? as usize;
        let r_row = r.f64("r_row")?;
        let physics = DevicePhysics {
            g0: r.f64("g0")?,
            v_gs: r.f64("v_gs")?,
            vt_min: r.f64("vt_min")?,
            vt_max: r.f64("vt_max")?,
            tau_trap: r.f64("tau_trap")?,
            tau_detrap: r.f64("tau_detrap")?,
            pulses: PulseConditions {
                trap_gate_v: r.f64("trap_gate_v")?,
                trap_drain_v: r.f64("trap_drain_v")?,
                detrap_gate_v: r.f64("detrap_gate_v")?,
                detrap_drain_v: r.f64("detrap_drain_v")?,
            },
        };
        physics.validate()?;
        let codec = WeightCodec {
            weight_bits: r.u32("weight_bits")?,
            c0: r.f64("c0")?,
            c1: r.f64("c1")?,
        };
        codec.validate(&physics)?;
        let count = m.checked_mul(n).ok_or_else(|| {
            CrossbarError::Config(format!("snapshot dimensions {m} x {n} overflow"))
        })?;
        let mut codes = Vec::with_capacity(count);
        let mut devices = Vec::with_capacity(count);
        for _ in 0..count {
            codes.push(r.i32("device code")?);
            devices.push(DeviceState {
                vt: r.f64("device vt")?,
            });
        }
        let codes = CodeMatrix::new(m, n, codes)?;
        Self::from_parts(r_row, physics, codec, devices, codes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::drain_current;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_codec() -> WeightCodec {
        WeightCodec {
            weight_bits: 4,
            c0: 0.4,
            c1: 1e-3,
        }
    }

    fn continuous() -> ProgramOptions {
        ProgramOptions {
            mode: ProgrammingMode::Continuous,
            ..ProgramOptions::default()
        }
    }

    #[test]
    fn spanning_codec_fills_the_window() {
        let p = DevicePhysics::default();
        let c = WeightCodec::spanning(8, &p);
        c.validate(&p).unwrap();
        assert!((c.overdrive(-128) - 0.3).abs() < 1e-12);
        assert!((c.c0 - 0.5).abs() < 1e-12);
        assert!((c.c1 - 0.4 / 256.0).abs() < 1e-15);
    }

    #[test]
    fn codec_outside_window_is_a_config_error() {
        let p = DevicePhysics::default();
        let c = WeightCodec {
            weight_bits: 8,
            c0: 0.4,
            c1: 0.4 / 256.0,
        };
        assert!(matches!(c.validate(&p), Err(CrossbarError::Config(_))));
    }

    #[test]
    fn zero_weights_already_in_place_need_no_pulses() {
        let p = DevicePhysics::default();
        let codec = small_codec();
        let opts = ProgramOptions {
            initial_vt: Some(p.v_gs - codec.c0),
            ..ProgramOptions::default()
        };
        let (_, report) = program(&CodeMatrix::zeros(3, 5), &p, &codec, 1.0, &opts).unwrap();
        assert_eq!(report.max_pulses, 0);
        assert_eq!(report.total_cycles, 0);
    }

    #[test]
    fn programming_cycles_are_columns_times_longest_train() {
        let p = DevicePhysics::default();
        let codec = WeightCodec::spanning(8, &p);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = (0..784 * 4).map(|_| rng.random_range(-128..=127)).collect();
        let w = CodeMatrix::new(784, 4, data).unwrap();
        let (_, report) = program(&w, &p, &codec, 1.0, &ProgramOptions::default()).unwrap();
        assert!(report.max_pulses > 0);
        assert_eq!(report.total_cycles, 784 * report.max_pulses);
        assert_eq!(report.per_column_pulses.len(), 784);
    }

    #[test]
    fn affine_overdrive_targets() {
        let p = DevicePhysics::default();
        let w = CodeMatrix::from_rows(&[vec![1, -1], vec![0, 2]]).unwrap();
        let (a, _) = program(&w, &p, &small_codec(), 1.0, &continuous()).unwrap();
        let expect = [[0.401, 0.399], [0.400, 0.402]];
        for (i, row) in expect.iter().enumerate() {
            for (j, &od) in row.iter().enumerate() {
                assert!((a.device(i, j).overdrive(&p) - od).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_weight_is_an_encoding_error() {
        let p = DevicePhysics::default();
        let w = CodeMatrix::from_rows(&[vec![8]]).unwrap();
        let err = program(&w, &p, &small_codec(), 1.0, &continuous()).unwrap_err();
        assert!(matches!(err, CrossbarError::WeightOutOfRange { value: 8, .. }));
    }

    #[test]
    fn single_device_forward() {
        let p = DevicePhysics::default();
        let codec = WeightCodec {
            weight_bits: 4,
            c0: 0.6,
            c1: 1e-3,
        };
        let w = CodeMatrix::from_rows(&[vec![0]]).unwrap();
        let (a, _) = program(&w, &p, &codec, 1.0, &continuous()).unwrap();
        let out = a.forward(&[0.1], CurrentModel::Linear).unwrap();
        assert!((out[0] - 0.06).abs() < 1e-12);
        assert_eq!(a.forward(&[0.0], CurrentModel::Linear).unwrap(), vec![0.0]);
    }

    #[test]
    fn forward_matches_per_device_currents() {
        let p = DevicePhysics::default();
        let codec = WeightCodec::spanning(8, &p);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = (0..5 * 3).map(|_| rng.random_range(-128..=127)).collect();
        let w = CodeMatrix::new(5, 3, data).unwrap();
        let (a, _) = program(&w, &p, &codec, 2.5, &ProgramOptions::default()).unwrap();
        let vds: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..0.29)).collect();
        for model in [CurrentModel::Linear, CurrentModel::Quadratic] {
            let out = a.forward(&vds, model).unwrap();
            for (j, &o) in out.iter().enumerate() {
                let direct: f64 = (0..5)
                    .map(|i| drain_current(&p, a.device(i, j).vt, vds[i], model).unwrap())
                    .sum::<f64>()
                    * 2.5;
                assert!((o - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn superposition_in_linear_mode() {
        let p = DevicePhysics::default();
        let w = CodeMatrix::from_rows(&[vec![3], vec![-5]]).unwrap();
        let (a, _) = program(&w, &p, &small_codec(), 1.0, &ProgramOptions::default()).unwrap();
        let f = |v: &[f64]| a.forward(v, CurrentModel::Linear).unwrap()[0];
        assert!((f(&[0.1, 0.0]) + f(&[0.0, 0.2]) - f(&[0.1, 0.2])).abs() < 1e-15);
    }

    #[test]
    fn triode_violation_names_the_device() {
        let p = DevicePhysics::default();
        let w = CodeMatrix::from_rows(&[vec![0, 0], vec![0, -7]]).unwrap();
        let (a, _) = program(&w, &p, &small_codec(), 1.0, &continuous()).unwrap();
        // device (1, 1) has overdrive 0.393
        let err = a.forward(&[0.0, 0.395], CurrentModel::Linear).unwrap_err();
        assert!(matches!(err, CrossbarError::NotTriode { i: 1, j: 1, .. }));
        assert!(a.offset_term(&[0.0, 0.395]).is_err());
        assert!(matches!(
            a.forward(&[-0.1, 0.0], CurrentModel::Linear),
            Err(CrossbarError::NegativeDrive { i: 0, .. })
        ));
    }

    #[test]
    fn offset_term_values() {
        let p = DevicePhysics::default();
        let w = CodeMatrix::from_rows(&[vec![1, -3, 2], vec![4, 0, -1]]).unwrap();
        let (a, _) = program(&w, &p, &small_codec(), 1.0, &continuous()).unwrap();
        assert_eq!(a.offset_term(&[0.0, 0.0]).unwrap(), vec![0.0; 3]);
        for off in a.offset_term(&[0.1, 0.1]).unwrap() {
            assert!((off - 0.08).abs() < 1e-15);
        }
        let w2 = CodeMatrix::from_rows(&[vec![-1, 4, 0], vec![2, -3, 1]]).unwrap();
        let (b, _) = program(&w2, &p, &small_codec(), 1.0, &continuous()).unwrap();
        assert_eq!(
            a.offset_term(&[0.05, 0.2]).unwrap(),
            b.offset_term(&[0.05, 0.2]).unwrap()
        );
    }

    #[test]
    fn calibrated_single_device() {
        let p = DevicePhysics::default();
        let w = CodeMatrix::from_rows(&[vec![5]]).unwrap();
        let (a, _) = program(&w, &p, &small_codec(), 1.0, &continuous()).unwrap();
        assert!((a.calibrated_matvec(&[0.1]).unwrap()[0] - 0.5).abs() < 1e-9);
        assert_eq!(a.calibrated_matvec(&[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn pulsed_matvec_within_measured_bound() {
        let p = DevicePhysics::default();
        let codec = WeightCodec::spanning(4, &p);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<i32> = (0..12).map(|_| rng.random_range(-8..=7)).collect();
        let w = CodeMatrix::new(4, 3, data).unwrap();
        let (a, _) = program(&w, &p, &codec, 1.0, &ProgramOptions::default()).unwrap();
        let vds: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..0.29)).collect();
        let got = a.calibrated_matvec(&vds).unwrap();
        let bound = a.programming_error_bound(&vds).unwrap();
        for j in 0..3 {
            let exact: f64 = (0..4).map(|i| vds[i] * w.get(i, j) as f64).sum();
            assert!((got[j] - exact).abs() <= bound[j] + 1e-9);
        }
    }

    #[test]
    fn quadratic_deviation_is_analytic() {
        let p = DevicePhysics::default();
        let codec = WeightCodec::spanning(8, &p);
        let w = CodeMatrix::from_rows(&[vec![10, -20], vec![100, 0], vec![-128, 127]]).unwrap();
        let (a, _) = program(&w, &p, &codec, 1.7, &ProgramOptions::default()).unwrap();
        let vds = [0.02, 0.15, 0.29];
        let lin = a.forward(&vds, CurrentModel::Linear).unwrap();
        let quad = a.forward(&vds, CurrentModel::Quadratic).unwrap();
        let expected = 1.7 * p.g0 * 0.5 * vds.iter().map(|v| v * v).sum::<f64>();
        for j in 0..2 {
            assert!(((lin[j] - quad[j]) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn verify_retry_never_worsens_landing() {
        let p = DevicePhysics::default();
        let codec = WeightCodec::spanning(8, &p);
        let w = CodeMatrix::from_rows(&[vec![-100, 7, 127]]).unwrap();
        let plain = program(&w, &p, &codec, 1.0, &ProgramOptions::default()).unwrap();
        let verified = program(
            &w,
            &p,
            &codec,
            1.0,
            &ProgramOptions {
                verify_retries: 3,
                verify_tolerance: 1e-9,
                ..ProgramOptions::default()
            },
        )
        .unwrap();
        for j in 0..3 {
            let before = plain.0.programming_error(0, j).abs();
            let after = verified.0.programming_error(0, j).abs();
            assert!(after <= before, "device {j}: {after} > {before}");
        }
        // an overshoot is corrected by the opposite polarity, whose steps
        // near this threshold are finer
        assert!(verified.1.verify_retries_used > 0);
        assert!(verified.0.programming_error(0, 0).abs() < plain.0.programming_error(0, 0).abs());
    }

    #[test]
    fn snapshot_round_trip() {
        let p = DevicePhysics::default();
        let codec = WeightCodec::spanning(8, &p);
        let w = CodeMatrix::from_rows(&[vec![1, 2, 3], vec![-4, -5, 127]]).unwrap();
        let (a, _) = program(&w, &p, &codec, 3.0, &ProgramOptions::default()).unwrap();
        let mut buf = Vec::new();
        a.write_snapshot(&mut buf).unwrap();
        let b = ArrayState::read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(a, b);
        let err = ArrayState::read_snapshot(&buf[..buf.len() - 3]).unwrap_err();
        assert!(matches!(
            err,
            CrossbarError::Snapshot(FormatError::Truncated("device vt"))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            ArrayState::read_snapshot(bad.as_slice()),
            Err(CrossbarError::Snapshot(FormatError::BadMagic { .. }))
        ));
    }
}
