//! Fully-connected networks: a float reference path and the engine path that
//! runs every layer through a programmed array and the bit-serial interface.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{FormatError, LeReader, LeWriter};
use crate::crossbar::{program, ArrayState, CodeMatrix, CrossbarError, ProgramOptions, ProgrammingReport, WeightCodec};
use crate::dataset::{to_input_bytes, MnistSet};
use crate::device::DevicePhysics;
use crate::fixed::{round_half_away, FixedPointFormat};
use crate::mixed_signal::{
    saf_matvec_with, worst_case_full_scale, AdcConfig, BitOrder, InterfaceError, PeakProbe, RowReadout, SafConfig, TrackingAdc,
    VoltageReference,
};

const MODEL_MAGIC: [u8; 4] = *b"CTTM";
const QMODEL_MAGIC: [u8; 4] = *b"CTTQ";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("layer {layer}: expected {expected} inputs, got {got}")]
    Dimension { layer: usize, expected: usize, got: usize },
    #[error("invalid model: {0}")]
    Model(String),
    #[error("invalid engine configuration: {0}")]
    Config(String),
    #[error("model file: {0}")]
    Format(#[from] FormatError),
    #[error(transparent)]
    Array(#[from] CrossbarError),
    #[error(transparent)]
    Interface(#[from] InterfaceError),
}

impl From<std::io::Error> for NetworkError {
    fn from(e: std::io::Error) -> Self {
        NetworkError::Format(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Sigmoid,
    None,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::None => x,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::None => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, FormatError> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Sigmoid),
            2 => Ok(Activation::None),
            t => Err(FormatError::Invalid {
                field: "activation",
                reason: format!("unknown tag {t}"),
            }),
        }
    }
}

/// `y = act(x W + b)` with `W` stored fan-in by fan-out.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f32>,
    pub bias: Option<Array1<f32>>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcnnModel {
    layers: Vec<DenseLayer>,
}

impl FcnnModel {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self, NetworkError> {
        if layers.is_empty() {
            return Err(NetworkError::Model("a model needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.fan_in() == 0 || layer.fan_out() == 0 {
                return Err(NetworkError::Model(format!("layer {k} has an empty dimension")));
            }
            if k > 0 && layers[k - 1].fan_out() != layer.fan_in() {
                return Err(NetworkError::Dimension {
                    layer: k,
                    expected: layers[k - 1].fan_out(),
                    got: layer.fan_in(),
                });
            }
            if let Some(b) = &layer.bias {
                if b.len() != layer.fan_out() {
                    return Err(NetworkError::Model(format!(
                        "layer {k}: bias has {} entries for {} outputs",
                        b.len(),
                        layer.fan_out()
                    )));
                }
            }
            let finite = layer.weights.iter().chain(layer.bias.iter().flatten()).all(|v| v.is_finite());
            if !finite {
                return Err(NetworkError::Model(format!("layer {k} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// Widths from input to output, e.g. `[784, 300, 10]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.fan_out())).collect()
    }

    /// Outputs of every layer for a batch of row-vector inputs.
    pub fn forward_trace(&self, x: &Array2<f32>) -> Result<Vec<Array2<f32>>, NetworkError> {
        if x.ncols() != self.input_dim() {
            return Err(NetworkError::Dimension {
                layer: 0,
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let mut outs: Vec<Array2<f32>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = outs.last().unwrap_or(x);
            let mut z = input.dot(&layer.weights);
            if let Some(b) = &layer.bias {
                z += b;
            }
            let act = layer.activation;
            z.mapv_inplace(|v| act.apply(v as f64) as f32);
            outs.push(z);
        }
        Ok(outs)
    }

    pub fn forward_batch(&self, x: &Array2<f32>) -> Result<Array2<f32>, NetworkError> {
        Ok(self.forward_trace(x)?.pop().expect("at least one layer"))
    }

    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Layout: `"CTTM"`, version, layer count, then per layer fan-in,
    /// fan-out, activation tag, bias flag, row-major `f32` weights and the
    /// bias. All little-endian.
    pub fn write_to<W: Write>(&self, out: W) -> Result<(), NetworkError> {
        let mut w = LeWriter::new(out);
        w.bytes(&MODEL_MAGIC)?;
        w.u32(FORMAT_VERSION)?;
        w.u32(self.layers.len() as u32)?;
        for layer in &self.layers {
            w.u32(layer.fan_in() as u32)?;
            w.u32(layer.fan_out() as u32)?;
            w.u8(layer.activation.tag())?;
            w.u8(layer.bias.is_some() as u8)?;
            for &v in layer.weights.iter() {
                w.f32(v)?;
            }
            for &v in layer.bias.iter().flatten() {
                w.f32(v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self, NetworkError> {
        let mut r = LeReader::new(input);
        r.magic(MODEL_MAGIC)?;
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(FormatError::Version(version).into());
        }
        let count = r.u32("layer count")?;
        let mut layers = Vec::new();
        for _ in 0..count {
            let fan_in = r.u32("fan-in")? as usize;
            let fan_out = r.u32("fan-out")? as usize;
            let activation = Activation::from_tag(r.u8("activation")?)?;
            let has_bias = r.u8("bias flag")? != 0;
            let mut weights = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_in * fan_out {
                weights.push(r.f32("weights")?);
            }
            let bias = if has_bias {
                let mut b = Vec::with_capacity(fan_out);
                for _ in 0..fan_out {
                    b.push(r.f32("bias")?);
                }
                Some(Array1::from(b))
            } else {
                None
            };
            let weights = Array2::from_shape_vec((fan_in, fan_out), weights).expect("sized above");
            layers.push(DenseLayer {
                weights,
                bias,
                activation,
            });
        }
        Self::new(layers)
    }
}

/// Scores of a single image given as `[0, 1]` pixels.
pub fn float_forward(model: &FcnnModel, image: &[f32]) -> Result<Vec<f32>, NetworkError> {
    let x = Array2::from_shape_vec((1, image.len()), image.to_vec()).expect("one row");
    Ok(model.forward_batch(&x)?.into_raw_vec_and_offset().0)
}

/// Argmax; the lowest index wins ties.
pub fn classify<T: PartialOrd + Copy>(scores: &[T]) -> usize {
    assert!(!scores.is_empty(), "classify needs at least one score");
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

/// Float predictions over a whole set, in blocks.
pub fn float_predictions(model: &FcnnModel, set: &MnistSet) -> Vec<usize> {
    const BLOCK: usize = 1000;
    (0..set.len().div_ceil(BLOCK))
        .into_par_iter()
        .flat_map_iter(|b| {
            let range = b * BLOCK..((b + 1) * BLOCK).min(set.len());
            let x = pixels_to_batch(set, range);
            let scores = model.forward_batch(&x).expect("model input matches MNIST");
            scores
                .rows()
                .into_iter()
                .map(|r| classify(r.as_slice().expect("standard layout")))
                .collect::<Vec<_>>()
        })
        .collect()
}

pub(crate) fn pixels_to_batch(set: &MnistSet, range: std::ops::Range<usize>) -> Array2<f32> {
    let rows = range.len();
    let pixels = &set.pixels()[range.start * crate::dataset::PIXELS..range.end * crate::dataset::PIXELS];
    Array2::from_shape_vec((rows, crate::dataset::PIXELS), pixels.iter().map(|&p| p as f32 / 255.0).collect())
        .expect("sized from range")
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantLayer {
    pub codes: CodeMatrix,
    /// Real weight per integer code.
    pub scale: f64,
    pub bias: Option<Vec<f64>>,
    pub activation: Activation,
}

/// Integer weights plus the ranges needed to size inter-layer storage.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub layers: Vec<QuantLayer>,
    /// Largest activation seen on each hidden layer during calibration.
    pub activation_max: Vec<f64>,
    pub weight_bits: u32,
    pub input_bits: u32,
    /// Real input value of one 8-bit pixel step.
    pub input_scale: f64,
}

/// Symmetric per-layer weight quantization and activation-range calibration.
pub fn quantize_model(
    model: &FcnnModel,
    weight_bits: u32,
    input_bits: u32,
    calibration: &MnistSet,
) -> Result<QuantizedModel, NetworkError> {
    if !(2..=16).contains(&weight_bits) {
        return Err(NetworkError::Config(format!(
            "weight bits must be in 2..=16, got {weight_bits}"
        )));
    }
    if !(1..=8).contains(&input_bits) {
        return Err(NetworkError::Config(format!("input bits must be in 1..=8, got {input_bits}")));
    }
    let qmax = ((1i32 << (weight_bits - 1)) - 1) as f64;
    let mut layers = Vec::with_capacity(model.layers().len());
    for layer in model.layers() {
        let max_abs = layer.weights.iter().fold(0.0f64, |a, &w| a.max((w as f64).abs()));
        let (scale, per_unit) = if max_abs == 0.0 { (1.0, 0.0) } else { (max_abs / qmax, qmax / max_abs) };
        let codes = layer.weights.iter().map(|&w| round_half_away(w as f64 * per_unit) as i32).collect();
        layers.push(QuantLayer {
            codes: CodeMatrix::new(layer.fan_in(), layer.fan_out(), codes)?,
            scale,
            bias: layer.bias.as_ref().map(|b| b.iter().map(|&v| v as f64).collect()),
            activation: layer.activation,
        });
    }
    let hidden = model.layers().len() - 1;
    let mut activation_max = vec![0.0f64; hidden];
    if hidden > 0 && !calibration.is_empty() {
        let x = pixels_to_batch(calibration, 0..calibration.len());
        let trace = model.forward_trace(&x)?;
        for (k, out) in trace.iter().take(hidden).enumerate() {
            activation_max[k] = out.iter().fold(0.0f64, |a, &v| a.max((v as f64).abs()));
        }
    }
    Ok(QuantizedModel {
        layers,
        activation_max,
        weight_bits,
        input_bits,
        input_scale: 1.0 / 255.0,
    })
}

impl QuantizedModel {
    pub fn dequantized_weight(&self, layer: usize, i: usize, j: usize) -> f64 {
        let l = &self.layers[layer];
        l.codes.get(i, j) as f64 * l.scale
    }

    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Layout: `"CTTQ"`, version, weight bits, input bits, input scale,
    /// layer count, then per layer fan-in, fan-out, activation tag, bias flag,
    /// scale, activation max (0 for the output layer), row-major `i32` codes
    /// and `f64` bias.
    pub fn write_to<W: Write>(&self, out: W) -> Result<(), NetworkError> {
        let mut w = LeWriter::new(out);
        w.bytes(&QMODEL_MAGIC)?;
        w.u32(FORMAT_VERSION)?;
        w.u32(self.weight_bits)?;
        w.u32(self.input_bits)?;
        w.f64(self.input_scale)?;
        w.u32(self.layers.len() as u32)?;
        for (k, l) in self.layers.iter().enumerate() {
            w.u32(l.codes.m() as u32)?;
            w.u32(l.codes.n() as u32)?;
            w.u8(l.activation.tag())?;
            w.u8(l.bias.is_some() as u8)?;
            w.f64(l.scale)?;
            w.f64(self.activation_max.get(k).copied().unwrap_or(0.0))?;
            for &c in l.codes.as_slice() {
                w.i32(c)?;
            }
            for &b in l.bias.iter().flatten() {
                w.f64(b)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self, NetworkError> {
        let mut r = LeReader::new(input);
        r.magic(QMODEL_MAGIC)?;
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(FormatError::Version(version).into());
        }
        let weight_bits = r.u32("weight bits")?;
        let input_bits = r.u32("input bits")?;
        let input_scale = r.f64("input scale")?;
        let count = r.u32("layer count")? as usize;
        if count == 0 {
            return Err(NetworkError::Model("a model needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(count);
        let mut activation_max = Vec::new();
        for k in 0..count {
            let m = r.u32("fan-in")? as usize;
            let n = r.u32("fan-out")? as usize;
            let activation = Activation::from_tag(r.u8("activation")?)?;
            let has_bias = r.u8("bias flag")? != 0;
            let scale = r.f64("scale")?;
            let amax = r.f64("activation max")?;
            if k + 1 < count {
                activation_max.push(amax);
            }
            let mut codes = Vec::with_capacity(m * n);
            for _ in 0..m * n {
                codes.push(r.i32("codes")?);
            }
            let bias = if has_bias {
                let mut b = Vec::with_capacity(n);
                for _ in 0..n {
                    b.push(r.f64("bias")?);
                }
                Some(b)
            } else {
                None
            };
            if !(scale > 0.0) {
                return Err(FormatError::Invalid {
                    field: "scale",
                    reason: format!("{scale} is not positive"),
                }
                .into());
            }
            layers.push(QuantLayer {
                codes: CodeMatrix::new(m, n, codes)?,
                scale,
                bias,
                activation,
            });
        }
        Ok(Self {
            layers,
            activation_max,
            weight_bits,
            input_bits,
            input_scale,
        })
    }
}

/// How the per-layer ADC full scale is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdcRanging {
    /// Largest possible per-plane row voltage for the array.
    WorstCase,
    /// Largest per-plane row voltage observed on calibration images.
    #[default]
    Calibrated,
    /// Full scale proportional to the number of driven lines in each plane,
    /// with the per-line slope taken from calibration images.
    Tracking,
}

/// The converter used on one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerAdc {
    Fixed(AdcConfig),
    Tracking(TrackingAdc),
}

impl RowReadout for LayerAdc {
    fn convert(&self, v: f64, driven: usize) -> (f64, bool) {
        match self {
            LayerAdc::Fixed(a) => a.convert(v, driven),
            LayerAdc::Tracking(a) => a.convert(v, driven),
        }
    }
}

/// Physical parameters shared by every layer's array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hardware {
    pub physics: DevicePhysics,
    pub r_row: f64,
    pub v_ref: f64,
    pub program: ProgramOptions,
    pub order: BitOrder,
}

impl Default for Hardware {
    fn default() -> Self {
        Self {
            physics: DevicePhysics::default(),
            r_row: 1.0,
            v_ref: 0.1,
            program: ProgramOptions::default(),
            order: BitOrder::MsbFirst,
        }
    }
}

/// Interface settings of one layer for one resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerInterface {
    pub adc: LayerAdc,
    pub input_bits: u32,
    /// Real value of one input unit.
    pub input_lsb: f64,
    /// Storage for this layer's outputs; `None` on the output layer.
    pub out_fmt: Option<FixedPointFormat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interface {
    pub bits: u32,
    pub image_bits: u32,
    pub layers: Vec<LayerInterface>,
}

/// One engine inference.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EngineOutput {
    pub scores: Vec<f64>,
    /// ADC clips plus inter-layer overflows.
    pub saturation_events: u64,
    pub adc_samples: u64,
    /// Dequantized outputs of every hidden layer, when traced.
    pub hidden: Vec<Vec<f64>>,
}

/// Programmed arrays for every layer of a quantized model.
#[derive(Debug, Clone)]
pub struct Engine {
    qmodel: QuantizedModel,
    arrays: Vec<ArrayState>,
    reports: Vec<ProgrammingReport>,
    vref: VoltageReference,
    order: BitOrder,
}

impl Engine {
    pub fn build(qmodel: QuantizedModel, hw: &Hardware) -> Result<Self, NetworkError> {
        let codec = WeightCodec::spanning(qmodel.weight_bits, &hw.physics);
        let mut arrays = Vec::with_capacity(qmodel.layers.len());
        let mut reports = Vec::with_capacity(qmodel.layers.len());
        for layer in &qmodel.layers {
            let (array, report) = program(&layer.codes, &hw.physics, &codec, hw.r_row, &hw.program)?;
            arrays.push(array);
            reports.push(report);
        }
        let mut vref = None;
        for a in &arrays {
            vref = Some(VoltageReference::for_array(hw.v_ref, a)?);
        }
        Ok(Self {
            qmodel,
            arrays,
            reports,
            vref: vref.expect("at least one layer"),
            order: hw.order,
        })
    }

    pub fn qmodel(&self) -> &QuantizedModel {
        &self.qmodel
    }

    pub fn arrays(&self) -> &[ArrayState] {
        &self.arrays
    }

    pub fn programming_reports(&self) -> &[ProgrammingReport] {
        &self.reports
    }

    /// Interface for a resolution: the ADC and inter-layer storage both get
    /// `bits` (storage capped at 16) and images are requantized to
    /// `min(bits, input_bits)`.
    pub fn interface(
        &self,
        bits: u32,
        ranging: AdcRanging,
        calibration: &MnistSet,
    ) -> Result<Interface, NetworkError> {
        if !(1..=24).contains(&bits) {
            return Err(NetworkError::Config(format!("resolution must be in 1..=24 bits, got {bits}")));
        }
        let image_bits = bits.min(self.qmodel.input_bits);
        let fmt_bits = bits.min(16);
        let count = self.qmodel.layers.len();
        let mut layers = Vec::with_capacity(count);
        let mut input_bits = image_bits;
        let mut input_lsb = self.qmodel.input_scale * (1u32 << (8 - image_bits)) as f64;
        for k in 0..count {
            let out_fmt = match self.qmodel.activation_max.get(k) {
                Some(&amax) if k + 1 < count => Some(FixedPointFormat::fitting(fmt_bits, amax).map_err(|e| {
                    NetworkError::Config(e.to_string())
                })?),
                _ => None,
            };
            let v_fs = worst_case_full_scale(&self.arrays[k], &self.vref);
            layers.push(LayerInterface {
                adc: LayerAdc::Fixed(AdcConfig::new(bits, v_fs)?),
                input_bits,
                input_lsb,
                out_fmt,
            });
            if let Some(fmt) = out_fmt {
                input_bits = (fmt.total_bits() - 1).max(1);
                input_lsb = fmt.lsb();
            }
        }
        let mut iface = Interface {
            bits,
            image_bits,
            layers,
        };
        if ranging != AdcRanging::WorstCase && !calibration.is_empty() {
            let peaks = (0..calibration.len())
                .into_par_iter()
                .map(|k| {
                    let mut probes = vec![PeakProbe::default(); count];
                    self.run(&iface, calibration.image(k), &mut probes, false)?;
                    Ok::<_, NetworkError>(probes.iter().map(|p| (p.peak, p.peak_per_line)).collect::<Vec<_>>())
                })
                .try_reduce(
                    || vec![(0.0, 0.0); count],
                    |a, b| Ok::<_, NetworkError>(a.iter().zip(&b).map(|(x, y)| (x.0.max(y.0), x.1.max(y.1))).collect()),
                )?;
            for (layer, (peak, per_line)) in iface.layers.iter_mut().zip(peaks) {
                match ranging {
                    AdcRanging::Calibrated if peak > 0.0 => {
                        layer.adc = LayerAdc::Fixed(AdcConfig::new(bits, peak)?);
                    }
                    AdcRanging::Tracking if per_line > 0.0 => {
                        layer.adc = LayerAdc::Tracking(TrackingAdc {
                            bits,
                            v_per_line: per_line,
                        });
                    }
                    _ => {}
                }
            }
        }
        Ok(iface)
    }

    pub fn forward(&self, iface: &Interface, image: &[u8]) -> Result<EngineOutput, NetworkError> {
        let mut adcs: Vec<LayerAdc> = iface.layers.iter().map(|l| l.adc).collect();
        self.run(iface, image, &mut adcs, false)
    }

    /// Like [`Engine::forward`] but keeps every hidden layer's stored output.
    pub fn forward_traced(&self, iface: &Interface, image: &[u8]) -> Result<EngineOutput, NetworkError> {
        let mut adcs: Vec<LayerAdc> = iface.layers.iter().map(|l| l.adc).collect();
        self.run(iface, image, &mut adcs, true)
    }

    fn run<R: RowReadout>(
        &self,
        iface: &Interface,
        image: &[u8],
        readouts: &mut [R],
        trace: bool,
    ) -> Result<EngineOutput, NetworkError> {
        if iface.layers.len() != self.arrays.len() {
            return Err(NetworkError::Config("interface was built for a different engine".into()));
        }
        let m0 = self.arrays[0].m();
        if image.len() != m0 {
            return Err(NetworkError::Dimension {
                layer: 0,
                expected: m0,
                got: image.len(),
            });
        }
        let mut out = EngineOutput::default();
        let mut x: Vec<i64> = to_input_bytes(image, iface.image_bits).into_iter().map(i64::from).collect();
        for (k, ((array, layer), li)) in self.arrays.iter().zip(&self.qmodel.layers).zip(&iface.layers).enumerate() {
            let saf = SafConfig {
                input_bits: li.input_bits,
                order: self.order,
            };
            let (acc, samples, clipped) = signed_matvec(array, &x, &saf, &self.vref, &mut readouts[k])?;
            out.adc_samples += samples;
            out.saturation_events += clipped;
            let gain = li.input_lsb * layer.scale;
            let y: Vec<f64> = acc
                .iter()
                .enumerate()
                .map(|(j, &a)| {
                    let b = layer.bias.as_ref().map_or(0.0, |b| b[j]);
                    layer.activation.apply(a as f64 * gain + b)
                })
                .collect();
            match li.out_fmt {
                Some(fmt) => {
                    x = y
                        .iter()
                        .map(|&v| {
                            let (raw, sat) = fmt.encode(v);
                            out.saturation_events += sat as u64;
                            raw as i64
                        })
                        .collect();
                    if trace {
                        out.hidden.push(x.iter().map(|&r| fmt.decode(r as i32)).collect());
                    }
                }
                None => out.scores = y,
            }
        }
        Ok(out)
    }
}

/// Bit-serial product for signed inputs: positive and negative parts are
/// driven as separate passes.
fn signed_matvec<R: RowReadout>(
    array: &ArrayState,
    x: &[i64],
    saf: &SafConfig,
    vref: &VoltageReference,
    readout: &mut R,
) -> Result<(Vec<i64>, u64, u64), NetworkError> {
    let pos: Vec<u32> = x.iter().map(|&v| v.max(0) as u32).collect();
    let mut res = saf_matvec_with(array, &pos, saf, vref, readout)?;
    if x.iter().any(|&v| v < 0) {
        let neg: Vec<u32> = x.iter().map(|&v| (-v).max(0) as u32).collect();
        let n = saf_matvec_with(array, &neg, saf, vref, readout)?;
        for (a, b) in res.values.iter_mut().zip(&n.values) {
            *a -= b;
        }
        res.samples += n.samples;
        res.saturated += n.saturated;
    }
    Ok((res.values, res.samples, res.saturated))
}

/// Aggregate result of running the engine over a labelled set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineEvaluation {
    pub images: usize,
    pub correct: usize,
    /// Images whose engine class matches the float class.
    pub agree: usize,
    /// Images with at least one saturation event.
    pub saturated_images: usize,
}

impl EngineEvaluation {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.images as f64
    }

    pub fn saturation_rate(&self) -> f64 {
        self.saturated_images as f64 / self.images as f64
    }

    pub fn float_agreement(&self) -> f64 {
        self.agree as f64 / self.images as f64
    }
}

impl Engine {
    /// Runs every image in `set`; `float_classes` are the reference
    /// predictions used for the agreement count.
    pub fn evaluate(
        &self,
        iface: &Interface,
        set: &MnistSet,
        float_classes: &[usize],
    ) -> Result<EngineEvaluation, NetworkError> {
        if set.is_empty() {
            return Err(NetworkError::Config("cannot evaluate on an empty set".into()));
        }
        if float_classes.len() != set.len() {
            return Err(NetworkError::Dimension {
                layer: 0,
                expected: set.len(),
                got: float_classes.len(),
            });
        }
        let per_image: Vec<(bool, bool, bool)> = (0..set.len())
            .into_par_iter()
            .map(|k| {
                let out = self.forward(iface, set.image(k))?;
                let class = classify(&out.scores);
                Ok((
                    class == set.label(k) as usize,
                    class == float_classes[k],
                    out.saturation_events > 0,
                ))
            })
            .collect::<Result<_, NetworkError>>()?;
        Ok(EngineEvaluation {
            images: set.len(),
            correct: per_image.iter().filter(|r| r.0).count(),
            agree: per_image.iter().filter(|r| r.1).count(),
            saturated_images: per_image.iter().filter(|r| r.2).count(),
        })
    }
}
