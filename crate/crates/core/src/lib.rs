//! Behavioral simulator of a charge-trap-transistor (CTT) multiply-accumulate
//! engine for fully-connected network inference.
//!
//! The stack, bottom up:
//!
//! * [`device`]: threshold programming by trap/detrap pulse trains and triode
//!   drain current.
//! * [`crossbar`]: an `m x n` array of devices storing signed integer weights
//!   as overdrive, with row-resistor summation and the digital offset term.
//! * [`mixed_signal`]: drain-drive reference, row ADC, and the bit-serial
//!   input scheme (SAF) with shift-and-accumulate.
//! * [`network`]: float reference inference, weight quantization, and the
//!   engine path through programmed arrays with fixed-point inter-layer data.
//! * [`trainer`] and [`dataset`]: MNIST loading and float training.
//! * [`harness`]: configs, sweeps and reports behind the `ctt` binary.
//!
//! ```
//! use ctt_engine::crossbar::{program, CodeMatrix, ProgramOptions, WeightCodec};
//! use ctt_engine::device::DevicePhysics;
//! use ctt_engine::mixed_signal::{saf_matvec, worst_case_full_scale, AdcConfig, SafConfig, VoltageReference};
//!
//! let physics = DevicePhysics::default();
//! let codec = WeightCodec::spanning(4, &physics);
//! let w = CodeMatrix::from_rows(&[vec![1], vec![2], vec![3], vec![4]]).unwrap();
//! let (array, _) = program(&w, &physics, &codec, 1.0, &ProgramOptions::default()).unwrap();
//! let vref = VoltageReference::for_array(0.1, &array).unwrap();
//! let adc = AdcConfig::new(16, worst_case_full_scale(&array, &vref)).unwrap();
//! let out = saf_matvec(&array, &[1, 1, 1, 1], &SafConfig::default(), &adc, &vref).unwrap();
//! assert_eq!(out.values, vec![10]);
//! ```

mod binio;
pub mod crossbar;
pub mod dataset;
pub mod device;
pub mod fixed;
pub mod harness;
pub mod mixed_signal;
pub mod network;
pub mod trainer;

pub use binio::FormatError;
pub use crossbar::{ArrayState, CodeMatrix, CrossbarError, WeightCodec};
pub use dataset::{IdxError, MnistSet};
pub use device::{CurrentModel, DeviceError, DevicePhysics, DeviceState, Polarity};
pub use fixed::FixedPointFormat;
pub use harness::{ExperimentConfig, HarnessError};
pub use mixed_signal::{AdcConfig, InterfaceError, SafConfig, VoltageReference};
pub use network::{Activation, Engine, FcnnModel, NetworkError, QuantizedModel};
pub use trainer::{TrainConfig, TrainError};
