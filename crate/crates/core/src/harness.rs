//! Experiment orchestration: config files, training on demand, resolution
//! sweeps, throughput and calibration reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crossbar::{program, CodeMatrix, CrossbarError, ProgramOptions, ProgrammingReport, WeightCodec};
use crate::dataset::{load_split, IdxError, MnistSet, Split};
use crate::device::{pulses_for_target, DevicePhysics, DeviceState};
use crate::mixed_signal::{equivalent_macs_per_cycle, throughput_tops, BitOrder};
use crate::network::{
    float_predictions, quantize_model, AdcRanging, Engine, FcnnModel, Hardware, NetworkError, QuantizedModel,
};
use crate::trainer::{self, TrainConfig, TrainError};
use crate::Activation;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("dataset: {0}")]
    Data(#[from] IdxError),
    #[error("training: {0}")]
    Train(#[from] TrainError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Array(#[from] CrossbarError),
    #[error("test subset is empty; accuracy has no denominator")]
    EmptySubset,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dir: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data/mnist"),
        }
    }
}

/// Training hyperparameters; case and seed come from the top level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub bias: bool,
    pub activation: Activation,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            bias: d.bias,
            activation: d.activation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySection {
    pub r_row: f64,
    /// Drain-drive voltage of a '1' input bit (V).
    pub v_ref: f64,
    pub programming: ProgramOptions,
}

impl Default for ArraySection {
    fn default() -> Self {
        let hw = Hardware::default();
        Self {
            r_row: hw.r_row,
            v_ref: hw.v_ref,
            programming: hw.program,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AdcSection {
    pub ranging: AdcRanging,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafSection {
    /// Upper bound on image bits fed to the first layer.
    pub input_bits: u32,
    pub order: BitOrder,
}

impl Default for SafSection {
    fn default() -> Self {
        Self {
            input_bits: 8,
            order: BitOrder::MsbFirst,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    pub m: usize,
    pub n: usize,
    pub vectors: usize,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self {
            m: 784,
            n: 16,
            vectors: 100,
        }
    }
}

/// Everything one run needs. Serialized verbatim into the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: u8,
    pub bits: Vec<u32>,
    pub weight_bits: u32,
    pub seed: u64,
    /// Number of test images used, from the start of the test set.
    pub subset: Option<usize>,
    /// Training images used for activation and ADC range calibration.
    pub calibration_images: usize,
    pub out: PathBuf,
    /// Model file to use instead of `<out>/model-case<N>.cttm`.
    pub model: Option<PathBuf>,
    pub data: DataSection,
    pub train: TrainSection,
    pub device: DevicePhysics,
    pub array: ArraySection,
    pub adc: AdcSection,
    pub saf: SafSection,
    pub calibrate: CalibrateSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            case: 2,
            bits: (1..=16).collect(),
            weight_bits: 8,
            seed: 42,
            subset: None,
            calibration_images: 256,
            out: PathBuf::from("runs"),
            model: None,
            data: DataSection::default(),
            train: TrainSection::default(),
            device: DevicePhysics::default(),
            array: ArraySection::default(),
            adc: AdcSection::default(),
            saf: SafSection::default(),
            calibrate: CalibrateSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|source| HarnessError::Toml {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        self.train_config().validate()?;
        if self.bits.is_empty() {
            return bad("bits list is empty".into());
        }
        if let Some(b) = self.bits.iter().find(|b| !(1..=24).contains(*b)) {
            return bad(format!("sweep entry {b} outside 1..=24"));
        }
        if !(2..=16).contains(&self.weight_bits) {
            return bad(format!("weight_bits must be in 2..=16, got {}", self.weight_bits));
        }
        if !(1..=8).contains(&self.saf.input_bits) {
            return bad(format!("saf.input_bits must be in 1..=8, got {}", self.saf.input_bits));
        }
        if self.out.as_os_str().is_empty() || self.data.dir.as_os_str().is_empty() {
            return bad("paths must be non-empty".into());
        }
        if self.calibrate.m == 0 || self.calibrate.n == 0 {
            return bad("calibrate.m and calibrate.n must be positive".into());
        }
        self.device.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = self.train;
        TrainConfig {
            case: self.case,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            seed: self.seed,
            bias: t.bias,
            activation: t.activation,
        }
    }

    pub fn hardware(&self) -> Hardware {
        Hardware {
            physics: self.device,
            r_row: self.array.r_row,
            v_ref: self.array.v_ref,
            program: self.array.programming,
            order: self.saf.order,
        }
    }

    pub fn model_path(&self) -> PathBuf {
        self.model
            .clone()
            .unwrap_or_else(|| self.out.join(format!("model-case{}.cttm", self.case)))
    }

    fn test_set(&self) -> Result<MnistSet, HarnessError> {
        let test = load_split(&self.data.dir, Split::Test)?;
        let test = match self.subset {
            Some(n) => test.head(n),
            None => test,
        };
        if test.is_empty() {
            return Err(HarnessError::EmptySubset);
        }
        Ok(test)
    }

    fn prepare_out(&self) -> Result<(), HarnessError> {
        fs::create_dir_all(&self.out).map_err(io_err(&self.out))?;
        let path = self.out.join("config.toml");
        fs::write(&path, self.to_toml()).map_err(io_err(&path))
    }
}

/// Loads the configured model or trains and saves it.
fn ensure_model(cfg: &ExperimentConfig, train_set: &MnistSet) -> Result<FcnnModel, HarnessError> {
    let path = cfg.model_path();
    if path.exists() {
        let model = FcnnModel::load(&path)?;
        let widths = trainer::case_widths(cfg.case)?;
        if model.widths() != widths {
            return Err(HarnessError::Config(format!(
                "{} has widths {:?}, case {} needs {widths:?}",
                path.display(),
                model.widths(),
                cfg.case
            )));
        }
        return Ok(model);
    }
    if cfg.model.is_some() {
        return Err(HarnessError::Config(format!("model file {} not found", path.display())));
    }
    Ok(run_train(cfg, train_set)?.model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub model: FcnnModel,
    pub model_path: PathBuf,
    pub epoch_losses: Vec<f64>,
    pub test_accuracy: Option<f64>,
}

/// Trains the configured case and writes the model plus a per-epoch log.
pub fn run_train(cfg: &ExperimentConfig, train_set: &MnistSet) -> Result<TrainReport, HarnessError> {
    cfg.validate()?;
    cfg.prepare_out()?;
    let outcome = trainer::train(&cfg.train_config(), train_set, None)?;
    let model_path = cfg.model_path();
    outcome.model.save(&model_path)?;
    let mut log = String::from("epoch,loss\n");
    for (e, loss) in outcome.epoch_losses.iter().enumerate() {
        writeln!(log, "{},{loss:.6}", e + 1).unwrap();
    }
    let log_path = cfg.out.join(format!("train-case{}.csv", cfg.case));
    fs::write(&log_path, log).map_err(io_err(&log_path))?;
    Ok(TrainReport {
        model: outcome.model,
        model_path,
        epoch_losses: outcome.epoch_losses,
        test_accuracy: None,
    })
}

/// `train` subcommand: train, save, and score on the test subset.
pub fn train_command(cfg: &ExperimentConfig) -> Result<TrainReport, HarnessError> {
    let train_set = load_split(&cfg.data.dir, Split::Train)?;
    let mut report = run_train(cfg, &train_set)?;
    report.test_accuracy = Some(trainer::evaluate(&report.model, &cfg.test_set()?)?);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub case: u8,
    pub bits: u32,
    pub accuracy: f64,
    pub saturation_rate: f64,
    pub float_agreement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub float_accuracy: f64,
    pub images: usize,
    pub programming: Vec<ProgrammingReport>,
    pub csv_path: PathBuf,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("case,bits,accuracy,saturation_rate,float_agreement\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6}",
                r.case, r.bits, r.accuracy, r.saturation_rate, r.float_agreement
            )
            .unwrap();
        }
        s
    }

    pub fn row(&self, bits: u32) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.bits == bits)
    }
}

struct Prepared {
    engine: Engine,
    calibration: MnistSet,
    test: MnistSet,
    float_classes: Vec<usize>,
    float_accuracy: f64,
}

fn prepare_engine(cfg: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    cfg.validate()?;
    let test = cfg.test_set()?;
    let train_set = load_split(&cfg.data.dir, Split::Train)?;
    cfg.prepare_out()?;
    let model = ensure_model(cfg, &train_set)?;
    let calibration = train_set.head(cfg.calibration_images);
    let qmodel = quantize_model(&model, cfg.weight_bits, cfg.saf.input_bits, &calibration)?;
    let engine = Engine::build(qmodel, &cfg.hardware())?;
    let float_classes = float_predictions(&model, &test);
    let correct = float_classes.iter().zip(test.labels()).filter(|(p, l)| **p == **l as usize).count();
    Ok(Prepared {
        engine,
        calibration,
        float_accuracy: correct as f64 / test.len() as f64,
        test,
        float_classes,
    })
}

/// Accuracy versus interface resolution. Arrays are programmed once; every
/// sweep point re-ranges the ADC and resizes inter-layer storage.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport, HarnessError> {
    let p = prepare_engine(cfg)?;
    let mut rows = Vec::with_capacity(cfg.bits.len());
    for &bits in &cfg.bits {
        let iface = p.engine.interface(bits, cfg.adc.ranging, &p.calibration)?;
        let eval = p.engine.evaluate(&iface, &p.test, &p.float_classes)?;
        rows.push(SweepRow {
            case: cfg.case,
            bits,
            accuracy: eval.accuracy(),
            saturation_rate: eval.saturation_rate(),
            float_agreement: eval.float_agreement(),
        });
    }
    let csv_path = cfg.out.join(format!("sweep-case{}.csv", cfg.case));
    let report = SweepReport {
        rows,
        float_accuracy: p.float_accuracy,
        images: p.test.len(),
        programming: p.engine.programming_reports().to_vec(),
        csv_path,
    };
    fs::write(&report.csv_path, report.to_csv()).map_err(io_err(&report.csv_path))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgramReport {
    pub layers: Vec<ProgrammingReport>,
    pub files: Vec<PathBuf>,
}

/// Quantizes and programs the model; writes the quantized model and one
/// array snapshot per layer.
pub fn run_program(cfg: &ExperimentConfig) -> Result<ProgramReport, HarnessError> {
    cfg.validate()?;
    let train_set = load_split(&cfg.data.dir, Split::Train)?;
    cfg.prepare_out()?;
    let model = ensure_model(cfg, &train_set)?;
    let calibration = train_set.head(cfg.calibration_images);
    let qmodel: QuantizedModel = quantize_model(&model, cfg.weight_bits, cfg.saf.input_bits, &calibration)?;
    let qpath = cfg.out.join(format!("model-case{}.cttq", cfg.case));
    qmodel.save(&qpath)?;
    let engine = Engine::build(qmodel, &cfg.hardware())?;
    let mut files = vec![qpath];
    for (k, array) in engine.arrays().iter().enumerate() {
        let path = cfg.out.join(format!("array-case{}-layer{k}.ctta", cfg.case));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        array.write_snapshot(std::io::BufWriter::new(file))?;
        files.push(path);
    }
    Ok(ProgramReport {
        layers: engine.programming_reports().to_vec(),
        files,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferReport {
    pub rows: Vec<SweepRow>,
    pub float_accuracy: f64,
    pub dumps: Vec<PathBuf>,
}

/// Engine inference on the test subset at each requested resolution. With
/// `dump`, the stored inter-layer values of every image are written as CSV,
/// one file per hidden layer and resolution.
pub fn run_infer(cfg: &ExperimentConfig, dump: bool) -> Result<InferReport, HarnessError> {
    let p = prepare_engine(cfg)?;
    let mut rows = Vec::new();
    let mut dumps = Vec::new();
    for &bits in &cfg.bits {
        let iface = p.engine.interface(bits, cfg.adc.ranging, &p.calibration)?;
        let eval = p.engine.evaluate(&iface, &p.test, &p.float_classes)?;
        rows.push(SweepRow {
            case: cfg.case,
            bits,
            accuracy: eval.accuracy(),
            saturation_rate: eval.saturation_rate(),
            float_agreement: eval.float_agreement(),
        });
        if dump {
            let hidden = p.engine.qmodel().layers.len() - 1;
            let mut files = vec![String::new(); hidden];
            for k in 0..p.test.len() {
                let out = p.engine.forward_traced(&iface, p.test.image(k))?;
                for (text, values) in files.iter_mut().zip(&out.hidden) {
                    let line: Vec<String> = values.iter().map(|v| format!("{v:.8}")).collect();
                    writeln!(text, "{}", line.join(",")).unwrap();
                }
            }
            for (layer, text) in files.iter().enumerate() {
                let path = cfg.out.join(format!("activations-case{}-b{bits}-layer{layer}.csv", cfg.case));
                fs::write(&path, text).map_err(io_err(&path))?;
                dumps.push(path);
            }
        }
    }
    Ok(InferReport {
        rows,
        float_accuracy: p.float_accuracy,
        dumps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputReport {
    pub macs_per_cycle: u64,
    pub tops: f64,
    pub programming_cycles: Option<u64>,
}

pub fn run_throughput_report(
    m: u64,
    n: u64,
    saf_bits: u64,
    clock_hz: f64,
    max_pulses: Option<u64>,
) -> Result<ThroughputReport, HarnessError> {
    if m == 0 || n == 0 || saf_bits == 0 || !(clock_hz > 0.0) || max_pulses == Some(0) {
        return Err(HarnessError::Config("throughput arguments must be positive".into()));
    }
    let macs = equivalent_macs_per_cycle(m, n, saf_bits);
    Ok(ThroughputReport {
        macs_per_cycle: macs,
        tops: throughput_tops(macs, clock_hz, 2.0),
        programming_cycles: max_pulses.map(|p| m * p),
    })
}

/// Longest pulse train any code of a `weight_bits` codec needs from a fresh
/// device.
pub fn worst_case_pulses(physics: &DevicePhysics, weight_bits: u32, options: &ProgramOptions) -> Result<u64, HarnessError> {
    let codec = WeightCodec::spanning(weight_bits, physics);
    codec.validate(physics)?;
    let fresh = DeviceState::new(options.initial_vt.unwrap_or(physics.vt_max), physics)
        .map_err(CrossbarError::from)?;
    let (lo, hi) = codec.code_range();
    let mut worst = 0u64;
    for code in lo..=hi {
        let (n, _) = pulses_for_target(fresh, physics, codec.target_vt(code, physics)).map_err(CrossbarError::from)?;
        worst = worst.max(n as u64);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationReport {
    pub zero_deviation: f64,
    /// Largest `|deviation| / bound` over basis probes (one bound is the
    /// per-row programming-error bound).
    pub basis_bound_ratio: f64,
    pub random_bound_ratio: f64,
    /// Largest `|deviation| / sum_i |vds_i * w_ij|` over random probes.
    pub random_max_relative: f64,
    pub vectors: usize,
}

impl CalibrationReport {
    pub fn within_bound(&self) -> bool {
        self.zero_deviation == 0.0 && self.basis_bound_ratio <= 1.0 && self.random_bound_ratio <= 1.0
    }
}

/// Programs a seeded random array and checks calibrated products against
/// exact dot products on known probe vectors.
pub fn run_calibration_demo(cfg: &ExperimentConfig) -> Result<CalibrationReport, HarnessError> {
    cfg.validate()?;
    let (m, n) = (cfg.calibrate.m, cfg.calibrate.n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let codec = WeightCodec::spanning(cfg.weight_bits, &cfg.device);
    let (lo, hi) = codec.code_range();
    let codes: Vec<i32> = (0..m * n).map(|_| rng.random_range(lo..=hi)).collect();
    let weights = CodeMatrix::new(m, n, codes)?;
    let (array, _) = program(&weights, &cfg.device, &codec, cfg.array.r_row, &cfg.array.programming)?;
    let v_max = cfg.array.v_ref.min(0.99 * array.min_overdrive());

    let deviation = |vds: &[f64]| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), HarnessError> {
        let got = array.calibrated_matvec(vds)?;
        let bound = array.programming_error_bound(vds)?;
        let exact: Vec<f64> = (0..n)
            .map(|j| (0..m).map(|i| vds[i] * weights.get(i, j) as f64).sum())
            .collect();
        let magnitude: Vec<f64> = (0..n)
            .map(|j| (0..m).map(|i| vds[i] * weights.get(i, j).abs() as f64).sum())
            .collect();
        let dev = got.iter().zip(&exact).map(|(g, e)| (g - e).abs()).collect();
        Ok((dev, bound, magnitude))
    };
    // float round-off of the offset subtraction, in weight units
    let slack = |vds: &[f64]| 1e-9 * vds.iter().sum::<f64>() * (hi as f64 + codec.c0 / codec.c1);
    let ratio = |dev: &[f64], bound: &[f64], slack: f64| {
        dev.iter()
            .zip(bound)
            .map(|(d, b)| if *d <= slack { 0.0 } else { d / (b + slack) })
            .fold(0.0f64, f64::max)
    };

    let zero = vec![0.0; m];
    let (dev, _, _) = deviation(&zero)?;
    let zero_deviation = dev.iter().fold(0.0f64, |a, &d| a.max(d));

    let mut basis_bound_ratio = 0.0f64;
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = v_max;
        let (dev, bound, _) = deviation(&e)?;
        basis_bound_ratio = basis_bound_ratio.max(ratio(&dev, &bound, slack(&e)));
    }

    let mut random_bound_ratio = 0.0f64;
    let mut random_max_relative = 0.0f64;
    for _ in 0..cfg.calibrate.vectors {
        let vds: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..v_max)).collect();
        let (dev, bound, magnitude) = deviation(&vds)?;
        random_bound_ratio = random_bound_ratio.max(ratio(&dev, &bound, slack(&vds)));
        for (d, mag) in dev.iter().zip(&magnitude) {
            if *mag > 0.0 {
                random_max_relative = random_max_relative.max(d / mag);
            }
        }
    }
    Ok(CalibrationReport {
        zero_deviation,
        basis_bound_ratio,
        random_bound_ratio,
        random_max_relative,
        vectors: cfg.calibrate.vectors,
    })
}
